"""Shipped parameter presets and Monte-Carlo sampling ranges.

Ranges are keyed by dotted paths into a model (``"ma.rs"``, ``"zip.pz"``,
``"feeder.x"``).  A model's default is every range at its midpoint plus the
family's fixed values.
"""
from __future__ import annotations

import dataclasses
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError
from .composite import ClmLiteModel, ZipImModel, ZipModel

FAMILIES = ("zip", "zip_im", "clm_lite")
_MODEL_CLASS = {"zip": ZipModel, "zip_im": ZipImModel, "clm_lite": ClmLiteModel}


@lru_cache(maxsize=None)
def _shipped():
    text = resources.files("tslim.data").joinpath("load_params.json").read_text()
    return json.loads(text)


def load_ranges(path=None) -> dict[str, dict[str, tuple[float, float]]]:
    """Range table per family, from ``path`` or the shipped data file.

    A user file may be either the full shipped layout (with a ``ranges``
    block) or a flat ``{family: {param: [lo, hi]}}`` map.
    """
    doc = _shipped() if path is None else json.loads(Path(path).read_text())
    table = doc.get("ranges", doc)
    out = {}
    for family, block in table.items():
        if family not in FAMILIES:
            raise ParseError(f"unknown model family {family!r} in range table")
        out[family] = {}
        for key, pair in block.items():
            lo, hi = (float(x) for x in pair)
            if lo > hi:
                raise ValidationError(f"range {family}.{key} has lo > hi")
            out[family][key] = (lo, hi)
    return out


def fixed_values(family: str) -> dict[str, float]:
    return dict(_shipped()["fixed"].get(family, {}))


def set_path(model, path: str, value):
    """Copy of ``model`` with the dotted field ``path`` replaced."""
    head, _, rest = path.partition(".")
    if not hasattr(model, head):
        raise ValidationError(f"{type(model).__name__} has no field {head!r}")
    if rest:
        return dataclasses.replace(model, **{head: set_path(getattr(model, head), rest, value)})
    return dataclasses.replace(model, **{head: value})


def get_path(model, path: str):
    for part in path.split("."):
        model = getattr(model, part)
    return model


def apply_params(model, params: dict):
    """Replace several dotted fields; siblings are replaced together so that
    coupled fields (the ZIP shares) are validated only once all are set."""
    groups: dict[str, dict[str, object]] = {}
    for path in sorted(params):
        parent, _, leaf = path.rpartition(".")
        groups.setdefault(parent, {})[leaf] = params[path]
    for parent, fields in groups.items():
        if not parent:
            model = dataclasses.replace(model, **fields)
            continue
        block = dataclasses.replace(get_path(model, parent), **fields)
        model = set_path(model, parent, block)
    return model


def default_model(family: str, ranges=None):
    """Model with every sampled parameter at its range midpoint."""
    if family not in FAMILIES:
        raise ValidationError(f"unknown model family {family!r}")
    ranges = load_ranges() if ranges is None else ranges
    model = _MODEL_CLASS[family]()
    model = apply_params(model, fixed_values(family))
    mids = {k: 0.5 * (lo + hi) for k, (lo, hi) in ranges.get(family, {}).items()}
    return apply_params(model, mids)


def sample_params(family_ranges: dict, rng: np.random.Generator, m: int) -> dict[str, np.ndarray]:
    """``m`` uniform draws per parameter, in sorted-key order for reproducibility."""
    return {k: rng.uniform(lo, hi, size=m) for k, (lo, hi) in sorted(family_ranges.items())}


def with_composition(model, fractions):
    if isinstance(model, ZipModel):
        raise ValidationError("ZIP compositions are set through the coefficients")
    return dataclasses.replace(model, fractions=tuple(float(f) for f in fractions))
