"""Load-model specifications and their initialised, simulatable instances.

A *model* (``ZipModel``, ``ZipImModel``, ``ClmLiteModel``) is the immutable
parameter description that lives in case files and fit results.  Binding a
model to an operating point with :func:`instantiate` produces a
``LoadInstance`` whose components are scaled so that the load consumes
exactly ``p0 + j q0`` at ``v0``.

Parameter fields may hold numpy arrays instead of floats; every instance
then represents a batch of parameter sets that is integrated in lock-step.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import InitError, NoEquilibrium, ParseError, ValidationError
from .motor import ImParams, ImState, im_derivatives, im_pq_motor_base, init_motor_base
from .static import (
    ElectronicLoadParams,
    SinglePhaseImParams,
    SpImState,
    ZipParams,
    check_simplex,
    electronic_pq,
    sp_im_pq,
    sp_im_update,
    zip_pq,
)

CLM_LABELS = ("Ma", "Mb", "Mc", "Md", "Elec", "ZIP")
ZIP_IM_LABELS = ("ZIP", "IM")
ZIP_LABELS = ("Z", "I", "P")
STATIC_PRESETS = {"40Z60P": (0.4, 0.0, 0.6), "30Z30I40P": (0.3, 0.3, 0.4)}


@dataclass(frozen=True)
class LoadComposition:
    labels: tuple[str, ...]
    f: tuple[float, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.f):
            raise ValidationError("composition labels and fractions differ in length")
        check_simplex(self.f, "load composition")

    def as_dict(self):
        return dict(zip(self.labels, self.f))


@dataclass(frozen=True)
class ZipCoeffs:
    """Z and I shares of P and Q; the constant-power share is the remainder."""

    pz: float = 1.0
    pi: float = 0.0
    qz: float = 1.0
    qi: float = 0.0

    @property
    def p(self):
        return (self.pz, self.pi, 1.0 - self.pz - self.pi)

    @property
    def q(self):
        return (self.qz, self.qi, 1.0 - self.qz - self.qi)

    def __post_init__(self):
        check_simplex(self.p, "ZIP p-coefficients")
        check_simplex(self.q, "ZIP q-coefficients")

    @classmethod
    def from_lists(cls, p, q):
        check_simplex(p, "ZIP p-coefficients")
        check_simplex(q, "ZIP q-coefficients")
        return cls(float(p[0]), float(p[1]), float(q[0]), float(q[1]))


@dataclass(frozen=True)
class MotorSpec:
    rs: float = 0.04
    xs: float = 0.1
    rr: float = 0.04
    xr: float = 0.08
    xm: float = 1.8
    h: float = 0.5
    load_factor: float = 0.8
    torque_exp: float = 2.0

    def params(self) -> ImParams:
        return ImParams(self.rs, self.xs, self.rr, self.xr, self.xm, self.h, torque_exp=self.torque_exp)


@dataclass(frozen=True)
class SpMotorSpec:
    pf: float = 0.97
    v_stall: float = 0.55
    t_stall: float = 0.033
    g_stall: float = 4.4
    b_stall: float = 4.0
    f_restart: float = 0.2
    v_restart: float = 0.95


@dataclass(frozen=True)
class ElecSpec:
    v_full: float = 0.7
    v_off: float = 0.5


@dataclass(frozen=True)
class FeederSpec:
    """Substation tap, substation shunt and feeder impedance (load MVA base)."""

    r: float = 0.0
    x: float = 0.0
    b: float = 0.0
    tap: float = 1.0


@dataclass(frozen=True)
class ZipModel:
    coeffs: ZipCoeffs = field(default_factory=ZipCoeffs)
    v_break: float = 0.0
    kind = "zip"


@dataclass(frozen=True)
class ZipImModel:
    fractions: tuple[float, float] = (0.5, 0.5)
    zip: ZipCoeffs = field(default_factory=ZipCoeffs)
    im: MotorSpec = field(default_factory=MotorSpec)
    v_break: float = 0.0
    kind = "zip_im"

    def __post_init__(self):
        check_simplex(self.fractions, "ZIP+IM fractions")


@dataclass(frozen=True)
class ClmLiteModel:
    fractions: tuple[float, ...] = (0.1, 0.15, 0.1, 0.2, 0.1, 0.35)
    feeder: FeederSpec = field(default_factory=FeederSpec)
    ma: MotorSpec = field(default_factory=MotorSpec)
    mb: MotorSpec = field(default_factory=MotorSpec)
    mc: MotorSpec = field(default_factory=MotorSpec)
    md: SpMotorSpec = field(default_factory=SpMotorSpec)
    elec: ElecSpec = field(default_factory=ElecSpec)
    zip: ZipCoeffs = field(default_factory=ZipCoeffs)
    v_break: float = 0.0
    kind = "clm_lite"

    def __post_init__(self):
        if len(self.fractions) != len(CLM_LABELS):
            raise ValidationError("CLM-lite needs six fractions (Ma, Mb, Mc, Md, Elec, ZIP)")
        check_simplex(self.fractions, "CLM-lite fractions")


@dataclass(frozen=True)
class StaticPreset:
    name: str
    v_break: float = 0.0
    kind = "static_preset"

    def __post_init__(self):
        if self.name not in STATIC_PRESETS:
            raise ValidationError(f"unknown static preset {self.name!r}; choose from {sorted(STATIC_PRESETS)}")

    def as_zip(self) -> ZipModel:
        z, i, _ = STATIC_PRESETS[self.name]
        return ZipModel(ZipCoeffs(z, i, z, i), v_break=self.v_break)


LoadModelSpec = ZipModel | ZipImModel | ClmLiteModel | StaticPreset


def composition_of(model) -> LoadComposition:
    if isinstance(model, ClmLiteModel):
        return LoadComposition(CLM_LABELS, tuple(model.fractions))
    if isinstance(model, ZipImModel):
        return LoadComposition(ZIP_IM_LABELS, tuple(model.fractions))
    zm = model.as_zip() if isinstance(model, StaticPreset) else model
    return LoadComposition(ZIP_LABELS, tuple(zm.coeffs.p))


# --------------------------------------------------------------------------
# JSON


def _block(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ParseError(f"{where}: unknown fields {sorted(unknown)}")
    return cls(**{k: float(v) for k, v in raw.items()})


def _zip_block(raw, where):
    if raw is None:
        return ZipCoeffs()
    if "p" in raw or "q" in raw:
        return ZipCoeffs.from_lists(raw.get("p", (1, 0, 0)), raw.get("q", (1, 0, 0)))
    return _block(ZipCoeffs, raw, where)


def parse_load_model(doc) -> LoadModelSpec:
    """Parse the JSON form of a load model (``type`` in zip / zip_im / clm_lite / static_preset)."""
    if not isinstance(doc, dict) or "type" not in doc:
        raise ParseError("load model must be an object with a 'type' field")
    kind = doc["type"]
    v_break = float(doc.get("v_break", 0.0))
    if kind == "zip":
        return ZipModel(_zip_block(doc, "zip"), v_break=v_break)
    if kind == "static_preset":
        return StaticPreset(str(doc.get("name")), v_break=v_break)
    if kind == "zip_im":
        return ZipImModel(
            fractions=tuple(float(f) for f in doc.get("fractions", (0.5, 0.5))),
            zip=_zip_block(doc.get("zip"), "zip_im.zip"),
            im=_block(MotorSpec, doc.get("im"), "zip_im.im"),
            v_break=v_break,
        )
    if kind == "clm_lite":
        from .presets import default_model

        base = default_model("clm_lite")
        return ClmLiteModel(
            fractions=tuple(float(f) for f in doc.get("fractions", base.fractions)),
            feeder=_block(FeederSpec, doc["feeder"], "feeder") if "feeder" in doc else base.feeder,
            ma=_block(MotorSpec, doc["ma"], "ma") if "ma" in doc else base.ma,
            mb=_block(MotorSpec, doc["mb"], "mb") if "mb" in doc else base.mb,
            mc=_block(MotorSpec, doc["mc"], "mc") if "mc" in doc else base.mc,
            md=_block(SpMotorSpec, doc["md"], "md") if "md" in doc else base.md,
            elec=_block(ElecSpec, doc["elec"], "elec") if "elec" in doc else base.elec,
            zip=_zip_block(doc["zip"], "zip") if "zip" in doc else base.zip,
            v_break=float(doc.get("v_break", base.v_break)),
        )
    raise ParseError(f"unknown load model type {kind!r}")


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _dump_zip(c: ZipCoeffs):
    return {"p": [_plain(v) for v in c.p], "q": [_plain(v) for v in c.q]}


def dump_load_model(model) -> dict:
    if isinstance(model, StaticPreset):
        return {"type": "static_preset", "name": model.name, "v_break": model.v_break}
    if isinstance(model, ZipModel):
        return {"type": "zip", **_dump_zip(model.coeffs), "v_break": _plain(model.v_break)}
    as_dict = lambda blk: {k: _plain(v) for k, v in dataclasses.asdict(blk).items()}  # noqa: E731
    if isinstance(model, ZipImModel):
        return {
            "type": "zip_im",
            "fractions": [_plain(f) for f in model.fractions],
            "zip": _dump_zip(model.zip),
            "im": as_dict(model.im),
            "v_break": _plain(model.v_break),
        }
    if isinstance(model, ClmLiteModel):
        return {
            "type": "clm_lite",
            "fractions": [_plain(f) for f in model.fractions],
            "feeder": as_dict(model.feeder),
            "ma": as_dict(model.ma),
            "mb": as_dict(model.mb),
            "mc": as_dict(model.mc),
            "md": as_dict(model.md),
            "elec": as_dict(model.elec),
            "zip": _dump_zip(model.zip),
            "v_break": _plain(model.v_break),
        }
    raise TypeError(f"not a load model: {model!r}")


# --------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class Feeder:
    """Substation/feeder network on the system base."""

    tap: float
    b: float
    z: complex

    def low_side(self, v_sub):
        return v_sub / self.tap


class LoadInstance:
    """An initialised load bound to its operating point.

    ``x0``/``d0`` are the continuous and discrete initial states.  The
    ``end_*`` methods take the voltage at the end-use bus; ``injection`` and
    ``derivatives`` take the substation voltage and solve the feeder.
    """

    feeder: Feeder | None = None
    n_states = 0
    v_end0 = None  # end-use voltage at the initial operating point
    x0: np.ndarray
    d0 = None

    def end_power(self, x, d, v_end):
        raise NotImplementedError

    def end_derivatives(self, x, d, v_end):
        return np.zeros_like(x)

    def update_discrete(self, d, v_end, dt):
        return d

    # substation-side views -------------------------------------------------

    def end_voltage(self, x, d, v_sub, guess=None, tol=1e-12, max_iter=30, strict=True):
        if self.feeder is None:
            return v_sub
        fd = self.feeder
        v_low = fd.low_side(v_sub)
        if np.all(fd.z == 0):
            return v_low
        if guess is None:
            guess = v_low - fd.z * np.conj(self.end_power(x, d, v_low) / v_low)
        v = np.asarray(guess, dtype=complex)

        def resid(ve):
            return v_low - ve - fd.z * np.conj(self.end_power(x, d, ve) / ve)

        h = 1e-7
        for _ in range(max_iter):
            r = resid(v)
            if np.max(np.abs(r)) <= tol:
                return v
            jr = (resid(v + h) - r) / h
            ji = (resid(v + 1j * h) - r) / h
            # 2x2 real Newton per batch element
            a, b, c, e = jr.real, ji.real, jr.imag, ji.imag
            det = a * e - b * c
            dx = (-r.real * e + b * r.imag) / det
            dy = (-a * r.imag + c * r.real) / det
            v = v + dx + 1j * dy
        if strict and np.max(np.abs(resid(v))) > 1e-8:
            raise InitError("feeder voltage solve did not converge")
        return v

    def injection(self, x, d, v_sub, v_end=None):
        """Active and reactive consumption seen at the substation bus."""
        if self.feeder is None:
            s = self.end_power(x, d, v_sub)
            return s.real, s.imag
        fd = self.feeder
        if v_end is None:
            v_end = self.end_voltage(x, d, v_sub)
        v_low = fd.low_side(v_sub)
        s_end = self.end_power(x, d, v_end)
        s = v_low * s_end / v_end - 1j * fd.b * np.abs(v_low) ** 2
        return s.real, s.imag

    def derivatives(self, x, d, v_sub):
        return self.end_derivatives(x, d, self.end_voltage(x, d, v_sub))


class ZipInstance(LoadInstance):
    def __init__(self, zp: ZipParams):
        self.zp = zp
        self.x0 = np.zeros((0,))

    def end_power(self, x, d, v_end):
        p, q = zip_pq(self.zp, np.abs(v_end))
        return p + 1j * q


class ZipImInstance(LoadInstance):
    n_states = 3

    def __init__(self, zp: ZipParams, imp: ImParams, scale, x0):
        self.zp = zp
        self.imp = imp
        self.scale = scale  # motor base -> system base
        self.x0 = x0

    def end_power(self, x, d, v_end):
        p, q = zip_pq(self.zp, np.abs(v_end))
        pm, qm = im_pq_motor_base(self.imp, ImState.from_array(x), v_end)
        return p + self.scale * pm + 1j * (q + self.scale * qm)

    def end_derivatives(self, x, d, v_end):
        return im_derivatives(self.imp, ImState.from_array(x), v_end).as_array()


class ClmLiteInstance(LoadInstance):
    n_states = 9

    def __init__(self, feeder, motors, scales, md, elec, zp, x0, d0):
        self.feeder = feeder
        self.motors = motors
        self.scales = scales
        self.md = md
        self.elec = elec
        self.zp = zp
        self.x0 = x0
        self.d0 = d0

    def end_power(self, x, d, v_end):
        vm = np.abs(v_end)
        p, q = zip_pq(self.zp, vm)
        pe, _ = electronic_pq(self.elec, vm)
        pd_, qd = sp_im_pq(self.md, d, vm)
        s = p + pe + pd_ + 1j * (q + qd)
        for k, (imp, scale) in enumerate(zip(self.motors, self.scales)):
            pm, qm = im_pq_motor_base(imp, ImState.from_array(x[3 * k : 3 * k + 3]), v_end)
            s = s + scale * (pm + 1j * qm)
        return s

    def end_derivatives(self, x, d, v_end):
        parts = [
            im_derivatives(imp, ImState.from_array(x[3 * k : 3 * k + 3]), v_end).as_array()
            for k, imp in enumerate(self.motors)
        ]
        return np.concatenate(np.broadcast_arrays(*parts))

    def update_discrete(self, d, v_end, dt):
        new, _, _ = sp_im_update(self.md, d, np.abs(v_end), dt)
        return new


def _zip_params(coeffs: ZipCoeffs, p0, q0, v0, v_break):
    return ZipParams(p0, q0, v0, *coeffs.p, *coeffs.q, v_break=v_break)


def _motor(spec: MotorSpec, v, share):
    """Initialise one motor carrying ``share`` (system p.u.) at end voltage ``v``."""
    imp = spec.params()
    tm0, st = init_motor_base(imp, v, spec.load_factor)
    imp = dataclasses.replace(imp, tm0=tm0)
    scale = share / spec.load_factor
    _, qm = im_pq_motor_base(imp, st, v)
    return imp, st, scale, scale * qm


def batch_shape(model) -> tuple:
    """Common broadcast shape of every numeric field of a (batched) model."""
    shapes = []
    for f in dataclasses.fields(model):
        val = getattr(model, f.name)
        if dataclasses.is_dataclass(val):
            shapes.append(batch_shape(val))
        elif isinstance(val, (tuple, list)):
            shapes.extend(np.shape(v) for v in val)
        elif not isinstance(val, str):
            shapes.append(np.shape(val))
    return np.broadcast_shapes(*shapes) if shapes else ()


def instantiate(model, v0, p0, q0) -> LoadInstance:
    """Bind ``model`` to the operating point ``(v0, p0 + j q0)``.

    Raises InitError when a component cannot reach equilibrium (for example
    a motor asked for more than its pull-out power).  Array-valued
    parameters make a batch; the state vector then has shape
    ``(n_states,) + batch``.
    """
    inst = _instantiate(model, v0, p0, q0)
    shape = np.broadcast_shapes(batch_shape(model), np.shape(v0), np.shape(p0), np.shape(q0))
    x0 = np.asarray(inst.x0, dtype=float)
    x0 = x0.reshape(x0.shape + (1,) * (1 + len(shape) - x0.ndim))
    inst.x0 = np.broadcast_to(x0, x0.shape[:1] + shape).copy()
    inst.batch = shape
    return inst


def _instantiate(model, v0, p0, q0) -> LoadInstance:
    v0 = complex(v0) if np.isscalar(v0) else np.asarray(v0, dtype=complex)
    vmag = np.abs(v0)
    if isinstance(model, StaticPreset):
        model = model.as_zip()
    if isinstance(model, ZipModel):
        return ZipInstance(_zip_params(model.coeffs, p0, q0, vmag, model.v_break))
    try:
        if isinstance(model, ZipImModel):
            f_zip, f_im = model.fractions
            imp, st, scale, q_im = _motor(model.im, v0, f_im * p0)
            zp = _zip_params(model.zip, f_zip * p0, q0 - q_im, vmag, model.v_break)
            return ZipImInstance(zp, imp, scale, st.as_array())
        if isinstance(model, ClmLiteModel):
            return _instantiate_clm(model, v0, p0, q0)
    except NoEquilibrium as exc:
        raise InitError(f"{model.kind}: {exc}") from exc
    raise TypeError(f"not a load model: {model!r}")


def _instantiate_clm(model: ClmLiteModel, v_sub, p0, q0):
    fd = model.feeder
    # feeder quantities are on the load's own base (p0 * 100 MVA)
    base = np.maximum(np.abs(p0), 1e-6)
    feeder = Feeder(tap=fd.tap, b=fd.b * base, z=(fd.r + 1j * fd.x) / base)
    v_low = v_sub / fd.tap
    s_f = p0 + 1j * q0 + 1j * feeder.b * np.abs(v_low) ** 2
    i_f = np.conj(s_f / v_low)
    v_end = v_low - feeder.z * i_f
    s_end = v_end * np.conj(i_f)
    p_l, q_l = np.real(s_end), np.imag(s_end)
    f_ma, f_mb, f_mc, f_md, f_el, f_zip = model.fractions
    motors, scales, states = [], [], []
    q_used = 0.0
    for spec, frac in ((model.ma, f_ma), (model.mb, f_mb), (model.mc, f_mc)):
        imp, st, scale, q_m = _motor(spec, v_end, frac * p_l)
        motors.append(imp)
        scales.append(scale)
        states.append(st.as_array())
        q_used = q_used + q_m
    vm = np.abs(v_end)
    md = model.md
    p_md = f_md * p_l
    q_md = p_md * np.tan(np.arccos(md.pf))
    sp = SinglePhaseImParams(
        p0=p_md,
        q0=q_md,
        v_stall=md.v_stall,
        t_stall=md.t_stall,
        g_stall=md.g_stall * p_md,
        b_stall=md.b_stall * p_md,
        f_restart=md.f_restart,
        v_restart=md.v_restart,
        v_break=model.v_break,
    )
    # scale the running power so the population consumes p_md at the initial voltage
    run_shape = 1.0 if model.v_break <= 0 else np.where(vm < model.v_break, (vm / model.v_break) ** 2, 1.0)
    sp = dataclasses.replace(sp, p0=p_md / run_shape, q0=q_md / run_shape)
    elec = ElectronicLoadParams(f_el * p_l, 0.0, model.elec.v_full, model.elec.v_off)
    p_el, _ = electronic_pq(elec, vm)
    if np.any(np.abs(p_el - f_el * p_l) > 1e-12 * np.maximum(1, np.abs(p_l))):
        raise InitError("electronic load is not at full power at the initial voltage")
    zp = _zip_params(model.zip, f_zip * p_l, q_l - q_used - q_md, vm, model.v_break)
    d0 = SpImState(
        running=np.ones_like(vm, dtype=float),
        timer=np.zeros_like(vm, dtype=float),
        restarted=np.zeros_like(vm, dtype=bool),
    )
    x0 = np.concatenate(np.broadcast_arrays(*states))
    inst = ClmLiteInstance(feeder, motors, scales, sp, elec, zp, x0, d0)
    inst.v_end0 = v_end
    return inst


def composite_pq(instance: LoadInstance, x, d, v):
    """Total consumption of a (composite) load instance at substation voltage ``v``."""
    return instance.injection(x, d, v)
