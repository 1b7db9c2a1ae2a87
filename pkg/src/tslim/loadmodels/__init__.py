"""Load models: ZIP, third-order induction motor, CLM-lite composite."""
from .composite import (
    CLM_LABELS,
    STATIC_PRESETS,
    ZIP_IM_LABELS,
    ClmLiteModel,
    ElecSpec,
    FeederSpec,
    LoadComposition,
    LoadInstance,
    MotorSpec,
    SpMotorSpec,
    StaticPreset,
    ZipCoeffs,
    ZipImModel,
    ZipModel,
    composite_pq,
    composition_of,
    dump_load_model,
    instantiate,
    parse_load_model,
)
from .motor import ImParams, ImState, im_derivatives, im_init, im_jacobian, im_pq, pullout_power
from .presets import apply_params, default_model, load_ranges, sample_params
from .static import (
    ElectronicLoadParams,
    SinglePhaseImParams,
    SpImState,
    ZipParams,
    electronic_pq,
    sp_im_update,
    zip_pq,
)

__all__ = [
    "CLM_LABELS",
    "STATIC_PRESETS",
    "ZIP_IM_LABELS",
    "ClmLiteModel",
    "ElecSpec",
    "ElectronicLoadParams",
    "FeederSpec",
    "ImParams",
    "ImState",
    "LoadComposition",
    "LoadInstance",
    "MotorSpec",
    "SinglePhaseImParams",
    "SpImState",
    "SpMotorSpec",
    "StaticPreset",
    "ZipCoeffs",
    "ZipImModel",
    "ZipModel",
    "ZipParams",
    "apply_params",
    "composite_pq",
    "composition_of",
    "default_model",
    "dump_load_model",
    "electronic_pq",
    "im_derivatives",
    "im_init",
    "im_jacobian",
    "im_pq",
    "instantiate",
    "load_ranges",
    "parse_load_model",
    "pullout_power",
    "sample_params",
    "sp_im_update",
    "zip_pq",
]
