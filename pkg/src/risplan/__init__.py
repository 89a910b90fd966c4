"""risplan: minimum-RIS deployment planning for mmWave cabin coverage."""

__version__ = "0.1.0"

from .channel import (
    ChannelSet,
    SynthModel,
    apply_ris_area_scaling,
    cascade,
    export_cir,
    import_cir,
    steering_vector,
    synth_channel_set,
)
from .optimizer import (
    DeploymentError,
    FppScaConfig,
    ScaState,
    branch_and_bound,
    build_p3,
    build_quad_data,
    fpp_sca,
    normalize_z,
    run_threshold_sweep,
)
from .radio import (
    DeploymentSolution,
    OutageError,
    PhaseConfig,
    aligned_phases_single_antenna,
    effective_channel,
    evaluate_solution,
    mrt_precoder,
    random_phases,
    rate,
    snr,
)
from .scene import (
    CabinScene,
    RadioConfig,
    RisCandidate,
    build_default_cabin,
    load_scene,
    save_scene,
    validate,
)

__all__ = [
    "CabinScene",
    "ChannelSet",
    "DeploymentError",
    "DeploymentSolution",
    "FppScaConfig",
    "OutageError",
    "PhaseConfig",
    "RadioConfig",
    "RisCandidate",
    "ScaState",
    "aligned_phases_single_antenna",
    "apply_ris_area_scaling",
    "branch_and_bound",
    "build_default_cabin",
    "build_p3",
    "build_quad_data",
    "cascade",
    "effective_channel",
    "evaluate_solution",
    "export_cir",
    "fpp_sca",
    "import_cir",
    "load_scene",
    "mrt_precoder",
    "normalize_z",
    "random_phases",
    "rate",
    "run_threshold_sweep",
    "save_scene",
    "snr",
    "steering_vector",
    "synth_channel_set",
    "validate",
]
