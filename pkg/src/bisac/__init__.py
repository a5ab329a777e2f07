"""Bistatic integrated sensing and communication hybrid beamforming.

Closed-form position error bounds for bistatic OFDM sensing, and waveform
designers that maximize spectral efficiency subject to a position error
bound constraint at chosen targets.
"""

from .arrays import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    Direction,
    SubcarrierGrid,
    steering_derivatives,
    steering_vector,
    wavenumber,
    wavenumber_derivatives,
)
from .channel import (
    CommChannel,
    CommChannelParams,
    HybridBeamformer,
    PathParams,
    SensingScene,
    comm_channel_realize,
    optimal_digital_beamformer,
    path_parameters,
    sensing_channel,
    sensing_path_gain,
    spectral_efficiency,
)
from .digital import (
    JointDesignResult,
    ScaConfig,
    normalize_power,
    rtr_sca_design,
    sca_digital_design,
)
from .manifold import (
    AnalogDesignResult,
    TrustRegionConfig,
    rsd_analog_design,
    rtr_analog_design,
)
from .omp import (
    Dictionary,
    OmpDesignResult,
    Partition,
    beam_steering_design,
    build_dictionary,
    comm_only_omp,
    norm_bound_check,
    omp_select,
    pc_omp_design,
    pc_omp_from_channel,
    positioning_side_design,
)
from .peb import (
    FimBundle,
    GeomCoeffs,
    PebRequirement,
    ad_ratio,
    beamforming_gains,
    crb_toa_equal_gain,
    crbs,
    efim,
    efim_aoa_toa,
    fim_bundle,
    fim_submatrix,
    geometric_coeffs,
    kappa_threshold,
    position_from_aoa_toa,
    position_jacobian,
    speb,
)
from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .results import ResultTable, read_table
from .experiments import (
    design_once,
    run_convergence,
    run_peb_cdf,
    run_peb_heatmap,
    run_se_vs_gamma,
    run_se_vs_nrf,
    run_se_vs_snr,
    self_check,
)

__version__ = "0.1.0"
