"""Discontinuous integral control: simulation, chattering metrics and
sampled Lyapunov certificates for the perturbed double integrator and
benchmark plants reduced to it."""

from .homogeneous import (
    HomogeneityReport,
    Weights,
    check_field_homogeneity,
    dilation,
    hom_norm,
    signed_pow,
)
from .controllers import (
    ConstantController,
    ControllerState,
    GainSet,
    OutputFeedbackDIC,
    StateFeedbackDIC,
    TwistingController,
    dic_control,
    dic_integrator_rate,
    observer_rate,
    of_error_field,
    of_observer_loop_field,
    scale_gains,
    sf_error_field,
    twisting_control,
)
from .plants import (
    DoubleIntegrator,
    NormalForm,
    Pendulum,
    PendulumParams,
    Perturbation,
    ReferenceSignal,
    double_integrator_rhs,
    pendulum_rhs,
    perturbation_eval,
    to_normal_form,
)
from .simulation import (
    ChatteringReport,
    PrecisionStudy,
    SettlingReport,
    SimConfig,
    SimulationDiverged,
    StudyError,
    Trajectory,
    chattering_metric,
    precision_scaling_study,
    settling_metrics,
    simulate,
)
from .lyapunov import (
    OF_WEIGHTS,
    SF_WEIGHTS,
    CertificateReport,
    OFCertParams,
    SFCertParams,
    cbrt_shift_defect,
    certify_of,
    certify_sf,
    grad_v_sf,
    mu_threshold,
    search_parameters,
    settling_bound,
    sf_affine_components,
    sphere_sample,
    v_of,
    v_sf,
    vdot_of,
    vdot_sf,
    vdot_sf_parts,
)
from .config import (
    ConfigError,
    RunConfig,
    load_config,
    parse_config,
    serialize_config,
)
from .runner import (
    RunResult,
    StudyOutcome,
    bundled_config_text,
    reproduce_figures,
    run,
    study_certify,
    study_precision,
    study_scaling,
)

__version__ = "0.1.0"
