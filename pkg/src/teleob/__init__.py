"""Force-sensorless bilateral teleoperation testbench.

Identification of interval fuzzy arm models from data, closed-form
moving-horizon estimation of clean states and bounded uncertainty
factors, model-free force observation, classical observer baselines, and
a delayed four-channel master-slave loop on a simulated planar arm.
"""

from .clustering import ClusterSet, GkOptions, gk_cluster
from .errors import (ClusteringError, ConfigurationError,
                     DegenerateEstimatorError, DivergenceError,
                     ExcitationError, IdentificationError,
                     IllConditionedModelError, SingularityError, TeleobError)
from .fuzzy import (BlendedDynamics, IntervalMembership, LocalModels, Sample,
                    Type2FuzzyModel, blend, blur_model, cluster_samples,
                    crisp_memberships, fit_local_models, infer_membership,
                    load_model, predict_batch, save_model)
from .identify import IdentReport, generate_ident_data, identify
from .ltv import LtvMatrices, assemble_ltv
from .metrics import MetricsReport, compute_metrics, load_trace, write_trace
from .mhe import (IssCertificate, MheConfig, MheEstimate, MheSolution,
                  MheWindow, MovingHorizonEstimator, StackedSystem,
                  build_stacks, iss_check, rollout, solve_window, window_cost)
from .observers import (ForceObserver, ForceObserverBank, NominalArmModel,
                        NonlinearDisturbanceObserver, ReactionForceObserver,
                        VelocityObserver)
from .plant import (DisturbanceProcess, Environment, OperatorModel, PlantModel,
                    PlantState, contact_torque, gravity_torque, mass_matrix,
                    operator_torque, step_dynamics, total_energy)
from .scenario import (ScenarioConfig, SegmentConfig, build_simulation,
                       free_hard_scenario, reference_weights,
                       soft_hard_scenario)
from .teleop import (BoundedDelayProcess, DelayChannel, GainReport,
                     TeleopGains, TeleopSimulation, consistent_gains,
                     master_control, slave_control, validate_gains)

__version__ = "0.1.0"
