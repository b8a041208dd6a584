"""Physics-informed training of neural correction gains for contraction-based observers."""
from .estimator import ContractionObserver
from .exceptions import CheckpointError, ConfigError, NumericError, ShapeError
from .loss import LossSpec, bc_loss, contraction_matrix, leading_minors, minor_penalty, mpdi_loss, total_loss
from .network import Mlp, forward, init_params, input_jacobian, lipschitz_bound, loss_gradient, pack, unpack
from .optimize import TrainConfig, TrainRecord, train
from .sampling import CollocationSet, batches, sample_collocation
from .simulate import SimConfig, Trajectory, iss_envelope, mse_percent
from .systems import SystemModel, register_system, reverse_duffing, vanderpol
from .verify import VerificationReport, check_bc_grid, check_mpdi_grid, estimate_eps_bar

__version__ = "0.1.0"
