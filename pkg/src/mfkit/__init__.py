"""Particle methods for mean field control, potential mean field games of controls
and mean field Langevin dynamics."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DegenerateInputError, DomainError, EvaluationError, MFKitError,
                     SimulationBlowUp, SolverError)
from .noise import JumpMeasureSpec, NoisePanel, TimeGrid, coarsen_panel, sample_noise_panel
from .measure import (EmpiricalLaw, LawBatch, entropy_estimate, linear_derivative_fd, linear_derivative_field,
                      sliced_wasserstein2, wasserstein2, wasserstein2_1d)
from .dynamics import (MeasureFlow, ModelDynamics, SimulationResult, simulate_controlled, simulate_mckean_vlasov,
                       simulate_vs_flow)
from .policy import (FeedbackPolicy, affine_policy, flocking_affine_policy, make_policy, torus_fourier_policy)
from .costs import (CostEstimate, CostSpec, Discount, GameCost, build_game_cost, build_game_cost_lawdep,
                    eval_game_cost, eval_mfc_cost)
from .models import (ModelBundle, Potential, make_cucker_smale, make_kuramoto, make_lq, make_model,
                     make_price_game, make_tilde_F)
from .solve import (OptimizerConfig, SolveReport, best_response, exploitability, fixed_point_residual,
                    mixture_derivative_check, solve_mfc)
from .langevin import compare_mfld_to_mfc, run_mfld
from .io import emit_csv
