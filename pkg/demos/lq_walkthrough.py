"""Linear-quadratic mean field control, end to end.

Solves the LQ problem over affine feedbacks, compares with the closed form,
then checks that the optimum is also a Nash equilibrium of the derived game.

    python demos/lq_walkthrough.py
"""
import numpy as np

from mfkit import (Discount, OptimizerConfig, TimeGrid, affine_policy, build_game_cost, exploitability, make_lq,
                   sample_noise_panel, solve_mfc)
from mfkit.measure import LawBatch

b = make_lq(kappa=1.0, beta=1.0, sigma=1.0)
cf = b.closed_form
print(f"closed form: a = {cf['a']:.3f}, b = {cf['b']:.3f}, optimal slope {cf['slope']:.3f}")

# a smaller panel than the acceptance run; expect a few percent of MC error
panel = sample_noise_panel(TimeGrid(8.0, 400), 4, 1000, seed=0)
rep = solve_mfc(b.dynamics, b.cost, affine_policy(1, 1, 8.0), panel, b.x0, OptimizerConfig(iters=50),
                Discount(1.0))
var0 = LawBatch(panel.sample_initial(b.x0, 1)).variance().mean()
print(f"learned slope {rep.theta[0]:.3f}, intercept {rep.theta[1]:.3f}")
print(f"value {rep.cost:.4f} +/- {rep.cost_stderr:.4f}, closed form {cf['a'] * var0 + cf['b']:.4f}")

# start the best response away from the candidate; from the candidate itself it often cannot improve at all
ex = exploitability(rep.policy, b.dynamics, build_game_cost(b.cost), panel, b.x0, OptimizerConfig(iters=30),
                    Discount(1.0), br_start=rep.policy.with_params(rep.theta + 0.3))
print(f"exploitability {ex.gap:.2e} +/- {ex.stderr:.1e} (J_g = {ex.J_star:.4f})")

zero = exploitability(affine_policy(1, 1, 8.0), b.dynamics, build_game_cost(b.cost), panel, b.x0,
                      OptimizerConfig(iters=30), Discount(1.0))
print(f"for comparison, the zero policy leaves a gap of {zero.gap:.3f}")
print(f"best response slope against the zero policy's flow: {np.round(zero.best_response.theta, 3)}")
