"""Apply a fractional covariance operator and watch the discretization converge.

The operator (kappa^2 - Laplace)^{-alpha} with Neumann conditions is applied
through sinc quadrature over shifted solves; on the separable cosine
eigenfunction the exact answer is known, so the L2 error is measurable.
"""

import math

import numpy as np

from wmprior import CovarianceApplicator, Grid, PriorConfig

KAPPA2 = 100.0

for alpha in (0.5, 1.5, 2.5):
    print(f"\nalpha = {alpha}  (exact eigenvalue factor {(KAPPA2 + 8 * math.pi**2) ** -alpha:.6g})")
    print(f"{'grid':>6} {'n_sigma':>8} {'iters':>6} {'L2 error':>12}")
    for nx in (33, 65, 129):
        grid = Grid(nx, nx)
        app = CovarianceApplicator(grid, PriorConfig(alpha=alpha, kappa2=KAPPA2))
        x, y = grid.node_coords()
        f = np.cos(2 * math.pi * x) * np.cos(2 * math.pi * y)
        u = app.apply_cov(f)
        err = u - (KAPPA2 + 8 * math.pi**2) ** (-alpha) * f
        l2 = math.sqrt(err @ (app.m @ err))
        n_sigma = app.rule.n_sigma if app.rule else 0
        iters = app.last_report.iterations if app.last_report else 0
        print(f"{nx:>6} {n_sigma:>8} {iters:>6} {l2:>12.3e}")

print("\nHalving h divides the error by about 4: second-order convergence.")
print("(This right-hand side is a discrete eigenfunction, so the shared-basis")
print("solver finishes in one iteration; generic fields take 9-22, see demos 3-4.)")
