"""Linear SPD solves and the single reaction-diffusion step.

``solve_reaction_diffusion`` discretizes

    int a grad u . grad v + int b u v = int f v     for all v

and checks the discrete maximum principle on the result: with ``a, b > 0``
and ``f >= 0`` the solution satisfies ``0 <= u <= sup f / inf b``, and
``f >= lam * b`` implies ``u >= lam``.  Both hold exactly for the M-matrix;
the iterative solve is allowed a slack of ``10 * tol`` relative to the
bound's scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvariantViolation, PreconditionError
from .grid import DiscreteOperator, Mesh, assemble_operator

DEFAULT_TOL = 1e-10
SLACK_FACTOR = 10.0


@dataclass
class SolveReport:
    iterations: int
    residual: float
    relative_residual: float
    converged: bool
    # (min u, max u, b0, sup |f|), set by solve_reaction_diffusion
    bounds_certificate: tuple[float, float, float, float] | None = None


def solve_spd(
    op: DiscreteOperator,
    rhs,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    x0=None,
) -> tuple[np.ndarray, SolveReport]:
    """Jacobi-preconditioned conjugate gradients.

    Stops once the true residual satisfies ``|A u - rhs|_2 <= tol |rhs|_2``.
    Raises ``ConvergenceError`` after ``max_iter`` iterations (default
    ``10 * n``).
    """
    if not tol > 0:
        raise PreconditionError(f"tol must be positive, got {tol}")
    A = op.matrix
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, 0.0, True)
    target = tol * bnorm
    inv_diag = 1.0 / op.diagonal

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - A @ x
    rnorm = float(np.linalg.norm(r))
    it = 0
    while True:
        if rnorm <= target:
            # the recursive residual drifts; confirm against the true one
            r = rhs - A @ x
            rnorm = float(np.linalg.norm(r))
            if rnorm <= target:
                return x, SolveReport(it, rnorm, rnorm / bnorm, True)
        if it >= max_iter:
            report = SolveReport(it, rnorm, rnorm / bnorm, False)
            raise ConvergenceError(
                f"CG did not converge in {max_iter} iterations "
                f"(relative residual {rnorm / bnorm:.3e} > {tol:.1e})",
                report,
            )
        # (re)start the Krylov recursion from the current residual
        z = inv_diag * r
        p = z.copy()
        rz = float(r @ z)
        while it < max_iter:
            Ap = A @ p
            pAp = float(p @ Ap)
            if pAp <= 0:
                raise ConvergenceError(
                    "operator is not positive definite along a search direction",
                    SolveReport(it, rnorm, rnorm / bnorm, False),
                )
            step = rz / pAp
            x += step * p
            r -= step * Ap
            it += 1
            rnorm = float(np.linalg.norm(r))
            if rnorm <= target:
                break
            z = inv_diag * r
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new


def bound_slack(tol: float, scale: float) -> float:
    """Allowed violation of an exact discrete bound after an iterative solve."""
    return SLACK_FACTOR * tol * max(1.0, abs(scale))


def solve_reaction_diffusion(
    mesh: Mesh,
    a,
    b,
    f,
    tol: float = DEFAULT_TOL,
    lower: float | None = None,
    average: str = "harmonic",
    x0=None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``b u - div(a grad u) = f`` with zero-flux walls and check its bounds.

    ``lower``, when given, is a constant ``lam`` with ``f >= lam * b``
    cellwise; the solution is then also checked against ``u >= lam``.
    """
    a = mesh.check_field(a, "a")
    b = mesh.check_field(b, "b")
    f = mesh.check_field(f, "f")
    if np.any(a <= 0):
        raise PreconditionError("diffusion coefficient must be positive")
    if np.any(b <= 0):
        raise PreconditionError("reaction coefficient must be positive")
    # sources assembled from earlier solves may carry roundoff-level negatives
    if f.min() < -bound_slack(tol, f.max()):
        raise PreconditionError(f"source must be nonnegative (min f = {f.min():.3e})")

    op = assemble_operator(mesh, a, b, average=average)
    u, report = solve_spd(op, f * mesh.cell_volume, tol=tol, x0=x0)

    b0 = float(b.min())
    sup_f = float(f.max())
    upper = sup_f / b0
    report.bounds_certificate = (float(u.min()), float(u.max()), b0, sup_f)
    slack = bound_slack(tol, upper)
    problems = []
    if u.min() < -slack:
        problems.append(f"min u = {u.min():.3e} < 0")
    if u.max() > upper + slack:
        problems.append(f"max u = {u.max():.6g} > sup f / b0 = {upper:.6g}")
    if lower is not None:
        if np.any(f < lower * b - bound_slack(tol, lower * b.max())):
            raise PreconditionError("f >= lower * b does not hold")
        if u.min() < lower - slack:
            problems.append(f"min u = {u.min():.6g} < lower = {lower:.6g}")
    if problems:
        raise InvariantViolation("maximum principle violated: " + "; ".join(problems))
    return u, report
