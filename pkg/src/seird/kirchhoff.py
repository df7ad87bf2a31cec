"""Kirchhoff transform and the implicit step for the living population.

With ``u = K(n)``, ``K(y) = int_0^y kappa~``, the quasilinear diffusion
``div(kappa~(n) grad n)`` becomes ``Laplacian u`` and one implicit step
for ``n`` reads

    lam K^{-1}(u) - Laplacian u = n_k / tau,   lam = 1/tau + phi_d i_k - alpha + mu

with zero-flux walls.  Its discrete form is the gradient of the strictly
convex energy

    J(u) = 1/2 int |grad u|^2 + int lam Phi(u) - 1/tau int n_k u,
    Phi(r) = int_0^r K^{-1},

which is minimized by Newton's method with an Armijo line search on ``J``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .elliptic import DEFAULT_TOL, bound_slack, solve_spd
from .errors import ConvergenceError, InvariantViolation, PreconditionError
from .grid import DiscreteOperator, Mesh, stiffness_matrix
from .model import ModelParams, TruncatedNonlinearity


class KirchhoffMap:
    """``K`` built from a truncated ``kappa``: linear tails outside ``[n_low, n_up]``."""

    def __init__(self, tnl: TruncatedNonlinearity):
        self.tnl = tnl
        base = tnl.base
        self.n_low = lo = tnl.ledger.n_low
        self.n_up = hi = tnl.ledger.n_up
        self.k_low = float(base.kappa(lo))
        self.k_up = float(base.kappa(hi))
        self._P_lo = float(base.kappa_integral(lo))
        self._M_lo = float(base.kappa_moment(lo))
        self.K_low = self.k_low * lo
        self.K_up = self.K_low + float(base.kappa_integral(hi)) - self._P_lo
        self._Q_low = 0.5 * self.k_low * lo * lo
        self._Q_up = self._Q_low + float(base.kappa_moment(hi)) - self._M_lo

    def kappa(self, y):
        return self.tnl.kappa(y)

    def eval(self, y):
        y = np.asarray(y, dtype=float)
        base = self.tnl.base
        mid = self.K_low + base.kappa_integral(np.clip(y, self.n_low, self.n_up)) - self._P_lo
        return np.where(
            y <= self.n_low,
            self.k_low * y,
            np.where(y >= self.n_up, self.K_up + self.k_up * (y - self.n_up), mid),
        )

    def invert(self, u):
        u = np.asarray(u, dtype=float)
        base = self.tnl.base
        um = np.clip(u, self.K_low, self.K_up)
        y = base.kappa_integral_inverse(um - self.K_low + self._P_lo)
        y = np.clip(y, self.n_low, self.n_up)
        # one Newton polish on the closed form
        y = np.clip(y - (self.eval(y) - um) / base.kappa(y), self.n_low, self.n_up)
        return np.where(
            u <= self.K_low,
            u / self.k_low,
            np.where(u >= self.K_up, self.n_up + (u - self.K_up) / self.k_up, y),
        )

    def invert_derivative(self, u):
        """``(K^{-1})'(u) = 1 / kappa~(K^{-1}(u))``."""
        return 1.0 / self.kappa(self.invert(u))

    def moment(self, y):
        """``int_0^y z kappa~(z) dz``."""
        y = np.asarray(y, dtype=float)
        base = self.tnl.base
        mid = self._Q_low + base.kappa_moment(np.clip(y, self.n_low, self.n_up)) - self._M_lo
        return np.where(
            y <= self.n_low,
            0.5 * self.k_low * y * y,
            np.where(y >= self.n_up, self._Q_up + 0.5 * self.k_up * (y * y - self.n_up**2), mid),
        )

    def potential(self, u):
        """``Phi(u) = int_0^u K^{-1}``, evaluated as the moment at ``K^{-1}(u)``."""
        return self.moment(self.invert(u))


def kirchhoff_eval(kmap: KirchhoffMap, y):
    return kmap.eval(y)


def kirchhoff_invert(kmap: KirchhoffMap, u):
    return kmap.invert(u)


@dataclass
class NewtonReport:
    iterations: int = 0
    converged: bool = False
    residuals: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    step_lengths: list[float] = field(default_factory=list)
    linear_iterations: list[int] = field(default_factory=list)
    target: float = 0.0


@dataclass
class NStepProblem:
    """Discrete energy, gradient and Hessian of one ``n`` step."""

    mesh: Mesh
    kmap: KirchhoffMap
    lam: np.ndarray
    n_k: np.ndarray
    tau: float
    stiffness: sp.csr_matrix = None

    def __post_init__(self):
        if self.stiffness is None:
            self.stiffness = stiffness_matrix(self.mesh)

    @property
    def vol(self) -> float:
        return self.mesh.cell_volume

    def energy(self, u) -> float:
        Lu = self.stiffness @ u
        return float(
            0.5 * (u @ Lu)
            + self.vol * np.sum(self.lam * self.kmap.potential(u))
            - self.vol / self.tau * (self.n_k @ u)
        )

    def gradient(self, u) -> np.ndarray:
        return (
            self.stiffness @ u
            + self.vol * self.lam * self.kmap.invert(u)
            - self.vol / self.tau * self.n_k
        )

    def hessian(self, u) -> DiscreteOperator:
        d = self.vol * self.lam * self.kmap.invert_derivative(u)
        H = (self.stiffness + sp.diags(d)).tocsr()
        return DiscreteOperator(H, H.diagonal())

    def residual_norm(self, grad) -> float:
        """``H``-norm of the strong residual ``grad / vol``."""
        return float(np.sqrt(np.sum(grad * grad) / self.vol))


def step_coefficient(params: ModelParams, i_k, tau: float) -> np.ndarray:
    """Cellwise ``lam = 1/tau + phi_d i_k - alpha + mu``."""
    return 1.0 / tau + params.phi_d * np.asarray(i_k, dtype=float) - params.alpha + params.mu


def newton_minimize(
    problem: NStepProblem,
    u0,
    tol: float = DEFAULT_TOL,
    max_iter: int = 50,
    linear_tol: float = 1e-12,
) -> tuple[np.ndarray, NewtonReport]:
    """Newton iteration on ``grad J = 0`` with Armijo backtracking on ``J``.

    Stops when the residual ``H``-norm drops below ``tol * |n_k|_H / tau``.
    """
    u = np.array(u0, dtype=float)
    n_norm = float(np.sqrt(np.sum(problem.n_k**2) * problem.vol))
    target = tol * n_norm / problem.tau
    report = NewtonReport(target=target)
    g = problem.gradient(u)
    J = problem.energy(u)
    report.residuals.append(problem.residual_norm(g))
    report.energies.append(J)
    while report.residuals[-1] > target:
        if report.iterations >= max_iter:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations "
                f"(residual {report.residuals[-1]:.3e} > {target:.3e})",
                report,
            )
        H = problem.hessian(u)
        delta, lin = solve_spd(H, -g, tol=linear_tol)
        report.linear_iterations.append(lin.iterations)
        slope = float(g @ delta)
        t = 1.0
        while True:
            trial = u + t * delta
            J_trial = problem.energy(trial)
            # below roundoff of J the Armijo test is meaningless: take the step
            if J_trial <= J + 1e-4 * t * slope or abs(slope) <= 1e-13 * max(1.0, abs(J)):
                break
            t *= 0.5
            if t < 1e-10:
                raise ConvergenceError("Newton line search failed to decrease the energy", report)
        u, J = trial, J_trial
        g = problem.gradient(u)
        report.iterations += 1
        report.step_lengths.append(t)
        report.residuals.append(problem.residual_norm(g))
        report.energies.append(J)
    report.converged = True
    return u, report


def solve_n_step(
    mesh: Mesh,
    n_k,
    i_k,
    params: ModelParams,
    kmap: KirchhoffMap,
    tau: float,
    tol: float = DEFAULT_TOL,
    check_bounds: bool = True,
) -> tuple[np.ndarray, NewtonReport]:
    """Advance the living population one implicit step; returns ``n_{k+1}``."""
    n_k = mesh.check_field(n_k, "n_k")
    i_k = mesh.check_field(i_k, "i_k")
    slack_n = bound_slack(tol, n_k.max())
    if n_k.min() < -slack_n:
        raise PreconditionError(f"n_k must be nonnegative (min {n_k.min():.3e})")
    if i_k.min() < -bound_slack(tol, i_k.max()):
        raise PreconditionError(f"i_k must be nonnegative (min {i_k.min():.3e})")
    lam = step_coefficient(params, np.maximum(i_k, 0.0), tau)
    if lam.min() <= 0:
        raise PreconditionError(
            f"1/tau + phi_d i_k - alpha + mu must be positive (min {lam.min():.3e})"
        )

    problem = NStepProblem(mesh, kmap, lam, n_k, tau)
    u, report = newton_minimize(problem, kmap.eval(n_k), tol=tol)
    n_next = kmap.invert(u)

    if check_bounds:
        growth = max(params.alpha - params.mu, 0.0)
        decay = max(params.mu - params.alpha, 0.0)
        upper = n_k.max() / (1.0 - tau * growth)
        lower = n_k.min() / (1.0 + tau * (params.phi_d * max(i_k.max(), 0.0) + decay))
        slack = bound_slack(tol, upper)
        problems = []
        if n_next.max() > upper + slack:
            problems.append(f"max n = {n_next.max():.12g} > {upper:.12g}")
        if n_next.min() < lower - slack:
            problems.append(f"min n = {n_next.min():.12g} < {lower:.12g}")
        if problems:
            raise InvariantViolation("n step bounds violated: " + "; ".join(problems))
    return n_next, report
