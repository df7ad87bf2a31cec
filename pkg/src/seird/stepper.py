"""Semi-implicit time stepping of the (n, s, i, h) system.

Each step solves, in this order,

* ``n``: the nonlinear Kirchhoff step (``kirchhoff.solve_n_step``);
* ``s``: ``(1/tau + A~(n')(beta_i i + beta_e (h - s)) + mu) s' - div(kappa~(n') grad s') = s/tau + alpha n'``;
* ``h``: ``(1/tau + mu + sigma + phi_e) h' - div(...) = h/tau + alpha n' + (sigma + phi_e) s'``;
* ``i``: ``(1/tau + phi_d n' + phi_r + mu) i' - div(...) = i/tau + sigma (h' - s')``;

where unprimed quantities are lagged from step ``k``.  The ``i`` equation
needs ``h' - s'``, hence ``h`` is solved before ``i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .elliptic import DEFAULT_TOL, SolveReport, bound_slack, solve_reaction_diffusion
from .errors import (
    ConvergenceError,
    InvariantViolation,
    PreconditionError,
    SimulationError,
)
from .grid import Mesh, compute_norm
from .kirchhoff import KirchhoffMap, NewtonReport, solve_n_step
from .model import (
    BoundsLedger,
    ModelParams,
    Nonlinearity,
    TruncatedNonlinearity,
    compute_bounds,
    truncate_nonlinearity,
    validate_tau,
)

log = logging.getLogger(__name__)

UNKNOWNS = ("n", "s", "i", "h")


@dataclass(frozen=True)
class State:
    k: int
    t: float
    n: np.ndarray
    s: np.ndarray
    i: np.ndarray
    h: np.ndarray

    def field(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise PreconditionError(f"T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise PreconditionError(f"N must be a positive integer, got {self.N}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    def check(self, params: ModelParams) -> None:
        verdict = validate_tau(params, self.tau)
        if not verdict:
            raise PreconditionError(f"inadmissible time step: {verdict.reason}")


@dataclass
class StepReport:
    newton: NewtonReport
    s: SolveReport
    h: SolveReport
    i: SolveReport
    ordering_gap: float | None = None


@dataclass
class Trajectory:
    mesh: Mesh
    params: ModelParams
    nonlinearity: Nonlinearity
    ledger: BoundsLedger
    grid: TimeGrid
    tol: float
    states: list[State] = field(default_factory=list)
    reports: list[StepReport] = field(default_factory=list)
    deceased: list[np.ndarray] = field(default_factory=list)

    @property
    def tau(self) -> float:
        return self.grid.tau

    @property
    def times(self) -> np.ndarray:
        return np.array([st.t for st in self.states])

    def series(self, name: str) -> np.ndarray:
        """Samples of one unknown, shape ``(steps + 1, n_cells)``."""
        if name == "d":
            return np.array(self.deceased)
        return np.array([st.field(name) for st in self.states])


class Violation(NamedTuple):
    k: int
    cell: int
    quantity: str
    value: float
    bound: float


def check_state(state: State, ledger: BoundsLedger, tol: float = DEFAULT_TOL) -> list[Violation]:
    """Compare a state with the bounds ledger and the sign/ordering conditions."""
    found = []

    def flag(mask, quantity, values, bound):
        for cell in np.flatnonzero(mask):
            b = bound if np.isscalar(bound) else bound[cell]
            found.append(Violation(state.k, int(cell), quantity, float(values[cell]), float(b)))

    n, s, i, h = state.n, state.s, state.i, state.h
    sl_n = bound_slack(tol, ledger.n_up)
    flag(n < ledger.n_low - sl_n, "n >= n_low", n, ledger.n_low)
    flag(n > ledger.n_up + sl_n, "n <= n_up", n, ledger.n_up)
    sl_s = bound_slack(tol, ledger.s_up)
    flag(s < -sl_s, "s >= 0", s, 0.0)
    flag(s > ledger.s_up + sl_s, "s <= s_up", s, ledger.s_up)
    sl_h = bound_slack(tol, ledger.h_up)
    flag(h - s < -sl_h, "h >= s", h, s)
    flag(h > ledger.h_up + sl_h, "h <= h_up", h, ledger.h_up)
    sl_i = bound_slack(tol, ledger.i_up)
    flag(i < -sl_i, "i >= 0", i, 0.0)
    flag(i > ledger.i_up + sl_i, "i <= i_up", i, ledger.i_up)
    return found


def mollify_initial(mesh: Mesh, u, tau: float, tol: float = 1e-12) -> np.ndarray:
    """Smooth initial data by one singular-perturbation solve ``(I - tau Lap) u_tau = u``.

    The result stays within ``[inf u, sup u]`` and does not increase the
    ``H``-norm; both are checked.
    """
    u = mesh.check_field(u, "u")
    if not 0 < tau < 1:
        raise PreconditionError(f"mollification needs tau in (0, 1), got {tau}")
    lo, hi = float(u.min()), float(u.max())
    shift = min(lo, 0.0)
    # the solve is linear and preserves constants, so shift to nonnegative data
    u_tau, _ = solve_reaction_diffusion(
        mesh, np.full(mesh.n_cells, tau), np.ones(mesh.n_cells), u - shift, tol=tol,
    )
    u_tau = u_tau + shift
    slack = bound_slack(tol, max(abs(lo), abs(hi)))
    if u_tau.min() < lo - slack or u_tau.max() > hi + slack:
        raise InvariantViolation(
            f"mollified data [{u_tau.min():.6g}, {u_tau.max():.6g}] left [{lo:.6g}, {hi:.6g}]"
        )
    if compute_norm(mesh, u_tau) > compute_norm(mesh, u) * (1 + slack):
        raise InvariantViolation("mollification increased the H-norm")
    return u_tau


def advance_step(
    mesh: Mesh,
    state: State,
    params: ModelParams,
    kmap: KirchhoffMap,
    tnl: TruncatedNonlinearity,
    tau: float,
    tol: float = DEFAULT_TOL,
    average: str = "harmonic",
    check_ordering: bool = True,
) -> tuple[State, StepReport]:
    """One semi-implicit step from ``state`` to ``state.k + 1``."""
    s_k, i_k, h_k = state.s, state.i, state.h
    n1, newton = solve_n_step(mesh, state.n, i_k, params, kmap, tau, tol=tol)

    a = tnl.kappa(n1)
    A1 = tnl.A(n1)
    e_k = h_k - s_k
    contact = params.beta_i * i_k + params.beta_e * e_k

    b_s = 1.0 / tau + A1 * contact + params.mu
    s1, rep_s = solve_reaction_diffusion(
        mesh, a, b_s, s_k / tau + params.alpha * n1, tol=tol, average=average
    )

    c = params.exposed_exit
    b_h = np.full(mesh.n_cells, 1.0 / tau + params.mu + c)
    h1, rep_h = solve_reaction_diffusion(
        mesh, a, b_h, h_k / tau + params.alpha * n1 + c * s1, tol=tol, average=average
    )

    b_i = 1.0 / tau + params.phi_d * n1 + params.phi_r + params.mu
    i1, rep_i = solve_reaction_diffusion(
        mesh, a, b_i, i_k / tau + params.sigma * (h1 - s1), tol=tol, average=average
    )

    gap = None
    if check_ordering:
        # e' = h' - s' solves an equation with a nonnegative source, so h' >= s'
        f_e = A1 * s1 * contact + e_k / tau
        e1, _ = solve_reaction_diffusion(mesh, a, b_h, f_e, tol=tol, average=average)
        gap = float(np.max(np.abs((h1 - s1) - e1)))
        if gap > bound_slack(tol, max(h1.max(), 1.0)):
            raise InvariantViolation(
                f"step {state.k + 1}: h - s differs from the exposed solve by {gap:.3e}"
            )

    new = State(state.k + 1, (state.k + 1) * tau, n1, s1, i1, h1)
    return new, StepReport(newton, rep_s, rep_h, rep_i, gap)


class Compartments(NamedTuple):
    s: np.ndarray
    e: np.ndarray
    r: np.ndarray
    r_negative: bool


def reconstruct_compartments(state: State, tol: float = DEFAULT_TOL) -> Compartments:
    """Recover ``e = h - s`` and ``r = n - h - i``; ``r`` is not sign-constrained."""
    e = state.h - state.s
    r = state.n - state.h - state.i
    r_negative = bool(r.min() < -bound_slack(tol, state.n.max()))
    if r_negative:
        log.warning("step %d: recovered population negative (min r = %.3e)", state.k, r.min())
    return Compartments(state.s, e, r, r_negative)


def integrate_deceased(trajectory: Trajectory, phi_d: float, d0=None) -> list[np.ndarray]:
    """``d_{k+1} = d_k + tau phi_d i_{k+1} n_{k+1}``, cellwise.

    Roundoff-level negative values of ``i`` are read as zero so that ``d``
    never decreases.
    """
    tau = trajectory.tau
    d = np.zeros(trajectory.mesh.n_cells) if d0 is None else np.array(d0, dtype=float)
    series = [d]
    for st in trajectory.states[1:]:
        d = d + tau * phi_d * np.maximum(st.i, 0.0) * st.n
        series.append(d)
    return series


def check_initial_data(mesh: Mesh, n0, s0, i0, h0) -> None:
    if not n0.min() > 0:
        raise PreconditionError(f"initial n must have inf n0 > 0 (min {n0.min():.6g})")
    if s0.min() < 0:
        raise PreconditionError(f"initial s must be nonnegative (min {s0.min():.6g})")
    if np.any(h0 < s0):
        raise PreconditionError("initial data must satisfy h0 >= s0")
    if i0.min() < 0:
        raise PreconditionError(f"initial i must be nonnegative (min {i0.min():.6g})")


def simulate(
    mesh: Mesh,
    params: ModelParams,
    nonlinearity: Nonlinearity,
    T: float,
    N: int,
    n0,
    s0,
    i0,
    h0,
    d0=None,
    mollify: bool = False,
    tol: float = DEFAULT_TOL,
    average: str = "harmonic",
    ledger: BoundsLedger | None = None,
    check_ordering: bool = True,
) -> Trajectory:
    """Run ``N`` steps on ``[0, T]`` and verify every state against the bounds ledger.

    The ledger is computed from the grid extrema of the (unmollified) data
    unless one is supplied.  Failures raise with the partial trajectory
    attached as ``exc.trajectory``.
    """
    grid = TimeGrid(T, N)
    grid.check(params)
    tau = grid.tau
    n0, s0, i0, h0 = (mesh.check_field(v, name) for v, name in zip((n0, s0, i0, h0), UNKNOWNS))
    check_initial_data(mesh, n0, s0, i0, h0)
    if ledger is None:
        ledger = compute_bounds(
            params, T, n0.max(), s0.max(), h0.max(), i0.max(), n0.min(), nonlinearity
        )
    tnl = truncate_nonlinearity(nonlinearity, ledger)
    kmap = KirchhoffMap(tnl)

    if mollify:
        e0 = mollify_initial(mesh, h0 - s0, tau)
        s0 = mollify_initial(mesh, s0, tau)
        h0 = s0 + e0
        n0 = mollify_initial(mesh, n0, tau)
        i0 = mollify_initial(mesh, i0, tau)

    traj = Trajectory(mesh, params, nonlinearity, ledger, grid, tol)
    state = State(0, 0.0, n0, s0, i0, h0)
    traj.states.append(state)
    violations = check_state(state, ledger, tol)
    if violations:
        raise InvariantViolation("initial data outside the bounds ledger", violations, traj)

    for _ in range(N):
        try:
            state, report = advance_step(
                mesh, state, params, kmap, tnl, tau, tol=tol, average=average,
                check_ordering=check_ordering,
            )
        except InvariantViolation as exc:
            exc.trajectory = traj
            raise
        except (ConvergenceError, PreconditionError) as exc:
            raise SimulationError(f"step {state.k + 1} failed: {exc}", traj, exc) from exc
        traj.states.append(state)
        traj.reports.append(report)
        violations = check_state(state, ledger, tol)
        if violations:
            worst = violations[0]
            raise InvariantViolation(
                f"step {state.k}: {len(violations)} bound violation(s), first "
                f"{worst.quantity} at cell {worst.cell} (value {worst.value:.6g}, bound {worst.bound:.6g})",
                violations,
                traj,
            )

    traj.deceased = integrate_deceased(traj, params.phi_d, d0)
    return traj


def run_simulation(config) -> Trajectory:
    """Run the simulation described by a ``RunConfig``."""
    mesh = config.mesh()
    fields = config.initial_fields(mesh)
    return simulate(
        mesh,
        config.params,
        config.nonlinearity,
        config.T,
        config.N,
        fields["n"],
        fields["s"],
        fields["i"],
        fields["h"],
        d0=fields.get("d"),
        mollify=config.mollify,
        tol=config.tol,
        average=config.face_average,
    )
