"""Time interpolants of step sequences and the tau-refinement study.

For samples ``z_0..z_N`` on the uniform partition ``t_k = k tau`` and
``I_k = ((k-1) tau, k tau]``:

* ``forward`` (z-bar) equals ``z_k`` on ``I_k``;
* ``backward`` (z-underbar) equals ``z_{k-1}`` on ``I_k``;
* ``linear`` (z-hat) interpolates the knots, with slope ``(z_k - z_{k-1})/tau``.

At a knot ``t_k`` the constant interpolants return the value on the
interval ending there (``forward(0) = backward(0) = z_0``).  All squared
norms that enter the identity checks are quadratic in time on each
interval, so Simpson's rule integrates them exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import PreconditionError
from .grid import Mesh, compute_norm

IDENTITY_RTOL = 1e-12


@dataclass(frozen=True)
class InterpolantSet:
    samples: np.ndarray
    tau: float

    def __post_init__(self):
        z = np.asarray(self.samples, dtype=float)
        if z.ndim == 0 or z.shape[0] < 2:
            raise PreconditionError("interpolation needs at least two samples")
        if not self.tau > 0:
            raise PreconditionError(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "samples", z)

    @property
    def N(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def T(self) -> float:
        return self.N * self.tau

    def _locate(self, t: float) -> tuple[int, float]:
        """Interval index ``k`` in ``1..N`` with ``t`` in ``I_k`` and the local ``theta``."""
        if not (-1e-12 * self.T <= t <= self.T * (1 + 1e-12)):
            raise PreconditionError(f"t = {t} outside [0, {self.T}]")
        if t <= 0:
            return 1, 0.0
        k = min(max(math.ceil(t / self.tau - 1e-12), 1), self.N)
        return k, min(max(t / self.tau - (k - 1), 0.0), 1.0)

    def on_interval(self, k: int, theta: float):
        """``(forward, backward, linear)`` at ``t = (k - 1 + theta) tau`` inside ``I_k``."""
        lo, hi = self.samples[k - 1], self.samples[k]
        return hi, lo, lo + theta * (hi - lo)

    def forward(self, t: float):
        if t <= 0:
            return self.samples[0]
        return self.on_interval(*self._locate(t))[0]

    def backward(self, t: float):
        if t <= 0:
            return self.samples[0]
        return self.on_interval(*self._locate(t))[1]

    def linear(self, t: float):
        return self.on_interval(*self._locate(t))[2]

    def derivative(self, t: float):
        k, _ = self._locate(t)
        return (self.samples[k] - self.samples[k - 1]) / self.tau


def build_interpolants(samples, tau: float) -> InterpolantSet:
    if samples is None or len(samples) == 0:
        raise PreconditionError("no samples to interpolate")
    return InterpolantSet(np.asarray(samples, dtype=float), tau)


def _norm_function(space: str, mesh: Mesh | None) -> Callable[[np.ndarray], float]:
    if space not in ("H", "V"):
        raise PreconditionError(f"space must be 'H' or 'V', got {space!r}")

    def norm(v) -> float:
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            return abs(float(v))
        if mesh is None:
            if space == "V":
                raise PreconditionError("the V norm of a field needs its mesh")
            return float(np.linalg.norm(v))
        return compute_norm(mesh, v, space)

    return norm


def _sup(iset: InterpolantSet, fn, thetas=(0.5,)) -> float:
    return max(fn(k, th) for k in range(1, iset.N + 1) for th in thetas)


def _l2(iset: InterpolantSet, fn) -> float:
    """Exact integral of a piecewise-quadratic ``fn(k, theta)`` over ``[0, T]``."""
    total = 0.0
    for k in range(1, iset.N + 1):
        total += fn(k, 0.0) + 4.0 * fn(k, 0.5) + fn(k, 1.0)
    return total * iset.tau / 6.0


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    relation: str  # "==" or "<="
    lhs: float
    rhs: float
    # absolute floor for sides that are computed by cancellation
    atol: float = 0.0

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def relative_gap(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return self.gap / scale if scale > 0 else 0.0

    @property
    def slack(self) -> float:
        """``rhs - lhs``; how much room an inequality has."""
        return self.rhs - self.lhs

    def holds(self, rtol: float = IDENTITY_RTOL) -> bool:
        room = rtol * max(abs(self.lhs), abs(self.rhs)) + self.atol
        if self.relation == "==":
            return self.gap <= room
        return self.lhs <= self.rhs + room


@dataclass
class IdentityReport:
    space: str
    checks: list[IdentityCheck] = field(default_factory=list)

    def ok(self, rtol: float = IDENTITY_RTOL) -> bool:
        return all(c.holds(rtol) for c in self.checks)

    def failures(self, rtol: float = IDENTITY_RTOL) -> list[IdentityCheck]:
        return [c for c in self.checks if not c.holds(rtol)]

    def __getitem__(self, name: str) -> IdentityCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def verify_interpolant_identities(
    iset: InterpolantSet,
    space: str = "H",
    mesh: Mesh | None = None,
    fine: InterpolantSet | None = None,
) -> IdentityReport:
    """Compare norms of the interpolants (left) with sums over the samples (right).

    The left-hand sides are evaluated from the interpolating functions
    themselves: suprema over sample points inside each interval (the
    integrands are constant or convex there) and time integrals by Simpson.
    ``fine``, when given, holds samples of the same function on a partition
    that refines this one; it feeds the difference-quotient inequality.
    """
    norm = _norm_function(space, mesh)
    z, tau, N = iset.samples, iset.tau, iset.N
    sample_norms = [norm(v) for v in z]
    jumps = [norm(z[k + 1] - z[k]) for k in range(N)]

    def fwd(k, th):
        return norm(iset.on_interval(k, th)[0])

    def bwd(k, th):
        return norm(iset.on_interval(k, th)[1])

    def lin(k, th):
        return norm(iset.on_interval(k, th)[2])

    def dt(k, th):
        return norm((z[k] - z[k - 1]) / tau)

    def fwd_minus_lin(k, th):
        f, _, l = iset.on_interval(k, th)
        return norm(f - l)

    def bwd_minus_lin(k, th):
        _, b, l = iset.on_interval(k, th)
        return norm(b - l)

    def fwd_minus_bwd(k, th):
        f, b, _ = iset.on_interval(k, th)
        return norm(f - b)

    def sq(fn):
        return lambda k, th: fn(k, th) ** 2

    sum_fwd = tau * sum(v * v for v in sample_norms[1:])
    sum_bwd = tau * sum(v * v for v in sample_norms[:-1])
    sum_jumps = sum(j * j for j in jumps)
    l2_dt = _l2(iset, sq(dt))
    l2_fwd = _l2(iset, sq(fwd))
    sup_fwd = _sup(iset, fwd)
    sup_dt = _sup(iset, dt)
    # forming z_k - (z_{k-1} + theta (z_k - z_{k-1})) loses digits relative to |z|
    big = max(sample_norms)
    sup_floor = 64 * np.finfo(float).eps * big
    l2_floor = 64 * np.finfo(float).eps * big * big * iset.T

    checks = [
        IdentityCheck("sup_forward", "==", sup_fwd, max(sample_norms[1:])),
        IdentityCheck("sup_backward", "==", _sup(iset, bwd), max(sample_norms[:-1])),
        IdentityCheck("sup_derivative", "==", sup_dt, max(j / tau for j in jumps)),
        IdentityCheck("l2_forward", "==", l2_fwd, sum_fwd),
        IdentityCheck("l2_backward", "==", _l2(iset, sq(bwd)), sum_bwd),
        IdentityCheck("l2_derivative", "==", l2_dt, tau * sum((j / tau) ** 2 for j in jumps)),
        IdentityCheck(
            "sup_linear", "==",
            _sup(iset, lin, (0.0, 0.5, 1.0)),
            max(max(sample_norms[k - 1], sample_norms[k]) for k in range(1, N + 1)),
        ),
        IdentityCheck("sup_linear_vs_forward", "==",
                      max(sample_norms[k] for k in range(N + 1)), max(sample_norms[0], sup_fwd)),
        IdentityCheck(
            "l2_linear_bound", "<=",
            _l2(iset, sq(lin)), tau * sum(sample_norms[k - 1] ** 2 + sample_norms[k] ** 2
                                          for k in range(1, N + 1)),
        ),
        IdentityCheck(
            "l2_linear_bound_forward", "<=",
            _l2(iset, sq(lin)), tau * sample_norms[0] ** 2 + 2.0 * l2_fwd,
        ),
        # forward - linear = (1 - theta)(z_k - z_{k-1}) peaks as theta -> 0
        IdentityCheck("sup_forward_minus_linear", "==",
                      _sup(iset, fwd_minus_lin, (0.0,)), max(jumps), sup_floor),
        IdentityCheck("sup_jump_vs_derivative", "==", max(jumps), tau * sup_dt),
        IdentityCheck("l2_forward_minus_linear", "==",
                      _l2(iset, sq(fwd_minus_lin)), tau / 3.0 * sum_jumps, l2_floor),
        IdentityCheck("l2_forward_minus_linear_vs_backward", "==",
                      _l2(iset, sq(fwd_minus_lin)), _l2(iset, sq(fwd_minus_bwd)) / 3.0, l2_floor),
        IdentityCheck("l2_forward_minus_linear_vs_derivative", "==",
                      _l2(iset, sq(fwd_minus_lin)), tau * tau / 3.0 * l2_dt, l2_floor),
        IdentityCheck("sup_backward_minus_linear", "==",
                      _sup(iset, bwd_minus_lin, (1.0,)), max(jumps), sup_floor),
        IdentityCheck("l2_backward_minus_linear", "==",
                      _l2(iset, sq(bwd_minus_lin)), tau / 3.0 * sum_jumps, l2_floor),
    ]

    if fine is not None:
        ratio = fine.N / N
        if abs(fine.T - iset.T) > 1e-12 * iset.T or ratio != int(ratio):
            raise PreconditionError("the fine partition must refine the coarse one")
        r = int(ratio)
        if np.max(np.abs(fine.samples[::r] - z)) > 1e-12 * max(1.0, np.max(np.abs(z))):
            raise PreconditionError("fine samples do not pass through the coarse ones")
        fine_dt = _l2(fine, lambda k, th: norm((fine.samples[k] - fine.samples[k - 1]) / fine.tau) ** 2)
        checks.append(IdentityCheck("difference_quotients_vs_fine_derivative", "<=", l2_dt, fine_dt))

    return IdentityReport(space, checks)


# -- refinement study ---------------------------------------------------------

STUDY_UNKNOWNS = ("n", "s", "i", "h")


@dataclass(frozen=True)
class StudyRow:
    tau: float
    tau_fine: float
    distances: dict
    order_estimate: float
    cauchy_ratio: float

    @property
    def combined(self) -> float:
        return math.sqrt(sum(d * d for d in self.distances.values()))


@dataclass
class StudyTable:
    taus: list[float]
    rows: list[StudyRow] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["tau"] + [f"dist_{u}" for u in STUDY_UNKNOWNS] + ["order_estimate"])
            for row in self.rows:
                writer.writerow(
                    [repr(row.tau)]
                    + [repr(row.distances[u]) for u in STUDY_UNKNOWNS]
                    + [repr(row.order_estimate)]
                )


def _refine_linear(samples: np.ndarray, factor: int) -> np.ndarray:
    """Values of the linear interpolant at the knots of a ``factor``-times finer partition."""
    lo, hi = samples[:-1], samples[1:]
    out = [lo + (j / factor) * (hi - lo) for j in range(factor)]
    stacked = np.stack(out, axis=1).reshape((-1,) + samples.shape[1:])
    return np.concatenate([stacked, samples[-1:]], axis=0)


def linear_distance(coarse: InterpolantSet, other: InterpolantSet, mesh: Mesh | None, N_fine: int) -> float:
    """``L^2(0,T;H)`` distance of two linear interpolants, exact on a common refinement."""
    norm = _norm_function("H", mesh)
    a = _refine_linear(coarse.samples, N_fine // coarse.N)
    b = _refine_linear(other.samples, N_fine // other.N)
    d = a - b
    h = coarse.T / N_fine
    total = 0.0
    for j in range(N_fine):
        total += norm(d[j]) ** 2 + 4.0 * norm(0.5 * (d[j] + d[j + 1])) ** 2 + norm(d[j + 1]) ** 2
    return math.sqrt(total * h / 6.0)


def _order(d_prev: float, d: float, ratio: float) -> float:
    if not (d_prev > 0 and d > 0):
        return float("nan")
    return math.log(d_prev / d) / math.log(ratio)


def convergence_study(base_config, taus, runner: Callable | None = None) -> StudyTable:
    """Run the simulation for every ``tau`` and compare consecutive refinements.

    Row ``j`` holds the distance between the runs at ``taus[j]`` and
    ``taus[j+1]`` (reported under ``tau = taus[j]``), the order estimate
    ``log(d_{j-1}/d_j) / log(tau_{j-1}/tau_j)`` and the ratio ``d_j/d_{j-1}``.
    The first row has no predecessor, so both are NaN there.
    """
    if runner is None:
        from .stepper import run_simulation as runner
    taus = [float(t) for t in taus]
    if not taus:
        raise PreconditionError("need at least one tau")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise PreconditionError("taus must be strictly decreasing")
    T = base_config.T
    Ns = []
    for tau in taus:
        N = round(T / tau)
        if N < 1 or abs(N * tau - T) > 1e-9 * T:
            raise PreconditionError(f"tau = {tau} does not divide T = {T}")
        Ns.append(N)
    N_fine = Ns[-1]
    if any(N_fine % N for N in Ns):
        raise PreconditionError("every partition must be refined by the finest one")

    table = StudyTable(taus)
    if len(taus) < 2:
        return table
    runs = []
    for N in Ns:
        traj = runner(replace(base_config, N=N))
        runs.append({u: InterpolantSet(traj.series(u), traj.tau) for u in STUDY_UNKNOWNS})
        mesh = traj.mesh

    prev = None
    for j in range(len(taus) - 1):
        dist = {u: linear_distance(runs[j][u], runs[j + 1][u], mesh, N_fine) for u in STUDY_UNKNOWNS}
        combined = math.sqrt(sum(d * d for d in dist.values()))
        if prev is None:
            order, ratio = float("nan"), float("nan")
        else:
            order = _order(prev, combined, taus[j - 1] / taus[j])
            ratio = combined / prev if prev > 0 else float("nan")
        table.rows.append(StudyRow(taus[j], taus[j + 1], dist, order, ratio))
        prev = combined
    return table
