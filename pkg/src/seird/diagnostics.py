"""Energy monitors, trajectory-wide bound checks and the stability probe."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, PreconditionError
from .grid import Mesh, compute_norm
from .model import BoundsLedger, ModelParams, Nonlinearity, compute_bounds
from .stepper import UNKNOWNS, Trajectory, Violation, check_state, simulate

ENERGY_COLUMNS = ("max_h2", "tau_sum_v2", "increment_sum", "dual_derivative_sum")


@dataclass(frozen=True)
class EnergyEntry:
    max_h2: float
    tau_sum_v2: float
    increment_sum: float
    dual_derivative_sum: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in ENERGY_COLUMNS)


@dataclass
class EnergyReport:
    tau: float
    entries: dict[str, EnergyEntry] = field(default_factory=dict)

    def __getitem__(self, name: str) -> EnergyEntry:
        return self.entries[name]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("unknown",) + ENERGY_COLUMNS)
            for name, entry in self.entries.items():
                writer.writerow([name] + [repr(v) for v in entry.values()])


def energy_entry(mesh: Mesh, samples: np.ndarray, tau: float) -> EnergyEntry:
    """Estimate quantities of one sampled unknown ``z_0..z_N``.

    ``tau_sum_v2`` runs over ``k = 1..N``, the steps produced by the scheme.
    """
    h2 = [compute_norm(mesh, z, "H") ** 2 for z in samples]
    v2 = [compute_norm(mesh, z, "V") ** 2 for z in samples[1:]]
    inc = np.diff(samples, axis=0)
    inc2 = [compute_norm(mesh, d, "H") ** 2 for d in inc]
    dual2 = [compute_norm(mesh, d / tau, "V_dual") ** 2 for d in inc]
    return EnergyEntry(max(h2), tau * sum(v2), sum(inc2), tau * sum(dual2))


def monitor_energy(trajectory: Trajectory) -> EnergyReport:
    report = EnergyReport(trajectory.tau)
    for name in UNKNOWNS:
        report.entries[name] = energy_entry(trajectory.mesh, trajectory.series(name), trajectory.tau)
    return report


def verify_bounds(trajectory: Trajectory, ledger: BoundsLedger | None = None) -> list[Violation]:
    """Every ledger/sign/ordering violation over the whole trajectory; empty means pass."""
    ledger = trajectory.ledger if ledger is None else ledger
    found: list[Violation] = []
    for state in trajectory.states:
        found.extend(check_state(state, ledger, trajectory.tol))
    return found


# -- stability probe ----------------------------------------------------------

def gronwall_rate(params: ModelParams, nonlinearity: Nonlinearity, ledger: BoundsLedger) -> float:
    """A Lipschitz constant of the reaction terms on the ledger box.

    Entrywise bounds of the Jacobian of the right-hand sides with respect to
    ``(n, s, i, h)`` are collected in a matrix whose Frobenius norm bounds
    the growth rate of differences in ``H``.  Diffusion with a constant
    coefficient only damps differences and does not contribute.
    """
    p, L = params, ledger
    lo, hi = L.n_low, L.n_up
    a_max = float(np.max(nonlinearity.A(np.array([lo, hi]))))
    a_lip = nonlinearity.A_lipschitz(lo, hi)
    c = p.exposed_exit
    contact = p.beta_i * L.i_up + p.beta_e * L.h_up
    J = np.array([
        [abs(p.alpha - p.mu) + p.phi_d * L.i_up, 0.0, p.phi_d * hi, 0.0],
        [p.alpha + a_lip * L.s_up * contact,
         a_max * (contact + p.beta_e * L.s_up) + p.mu,
         a_max * p.beta_i * L.s_up,
         a_max * p.beta_e * L.s_up],
        [p.phi_d * L.i_up, p.sigma, p.phi_d * hi + p.phi_r + p.mu, p.sigma],
        [p.alpha, c, 0.0, p.mu + c],
    ])
    return float(np.linalg.norm(J))


def default_perturbation(mesh: Mesh) -> np.ndarray:
    """Smooth bump with peak 1 centred in the box, width a quarter of the shortest side."""
    center = np.array(mesh.lengths) / 2.0
    width = 0.25 * min(mesh.lengths)
    r2 = np.sum((mesh.centers - center) ** 2, axis=1)
    bump = np.exp(-r2 / (2.0 * width * width))
    return bump / bump.max()


# which unknowns a unit of each compartment contributes to (n = s+e+i+r, h = s+e)
COMPARTMENT_LOADINGS = {
    "s": ("n", "s", "h"),
    "e": ("n", "h"),
    "i": ("n", "i"),
    "r": ("n",),
}


def compartment_perturbation(bump: np.ndarray, compartments=("s",)) -> dict:
    """Perturbation of ``(n, s, i, h)`` that adds ``bump`` to the given compartments."""
    out = {u: np.zeros_like(bump) for u in UNKNOWNS}
    for c in compartments:
        if c not in COMPARTMENT_LOADINGS:
            raise PreconditionError(f"unknown compartment {c!r}")
        for u in COMPARTMENT_LOADINGS[c]:
            out[u] = out[u] + bump
    return out


def _difference(a, b, mesh: Mesh) -> float:
    return math.sqrt(sum(compute_norm(mesh, a.field(u) - b.field(u)) ** 2 for u in UNKNOWNS))


@dataclass(frozen=True)
class ProbeResult:
    factor: float
    factor_half: float | None
    rate: float
    bound: float
    delta: float

    @property
    def linearity_gap(self) -> float | None:
        if self.factor_half is None or self.factor == 0:
            return None
        return abs(self.factor - self.factor_half) / self.factor


def amplification_factor(
    mesh: Mesh,
    params: ModelParams,
    nonlinearity: Nonlinearity,
    T: float,
    N: int,
    fields: dict,
    perturbation: dict,
    delta: float,
    tol: float = 1e-10,
    average: str = "harmonic",
    mollify: bool = False,
) -> float:
    """``max_k |z_k^1 - z_k^2| / |z_0^1 - z_0^2|`` over the summed ``H`` norms of n, s, i, h."""
    if delta == 0:
        return 0.0
    base = {u: mesh.check_field(fields[u], u) for u in UNKNOWNS}
    pert = {u: base[u] + delta * np.asarray(perturbation.get(u, 0.0), dtype=float) for u in UNKNOWNS}
    if not pert["n"].min() > 0:
        raise PreconditionError("perturbed n is not positive")
    if pert["s"].min() < 0 or pert["i"].min() < 0 or np.any(pert["h"] < pert["s"]):
        raise PreconditionError("perturbed data violate h >= s >= 0 or i >= 0")
    # one ledger covering both runs keeps the truncation identical
    ledger = compute_bounds(
        params, T,
        max(base["n"].max(), pert["n"].max()), max(base["s"].max(), pert["s"].max()),
        max(base["h"].max(), pert["h"].max()), max(base["i"].max(), pert["i"].max()),
        min(base["n"].min(), pert["n"].min()), nonlinearity,
    )
    runs = [
        simulate(mesh, params, nonlinearity, T, N, f["n"], f["s"], f["i"], f["h"],
                 mollify=mollify, tol=tol, average=average, ledger=ledger)
        for f in (base, pert)
    ]
    d0 = _difference(runs[0].states[0], runs[1].states[0], mesh)
    if d0 == 0:
        return 0.0
    return max(_difference(a, b, mesh) for a, b in zip(runs[0].states, runs[1].states)) / d0


def stability_probe(
    config,
    delta: float,
    perturbation: dict | None = None,
    rate: float | None = None,
    check_linearity: bool = True,
    linearity_rtol: float = 0.01,
) -> ProbeResult:
    """Run the configuration with and without a perturbation of the initial data.

    The default perturbation adds a smooth bump to the susceptible
    compartment (hence to ``n``, ``s`` and ``h``), which keeps ``h >= s``
    and positivity for ``delta >= 0``.  The factor is checked against
    ``exp(C T)`` with ``C`` from ``rate``, ``config.probe_rate`` or
    ``gronwall_rate``; with ``check_linearity`` the probe is repeated at
    ``delta / 2`` and the two factors must agree to ``linearity_rtol``.
    """
    nl = config.nonlinearity
    if nl.kappa_kind != "constant":
        raise PreconditionError("the stability probe needs a constant diffusion coefficient")
    if delta < 0:
        raise PreconditionError(f"delta must be nonnegative, got {delta}")
    mesh = config.mesh()
    fields = config.initial_fields(mesh)
    if perturbation is None:
        perturbation = compartment_perturbation(default_perturbation(mesh), ("s",))

    if rate is None:
        rate = getattr(config, "probe_rate", None)
    if rate is None:
        ledger = compute_bounds(
            config.params, config.T,
            fields["n"].max() + delta * np.max(perturbation.get("n", 0.0)),
            fields["s"].max() + delta * np.max(perturbation.get("s", 0.0)),
            fields["h"].max() + delta * np.max(perturbation.get("h", 0.0)),
            fields["i"].max() + delta * np.max(perturbation.get("i", 0.0)),
            fields["n"].min() + delta * min(0.0, np.min(perturbation.get("n", 0.0))),
            nl,
        )
        rate = gronwall_rate(config.params, nl, ledger)
    bound = math.exp(rate * config.T)
    if delta == 0:
        return ProbeResult(0.0, 0.0 if check_linearity else None, rate, bound, delta)

    def run(d):
        return amplification_factor(
            mesh, config.params, nl, config.T, config.N, fields, perturbation, d,
            tol=config.tol, average=config.face_average, mollify=config.mollify,
        )

    factor = run(delta)
    half = run(delta / 2) if check_linearity else None
    for value in (factor, half):
        if value is not None and not (math.isfinite(value) and value <= bound * (1 + 1e-12)):
            raise InvariantViolation(f"amplification factor {value:.6g} exceeds exp(C T) = {bound:.6g}")
    result = ProbeResult(factor, half, rate, bound, delta)
    if check_linearity and result.linearity_gap > linearity_rtol:
        raise InvariantViolation(
            f"factors at delta and delta/2 differ by {result.linearity_gap:.3%} (> {linearity_rtol:.0%})"
        )
    return result
