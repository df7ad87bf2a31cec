"""Command-line front end: ``seird run | sweep | converge | verify``.

Exit codes: 0 success, 1 configuration or input error, 2 solver failure,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, emit_config, load_config, parse_assignments, build_config, with_overrides
from .diagnostics import ENERGY_COLUMNS, monitor_energy, verify_bounds
from .errors import ConfigError, ConvergenceError, InvariantViolation, PreconditionError, SimulationError
from .grid import read_snapshot, write_snapshot
from .interp import build_interpolants, convergence_study, verify_interpolant_identities
from .model import compute_bounds
from .stepper import UNKNOWNS, State, TimeGrid, Trajectory, run_simulation

log = logging.getLogger("seird")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 1, 2, 3
SNAPSHOT_NAMES = UNKNOWNS + ("d",)
_SNAPSHOT_RE = re.compile(r"step_(\d+)_([a-z])\.bin$")


# -- outputs ------------------------------------------------------------------

def totals_header() -> list[str]:
    cols = ["step", "time"]
    for u in UNKNOWNS:
        cols += [f"{u}_total", f"{u}_min", f"{u}_max"]
    return cols + ["d_total"]


def write_totals(path, trajectory: Trajectory) -> None:
    mesh = trajectory.mesh
    deceased = trajectory.deceased or [np.zeros(mesh.n_cells)] * len(trajectory.states)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(totals_header())
        for state, d in zip(trajectory.states, deceased):
            row = [state.k, repr(state.t)]
            for u in UNKNOWNS:
                v = state.field(u)
                row += [repr(mesh.integrate(v)), repr(float(v.min())), repr(float(v.max()))]
            row.append(repr(mesh.integrate(d)))
            writer.writerow(row)


def snapshot_steps(N: int, every: int) -> list[int]:
    steps = list(range(0, N + 1, every))
    if steps[-1] != N:
        steps.append(N)
    return steps


def write_outputs(out: Path, config: RunConfig, trajectory: Trajectory, energy: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(emit_config(_portable(config)))
    write_totals(out / "totals.csv", trajectory)
    fields_dir = out / "fields"
    fields_dir.mkdir(exist_ok=True)
    last = len(trajectory.states) - 1
    for k in snapshot_steps(last, config.output_every) if last > 0 else [0]:
        state = trajectory.states[k]
        for u in UNKNOWNS:
            write_snapshot(fields_dir / f"step_{k:06d}_{u}.bin", trajectory.mesh, state.field(u))
        if trajectory.deceased:
            write_snapshot(fields_dir / f"step_{k:06d}_d.bin", trajectory.mesh, trajectory.deceased[k])
    if energy:
        monitor_energy(trajectory).write_csv(out / "energy.csv")


def _portable(config: RunConfig) -> RunConfig:
    """Make raster paths absolute so a copied config resolves from anywhere."""
    init = {}
    for u, spec in config.init.items():
        if spec.preset == "raster" and not Path(spec.path).is_absolute():
            base = config.base_dir or Path.cwd()
            spec = replace(spec, path=str((base / spec.path).resolve()))
        init[u] = spec
    return replace(config, init=init)


def _write_failure(out: Path, exc: Exception) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{type(exc).__name__}: {exc}"]
    for v in getattr(exc, "violations", [])[:1000]:
        lines.append(f"k={v.k} cell={v.cell} {v.quantity} value={v.value!r} bound={v.bound!r}")
    (out / "failure.txt").write_text("\n".join(lines) + "\n")


# -- commands -----------------------------------------------------------------

def run_config(config: RunConfig, out: Path) -> int:
    try:
        traj = run_simulation(config)
    except InvariantViolation as exc:
        log.error("invariant violation: %s", exc)
        _write_failure(out, exc)
        if exc.trajectory is not None and exc.trajectory.states:
            write_outputs(out, config, exc.trajectory, energy=False)
        return EXIT_INVARIANT
    except (SimulationError, ConvergenceError, PreconditionError) as exc:
        log.error("solver failure: %s", exc)
        _write_failure(out, exc)
        return EXIT_SOLVER
    write_outputs(out, config, traj)
    log.info("run finished: %d steps written to %s", config.N, out)
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_config(args.config)
    out = Path(args.out) if args.out else Path(config.output_dir)
    return run_config(config, out)


def read_grid(path) -> list[tuple[str, list[str]]]:
    """Sweep axes: lines ``key = v1; v2; ...``."""
    axes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = v1; v2; ...'", line=lineno)
        key, values = (p.strip() for p in body.split("=", 1))
        choices = [v.strip() for v in values.split(";") if v.strip()]
        if not choices:
            raise ConfigError("no values given", line=lineno, key=key)
        axes.append((key, choices))
    return axes


def _run_point(config: RunConfig, out: str) -> int:
    logging.getLogger("seird").setLevel(logging.WARNING)
    return run_config(config, Path(out))


def sweep_workers(n_points: int) -> int:
    cap = os.environ.get("SEIRD_THREADS")
    workers = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(workers, n_points))


def cmd_sweep(args) -> int:
    config_path = Path(args.config)
    raw = parse_assignments(config_path.read_text())
    base = build_config(raw, config_path.parent)
    axes = read_grid(args.grid)
    root = Path(args.out) if args.out else Path(base.output_dir)
    points = []
    for j, combo in enumerate(itertools.product(*(vals for _, vals in axes))):
        overrides = {key: value for (key, _), value in zip(axes, combo)}
        try:
            cfg = build_config(with_overrides(raw, overrides), config_path.parent)
        except ConfigError as exc:
            raise ConfigError(f"sweep point {j} ({overrides}): {exc}") from exc
        points.append((j, overrides, cfg, root / f"point_{j:04d}"))

    workers = sweep_workers(len(points))
    if workers == 1:
        codes = [_run_point(cfg, str(out)) for _, _, cfg, out in points]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_run_point, [p[2] for p in points], [str(p[3]) for p in points]))

    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point"] + [key for key, _ in axes] + ["exit_code"])
        for (j, overrides, _, _), code in zip(points, codes):
            writer.writerow([j] + [overrides[key] for key, _ in axes] + [code])
    return max(codes, default=EXIT_OK)


def cmd_converge(args) -> int:
    config = load_config(args.config)
    Ns = [int(v) for v in args.taus.split(",") if v.strip()]
    if not Ns or min(Ns) < 1:
        raise ConfigError("--taus expects positive step counts, e.g. 16,32,64")
    taus = [config.T / N for N in sorted(Ns)]
    try:
        table = convergence_study(config, taus)
    except InvariantViolation as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except (SimulationError, ConvergenceError, PreconditionError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    out = Path(args.out) if args.out else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "study.csv")
    for row in table.rows:
        print(f"tau={row.tau:.6g}  " + "  ".join(f"d_{u}={row.distances[u]:.4e}" for u in UNKNOWNS)
              + f"  order={row.order_estimate:.4f}")
    return EXIT_OK


def load_run(rundir: Path) -> tuple[RunConfig, dict[int, dict[str, np.ndarray]]]:
    config = load_config(rundir / "config.txt")
    snaps: dict[int, dict[str, np.ndarray]] = {}
    mesh = config.mesh()
    for path in sorted((rundir / "fields").glob("step_*.bin")):
        m = _SNAPSHOT_RE.search(path.name)
        if not m or m.group(2) not in SNAPSHOT_NAMES:
            continue
        shape, values = read_snapshot(path)
        if tuple(shape) != mesh.shape:
            raise ConfigError(f"{path.name}: shape {shape} does not match the mesh {mesh.shape}")
        snaps.setdefault(int(m.group(1)), {})[m.group(2)] = values
    if not snaps:
        raise ConfigError(f"no snapshots under {rundir / 'fields'}")
    for k, found in snaps.items():
        missing = [u for u in UNKNOWNS if u not in found]
        if missing:
            raise ConfigError(f"step {k}: missing snapshot(s) for {missing}")
    return config, snaps


def cmd_verify(args) -> int:
    rundir = Path(args.rundir)
    config, snaps = load_run(rundir)
    mesh = config.mesh()
    raw = config.initial_fields(mesh)
    ledger = compute_bounds(
        config.params, config.T, raw["n"].max(), raw["s"].max(), raw["h"].max(),
        raw["i"].max(), raw["n"].min(), config.nonlinearity,
    )
    tau = config.tau
    steps = sorted(snaps)
    states = [State(k, k * tau, *(snaps[k][u] for u in UNKNOWNS)) for k in steps]
    failed = False

    traj = Trajectory(mesh, config.params, config.nonlinearity, ledger,
                      TimeGrid(config.T, config.N), config.tol, states)
    violations = verify_bounds(traj, ledger)
    print(f"bounds: {len(states)} snapshot(s), {len(violations)} violation(s)")
    for v in violations[:20]:
        print(f"  k={v.k} cell={v.cell} {v.quantity}: value {v.value!r}, bound {v.bound!r}")
    failed |= bool(violations)

    deceased = [snaps[k].get("d") for k in steps]
    if all(d is not None for d in deceased):
        drops = [k for k, a, b in zip(steps[1:], deceased, deceased[1:]) if np.any(b < a)]
        print(f"deceased: {'non-decreasing' if not drops else f'decreases at steps {drops}'}")
        failed |= bool(drops)

    # interpolants and energies need uniformly spaced samples
    every = config.output_every
    uniform = [k for k in steps if k % every == 0]
    if len(uniform) >= 2 and uniform == list(range(0, uniform[-1] + 1, every)):
        sub = Trajectory(mesh, config.params, config.nonlinearity, ledger,
                         TimeGrid(uniform[-1] * tau, len(uniform) - 1), config.tol,
                         [s for s in states if s.k in set(uniform)])
        for space in ("H", "V"):
            bad = []
            for u in UNKNOWNS:
                report = verify_interpolant_identities(
                    build_interpolants(sub.series(u), every * tau), space, mesh)
                bad += [f"{u}:{c.name}" for c in report.failures()]
            print(f"interpolant identities ({space}): {'ok' if not bad else ', '.join(bad)}")
            failed |= bool(bad)
        energy = monitor_energy(sub)
        bad = [u for u, e in energy.entries.items()
               if not all(np.isfinite(v) and v >= 0 for v in e.values())]
        print(f"energy: {'finite and nonnegative' if not bad else f'bad entries for {bad}'}")
        failed |= bool(bad)
        if every == 1 and uniform[-1] == config.N and (rundir / "energy.csv").exists():
            failed |= not _compare_energy(rundir / "energy.csv", energy)
    else:
        print("interpolant identities: skipped (fewer than two evenly spaced snapshots)")
    print("verify: " + ("FAILED" if failed else "ok"))
    return EXIT_INVARIANT if failed else EXIT_OK


def _compare_energy(path: Path, energy) -> bool:
    with open(path, newline="") as fh:
        rows = {row["unknown"]: row for row in csv.DictReader(fh)}
    worst = 0.0
    for u, entry in energy.entries.items():
        if u not in rows:
            print(f"energy.csv: missing row for {u}")
            return False
        for col, value in zip(ENERGY_COLUMNS, entry.values()):
            stored = float(rows[u][col])
            worst = max(worst, abs(stored - value) / max(abs(value), 1e-300))
    ok = worst <= 1e-9
    print(f"energy.csv: recomputed, worst relative difference {worst:.2e}")
    return ok


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seird", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output.dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="cartesian parameter sweep")
    p.add_argument("config")
    p.add_argument("--grid", required=True, help="file with lines 'key = v1; v2; ...'")
    p.add_argument("--out", help="root output directory (default: output.dir)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("converge", help="time-step refinement study")
    p.add_argument("config")
    p.add_argument("--taus", default="16,32,64,128", help="step counts N, tau = T/N")
    p.add_argument("--out", help="output directory (default: output.dir)")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("verify", help="check a finished run directory")
    p.add_argument("rundir")
    p.set_defaults(func=cmd_verify)
    return parser


def execute(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"seird: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"seird: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"seird: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(execute())


if __name__ == "__main__":
    main()
