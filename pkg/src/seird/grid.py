"""Cell-centered finite volumes on an axis-aligned box with zero-flux walls.

Fields are plain 1-D float arrays with one value per cell, ordered
row-major over ``Mesh.shape``.  Boundary faces carry no flux, so only
interior faces appear in the assembled operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import PreconditionError

SNAPSHOT_MAGIC = "SEIRD-FIELD v1"
SNAPSHOT_HEADER_BYTES = 64


@dataclass(frozen=True)
class Mesh:
    dim: int
    shape: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise PreconditionError(f"dim must be 1, 2 or 3, got {self.dim}")
        if len(self.shape) != self.dim or len(self.lengths) != self.dim:
            raise PreconditionError("need one cell count and one length per axis")
        if any(int(c) < 1 for c in self.shape):
            raise PreconditionError(f"cell counts must be positive, got {self.shape}")
        if any(not (float(L) > 0) for L in self.lengths):
            raise PreconditionError(f"lengths must be positive, got {self.lengths}")
        object.__setattr__(self, "shape", tuple(int(c) for c in self.shape))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / c for L, c in zip(self.lengths, self.shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def face_area(self, axis: int) -> float:
        return self.cell_volume / self.spacing[axis]

    @cached_property
    def faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interior faces as ``(left, right, weight)`` with ``weight = area / distance``."""
        index = np.arange(self.n_cells).reshape(self.shape)
        left, right, weight = [], [], []
        for axis in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            a = index[tuple(lo)].ravel()
            b = index[tuple(hi)].ravel()
            left.append(a)
            right.append(b)
            weight.append(np.full(a.size, self.face_area(axis) / self.spacing[axis]))
        return (
            np.concatenate(left).astype(np.int64),
            np.concatenate(right).astype(np.int64),
            np.concatenate(weight),
        )

    @property
    def n_faces(self) -> int:
        return self.faces[0].size

    def neighbors(self, cell: int) -> list[int]:
        left, right, _ = self.faces
        return sorted(np.concatenate([right[left == cell], left[right == cell]]).tolist())

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(n_cells, dim)``."""
        axes = [(np.arange(c) + 0.5) * h for c, h in zip(self.shape, self.spacing)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def check_field(self, values, name: str = "field") -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_cells,):
            raise PreconditionError(
                f"{name} has shape {values.shape}, expected ({self.n_cells},)"
            )
        if not np.all(np.isfinite(values)):
            raise PreconditionError(f"{name} has non-finite values")
        return values

    def integrate(self, values) -> float:
        return float(np.sum(values) * self.cell_volume)


def build_mesh(dim: int, cells_per_axis, lengths) -> Mesh:
    cells = (cells_per_axis,) * dim if np.isscalar(cells_per_axis) else tuple(cells_per_axis)
    lens = (lengths,) * dim if np.isscalar(lengths) else tuple(lengths)
    return Mesh(dim, cells, lens)


@dataclass(frozen=True)
class DiscreteOperator:
    """Symmetric M-matrix ``b*vol*I + sum_faces t_f (e_L - e_R)(e_L - e_R)^T``."""

    matrix: sp.csr_matrix
    diagonal: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x


def face_average(kappa_cells: np.ndarray, left, right, how: str = "harmonic") -> np.ndarray:
    k1, k2 = kappa_cells[left], kappa_cells[right]
    if how == "harmonic":
        return 2.0 * k1 * k2 / (k1 + k2)
    if how == "arithmetic":
        return 0.5 * (k1 + k2)
    raise PreconditionError(f"unknown face average {how!r}")


def _assemble(mesh: Mesh, transmissibility: np.ndarray, reaction: np.ndarray) -> DiscreteOperator:
    left, right, _ = mesh.faces
    n = mesh.n_cells
    diag = reaction * mesh.cell_volume
    diag = diag + np.bincount(left, transmissibility, n) + np.bincount(right, transmissibility, n)
    rows = np.concatenate([np.arange(n), left, right])
    cols = np.concatenate([np.arange(n), right, left])
    data = np.concatenate([diag, -transmissibility, -transmissibility])
    matrix = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return DiscreteOperator(matrix, diag)


def assemble_operator(mesh: Mesh, kappa_cells, b_cells, average: str = "harmonic") -> DiscreteOperator:
    """Finite-volume matrix of ``b u - div(kappa grad u)`` with zero-flux walls.

    Row ``c`` is the equation integrated over cell ``c``; the right-hand
    side to pair with it is ``f * cell_volume``.
    """
    kappa_cells = mesh.check_field(kappa_cells, "kappa")
    b_cells = mesh.check_field(b_cells, "b")
    if np.any(kappa_cells <= 0):
        raise PreconditionError("diffusivity must be positive in every cell")
    if np.any(b_cells <= 0):
        raise PreconditionError("reaction coefficient must be positive in every cell")
    left, right, weight = mesh.faces
    trans = weight * face_average(kappa_cells, left, right, average)
    return _assemble(mesh, trans, b_cells)


def reaction_operator(mesh: Mesh, b_cells) -> DiscreteOperator:
    """Pure reaction ``b u`` (no diffusion): a diagonal operator."""
    b_cells = mesh.check_field(b_cells, "b")
    if np.any(b_cells <= 0):
        raise PreconditionError("reaction coefficient must be positive in every cell")
    return _assemble(mesh, np.zeros(mesh.n_faces), b_cells)


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Unit-diffusivity stiffness (graph Laplacian weighted by area/distance)."""
    left, right, weight = mesh.faces
    n = mesh.n_cells
    diag = np.bincount(left, weight, n) + np.bincount(right, weight, n)
    rows = np.concatenate([np.arange(n), left, right])
    cols = np.concatenate([np.arange(n), right, left])
    data = np.concatenate([diag, -weight, -weight])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def gradient_energy(mesh: Mesh, values) -> float:
    """Discrete ``int |grad v|^2`` from two-point face differences."""
    left, right, weight = mesh.faces
    jump = values[left] - values[right]
    return float(np.sum(weight * jump * jump))


def inner(mesh: Mesh, u, v) -> float:
    """Discrete ``L^2`` pairing ``int u v``."""
    return float(np.dot(u, v) * mesh.cell_volume)


def riesz_representative(mesh: Mesh, values, tol: float = 1e-13) -> np.ndarray:
    """Solve ``(I - Laplacian) w = g`` so that ``(w, v)_V = <g, v>`` for every ``v``."""
    from .elliptic import solve_spd

    op = assemble_operator(mesh, np.ones(mesh.n_cells), np.ones(mesh.n_cells))
    w, _ = solve_spd(op, np.asarray(values, dtype=float) * mesh.cell_volume, tol=tol)
    return w


def compute_norm(mesh: Mesh, values, which: str = "H") -> float:
    """``H`` (L^2), ``V`` (H^1) or ``V_dual`` norm of a cell field."""
    values = np.asarray(values, dtype=float)
    if which == "H":
        return float(np.sqrt(inner(mesh, values, values)))
    if which == "V":
        return float(np.sqrt(inner(mesh, values, values) + gradient_energy(mesh, values)))
    if which == "V_dual":
        if not np.any(values):
            return 0.0
        return compute_norm(mesh, riesz_representative(mesh, values), "V")
    raise PreconditionError(f"unknown norm {which!r}")


# -- snapshots ----------------------------------------------------------------

def snapshot_header(mesh: Mesh) -> bytes:
    shape = list(mesh.shape) + [1] * (3 - mesh.dim)
    text = f"{SNAPSHOT_MAGIC} dim={mesh.dim} nx={shape[0]} ny={shape[1]} nz={shape[2]}"
    if len(text) > SNAPSHOT_HEADER_BYTES - 1:
        raise PreconditionError("mesh too large for the snapshot header")
    return (text.ljust(SNAPSHOT_HEADER_BYTES - 1) + "\n").encode("ascii")


def write_snapshot(path, mesh: Mesh, values) -> None:
    values = mesh.check_field(values)
    with open(path, "wb") as fh:
        fh.write(snapshot_header(mesh))
        fh.write(values.astype("<f8").tobytes())


def read_snapshot(path) -> tuple[tuple[int, ...], np.ndarray]:
    """Return ``(shape, values)``; ``shape`` has ``dim`` entries."""
    raw = Path(path).read_bytes()
    header = raw[:SNAPSHOT_HEADER_BYTES].decode("ascii").strip()
    if not header.startswith(SNAPSHOT_MAGIC):
        raise PreconditionError(f"{path}: not a {SNAPSHOT_MAGIC} file")
    meta = dict(tok.split("=") for tok in header[len(SNAPSHOT_MAGIC):].split())
    dim = int(meta["dim"])
    shape = tuple(int(meta[k]) for k in ("nx", "ny", "nz"))[:dim]
    values = np.frombuffer(raw[SNAPSHOT_HEADER_BYTES:], dtype="<f8").astype(float)
    if values.size != int(np.prod(shape)):
        raise PreconditionError(
            f"{path}: header announces {int(np.prod(shape))} cells, found {values.size}"
        )
    return shape, values
