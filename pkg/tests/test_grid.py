import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_fv_matrix
from seird.errors import PreconditionError
from seird.grid import (
    SNAPSHOT_HEADER_BYTES,
    assemble_operator,
    build_mesh,
    compute_norm,
    face_average,
    inner,
    read_snapshot,
    riesz_representative,
    snapshot_header,
    write_snapshot,
)


def test_1d_mesh():
    m = build_mesh(1, 4, 1.0)
    assert m.spacing == (0.25,)
    assert m.n_cells == 4
    assert [m.neighbors(c) for c in range(4)] == [[1], [0, 2], [1, 3], [2]]
    assert np.allclose(m.centers[:, 0], [0.125, 0.375, 0.625, 0.875])


@pytest.mark.parametrize("dim,cells,faces", [(2, (3, 2), 7), (3, (2, 2, 2), 12)])
def test_face_counts(dim, cells, faces):
    m = build_mesh(dim, cells, 1.0)
    assert m.n_cells == int(np.prod(cells))
    assert m.n_faces == faces


def test_bad_mesh():
    with pytest.raises(PreconditionError):
        build_mesh(4, 2, 1.0)
    with pytest.raises(PreconditionError):
        build_mesh(2, (0, 3), 1.0)


def test_two_cell_stencil():
    h, k, beta = 0.5, 0.3, 2.0
    m = build_mesh(1, 2, 2 * h)
    op = assemble_operator(m, np.full(2, k), np.full(2, beta))
    V, A = h, 1.0
    expected = [[beta * V + k * A / h, -k * A / h], [-k * A / h, beta * V + k * A / h]]
    assert np.allclose(op.matrix.toarray(), expected, rtol=1e-15)


def test_harmonic_face_value():
    k1, k2 = 0.2, 3.0
    m = build_mesh(1, 2, 1.0)
    op = assemble_operator(m, np.array([k1, k2]), np.ones(2))
    t = -op.matrix.toarray()[0, 1]
    assert t == pytest.approx(2 * k1 * k2 / (k1 + k2) * 1.0 / 0.5)


@given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=2))
def test_harmonic_between_neighbors(ks):
    v = face_average(np.array(ks), np.array([0]), np.array([1]))[0]
    assert min(ks) * (1 - 1e-14) <= v <= max(ks) * (1 + 1e-14)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("dim,average", [(1, "harmonic"), (2, "harmonic"), (3, "arithmetic")])
def test_matches_brute_force_assembler(seed, dim, average):
    rng = np.random.default_rng(seed)
    cells = tuple(rng.integers(1, 7 if dim < 3 else 4, size=dim))
    lengths = tuple(rng.uniform(0.3, 3.0, size=dim))
    m = build_mesh(dim, cells, lengths)
    kappa = rng.uniform(0.1, 4.0, m.n_cells)
    b = rng.uniform(0.5, 20.0, m.n_cells)
    op = assemble_operator(m, kappa, b, average=average)
    dense, _ = dense_fv_matrix(cells, lengths, kappa, b, average)
    assert np.max(np.abs(op.matrix.toarray() - dense)) <= 1e-14 * np.max(np.abs(dense))


@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_m_matrix_structure(seed, dim):
    rng = np.random.default_rng(seed)
    m = build_mesh(dim, tuple(rng.integers(1, 6, size=dim)), tuple(rng.uniform(0.5, 2, size=dim)))
    b = rng.uniform(0.1, 10.0, m.n_cells)
    A = assemble_operator(m, rng.uniform(0.01, 5.0, m.n_cells), b).matrix.toarray()
    assert np.allclose(A, A.T, rtol=0, atol=0)
    assert np.all(np.diag(A) > 0)
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 0)
    assert np.all(A.sum(axis=1) >= m.cell_volume * b.min() * (1 - 1e-12))


def test_constants_only_see_reaction():
    m = build_mesh(2, (5, 4), (1.0, 2.0))
    op = assemble_operator(m, np.full(m.n_cells, 0.7), np.full(m.n_cells, 3.0))
    assert np.allclose(op.matrix @ np.full(m.n_cells, 2.0), 3.0 * 2.0 * m.cell_volume, rtol=1e-13)


def test_norms_of_constants():
    m = build_mesh(2, 6, 1.0)
    c = -1.7
    u = np.full(m.n_cells, c)
    for which in ("H", "V", "V_dual"):
        assert compute_norm(m, u, which) == pytest.approx(abs(c), rel=1e-10)
        assert compute_norm(m, np.zeros(m.n_cells), which) == 0.0


def test_riesz_map_is_the_dual_pairing():
    rng = np.random.default_rng(3)
    m = build_mesh(2, (7, 5), (1.0, 0.6))
    g = rng.normal(size=m.n_cells)
    w = riesz_representative(m, g)
    v = rng.normal(size=m.n_cells)
    from seird.grid import gradient_energy, stiffness_matrix

    lhs = inner(m, w, v) + float(w @ (stiffness_matrix(m) @ v))
    assert lhs == pytest.approx(inner(m, g, v), rel=1e-10)
    assert compute_norm(m, w, "V") ** 2 == pytest.approx(inner(m, w, w) + gradient_energy(m, w))


def test_duality_inequality():
    rng = np.random.default_rng(7)
    m = build_mesh(1, 40, 2.0)
    g = rng.normal(size=m.n_cells)
    dual = compute_norm(m, g, "V_dual")
    for _ in range(100):
        v = rng.normal(size=m.n_cells) * rng.uniform(0.01, 10)
        assert abs(inner(m, g, v)) <= dual * compute_norm(m, v, "V") * (1 + 1e-9)


def test_snapshot_round_trip(tmp_path):
    m = build_mesh(3, (3, 2, 4), 1.0)
    values = np.random.default_rng(0).normal(size=m.n_cells)
    path = tmp_path / "u.bin"
    write_snapshot(path, m, values)
    raw = path.read_bytes()
    assert len(raw) == SNAPSHOT_HEADER_BYTES + 8 * m.n_cells
    assert raw[:SNAPSHOT_HEADER_BYTES].startswith(b"SEIRD-FIELD v1 dim=3 nx=3 ny=2 nz=4")
    assert raw[SNAPSHOT_HEADER_BYTES - 1:SNAPSHOT_HEADER_BYTES] == b"\n"
    shape, back = read_snapshot(path)
    assert shape == (3, 2, 4)
    assert np.array_equal(back, values)


def test_snapshot_header_pads_lower_dims():
    assert b"dim=1 nx=5 ny=1 nz=1" in snapshot_header(build_mesh(1, 5, 1.0))


def test_snapshot_rejects_truncated(tmp_path):
    m = build_mesh(1, 4, 1.0)
    path = tmp_path / "u.bin"
    write_snapshot(path, m, np.ones(4))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(PreconditionError):
        read_snapshot(path)
