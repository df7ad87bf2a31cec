from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_newton_n_step, kirchhoff_by_quadrature
from seird.grid import build_mesh
from seird.kirchhoff import (
    KirchhoffMap,
    NStepProblem,
    kirchhoff_eval,
    kirchhoff_invert,
    newton_minimize,
    solve_n_step,
    step_coefficient,
)
from seird.model import ModelParams, Nonlinearity, compute_bounds, truncate_nonlinearity


def make_map(nl, n_low, n_up):
    led = compute_bounds(ModelParams.normalized_model(1.0, 1.0), 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, nl)
    lo, hi = nl.kappa_range(n_low, n_up)
    led = replace(led, n_low=n_low, n_up=n_up, kappa_low=lo, kappa_up=hi)
    return KirchhoffMap(truncate_nonlinearity(nl, led))


LINEAR = Nonlinearity("constant", 1.0, "linear", ())
AFFINE = Nonlinearity("constant", 1.0, "affine", (1.5, 0.2))
MAPS = {
    "linear": make_map(LINEAR, 0.5, 2.0),
    "affine": make_map(AFFINE, 0.05, 4.0),
    "constant": make_map(Nonlinearity.constant(kappa=0.3), 0.5, 2.0),
}


def test_constant_kappa_is_linear():
    kmap = MAPS["constant"]
    y = np.linspace(-3, 7, 41)
    assert np.allclose(kirchhoff_eval(kmap, y), 0.3 * y, rtol=1e-15)
    assert np.allclose(kirchhoff_invert(kmap, 0.3 * y), y, rtol=1e-14, atol=1e-15)


def test_linear_kappa_value_at_one():
    assert float(kirchhoff_eval(MAPS["linear"], 1.0)) == pytest.approx(0.625, rel=1e-15)
    assert float(kirchhoff_eval(MAPS["linear"], 0.0)) == 0.0


@pytest.mark.parametrize("name", sorted(MAPS))
def test_matches_quadrature(name):
    kmap = MAPS[name]
    y = np.array([0.0, 0.01, 0.3, 0.5, 0.9, 1.7, 2.0, 3.5, 6.0])
    ref = kirchhoff_by_quadrature(lambda z: float(kmap.kappa(z)), y)
    assert np.allclose(kmap.eval(y), ref, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name", sorted(MAPS))
def test_round_trip(name):
    kmap = MAPS[name]
    y = np.random.default_rng(0).uniform(-1.0, 6.0, 10_000)
    assert np.max(np.abs(kmap.invert(kmap.eval(y)) - y)) <= 1e-12


@pytest.mark.parametrize("name", sorted(MAPS))
@given(a=st.floats(-5, 10), b=st.floats(-5, 10))
def test_bi_lipschitz(name, a, b):
    kmap = MAPS[name]
    lo, hi = kmap.tnl.kappa_low, kmap.tnl.kappa_up
    d = abs(float(kmap.eval(a)) - float(kmap.eval(b)))
    assert lo * abs(a - b) * (1 - 1e-12) - 1e-13 <= d <= hi * abs(a - b) * (1 + 1e-12) + 1e-13
    if a < b:
        assert kmap.eval(a) < kmap.eval(b)


@pytest.mark.parametrize("name", sorted(MAPS))
def test_potential_derivative_is_inverse(name):
    kmap = MAPS[name]
    u = np.linspace(-0.5, 1.1 * float(kmap.K_up) + 0.5, 37)
    h = 1e-6
    fd = (kmap.potential(u + h) - kmap.potential(u - h)) / (2 * h)
    assert np.allclose(fd, kmap.invert(u), rtol=1e-7, atol=1e-8)


def homogeneous_setup(alpha, mu, c, gamma, tau, cells=6):
    mesh = build_mesh(2, cells, 1.0)
    params = ModelParams.normalized_model(alpha, mu)
    led = compute_bounds(params, 1.0, c, 0.0, 0.0, gamma, c, LINEAR)
    kmap = KirchhoffMap(truncate_nonlinearity(LINEAR, led))
    return mesh, params, kmap


@pytest.mark.parametrize("gamma", [0.0, 0.7])
def test_homogeneous_step(gamma):
    alpha, mu, c, tau = 0.6, 0.2, 1.3, 0.05
    mesh, params, kmap = homogeneous_setup(alpha, mu, c, gamma, tau)
    n1, rep = solve_n_step(mesh, np.full(mesh.n_cells, c), np.full(mesh.n_cells, gamma), params, kmap, tau)
    assert np.allclose(n1, c / (1 + tau * (gamma + mu - alpha)), rtol=1e-12)
    assert rep.converged


def random_instance(seed, cells=16, tau=0.2):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(1, cells, 1.0)
    n_k = rng.uniform(0.3, 2.5, cells)
    i_k = rng.uniform(0.0, 1.5, cells)
    params = ModelParams.normalized_model(0.7, 0.4)
    led = compute_bounds(params, 1.0, n_k.max(), 1.0, 1.0, i_k.max(), n_k.min(), LINEAR)
    kmap = KirchhoffMap(truncate_nonlinearity(LINEAR, led))
    return mesh, n_k, i_k, params, kmap, tau


@pytest.mark.parametrize("seed", range(4))
def test_random_step_matches_dense_newton(seed):
    mesh, n_k, i_k, params, kmap, tau = random_instance(seed)
    n1, _ = solve_n_step(mesh, n_k, i_k, params, kmap, tau, tol=1e-12)
    lam = step_coefficient(params, i_k, tau)
    lo, hi = kmap.n_low, kmap.n_up
    ref = dense_newton_n_step(mesh.shape, mesh.lengths, n_k, lam, tau, lambda y: np.clip(y, lo, hi))
    assert np.max(np.abs(n1 - ref)) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_energy_descent_and_minimizer(seed):
    mesh, n_k, i_k, params, kmap, tau = random_instance(seed, cells=24, tau=0.5)
    problem = NStepProblem(mesh, kmap, step_coefficient(params, i_k, tau), n_k, tau)
    # a deliberately poor start exercises the line search
    u, rep = newton_minimize(problem, np.zeros(mesh.n_cells), tol=1e-12)
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(rep.energies, rep.energies[1:]))
    J = problem.energy(u)
    rng = np.random.default_rng(seed)
    for scale in np.geomspace(1e-4, 1.0, 100):
        assert J <= problem.energy(u + scale * rng.normal(size=u.size)) + 1e-13 * abs(J)


def test_quadratic_terminal_convergence():
    mesh, n_k, i_k, params, kmap, tau = random_instance(11, cells=32, tau=0.5)
    problem = NStepProblem(mesh, kmap, step_coefficient(params, i_k, tau), n_k, tau)
    _, rep = newton_minimize(problem, np.zeros(mesh.n_cells), tol=1e-13)
    r = rep.residuals
    assert len(r) >= 4
    ratios = [b / a**2 for a, b in zip(r[:-1], r[1:]) if a < 1.0 and b > 1e-12]
    assert ratios and max(ratios) < 10.0


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_per_step_bounds(seed):
    mesh, n_k, i_k, params, kmap, tau = random_instance(seed, cells=12, tau=0.3)
    n1, _ = solve_n_step(mesh, n_k, i_k, params, kmap, tau, tol=1e-10)
    growth = max(params.alpha - params.mu, 0.0)
    assert n1.max() <= n_k.max() / (1 - tau * growth) * (1 + 1e-9)
    assert n1.min() >= n_k.min() / (1 + tau * (i_k.max() + max(params.mu - params.alpha, 0.0))) * (1 - 1e-9)
