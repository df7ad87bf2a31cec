"""Independent reference implementations used by the tests.

Nothing here calls into the package's assembly or solver code: operators
are built by looping over multi-indices, linear systems go through dense
LU, and the homogeneous dynamics are plain scalar recursions.
"""

from __future__ import annotations

import itertools
import math
import warnings

import numpy as np
import scipy.linalg as sla
from scipy.integrate import IntegrationWarning, quad


def dense_fv_matrix(shape, lengths, kappa, b, average="harmonic"):
    """Brute-force finite-volume matrix of ``b u - div(kappa grad u)``, zero flux."""
    shape = tuple(shape)
    h = [L / c for L, c in zip(lengths, shape)]
    vol = float(np.prod(h))
    n = int(np.prod(shape))
    kappa = np.asarray(kappa, dtype=float).reshape(shape)
    b = np.asarray(b, dtype=float).reshape(shape)
    M = np.zeros((n, n))

    def flat(idx):
        return int(np.ravel_multi_index(idx, shape))

    for idx in itertools.product(*(range(c) for c in shape)):
        p = flat(idx)
        M[p, p] += b[idx] * vol
        for axis in range(len(shape)):
            if idx[axis] + 1 >= shape[axis]:
                continue
            nb = list(idx)
            nb[axis] += 1
            nb = tuple(nb)
            q = flat(nb)
            k1, k2 = kappa[idx], kappa[nb]
            kf = 2 * k1 * k2 / (k1 + k2) if average == "harmonic" else 0.5 * (k1 + k2)
            t = kf * (vol / h[axis]) / h[axis]
            M[p, p] += t
            M[q, q] += t
            M[p, q] -= t
            M[q, p] -= t
    return M, vol


def dense_solve(shape, lengths, kappa, b, f, average="harmonic"):
    M, vol = dense_fv_matrix(shape, lengths, kappa, b, average)
    return sla.lu_solve(sla.lu_factor(M), np.asarray(f, dtype=float) * vol)


def dense_mollify(shape, lengths, u, tau):
    n = int(np.prod(shape))
    return dense_solve(shape, lengths, np.full(n, tau), np.ones(n), u)


def kirchhoff_by_quadrature(kappa_tilde, y):
    """``int_0^y kappa_tilde`` by adaptive quadrature, one value at a time."""
    with warnings.catch_warnings():
        # the requested accuracy sits at the roundoff floor, which quad reports
        warnings.simplefilter("ignore", IntegrationWarning)
        return np.array([quad(kappa_tilde, 0.0, float(v), limit=200, epsabs=1e-14, epsrel=1e-14)[0]
                         for v in np.atleast_1d(y)])


def dense_newton_n_step(shape, lengths, n_k, lam, tau, kappa_tilde, tol=1e-13, max_iter=60):
    """Newton in the ``n`` variables for ``lam n - div(grad K(n)) = n_k / tau``.

    The face flux is ``(area / h) (K(n_p) - K(n_q))`` with ``K`` from quadrature.
    """
    n_cells = int(np.prod(shape))
    L, vol = dense_fv_matrix(shape, lengths, np.ones(n_cells), np.full(n_cells, 1e-300))
    L = L - np.diag(np.full(n_cells, 1e-300 * vol))
    n = np.array(n_k, dtype=float)
    for _ in range(max_iter):
        F = vol * lam * n + L @ kirchhoff_by_quadrature(kappa_tilde, n) - vol * n_k / tau
        if np.linalg.norm(F) <= tol * np.linalg.norm(vol * n_k / tau):
            return n
        Jac = np.diag(vol * lam) + L * kappa_tilde(n)[None, :]
        n = n - np.linalg.solve(Jac, F)
    raise RuntimeError("dense Newton oracle did not converge")


def scalar_step(state, tau, alpha, mu, A=lambda y: 1.0, beta_i=1.0, beta_e=1.0,
                sigma=1.0, phi_e=0.0, phi_r=1.0, phi_d=1.0):
    """One backward-Euler step of the space-free system, in the scheme's order."""
    n, s, i, h = state
    n1 = n / (1.0 + tau * (phi_d * i - alpha + mu))
    s1 = (s / tau + alpha * n1) / (1.0 / tau + A(n1) * (beta_i * i + beta_e * (h - s)) + mu)
    c = sigma + phi_e
    h1 = (h / tau + alpha * n1 + c * s1) / (1.0 / tau + mu + c)
    i1 = (i / tau + sigma * (h1 - s1)) / (1.0 / tau + phi_d * n1 + phi_r + mu)
    return (n1, s1, i1, h1)


def scalar_trajectory(state0, T, N, d0=0.0, **rates):
    tau = T / N
    states = [tuple(float(v) for v in state0)]
    deceased = [float(d0)]
    phi_d = rates.get("phi_d", 1.0)
    for _ in range(N):
        nxt = scalar_step(states[-1], tau, **rates)
        states.append(nxt)
        deceased.append(deceased[-1] + tau * phi_d * nxt[2] * nxt[0])
    return states, deceased


def ledger_closed_form(T, alpha, mu, sup_n0, sup_s0, sup_h0, sup_i0, inf_n0):
    """The normalized bounds, written out directly."""
    n_up = math.exp(2 * T * max(alpha - mu, 0.0)) * sup_n0
    s_up = sup_s0 + T * alpha * n_up
    h_up = sup_h0 + T * (alpha * n_up + s_up)
    i_up = sup_i0 + T * (h_up + s_up)
    n_low = math.exp(-T * (i_up + max(mu - alpha, 0.0))) * inf_n0
    return n_up, s_up, h_up, i_up, n_low
