"""Rate constants, nonlinear coefficients, a-priori bounds and the step-size check.

The reaction-diffusion system is written in the unknowns ``n`` (living
population), ``s`` (susceptible), ``i`` (infected) and ``h = s + e``.  All
compartments diffuse with the same coefficient ``kappa(n)``; the contact
terms of the susceptible equation are modulated by ``A(n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

_NORMALIZED_RATES = {
    "beta_i": 1.0,
    "beta_e": 1.0,
    "sigma": 1.0,
    "phi_e": 0.0,
    "phi_r": 1.0,
    "phi_d": 1.0,
}


@dataclass(frozen=True)
class ModelParams:
    """Epidemiological rate constants (units 1/time).

    ``phi_d`` multiplies the product ``i * n`` in the infected equation.
    With ``normalized=True`` every constant other than ``alpha`` and ``mu``
    takes its unit value (``sigma + phi_e = 1`` with ``phi_e = 0``).
    """

    alpha: float
    mu: float
    beta_i: float = 1.0
    beta_e: float = 1.0
    sigma: float = 1.0
    phi_e: float = 0.0
    phi_r: float = 1.0
    phi_d: float = 1.0
    normalized: bool = False

    def __post_init__(self):
        if not (self.alpha > 0 and self.mu > 0):
            raise PreconditionError(
                f"alpha and mu must be positive, got alpha={self.alpha}, mu={self.mu}"
            )
        for name in _NORMALIZED_RATES:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise PreconditionError(f"{name} must be finite and >= 0, got {value}")
        if self.normalized:
            for name, unit in _NORMALIZED_RATES.items():
                if getattr(self, name) != unit:
                    raise PreconditionError(
                        f"normalized parameters require {name}={unit}, got {getattr(self, name)}"
                    )

    @classmethod
    def normalized_model(cls, alpha: float, mu: float) -> "ModelParams":
        return cls(alpha=alpha, mu=mu, normalized=True)

    @property
    def exposed_exit(self) -> float:
        """Total outflow rate of the exposed class, ``sigma + phi_e``."""
        return self.sigma + self.phi_e

    @property
    def growth(self) -> float:
        """Net growth rate ``alpha - mu`` of the living population."""
        return self.alpha - self.mu


A_KINDS = ("constant", "saturating")
KAPPA_KINDS = ("constant", "linear", "affine")


@dataclass(frozen=True)
class Nonlinearity:
    """Preset coefficient functions ``A`` and ``kappa`` on ``(0, inf)``.

    ``A``: ``constant`` (``a_param = c >= 0``) or ``saturating``
    (``A(y) = max(0, 1 - A0/y)`` with ``a_param = A0 >= 0``).

    ``kappa``: ``constant`` (``kappa_params = (c,)``, ``c > 0``), ``linear``
    (``kappa(y) = y``) or ``affine`` (``kappa_params = (a, b)``,
    ``kappa(y) = a*y + b`` with ``a, b > 0``).  Every preset is monotone,
    which gives closed forms for its extrema on an interval.
    """

    a_kind: str = "constant"
    a_param: float = 1.0
    kappa_kind: str = "constant"
    kappa_params: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.a_kind not in A_KINDS:
            raise PreconditionError(f"unknown A preset {self.a_kind!r}")
        if self.kappa_kind not in KAPPA_KINDS:
            raise PreconditionError(f"unknown kappa preset {self.kappa_kind!r}")
        if not (math.isfinite(self.a_param) and self.a_param >= 0):
            raise PreconditionError(f"A parameter must be finite and >= 0, got {self.a_param}")
        object.__setattr__(self, "kappa_params", tuple(float(p) for p in self.kappa_params))
        expected = {"constant": 1, "linear": 0, "affine": 2}[self.kappa_kind]
        if len(self.kappa_params) != expected:
            raise PreconditionError(
                f"kappa preset {self.kappa_kind!r} takes {expected} parameter(s), "
                f"got {self.kappa_params}"
            )
        if any(not (math.isfinite(p) and p > 0) for p in self.kappa_params):
            raise PreconditionError(f"kappa parameters must be positive, got {self.kappa_params}")

    @classmethod
    def constant(cls, kappa: float = 1.0, a: float = 1.0) -> "Nonlinearity":
        return cls("constant", a, "constant", (kappa,))

    # -- A ------------------------------------------------------------------
    def A(self, y):
        y = np.asarray(y, dtype=float)
        if self.a_kind == "constant":
            return np.full_like(y, self.a_param)
        with np.errstate(divide="ignore"):
            return np.maximum(0.0, 1.0 - self.a_param / y)

    def A_lipschitz(self, lo: float, hi: float) -> float:
        """Lipschitz constant of ``A`` on ``[lo, hi]`` (``lo > 0``)."""
        if self.a_kind == "constant":
            return 0.0
        return self.a_param / lo**2

    # -- kappa --------------------------------------------------------------
    def kappa(self, y):
        y = np.asarray(y, dtype=float)
        kind, p = self.kappa_kind, self.kappa_params
        if kind == "constant":
            return np.full_like(y, p[0])
        if kind == "linear":
            return y.copy()
        return p[0] * y + p[1]

    def kappa_range(self, lo: float, hi: float) -> tuple[float, float]:
        """Min and max of ``kappa`` over ``[lo, hi]``; presets are nondecreasing."""
        return float(self.kappa(lo)), float(self.kappa(hi))

    def kappa_integral(self, y):
        """``P(y) = int_0^y kappa``, the preset formula continued polynomially."""
        y = np.asarray(y, dtype=float)
        kind, p = self.kappa_kind, self.kappa_params
        if kind == "constant":
            return p[0] * y
        if kind == "linear":
            return 0.5 * y * y
        return 0.5 * p[0] * y * y + p[1] * y

    def kappa_moment(self, y):
        """``int_0^y z kappa(z) dz`` for the preset formula."""
        y = np.asarray(y, dtype=float)
        kind, p = self.kappa_kind, self.kappa_params
        if kind == "constant":
            return 0.5 * p[0] * y * y
        if kind == "linear":
            return y**3 / 3.0
        return p[0] * y**3 / 3.0 + 0.5 * p[1] * y * y

    def kappa_integral_inverse(self, v):
        """Solve ``P(y) = v`` for ``y >= 0`` (valid where ``P`` is increasing)."""
        v = np.asarray(v, dtype=float)
        kind, p = self.kappa_kind, self.kappa_params
        if kind == "constant":
            return v / p[0]
        if kind == "linear":
            return np.sqrt(2.0 * np.maximum(v, 0.0))
        a, b = p
        # a/2 y^2 + b y - v = 0, written to avoid cancellation for small v
        disc = np.sqrt(b * b + 2.0 * a * np.maximum(v, 0.0))
        return 2.0 * v / (b + disc)


@dataclass(frozen=True)
class BoundsLedger:
    """Closed-form a-priori bounds boxing every discrete iterate."""

    n_up: float
    s_up: float
    h_up: float
    i_up: float
    n_low: float
    kappa_low: float
    kappa_up: float

    def __post_init__(self):
        if not (0 < self.n_low <= self.n_up):
            raise PreconditionError(f"need 0 < n_low <= n_up, got {self.n_low}, {self.n_up}")
        if not (0 < self.kappa_low <= self.kappa_up):
            raise PreconditionError(
                f"need 0 < kappa_low <= kappa_up, got {self.kappa_low}, {self.kappa_up}"
            )


def compute_bounds(
    params: ModelParams,
    T: float,
    sup_n0: float,
    sup_s0: float,
    sup_h0: float,
    sup_i0: float,
    inf_n0: float,
    nonlinearity: Nonlinearity,
) -> BoundsLedger:
    """Evaluate the a-priori bounds from the extrema of the initial data.

    Upper bounds are built in the order n, s, h, i and the lower bound of
    ``n`` last, since it depends on the bound for ``i``.  The generalized
    rates enter where the normalized model has unit coefficients.
    """
    if not T > 0:
        raise PreconditionError(f"time horizon must be positive, got {T}")
    if not inf_n0 > 0:
        raise PreconditionError(f"inf n0 must be positive, got {inf_n0}")
    if min(sup_n0, sup_s0, sup_h0, sup_i0) < 0:
        raise PreconditionError("suprema of the initial data must be nonnegative")

    growth_pos = max(params.alpha - params.mu, 0.0)
    decay_pos = max(params.mu - params.alpha, 0.0)
    n_up = math.exp(2.0 * T * growth_pos) * sup_n0
    s_up = sup_s0 + T * params.alpha * n_up
    h_up = sup_h0 + T * (params.alpha * n_up + params.exposed_exit * s_up)
    i_up = sup_i0 + T * params.sigma * (h_up + s_up)
    n_low = math.exp(-T * (params.phi_d * i_up + decay_pos)) * inf_n0
    if not (n_low > 0 and math.isfinite(n_up)):
        raise PreconditionError(
            f"bounds ledger not representable in floating point (n_low={n_low:.3e}, n_up={n_up:.3e})"
        )
    kappa_low, kappa_up = nonlinearity.kappa_range(n_low, n_up)
    return BoundsLedger(*(float(v) for v in (n_up, s_up, h_up, i_up, n_low, kappa_low, kappa_up)))


@dataclass(frozen=True)
class TruncatedNonlinearity:
    """``A`` and ``kappa`` composed with the clamp onto ``[n_low, n_up]``."""

    base: Nonlinearity
    ledger: BoundsLedger

    @property
    def kappa_low(self) -> float:
        return self.ledger.kappa_low

    @property
    def kappa_up(self) -> float:
        return self.ledger.kappa_up

    def clamp(self, y):
        return np.clip(np.asarray(y, dtype=float), self.ledger.n_low, self.ledger.n_up)

    def A(self, y):
        return self.base.A(self.clamp(y))

    def kappa(self, y):
        return self.base.kappa(self.clamp(y))


def truncate_nonlinearity(nl: Nonlinearity, ledger: BoundsLedger) -> TruncatedNonlinearity:
    return TruncatedNonlinearity(nl, ledger)


@dataclass(frozen=True)
class TauCheck:
    admissible: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.admissible


def validate_tau(params: ModelParams, tau: float) -> TauCheck:
    """Check the time-step restriction ``tau < 1`` and ``tau <= 1/(2(alpha-mu))``."""
    if not tau > 0:
        return TauCheck(False, f"tau must be positive, got {tau}")
    if tau >= 1.0:
        return TauCheck(False, f"tau >= 1 (tau={tau})")
    growth = params.alpha - params.mu
    if growth > 0 and tau > 1.0 / (2.0 * growth):
        return TauCheck(
            False,
            f"step restriction tau <= 1/(2(alpha-mu)) = {1.0 / (2.0 * growth):.6g} violated (tau={tau})",
        )
    return TauCheck(True)
