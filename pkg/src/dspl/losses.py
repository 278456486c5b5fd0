"""Per-triplet loss terms and their gradients w.r.t. the three embeddings.

For a triplet of embeddings (f_a, f_p, f_n) with margin M and sharpness
gamma:

    T = M + |f_a - f_p|^2 - |f_a - f_n|^2
    R = max(T, 0)                        hinge on the relative similarity
    D = |f_p - f_n|^2 - |f_a - f_n|^2    deviation of the two negative pairs
    Z = |D|
    S = (1/gamma) * log(1 + exp(gamma*Z))   softplus penalty on the deviation
    eta = exp(gamma*Z) / (1 + exp(gamma*Z)) in [0.5, 1): gradient strength

`triplet_grad` differentiates the weighted objective u*R + zeta*S. Two
gradient modes exist for the R part:

  * "exact" is the true subgradient of the hinge (zero when T <= 0; the
    |D| kink uses sign(0) = 0).
  * "paper_literal" adds a third term, -2u*(f_p - f_n) into the positive
    slot and +2u*(f_p - f_n) into the negative slot, on active triplets.
    It reproduces a published closed-form variant of the hinge gradient
    that is not the derivative of R; it is kept selectable so the two
    behaviors can be compared. Finite-difference checks only hold for
    "exact".

All functions are pure and safe to call from multiple threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

GRAD_MODES = ("exact", "paper_literal")

# switch softplus to its asymptotic form above this to avoid exp overflow
_SOFTPLUS_CUTOFF = 30.0


@dataclass(frozen=True)
class LossParams:
    """Loss hyperparameters: margin, sharpness, and the two term weights."""

    margin: float = 1.1
    sharpness: float = 0.9
    symmetric_weight: float = 0.1
    parameter_weight: float = 0.01

    def __post_init__(self):
        if self.margin <= 0:
            raise ContractError(f"margin must be > 0, got {self.margin}")
        if self.sharpness <= 0:
            raise ContractError(f"sharpness must be > 0, got {self.sharpness}")
        if self.symmetric_weight < 0 or self.parameter_weight < 0:
            raise ContractError("term weights must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    R: float
    D: float
    Z: float
    S: float
    active: bool


@dataclass(frozen=True)
class GradientTriple:
    g_a: np.ndarray
    g_p: np.ndarray
    g_n: np.ndarray


def _check_lengths(*vecs):
    arrs = [np.asarray(v, dtype=np.float64) for v in vecs]
    dim = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != dim:
            raise ContractError(f"embedding shapes differ: {[x.shape for x in arrs]}")
    return arrs


def relative_term(f_a, f_p, f_n, margin: float) -> tuple[float, bool]:
    """Hinge R = max(M + |a-p|^2 - |a-n|^2, 0) and whether it is active."""
    f_a, f_p, f_n = _check_lengths(f_a, f_p, f_n)
    d_ap = f_a - f_p
    d_an = f_a - f_n
    t = margin + d_ap @ d_ap - d_an @ d_an
    return (t, True) if t > 0 else (0.0, False)


def softplus(z: float, sharpness: float) -> float:
    """(1/gamma) * log(1 + exp(gamma*z)), overflow-safe for large gamma*z."""
    gz = sharpness * z
    if gz > _SOFTPLUS_CUTOFF:
        return z + math.log1p(math.exp(-gz)) / sharpness
    return math.log1p(math.exp(gz)) / sharpness


def symmetric_term(f_a, f_p, f_n, sharpness: float) -> tuple[float, float, float, float]:
    """Returns (S, D, Z, eta) for the deviation penalty."""
    f_a, f_p, f_n = _check_lengths(f_a, f_p, f_n)
    d_pn = f_p - f_n
    d_an = f_a - f_n
    dev = d_pn @ d_pn - d_an @ d_an
    z = abs(dev)
    s = softplus(z, sharpness)
    eta = 1.0 / (1.0 + math.exp(-sharpness * z))
    return s, dev, z, eta


def triplet_loss(f_a, f_p, f_n, params: LossParams) -> LossBreakdown:
    r, active = relative_term(f_a, f_p, f_n, params.margin)
    s, dev, z, _ = symmetric_term(f_a, f_p, f_n, params.sharpness)
    return LossBreakdown(R=r, D=dev, Z=z, S=s, active=active)


def triplet_grad(f_a, f_p, f_n, params: LossParams, u: float, mode: str) -> GradientTriple:
    """Gradient of u*R + zeta*S w.r.t. each of the three embeddings."""
    if mode not in GRAD_MODES:
        raise ContractError(f"gradient mode must be one of {GRAD_MODES}, got {mode!r}")
    f_a, f_p, f_n = _check_lengths(f_a, f_p, f_n)
    d_ap = f_a - f_p
    d_an = f_a - f_n
    d_pn = f_p - f_n

    g_a = np.zeros_like(f_a)
    g_p = np.zeros_like(f_a)
    g_n = np.zeros_like(f_a)

    t = params.margin + d_ap @ d_ap - d_an @ d_an
    if t > 0:
        g_a += u * 2.0 * (d_ap - d_an)
        g_p += u * -2.0 * d_ap
        g_n += u * 2.0 * d_an
        if mode == "paper_literal":
            g_p += u * -2.0 * d_pn
            g_n += u * 2.0 * d_pn

    zeta = params.symmetric_weight
    if zeta != 0.0:
        dev = d_pn @ d_pn - d_an @ d_an
        sgn = float(np.sign(dev))  # sign(0) = 0: null subgradient at the |D| kink
        eta = 1.0 / (1.0 + math.exp(-params.sharpness * abs(dev)))
        coef = zeta * eta * sgn
        # dD/da = -2(a-n), dD/dp = 2(p-n), dD/dn = 2(a-n) - 2(p-n)
        g_a += coef * -2.0 * d_an
        g_p += coef * 2.0 * d_pn
        g_n += coef * (2.0 * d_an - 2.0 * d_pn)

    return GradientTriple(g_a=g_a, g_p=g_p, g_n=g_n)
