"""Hyperbolic semi-metric on the upper half plane and contraction algebra.

All functions broadcast over leading axes; the last axis indexes the
components of a vector in H^J when a vector is expected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tree import ValidationError


def _check_upper(*arrays):
    for a in arrays:
        if np.any(np.imag(a) <= 0):
            raise ValidationError("points must lie in the open upper half plane")


def gamma(g, h):
    """|g - h|^2 / (Im g Im h), elementwise."""
    g = np.asarray(g, dtype=complex)
    h = np.asarray(h, dtype=complex)
    _check_upper(g, h)
    return np.abs(g - h) ** 2 / (g.imag * h.imag)


def gamma_max(g, h):
    g = np.asarray(g, dtype=complex)
    h = np.asarray(h, dtype=complex)
    if g.shape != h.shape:
        raise ValidationError(f"shape mismatch {g.shape} vs {h.shape}")
    return np.max(gamma(g, h), axis=-1) if g.ndim else gamma(g, h)


def gamma_to_dist(gm):
    return np.arccosh(0.5 * np.asarray(gm) + 1.0)


def dist(g, h):
    """Product-space hyperbolic distance, arccosh(gamma_max / 2 + 1)."""
    return gamma_to_dist(gamma_max(g, h))


# the three building blocks of one recursion step g -> -1/(z - w + sum |t|^2 g)

def reflect(g):
    return -1.0 / np.asarray(g, dtype=complex)


def shift(g, z, w=0.0):
    return z - w + np.asarray(g, dtype=complex)


def average(g, edge_weights):
    """Weighted sum over the last axis: sum_y |t_y|^2 g_y."""
    return np.sum(np.asarray(edge_weights) * np.asarray(g, dtype=complex), axis=-1)


def shift_contraction_factor(g, h, z):
    """Exact ratio gamma(z+g, z+h) / gamma(g, h) for Im z >= 0."""
    eta = np.imag(z)
    return 1.0 / ((1.0 + eta / np.imag(g)) * (1.0 + eta / np.imag(h)))


@dataclass(frozen=True)
class BallGeometry:
    """Extent of a gamma-ball of radius ``r`` around a center.

    ``eps1`` bounds the Euclidean displacement of the imaginary part,
    ``eps2`` is the smallest imaginary part inside the ball, both measured
    for the component with the smallest imaginary part ``eps0``.
    """

    eps0: float
    eps1: float
    eps2: float
    r: float


def ball_geometry_from_radius(center, r: float) -> BallGeometry:
    center = np.atleast_1d(np.asarray(center, dtype=complex))
    _check_upper(center)
    if r < 0:
        raise ValidationError("radius must be nonnegative")
    eps0 = float(center.imag.min())
    # the lowest point of the ball solves eps1^2 = r eps0 (eps0 - eps1)
    eps1 = 0.5 * (-r * eps0 + np.sqrt((r * eps0) ** 2 + 4.0 * r * eps0 ** 2))
    eps1 = min(float(eps1), eps0)
    return BallGeometry(eps0=eps0, eps1=eps1, eps2=eps0 - eps1, r=float(r))


def radius_for_eps1(eps0: float, delta: float) -> float:
    """Radius whose ball reaches down by exactly ``delta`` from ``eps0``."""
    if not 0 <= delta < eps0:
        raise ValidationError("need 0 <= delta < eps0")
    return delta ** 2 / ((eps0 - delta) * eps0)


def triangle_substitute_coeffs(h: complex, lam: float,
                               mode: Literal["shift", "scale"] = "shift") -> float:
    """Constant c >= 1 in the substitute triangle inequalities.

    shift:  gamma(g + lam, h) <= c gamma(g, h) + (c - 1)
    scale:  gamma((1 + lam) g, h) <= (c gamma(g, h) + c - 1) / (1 + lam)
    """
    h = complex(h)
    if h.imag <= 0:
        raise ValidationError("h must lie in the upper half plane")
    if mode == "shift":
        return (1.0 + 2.0 * abs(lam) / h.imag) ** 2
    if mode == "scale":
        if lam <= -1:
            raise ValidationError("scale mode needs lam > -1")
        return (1.0 + 2.0 * np.sqrt(2.0) * abs(lam) * abs(h) / h.imag) ** 2
    raise ValidationError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class ContractionQuantities:
    """Per-sphere weights and pairwise alignment data for g against h.

    Arrays carry any batch axes first, then the sphere index (twice for the
    pairwise ones).  ``gam`` holds the componentwise gamma values.
    """

    p: np.ndarray
    q: np.ndarray
    Q: np.ndarray
    alpha: np.ndarray
    c: np.ndarray
    gam: np.ndarray

    def assembled(self) -> np.ndarray:
        """sum_y p_y c_y gamma_y, equal to gamma(tau g, tau h)."""
        return np.sum(self.p * self.c * self.gam, axis=-1)


def contraction_quantities(g, h, edge_weights) -> ContractionQuantities:
    g = np.asarray(g, dtype=complex)
    h = np.asarray(h, dtype=complex)
    wts = np.broadcast_to(np.asarray(edge_weights, dtype=float), g.shape)
    _check_upper(g, h)
    if np.any(wts <= 0):
        raise ValidationError("edge weights must be positive")
    gi, hi = g.imag, h.imag
    p = wts * hi
    p = p / p.sum(axis=-1, keepdims=True)
    q = wts * gi
    q = q / q.sum(axis=-1, keepdims=True)
    diff = g - h
    gam = np.abs(diff) ** 2 / (gi * hi)

    a = gi * hi * gam                       # = |g - h|^2
    geo = np.sqrt(a[..., :, None] * a[..., None, :])
    ari = 0.5 * (gi[..., :, None] * hi[..., None, :] * gam[..., None, :]
                 + gi[..., None, :] * hi[..., :, None] * gam[..., :, None])
    live = (gam[..., :, None] > 0) & (gam[..., None, :] > 0)
    Q = np.zeros(geo.shape)
    np.divide(geo, ari, out=Q, where=live)
    np.clip(Q, 0.0, 1.0, out=Q)
    cross = diff[..., :, None] * np.conj(diff[..., None, :])
    alpha = np.where(live, np.angle(cross), 0.0)
    # np.angle lands in [-pi, pi]; fold -pi onto pi
    alpha = np.where(alpha <= -np.pi, np.pi, alpha)
    qcos = np.where(live, Q * np.cos(alpha), 0.0)
    c = np.einsum("...v,...yv->...y", q, qcos)
    return ContractionQuantities(p=p, q=q, Q=Q, alpha=alpha, c=c, gam=gam)


def arg_modulus(alpha):
    """Distance of an angle to 0 on the circle."""
    a = np.abs(np.asarray(alpha)) % (2 * np.pi)
    return np.minimum(a, 2 * np.pi - a)
