"""Layered backward recursion for potentials depending on (depth, label)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .green import (DEFAULT_CONFIG, ConvergenceError, SolverConfig, _denominator,
                    _gamma_rows, solve_fixed_point)
from .operators import OperatorParams
from .tree import SubstitutionMatrix, ValidationError

MIN_LAYERS = 50
MAX_LAYERS = 200_000


@dataclass(frozen=True)
class RadialPotential:
    """v_{s,j} for depth s < horizon; deeper layers all see ``default``."""

    values: np.ndarray            # (horizon, N)
    default: float = 0.0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if np.any(np.abs(v) > 1) or abs(self.default) > 1:
            raise ValidationError("radial potential values must lie in [-1, 1]")
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def layer(self, s: int) -> np.ndarray:
        if s < self.horizon:
            return self.values[s]
        return np.full(self.values.shape[1], self.default)

    @classmethod
    def constant(cls, n_labels: int, value: float, horizon: int = 0) -> "RadialPotential":
        return cls(np.full((horizon, n_labels), value), default=value)

    @classmethod
    def from_json(cls, source, m: SubstitutionMatrix) -> "RadialPotential":
        """``{"horizon": N, "values": [[s, label, v], ...], "default": 0}``."""
        data = source if isinstance(source, dict) else json.loads(Path(source).read_text())
        try:
            horizon = int(data["horizon"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError("potential JSON needs an integer 'horizon'") from None
        default = float(data.get("default", 0.0))
        vals = np.full((horizon, m.size), default)
        for entry in data.get("values", []):
            s, label, v = entry
            if not 0 <= int(s) < horizon:
                raise ValidationError(f"depth {s} outside the horizon {horizon}")
            vals[int(s), m.label_index(str(label))] = float(v)
        return cls(vals, default=default)


def psi_layer(p: OperatorParams, z: complex, lam: float, v_layer, g) -> np.ndarray:
    """-1 / (z - m_j - lam v_j + sum_k m_{j,k} g_k), one layer up."""
    g = np.asarray(g, dtype=complex)
    s = _denominator(p.offdiag, p.diag, np.asarray(z, dtype=complex), g) - lam * np.asarray(v_layer)
    if np.any(s == 0):
        raise ValidationError("layer map denominator vanished")
    return -1.0 / s


def contraction_estimate(p: OperatorParams, z: complex, n_probe: int = 40) -> float:
    """Observed per-step contraction of the unperturbed map near Gamma(z).

    Starts a probe a gamma distance of about 1e-2 from the fixed point and
    returns the geometric mean shrink factor of gamma_max over ``n_probe``
    steps.
    """
    fixed = solve_fixed_point(p, z).values
    probe = fixed.real + 1.1j * fixed.imag
    g0 = float(_gamma_rows(probe[None], fixed[None])[0])
    g = probe
    for _ in range(n_probe):
        g = psi_layer(p, z, 0.0, np.zeros(p.size), g)
    g1 = float(_gamma_rows(g[None], fixed[None])[0])
    if g1 <= 0 or g0 <= 0:
        return 0.0
    return min((g1 / g0) ** (1.0 / n_probe), 1.0)


def default_layers(p: OperatorParams, z: complex, tol: float) -> int:
    """Smallest N with rate^N < tol for the probe rate, at least 50."""
    rate = contraction_estimate(p, z)
    if rate <= 0:
        return MIN_LAYERS
    if rate >= 1:
        return MAX_LAYERS
    return int(min(max(np.ceil(np.log(tol) / np.log(rate)), MIN_LAYERS), MAX_LAYERS))


@dataclass
class RadialResult:
    layers: np.ndarray          # (N + 1, n_labels), row s = Gamma_s
    seed_gap: float             # gamma_max between the two seeds at s = 0
    n_layers: int
    reference: np.ndarray       # unperturbed Gamma(z)
    seed_gaps: np.ndarray = field(repr=False, default=None)


def solve_radial(p: OperatorParams, z: complex, lam: float, v: RadialPotential,
                 n_layers: int | None = None, tol: float = 1e-12,
                 config: SolverConfig = DEFAULT_CONFIG, check_seed: bool = True) -> RadialResult:
    """Gamma_s for s = N .. 0 under a radial potential of strength lam.

    Layer N is seeded with the fixed point for the potential beyond the
    horizon (the unperturbed Gamma when that tail is zero).  A second pass
    seeded with i*1 must land within ``tol`` in gamma_max at s = 0.
    """
    z = complex(z)
    if z.imag <= 0:
        raise ValidationError("radial solve needs Im z > 0")
    if v.values.shape[1] != p.size:
        raise ValidationError("potential label count does not match the operator")
    adaptive = n_layers is None
    if adaptive:
        n_layers = max(default_layers(p, z, tol), v.horizon)
    if n_layers < v.horizon:
        raise ValidationError("n_layers must reach the potential horizon")
    reference = solve_fixed_point(p, z, config=config).values
    tail = solve_fixed_point(p, z - lam * v.default, config=config).values

    while True:
        layers, gaps = _sweep(p, z, lam, v, n_layers, tail)
        if not check_seed or gaps[0] < tol:
            break
        need = _required_layers(gaps, tol)
        if not adaptive or n_layers >= MAX_LAYERS:
            raise ConvergenceError(
                f"seed sensitivity {gaps[0]:.3e} >= {tol:.1e} with {n_layers} layers; "
                f"about {need} layers needed", z=z, step=gaps[0])
        # the probe rate was taken at the unperturbed energy; grow and retry
        n_layers = min(max(2 * n_layers, int(1.2 * (need or 0))), MAX_LAYERS)
    return RadialResult(layers=layers, seed_gap=float(gaps[0]), n_layers=n_layers,
                        reference=reference, seed_gaps=gaps)


def _sweep(p, z, lam, v, n_layers, tail):
    layers = np.empty((n_layers + 1, p.size), dtype=complex)
    layers[n_layers] = tail
    alt = np.full(p.size, 1j)
    gaps = np.empty(n_layers + 1)
    gaps[n_layers] = float(_gamma_rows(alt[None], tail[None])[0])
    for s in range(n_layers - 1, -1, -1):
        vs = v.layer(s)
        layers[s] = psi_layer(p, z, lam, vs, layers[s + 1])
        alt = psi_layer(p, z, lam, vs, alt)
        gaps[s] = float(_gamma_rows(alt[None], layers[s][None])[0])
    return layers, gaps


def _required_layers(gaps, tol):
    # extrapolate the observed geometric decay of the seed gap
    n = gaps.size - 1
    g_top, g_bot = gaps[n], gaps[0]
    if not (g_top > 0 and 0 < g_bot < g_top):
        return None
    rate = (g_bot / g_top) ** (1.0 / n)
    return int(np.ceil(np.log(tol / g_top) / np.log(rate)))
