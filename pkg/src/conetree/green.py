"""Reduced Green function Gamma(z) of a label-invariant operator.

Gamma is the unique fixed point in H^N of

    phi_z(g)_j = -1 / (z - m_j + sum_k m_{j,k} g_k),

equivalently the upper half plane root of the polynomial system
P_j(z, g) = (z - m_j + sum_k m_{j,k} g_k) g_j + 1.

The solver runs Picard steps of phi_z and accepts a Newton step on P
whenever that stays in H^N and lowers the residual; Newton supplies the
speed near the real axis where phi_z barely contracts, Picard supplies
global convergence.  Every routine works on a batch of spectral
parameters at once and treats each entry independently, so results do not
depend on how a grid is chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import OperatorParams
from .tree import TruncatedTree, ValidationError


class ConvergenceError(RuntimeError):
    """Fixed point iteration did not reach the requested tolerance."""

    def __init__(self, message, z=None, step=None):
        super().__init__(message)
        self.z = z
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12           # on the gamma_max length of a Picard step
    max_iter: int = 5000
    eta_start: float = 1.0
    eta_min: float = 1e-7
    tau: float = 1e-4            # band threshold on Im Gamma
    align_tol: float = 1e-3      # radians, for aligned-component detection
    refine_tol: float = 1e-6     # band edge bisection width
    polish_steps: int = 3


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True)
class GreenVector:
    values: np.ndarray
    z: complex
    residual: float
    step: float
    iterations: int
    real_limit: bool = False

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __getitem__(self, j):
        return self.values[j]

    def __len__(self):
        return len(self.values)


# -- elementwise kernels ----------------------------------------------------

def _rowsum(off, g):
    # explicit reduction keeps every entry independent of the batch size
    return np.sum(off * g[..., None, :], axis=-1)


def _denominator(off, dg, z, g):
    return z[..., None] - dg + _rowsum(off, g)


def phi_map(p: OperatorParams, z, g):
    """One application of the reduced recursion map."""
    g = np.asarray(g, dtype=complex)
    z = np.asarray(z, dtype=complex)
    s = _denominator(p.offdiag, p.diag, z, g)
    if np.any(s == 0):
        raise ValidationError("recursion map denominator vanished")
    return -1.0 / s


def polynomial_residual(p: OperatorParams, z, g):
    """P_j(z, g) = (z - m_j + sum_k m_{j,k} g_k) g_j + 1."""
    g = np.asarray(g, dtype=complex)
    z = np.asarray(z, dtype=complex)
    return _denominator(p.offdiag, p.diag, z, g) * g + 1.0


def _newton_candidates(off, dg, z, g, s, P):
    J = off * g[..., :, None]
    idx = np.arange(g.shape[-1])
    J[..., idx, idx] += s
    try:
        delta = np.linalg.solve(J, P[..., None])[..., 0]
    except np.linalg.LinAlgError:
        delta = np.full_like(g, np.nan)
        for b in range(g.shape[0]):
            try:
                delta[b] = np.linalg.solve(J[b], P[b])
            except np.linalg.LinAlgError:
                pass
    return g - delta


def _gamma_rows(a, b):
    return np.max(np.abs(a - b) ** 2 / (a.imag * b.imag), axis=-1)


def _iterate(off, dg, z, g, tol, max_iter, polish_steps):
    """Hybrid Newton/Picard iteration on a batch.

    Returns (g, converged, step, iterations) with one entry per batch row.
    Rows stop individually once a Picard step from the current iterate is
    shorter than ``tol`` in gamma_max.
    """
    g = g.copy()
    n = g.shape[0]
    step = np.full(n, np.inf)
    iters = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    for it in range(max_iter):
        if active.size == 0:
            break
        ga, za = g[active], z[active]
        s = _denominator(off, dg, za, ga)
        P = s * ga + 1.0
        picard = -1.0 / s
        with np.errstate(all="ignore"):
            step_a = _gamma_rows(picard, ga)
            done = step_a < tol
            newton = _newton_candidates(off, dg, za, ga, s, P)
            ok = np.all(np.isfinite(newton) & (newton.imag > 0), axis=-1)
            p_new = np.max(np.abs(_denominator(off, dg, za, newton) * newton + 1.0), axis=-1)
            ok &= p_new < np.max(np.abs(P), axis=-1)
        step[active] = step_a
        iters[active] = it
        # converged rows keep their iterate; the rest move
        move = ~done
        nxt = np.where(ok[:, None], newton, picard)
        g[active[move]] = nxt[move]
        active = active[move]
    converged = step < tol
    if polish_steps:
        idx = np.flatnonzero(converged)
        g[idx] = _polish(off, dg, z[idx], g[idx], polish_steps)
    return g, converged, step, iters


def _polish(off, dg, z, g, n_steps):
    """A few residual-decreasing Newton steps after convergence."""
    for _ in range(n_steps):
        if g.shape[0] == 0:
            break
        s = _denominator(off, dg, z, g)
        P = s * g + 1.0
        with np.errstate(all="ignore"):
            newton = _newton_candidates(off, dg, z, g, s, P)
            ok = np.all(np.isfinite(newton) & (newton.imag > 0), axis=-1)
            p_new = np.max(np.abs(_denominator(off, dg, z, newton) * newton + 1.0), axis=-1)
            ok &= p_new < np.max(np.abs(P), axis=-1)
        if not ok.any():
            break
        g = np.where(ok[:, None], newton, g)
    return g


def _as_batch(z):
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if z.ndim != 1:
        raise ValidationError("spectral parameters must form a 1-d array")
    return z


def _initial(n, size, init):
    if init is None:
        return np.full((n, size), 1j)
    g0 = np.asarray(init, dtype=complex)
    g0 = np.broadcast_to(g0, (n, size)).copy()
    if np.any(g0.imag <= 0):
        raise ValidationError("initial guess must lie in the upper half plane")
    return g0


# -- fixed point at Im z > 0 -------------------------------------------------

def solve_many(p: OperatorParams, z, config: SolverConfig = DEFAULT_CONFIG,
               init=None, raise_on_failure: bool = True):
    """Fixed points for an array of spectral parameters with Im z > 0.

    Returns ``(values, converged, step)``.
    """
    z = _as_batch(z)
    if np.any(z.imag <= 0):
        raise ValidationError("solve_many needs Im z > 0")
    g0 = _initial(z.size, p.size, init)
    g, conv, step, _ = _iterate(p.offdiag, p.diag, z, g0, config.tol, config.max_iter,
                                config.polish_steps)
    if raise_on_failure and not conv.all():
        bad = int(np.flatnonzero(~conv)[0])
        raise ConvergenceError(f"no convergence at z={z[bad]} (last gamma step {step[bad]:.3e})",
                               z=z[bad], step=step[bad])
    return g, conv, step


def solve_fixed_point(p: OperatorParams, z: complex, tol: float | None = None,
                      max_iter: int | None = None, init=None,
                      config: SolverConfig = DEFAULT_CONFIG) -> GreenVector:
    """Gamma(z) for a single z in the upper half plane, started from i*1."""
    cfg = _override(config, tol=tol, max_iter=max_iter)
    z = complex(z)
    if z.imag <= 0:
        raise ValidationError("solve_fixed_point needs Im z > 0")
    g0 = _initial(1, p.size, init)
    g, conv, step, iters = _iterate(p.offdiag, p.diag, np.array([z]), g0, cfg.tol,
                                    cfg.max_iter, cfg.polish_steps)
    if not conv[0]:
        raise ConvergenceError(f"no convergence at z={z} after {cfg.max_iter} iterations "
                               f"(last gamma step {step[0]:.3e})", z=z, step=step[0])
    res = float(np.max(np.abs(polynomial_residual(p, z, g[0]))))
    return GreenVector(values=g[0], z=z, residual=res, step=float(step[0]),
                       iterations=int(iters[0]))


def _override(config, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    if not kw:
        return config
    from dataclasses import replace
    return replace(config, **kw)


# -- boundary values by eta continuation ----------------------------------------

def eta_ladder(eta_start: float, eta_min: float) -> list[float]:
    """eta_start, eta_start/2, ... down to eta_min (inclusive)."""
    if eta_min < 0 or eta_start <= 0:
        raise ValidationError("need eta_start > 0 and eta_min >= 0")
    floor = eta_min if eta_min > 0 else 1e-12
    ladder = [eta_start]
    while ladder[-1] > floor:
        ladder.append(max(ladder[-1] / 2, floor))
    if eta_min == 0:
        ladder.append(0.0)
    return ladder


def continuation_many(p: OperatorParams, E, eta: float,
                      config: SolverConfig = DEFAULT_CONFIG):
    """Solve at E + i*eta for an array of energies by halving eta from
    ``config.eta_start``, warm starting every level.

    ``eta = 0`` asks for boundary values: the last level is a Newton polish
    on the real axis, accepted only where it stays in H^N.  Returns
    ``(values, converged, failed_eta)``; ``failed_eta`` is NaN where every
    level converged.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    g = np.full((E.size, p.size), 1j)
    failed = np.full(E.size, np.nan)
    for eta_k in eta_ladder(max(config.eta_start, eta), eta):
        z = E + 1j * eta_k
        if eta_k == 0.0:
            g = _polish(p.offdiag, p.diag, z, g, max(config.polish_steps, 8))
            break
        g_new, conv, _, _ = _iterate(p.offdiag, p.diag, z, g, config.tol, config.max_iter,
                                     config.polish_steps)
        newly = conv == False  # noqa: E712
        failed = np.where(np.isnan(failed) & newly, eta_k, failed)
        g = g_new
    return g, np.isnan(failed), failed


def solve_boundary_many(p: OperatorParams, E, eta_min: float | None = None,
                        tol: float | None = None, config: SolverConfig = DEFAULT_CONFIG):
    """Boundary values for a whole energy array in one continuation.

    Returns ``(values, real_limit)`` with one row and one flag per energy.
    """
    cfg = _override(config, eta_min=eta_min, tol=tol)
    E = np.atleast_1d(np.asarray(E, dtype=float))
    g, conv, failed = continuation_many(p, E, cfg.eta_min, cfg)
    if not conv.all():
        bad = int(np.flatnonzero(~conv)[0])
        raise ConvergenceError(f"continuation stalled at E={E[bad]}, eta={failed[bad]:.3e}",
                               z=complex(E[bad], failed[bad]))
    return g, g.imag.min(axis=1) < cfg.tau


def solve_boundary(p: OperatorParams, E: float, eta_min: float | None = None,
                   tol: float | None = None,
                   config: SolverConfig = DEFAULT_CONFIG) -> GreenVector:
    """Approximate boundary value Gamma(E + i0) by eta continuation.

    ``real_limit`` is set when some component has Im below ``config.tau``,
    meaning E lies outside the bands up to the threshold.
    """
    cfg = _override(config, eta_min=eta_min, tol=tol)
    g, real = solve_boundary_many(p, [E], config=cfg)
    z = complex(E, cfg.eta_min)
    res = float(np.max(np.abs(polynomial_residual(p, z, g[0]))))
    return GreenVector(values=g[0], z=z, residual=res, step=0.0, iterations=0,
                       real_limit=bool(real[0]))


def closed_form_regular(k: float, w: float, z):
    """Herglotz root of k x^2 + (z - w) x + 1 = 0.

    Real ``z`` is read as the limit from above.  Writing the discriminant
    as a product of two principal roots puts the branch cut on the band
    [w - 2 sqrt(k), w + 2 sqrt(k)].
    """
    if k <= 0:
        raise ValidationError("k must be positive")
    z = np.asarray(z, dtype=complex)
    u = z - w
    # a real z may carry -0.0 as imaginary part; force the upper side
    u = u.real + 1j * np.abs(u.imag)
    r = 2.0 * np.sqrt(k)
    root = np.sqrt(u - r) * np.sqrt(u + r)
    out = (-u + root) / (2.0 * k)
    return out[()] if out.ndim == 0 else out


# -- band scan -----------------------------------------------------------------

@dataclass
class BandScan:
    grid: np.ndarray
    gamma: np.ndarray                 # complex, (len(grid), N)
    im_gamma: np.ndarray
    sigma1_intervals: list[tuple[float, float]]
    sigma0_candidates: list[float]
    residual: np.ndarray
    failed: list[float] = field(default_factory=list)

    def in_band(self, tau: float) -> np.ndarray:
        return self.im_gamma.max(axis=1) > tau

    def to_dict(self) -> dict:
        return {
            "intervals": [[float(a), float(b)] for a, b in self.sigma1_intervals],
            "sigma0_candidates": [float(e) for e in self.sigma0_candidates],
            "n_points": int(self.grid.size),
            "max_residual": float(np.max(self.residual)) if self.residual.size else 0.0,
            "failed_points": [float(e) for e in self.failed],
        }


def alignment_spread(values) -> np.ndarray:
    """max_{j,k} |arg(Gamma_j conj Gamma_k)| per row."""
    g = np.atleast_2d(values)
    ang = np.angle(g[:, :, None] * np.conj(g[:, None, :]))
    return np.abs(ang).max(axis=(1, 2))


def _runs(mask):
    runs, start = [], None
    for i, on in enumerate(mask):
        if on and start is None:
            start = i
        elif not on and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def _refine_edges(p, lo, hi, lo_inside, cfg):
    """Bisect all (lo, hi) brackets at once until narrower than refine_tol.

    ``lo_inside[i]`` tells whether the lower end of bracket i is in the band.
    Returns the midpoints of the final brackets.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if lo.size == 0:
        return lo
    lo_inside = np.asarray(lo_inside, dtype=bool)
    while np.any(hi - lo > cfg.refine_tol):
        mid = 0.5 * (lo + hi)
        g, _, _ = continuation_many(p, mid, cfg.eta_min, cfg)
        inside = g.imag.max(axis=1) > cfg.tau
        move_lo = inside == lo_inside
        lo = np.where(move_lo, mid, lo)
        hi = np.where(move_lo, hi, mid)
    return 0.5 * (lo + hi)


def scan_bands(p: OperatorParams, E_grid, eta_min: float | None = None,
               tau: float | None = None, config: SolverConfig = DEFAULT_CONFIG,
               refine: bool = True, solver=None, align_tol: float | None = None) -> BandScan:
    """Locate the bands as maximal grid runs with max_j Im Gamma_j > tau.

    ``solver`` may replace :func:`continuation_many` (same signature); the
    command line uses it to spread the grid over threads.
    """
    cfg = _override(config, eta_min=eta_min, tau=tau, align_tol=align_tol)
    grid = np.asarray(E_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("energy grid must be nonempty and strictly increasing")
    solve = solver or continuation_many
    g, conv, _ = solve(p, grid, cfg.eta_min, cfg)
    z = grid + 1j * cfg.eta_min
    res = np.max(np.abs(_denominator(p.offdiag, p.diag, z, g) * g + 1.0), axis=1)
    inside = g.imag.max(axis=1) > cfg.tau
    runs = _runs(inside)

    lo, hi, lo_in, slots = [], [], [], []
    for r, (a, b) in enumerate(runs):
        if a > 0:
            lo.append(grid[a - 1]); hi.append(grid[a]); lo_in.append(False); slots.append((r, 0))
        if b < grid.size - 1:
            lo.append(grid[b]); hi.append(grid[b + 1]); lo_in.append(True); slots.append((r, 1))
    edges = [[grid[a], grid[b]] for a, b in runs]
    if refine and lo:
        refined = _refine_edges(p, lo, hi, lo_in, cfg)
        for (r, side), e in zip(slots, refined):
            edges[r][side] = float(e)

    spread = alignment_spread(g)
    sigma0 = grid[inside & (spread < cfg.align_tol)]
    return BandScan(
        grid=grid, gamma=g, im_gamma=g.imag.copy(),
        sigma1_intervals=[(float(a), float(b)) for a, b in edges],
        sigma0_candidates=sigma0.tolist(), residual=res,
        failed=grid[~conv].tolist(),
    )


# -- truncated operators and the full Green function ------------------------------

def truncated_gamma_table(p: OperatorParams, depth: int, z: complex) -> np.ndarray:
    """Gamma for the operator restricted to a tree cut at ``depth``.

    Row d holds the per-label values for vertices at depth d; leaves see no
    forward neighbours, so row ``depth`` is -1/(z - m).
    """
    z = complex(z)
    table = np.empty((depth + 1, p.size), dtype=complex)
    table[depth] = -1.0 / (z - p.diag)
    for d in range(depth - 1, -1, -1):
        table[d] = phi_map(p, z, table[d + 1])
    return table


@dataclass(frozen=True)
class FullGreen:
    """Diagonal Green function on every vertex of a truncated tree."""

    tree: TruncatedTree
    z: complex
    gamma: np.ndarray       # per vertex
    G: np.ndarray           # per vertex
    t: np.ndarray           # edge weight to the parent, per vertex

    def offdiag(self, x: int, y: int) -> complex:
        """G_{x,y} for x an ancestor of y (or y an ancestor of x).

        Each edge x_{j-1} -> x_j along the downward path contributes a
        factor -t(x_{j-1}, x_j) Gamma_{x_j}.
        """
        path = self.tree.path_to_root(y)
        if x not in path:
            x, y = y, x
            path = self.tree.path_to_root(y)
            if x not in path:
                raise ValidationError("vertices must lie on a common root path")
        below = path[path.index(x) + 1:]
        val = complex(self.G[x])
        for v in below:
            val *= -self.t[v] * self.gamma[v]
        return val


def extend_to_full_green(p: OperatorParams, tree: TruncatedTree, gamma_vec, z) -> FullGreen:
    """Propagate G down the tree from G_root = Gamma_root.

    ``gamma_vec`` is either one vector over labels (infinite tree) or a
    table from :func:`truncated_gamma_table` (tree cut at its depth limit).
    """
    table = np.asarray(gamma_vec, dtype=complex)
    if table.ndim == 1:
        gam = table[tree.labels]
    elif table.shape == (tree.depth_limit + 1, p.size):
        gam = table[tree.depth, tree.labels]
    else:
        raise ValidationError("gamma table does not fit the tree")
    t2 = p.edge_weight_sq()
    t = np.zeros(tree.n_vertices)
    nonroot = tree.parent >= 0
    t2v = np.zeros(tree.n_vertices)
    t2v[nonroot] = t2[tree.labels[tree.parent[nonroot]], tree.labels[nonroot]]
    t[nonroot] = np.sqrt(t2v[nonroot])
    G = np.empty(tree.n_vertices, dtype=complex)
    G[0] = gam[0]
    for d in range(1, tree.depth_limit + 1):
        sl = tree.sphere(d)
        idx = np.arange(sl.start, sl.stop)
        par = tree.parent[idx]
        G[idx] = gam[idx] + t2v[idx] * gam[idx] ** 2 * G[par]
    return FullGreen(tree=tree, z=complex(z), gamma=gam, G=G, t=t)


# -- densities -------------------------------------------------------------------

def green_root(p: OperatorParams, E_grid, eta: float, root_label: int = 0,
               config: SolverConfig = DEFAULT_CONFIG, solver=None):
    """Gamma at E + i eta for every grid energy, shape (len, N)."""
    if eta <= 0:
        raise ValidationError("density needs eta > 0")
    solve = solver or continuation_many
    g, conv, failed = solve(p, np.asarray(E_grid, dtype=float), eta, config)
    if not conv.all():
        bad = int(np.flatnonzero(~conv)[0])
        raise ConvergenceError(f"continuation stalled at E={E_grid[bad]}, eta={failed[bad]:.3e}")
    return g


def density(p: OperatorParams, E_grid, eta: float, root_label: int = 0,
            config: SolverConfig = DEFAULT_CONFIG, solver=None) -> np.ndarray:
    """pi^{-1} Im G_root(E + i eta); G_root equals Gamma of the root label."""
    g = green_root(p, E_grid, eta, root_label, config, solver)
    return np.maximum(g[:, root_label].imag, 0.0) / np.pi


def lp_norm(E_grid, G_values, p_exp: float) -> float:
    """Trapezoid value of the integral of |G|^p over the grid."""
    if p_exp <= 1:
        raise ValidationError("exponent must exceed 1")
    return float(np.trapezoid(np.abs(np.asarray(G_values)) ** p_exp, np.asarray(E_grid)))


def lp_diagnostic(p: OperatorParams, interval, p_exp: float = 2.0,
                  etas=(1e-1, 1e-2, 1e-3, 1e-4), n_points: int = 2001,
                  root_label: int = 0, config: SolverConfig = DEFAULT_CONFIG) -> dict:
    """L^p norms of G_root over ``interval`` for a decreasing list of eta.

    Bounded values as eta shrinks are the numerical signature of absence
    of singular spectrum in the interval.
    """
    a, b = interval
    grid = np.linspace(a, b, n_points)
    values = []
    for eta in sorted(etas, reverse=True):
        g = green_root(p, grid, eta, root_label, config)
        values.append((float(eta), lp_norm(grid, g[:, root_label], p_exp)))
    return {"etas": [e for e, _ in values], "norms": [v for _, v in values],
            "value": values[-1][1]}


def green_bounds(p: OperatorParams, z: complex) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided bounds on |Gamma_j(z)| valid for every z in H.

    Upper: 1/sqrt(m_{j,j}).  Lower: 1/(|z| + |m_j| + sum_k m_{j,k}/sqrt(m_{k,k})),
    from taking moduli in 1/Gamma_j = -(z - m_j + sum_k m_{j,k} Gamma_k).
    """
    dd = np.diag(p.offdiag)
    if np.any(dd <= 0):
        raise ValidationError("bounds need a positive diagonal in offdiag")
    upper = 1.0 / np.sqrt(dd)
    lower = 1.0 / (abs(complex(z)) + np.abs(p.diag) + p.offdiag @ upper)
    return lower, upper
