"""Random diagonal and edge perturbations: Monte Carlo Green functions,
deviation statistics and the averaged two-sphere contraction coefficient."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from .green import ConvergenceError, _gamma_rows, phi_map, solve_fixed_point
from .hyperbolic import contraction_quantities
from .operators import OperatorParams
from .tree import (SubstitutionMatrix, TruncatedTree, ValidationError,
                   build_truncated_tree)

PERMUTATION_CAP = 20_000
CHUNK = 256
_KINDS = {"uniform": 0, "two_point": 1, "constant": 2}


# -- distributions and counter based draws ----------------------------------------

@dataclass(frozen=True)
class LabelDistribution:
    """Law of v on [-1, 1]: uniform on [a, b], two-point (a w.p. prob, else b),
    or constant a."""

    kind: Literal["uniform", "two_point", "constant"] = "uniform"
    a: float = -1.0
    b: float = 1.0
    prob: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown distribution {self.kind!r}")
        lo, hi = (self.a, self.a) if self.kind == "constant" else (self.a, self.b)
        if not (-1 <= lo <= 1 and -1 <= hi <= 1):
            raise ValidationError("distribution support must lie in [-1, 1]")
        if self.kind == "uniform" and self.a > self.b:
            raise ValidationError("uniform needs a <= b")
        if not 0 <= self.prob <= 1:
            raise ValidationError("prob must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d) -> "LabelDistribution":
        if isinstance(d, str):
            d = {"kind": d}
        if not isinstance(d, dict):
            raise ValidationError(f"distribution must be an object or a name, got {d!r}")
        kind = d.get("kind", "uniform")
        if kind == "constant":
            return cls("constant", a=float(d.get("value", d.get("a", 0.0))))
        return cls(kind, a=float(d.get("a", -1.0)), b=float(d.get("b", 1.0)),
                   prob=float(d.get("prob", d.get("p", 0.5))))

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.a}
        if self.kind == "uniform":
            return {"kind": "uniform", "a": self.a, "b": self.b}
        return {"kind": "two_point", "a": self.a, "b": self.b, "prob": self.prob}


@dataclass(frozen=True)
class PotentialSpec:
    """Random potential lam * v_x with v_x drawn independently per vertex
    from the law attached to the vertex label.

    ``target`` selects a diagonal potential or multiplicative edge weights
    1 + lam v_x on the edge from x to its parent.
    """

    laws: tuple[LabelDistribution, ...]
    lam: float = 0.0
    seed: int = 0
    target: Literal["diagonal", "edge"] = "diagonal"

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("coupling must be nonnegative")
        if self.target not in ("diagonal", "edge"):
            raise ValidationError(f"unknown target {self.target!r}")
        if self.target == "edge" and self.lam >= 1:
            raise ValidationError("edge weights 1 + lam v need lam < 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must fit in 64 bits")

    @classmethod
    def uniform(cls, n_labels: int, lam: float, seed: int = 0, target="diagonal"):
        return cls(tuple(LabelDistribution() for _ in range(n_labels)), lam, seed, target)

    def with_lam(self, lam: float) -> "PotentialSpec":
        return PotentialSpec(self.laws, lam, self.seed, self.target)

    @classmethod
    def from_dict(cls, d: dict, m: SubstitutionMatrix) -> "PotentialSpec":
        laws = d.get("laws")
        if isinstance(laws, str):
            laws = [LabelDistribution.from_dict(laws)] * m.size
        elif laws is None:
            base = LabelDistribution.from_dict(d.get("law", {}))
            laws = [base] * m.size
        elif isinstance(laws, dict):
            resolved = [LabelDistribution()] * m.size
            for lab, law in laws.items():
                resolved[m.label_index(str(lab))] = LabelDistribution.from_dict(law)
            laws = resolved
        else:
            laws = [LabelDistribution.from_dict(x) for x in laws]
        if len(laws) != m.size:
            raise ValidationError("need one distribution per label")
        return cls(tuple(laws), float(d.get("lam", 0.0)), int(d.get("seed", 0)),
                   d.get("target", "diagonal"))

    def to_dict(self) -> dict:
        return {"laws": [law.to_dict() for law in self.laws], "lam": self.lam,
                "seed": self.seed, "target": self.target}


def EdgeWeightSpec(laws, lam: float = 0.0, seed: int = 0) -> PotentialSpec:
    """Spec for random edge weights 1 + lam v_x."""
    return PotentialSpec(tuple(laws), lam, seed, "edge")


def sample_uniforms(seed: int, sample_index: int, n: int) -> np.ndarray:
    """The first ``n`` uniforms of the stream keyed by (seed, sample_index).

    Vertex v always receives entry v, so draws never depend on traversal
    order, batching or threads.
    """
    bitgen = np.random.Philox(key=seed, counter=[0, 0, sample_index, 0])
    return np.random.Generator(bitgen).random(n)


def draw_values(spec: PotentialSpec, labels: np.ndarray, sample_indices) -> np.ndarray:
    """v_x in [-1, 1] for each sample (rows) and vertex (columns)."""
    u = np.stack([sample_uniforms(spec.seed, int(s), labels.size) for s in sample_indices])
    kind = np.array([_KINDS[law.kind] for law in spec.laws])[labels]
    a = np.array([law.a for law in spec.laws])[labels]
    b = np.array([law.b for law in spec.laws])[labels]
    prob = np.array([law.prob for law in spec.laws])[labels]
    return np.where(kind == 0, a + (b - a) * u,
                    np.where(kind == 1, np.where(u < prob, a, b), a))


# -- upward sweep on a truncated tree --------------------------------------------------

def _edge_t2(p: OperatorParams, tree: TruncatedTree) -> np.ndarray:
    t2 = _t2(p, tree.matrix)
    out = np.zeros(tree.n_vertices)
    nonroot = tree.parent >= 0
    out[nonroot] = t2[tree.labels[tree.parent[nonroot]], tree.labels[nonroot]]
    return out


def _t2(p: OperatorParams, m: SubstitutionMatrix) -> np.ndarray:
    """|t|^2 per label pair; the operator need not carry its matrix."""
    M = m.entries
    if M.shape != p.offdiag.shape or np.any((M > 0) != (p.offdiag > 0)):
        raise ValidationError("operator zero pattern does not match the substitution matrix")
    t2 = np.zeros_like(p.offdiag)
    np.divide(p.offdiag, M, out=t2, where=M > 0)
    return t2


def sweep(p: OperatorParams, tree: TruncatedTree, z: complex, lam: float,
          values: np.ndarray | None, target: str, leaf_seed, stop_depth: int = 0) -> np.ndarray:
    """Recompute Gamma from the leaves up to sphere ``stop_depth``.

    ``values`` has one row per sample and one column per vertex (or is
    None for the unperturbed operator).  Leaves keep ``leaf_seed`` per
    label.  Returns Gamma on the vertices of sphere ``stop_depth``.
    """
    if tree.depth_limit > 0 and np.any(tree.n_children[:tree.level_start[-2]] == 0):
        raise ValidationError("every interior vertex needs a child")
    z = complex(z)
    n_rows = 1 if values is None else values.shape[0]
    t2 = _edge_t2(p, tree)
    if values is not None and target == "edge":
        weights = t2 * (1.0 + lam * values) ** 2
    else:
        weights = np.broadcast_to(t2, (n_rows, tree.n_vertices))
    leaf_seed = np.asarray(leaf_seed, dtype=complex)
    D = tree.depth_limit
    sl = tree.sphere(D)
    cur = np.broadcast_to(leaf_seed[tree.labels[sl.start:sl.stop]], (n_rows, sl.stop - sl.start))
    for d in range(D - 1, stop_depth - 1, -1):
        sl = tree.sphere(d)
        kids = tree.sphere(d + 1)
        offsets = tree.first_child[sl.start:sl.stop] - kids.start
        s = np.add.reduceat(weights[:, kids.start:kids.stop] * cur, offsets, axis=1)
        s = s + (z - p.diag[tree.labels[sl.start:sl.stop]])
        if values is not None and target == "diagonal":
            s = s - lam * values[:, sl.start:sl.stop]
        cur = -1.0 / s
    return np.array(cur)


def horizon_depth(p: OperatorParams, z: complex, tol: float = 1e-6, max_depth: int = 60) -> int:
    """Least depth after which leaves seeded with i*1 instead of Gamma
    move the unperturbed root value by less than ``tol`` in gamma."""
    ref = solve_fixed_point(p, z).values
    g = np.full(p.size, 1j)
    for d in range(max_depth + 1):
        if float(_gamma_rows(g[None], ref[None])[0]) < tol:
            return d
        g = phi_map(p, z, g)
    raise ConvergenceError(f"no depth up to {max_depth} reaches seed tolerance {tol}", z=z)


def sample_green(p: OperatorParams, tree: TruncatedTree, spec: PotentialSpec, z: complex,
                 sample_index: int, leaf_seed=None) -> complex:
    """Gamma at the root for one realization of the randomness."""
    if leaf_seed is None:
        leaf_seed = solve_fixed_point(p, z).values
    vals = draw_values(spec, tree.labels, [sample_index])
    return complex(sweep(p, tree, z, spec.lam, vals, spec.target, leaf_seed)[0, 0])


# -- deviation statistics ---------------------------------------------------------------

@dataclass
class DeviationStats:
    """Monte Carlo summary of gamma(Gamma_root^lam, Gamma_root^0)^p."""

    p_exp: float
    lam: float
    root_label: str
    n_samples: int
    mean: float
    stderr: float
    mean_abs_green_p: float
    mean_im_green: float
    seed_gap: float
    depth: int
    z: complex

    def ci(self, n_sigma: float = 3.0) -> tuple[float, float]:
        return (self.mean - n_sigma * self.stderr, self.mean + n_sigma * self.stderr)

    def to_dict(self) -> dict:
        lo, hi = self.ci()
        return {"lam": self.lam, "label": self.root_label, "p": self.p_exp,
                "samples": self.n_samples, "mean": self.mean, "stderr": self.stderr,
                "ci3_low": lo, "ci3_high": hi, "mean_abs_G_p": self.mean_abs_green_p,
                "mean_im_G": self.mean_im_green, "seed_gap": self.seed_gap,
                "depth": self.depth}


def _root_batch(p, tree, spec, z, indices, leaf_seed):
    vals = draw_values(spec, tree.labels, indices)
    return sweep(p, tree, z, spec.lam, vals, spec.target, leaf_seed)[:, 0]


def estimate_deviation(p: OperatorParams, tree: TruncatedTree, spec: PotentialSpec, z: complex,
                       p_exp: float = 2.0, n_samples: int = 1000, seed_tol: float = 1e-6,
                       n_check: int = 8, mapper: Callable | None = None) -> DeviationStats:
    """Estimate E[gamma(Gamma^lam, Gamma^0)^p] at the root of ``tree``.

    The first ``n_check`` samples are also swept with leaves seeded by i*1;
    a gamma gap above ``seed_tol`` means the tree is too shallow.
    ``mapper`` may be a parallel ``map``; chunks are fixed in size and
    reassembled in order, so the result does not depend on it.
    """
    if p_exp <= 1:
        raise ValidationError("exponent must exceed 1")
    z = complex(z)
    ref = solve_fixed_point(p, z).values
    # the unperturbed sweep on the same tree runs the same arithmetic, so
    # lam = 0 reproduces it bit for bit
    root_ref = complex(sweep(p, tree, z, 0.0, None, spec.target, ref)[0, 0])
    chunks = [list(range(s, min(s + CHUNK, n_samples))) for s in range(0, n_samples, CHUNK)]
    run = mapper or map
    roots = np.concatenate(list(run(lambda idx: _root_batch(p, tree, spec, z, idx, ref), chunks))) \
        if chunks else np.zeros(0, dtype=complex)

    check = list(range(min(n_check, n_samples)))
    gap = 0.0
    if check:
        alt = _root_batch(p, tree, spec, z, check, np.full(p.size, 1j))
        gap = float(np.max(np.abs(alt - roots[:len(check)]) ** 2 / (alt.imag * roots[:len(check)].imag)))
        if gap >= seed_tol:
            raise ConvergenceError(f"tree depth {tree.depth_limit} too shallow: seed gap {gap:.3e}",
                                   z=z, step=gap)

    gam = np.abs(roots - root_ref) ** 2 / (roots.imag * root_ref.imag)
    dev = gam ** p_exp
    n = roots.size
    mean = float(dev.mean()) if n else 0.0
    stderr = float(dev.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return DeviationStats(p_exp=p_exp, lam=spec.lam, root_label=tree.matrix.labels[tree.root_label],
                          n_samples=n, mean=mean, stderr=stderr,
                          mean_abs_green_p=float(np.mean(np.abs(roots) ** p_exp)) if n else 0.0,
                          mean_im_green=float(np.mean(roots.imag)) if n else 0.0,
                          seed_gap=gap, depth=tree.depth_limit, z=z)


def deviation_curve(p: OperatorParams, m: SubstitutionMatrix, root_label, spec: PotentialSpec,
                    z: complex, lams: Sequence[float], p_exp: float = 2.0, n_samples: int = 1000,
                    depth: int | None = None, seed_tol: float = 1e-6,
                    mapper: Callable | None = None) -> list[DeviationStats]:
    """Deviation statistics for a list of couplings on one tree."""
    if depth is None:
        depth = horizon_depth(p, z, seed_tol)
    tree = build_truncated_tree(m, root_label, depth)
    return [estimate_deviation(p, tree, spec.with_lam(lam), z, p_exp, n_samples, seed_tol,
                               mapper=mapper) for lam in lams]


# -- two sphere context, Z0, Z1 and kappa --------------------------------------------------

@dataclass
class TwoSphereContext:
    """Data around a root o and a same-label child o'.

    Entries of a vector over S_{o,o'} are ordered as the children of o'
    (``n_upper`` of them, in label order) followed by the children of o
    other than o'.
    """

    params: OperatorParams
    root_label: int
    labels: np.ndarray            # label per entry of S_{o,o'}
    n_upper: int
    weights: np.ndarray           # |t|^2 per child of o (equal for o')
    h: np.ndarray                 # Gamma per entry of S_{o,o'}
    h_root: complex               # Gamma of the root label
    z: complex
    perms: np.ndarray             # (n_perm, len(labels)) index arrays
    n_perm_total: int
    exact_perms: bool
    eps0: float = field(init=False)

    def __post_init__(self):
        self.eps0 = float(self.h.imag.min())

    @property
    def size(self) -> int:
        return self.labels.size

    def lower_labels(self) -> np.ndarray:
        return self.labels[self.n_upper:]


def _label_groups(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return groups


def label_permutations(labels, cap: int = PERMUTATION_CAP, seed: int = 0):
    """All label-preserving permutations, or ``cap`` uniform samples of them.

    Returns ``(perms, total, exact)``.
    """
    labels = np.asarray(labels)
    groups = _label_groups(labels)
    total = math.prod(math.factorial(len(ix)) for ix in groups.values())
    n = labels.size
    if total <= cap:
        per_group = [list(itertools.permutations(ix)) for ix in groups.values()]
        keys = list(groups.values())
        perms = []
        for combo in itertools.product(*per_group):
            perm = np.arange(n)
            for src, dst in zip(keys, combo):
                perm[src] = dst
            perms.append(perm)
        return np.array(perms), total, True
    rng = np.random.Generator(np.random.Philox(key=seed))
    perms = np.tile(np.arange(n), (cap, 1))
    for ix in groups.values():
        ix = np.array(ix)
        order = np.argsort(rng.random((cap, ix.size)), axis=1)
        perms[:, ix] = ix[order]
    return perms, total, False


def build_two_sphere_context(p: OperatorParams, m: SubstitutionMatrix, root_label, z: complex,
                             h=None, perm_cap: int = PERMUTATION_CAP) -> TwoSphereContext:
    """Context for the two-step expansion at a vertex with label ``root_label``.

    ``h`` overrides the reference Gamma (for instance a boundary value on
    the real axis); by default it is solved at ``z``.
    """
    j = m.label_index(root_label)
    row = m.entries[j]
    if row[j] < 1:
        raise ValidationError("root label has no child of its own label")
    children = np.repeat(np.arange(m.size), row)
    lower = np.delete(children, int(np.flatnonzero(children == j)[0]))
    labels = np.concatenate([children, lower])
    if h is None:
        h = solve_fixed_point(p, z).values
    h = np.asarray(h, dtype=complex)
    if np.any(h.imag <= 0):
        raise ValidationError("reference Green function must lie in the upper half plane")
    t2 = _t2(p, m)
    perms, total, exact = label_permutations(labels, perm_cap)
    return TwoSphereContext(params=p, root_label=j, labels=labels, n_upper=children.size,
                            weights=t2[j, children], h=h[labels], h_root=complex(h[j]),
                            z=complex(z), perms=perms, n_perm_total=total, exact_perms=exact)


@dataclass
class TwoStep:
    Z0: np.ndarray
    Z1: np.ndarray
    g_child: np.ndarray           # g_{o'}
    g_root: np.ndarray            # g_o, with the same shift applied at o
    gamma_root: np.ndarray        # gamma(g_o, h_o)


def _psi(ctx, z, v, g):
    j = ctx.root_label
    s = z - v - ctx.params.diag[j] + np.sum(ctx.weights * g, axis=-1)
    return -1.0 / s


def two_step(ctx: TwoSphereContext, z: complex, v, g, p_exp: float = 2.0, v_root=0.0) -> TwoStep:
    """Z0, Z1^(p) and the two-step image for vectors g over S_{o,o'}.

    ``v`` shifts the energy at o' and ``v_root`` at o.  Batch axes in front
    of the last axis of ``g`` (and matching shapes of ``v``) are kept.
    """
    g = np.asarray(g, dtype=complex)
    if g.shape[-1] != ctx.size:
        raise ValidationError("g must have one entry per vertex of S_{o,o'}")
    v = np.asarray(v, dtype=float)
    nu = ctx.n_upper
    g_up, g_low = g[..., :nu], g[..., nu:]
    h_up, h_low = ctx.h[:nu], ctx.h[nu:]
    g_child = _psi(ctx, z, v, g_up)
    g_sphere = np.concatenate([g_child[..., None], g_low], axis=-1)
    h_sphere = np.concatenate([[ctx.h_root], h_low])
    top = contraction_quantities(g_sphere, h_sphere, ctx.weights)
    up = contraction_quantities(g_up, np.broadcast_to(h_up, g_up.shape), ctx.weights)
    p_c, c_c = top.p[..., 0], top.c[..., 0]
    z0 = p_c * c_c * up.assembled() + np.sum((top.p * top.c * top.gam)[..., 1:], axis=-1)
    z1 = p_c * np.sum(up.p * up.gam ** p_exp, axis=-1) + np.sum((top.p * top.gam ** p_exp)[..., 1:], axis=-1)
    g_root = _psi(ctx, z, np.asarray(v_root, dtype=float), g_sphere)
    gam_root = np.abs(g_root - ctx.h_root) ** 2 / (g_root.imag * ctx.h_root.imag)
    return TwoStep(Z0=z0, Z1=z1, g_child=g_child, g_root=g_root, gamma_root=gam_root)


def z0_z1(ctx: TwoSphereContext, z: complex, v, g, p_exp: float = 2.0):
    """(Z0, Z1^(p)) for g over S_{o,o'}; broadcasts over batch axes."""
    ts = two_step(ctx, z, v, g, p_exp)
    return ts.Z0, ts.Z1


def two_step_constants(ctx: TwoSphereContext, lam: float) -> tuple[float, float]:
    """(c, C) with gamma(g_o, h_o) <= (1 + c) Z0 + C for |v_o|, |v_o'| <= lam."""
    c0 = (1.0 + 2.0 * lam / ctx.eps0) ** 2 - 1.0
    C0 = 2.0 * lam * (lam + 1.0) / ctx.eps0 ** 2
    return (1.0 + c0) ** 2 - 1.0, (2.0 + c0) * C0


def kappa(ctx: TwoSphereContext, z: complex, v, g, p_exp: float = 2.0) -> np.ndarray:
    """Permutation-averaged ratio sum Z0(g o pi)^p / sum Z1^(p)(g o pi).

    Negative Z0 values (possible when some c is negative) enter as zero.
    """
    g = np.asarray(g, dtype=complex)
    v = np.asarray(v, dtype=float)
    permuted = g[..., ctx.perms]                      # (..., n_perm, n)
    z0, z1 = z0_z1(ctx, z, v[..., None], permuted, p_exp)
    num = np.sum(np.maximum(z0, 0.0) ** p_exp, axis=-1)
    den = np.sum(z1, axis=-1)
    if np.any(den <= 0):
        raise ValidationError("kappa undefined for g equal to h")
    return num / den


def sample_gamma_sphere(h, radius, rng: np.random.Generator, n: int) -> np.ndarray:
    """Points g with gamma_max(g, h) equal to ``radius`` (one per row).

    A direction d_x is drawn uniformly from the unit disc per component and
    g_x = h_x + s d_x Im h_x with the smallest s putting one component on
    the sphere.
    """
    h = np.asarray(h, dtype=complex)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (n,))[:, None]
    rr = np.sqrt(rng.random((n, h.size)))
    ang = 2 * np.pi * rng.random((n, h.size))
    d = rr * np.exp(1j * ang)
    a = np.abs(d) ** 2
    b = d.imag
    # gamma_x(s) = a s^2 / (1 + b s) hits the radius at the positive root
    with np.errstate(divide="ignore", invalid="ignore"):
        s_x = (radius * b + np.sqrt((radius * b) ** 2 + 4 * a * radius)) / (2 * a)
    s_x = np.where(a > 0, s_x, np.inf)
    s = s_x.min(axis=1, keepdims=True)
    return h + s * d * h.imag


@dataclass
class KappaSurvey:
    max_kappa: float
    delta_hat: float
    quantiles: dict
    n_samples: int
    n_perm: int
    exact_perms: bool
    min_kappa: float

    def to_dict(self) -> dict:
        return {"max_kappa": self.max_kappa, "delta_hat": self.delta_hat,
                "min_kappa": self.min_kappa,
                "quantiles": {str(k): v for k, v in self.quantiles.items()},
                "samples": self.n_samples, "permutations": self.n_perm,
                "exact_permutations": self.exact_perms}


def kappa_survey(ctx: TwoSphereContext, z: complex, lam: float, R: float, n_samples: int,
                 p_exp: float = 2.0, seed: int = 0, mapper: Callable | None = None,
                 return_values: bool = False):
    """Survey kappa over gamma-spheres of radius in [R, 10R] around h.

    All random inputs are drawn up front from one stream keyed by ``seed``;
    evaluation is chunked and may run through a parallel ``mapper``.
    """
    if R <= 0:
        raise ValidationError("R must be positive")
    rng = np.random.Generator(np.random.Philox(key=seed))
    radii = rng.uniform(R, 10 * R, n_samples)
    g = sample_gamma_sphere(ctx.h, radii, rng, n_samples)
    v = rng.uniform(-lam, lam, n_samples) if lam > 0 else np.zeros(n_samples)
    step = max(1, CHUNK // max(1, ctx.perms.shape[0] // 64))
    chunks = [slice(i, min(i + step, n_samples)) for i in range(0, n_samples, step)]
    run = mapper or map
    values = np.concatenate(list(run(lambda sl: kappa(ctx, z, v[sl], g[sl], p_exp), chunks)))
    qs = (0.5, 0.9, 0.99, 1.0)
    survey = KappaSurvey(max_kappa=float(values.max()), delta_hat=float(1.0 - values.max()),
                         quantiles={q: float(np.quantile(values, q)) for q in qs},
                         n_samples=n_samples, n_perm=int(ctx.perms.shape[0]),
                         exact_perms=ctx.exact_perms, min_kappa=float(values.min()))
    return (survey, values) if return_values else survey


def load_run_config(source) -> dict:
    """Random run configuration: spec, z-grid, lambda list, samples, seed."""
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    if not isinstance(data, dict):
        raise ValidationError("run config must be a JSON object")
    return data
