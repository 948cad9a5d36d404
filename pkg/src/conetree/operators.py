"""Label-invariant operators in reduced form and their realization on a tree."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tree import (SubstitutionMatrix, TruncatedTree, ValidationError,
                   check_axioms)

REGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class OperatorParams:
    """Reduced coefficients of a label-invariant operator.

    ``offdiag[j, k]`` is m_{j,k} = |t|^2 M_{j,k}, the summed squared edge weight
    from a label-j vertex to its label-k children; ``diag[j]`` is the
    potential m_j on label-j vertices.
    """

    offdiag: np.ndarray
    diag: np.ndarray
    kind: str = "custom"
    matrix: SubstitutionMatrix | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offdiag, dtype=float))
        dg = np.atleast_1d(np.asarray(self.diag, dtype=float))
        if off.ndim != 2 or off.shape[0] != off.shape[1]:
            raise ValidationError("offdiag must be a square matrix")
        if dg.shape != (off.shape[0],):
            raise ValidationError("diag length must match offdiag size")
        if not (np.all(np.isfinite(off)) and np.all(np.isfinite(dg))):
            raise ValidationError("operator coefficients must be finite")
        if np.any(off < 0):
            raise ValidationError("offdiag coefficients must be nonnegative")
        if self.matrix is not None:
            pattern = self.matrix.entries > 0
            if self.matrix.size != off.shape[0] or np.any((off > 0) != pattern):
                raise ValidationError("offdiag zero pattern does not match the substitution matrix")
        off.setflags(write=False)
        dg.setflags(write=False)
        object.__setattr__(self, "offdiag", off)
        object.__setattr__(self, "diag", dg)

    @property
    def size(self) -> int:
        return self.diag.shape[0]

    def edge_weight_sq(self) -> np.ndarray:
        """|t|^2 per label pair, zero where no edge exists."""
        if self.matrix is None:
            raise ValidationError("operator is not attached to a substitution matrix")
        M = self.matrix.entries
        out = np.zeros_like(self.offdiag)
        np.divide(self.offdiag, M, out=out, where=M > 0)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offdiag": self.offdiag.tolist(), "diag": self.diag.tolist()}


@dataclass(frozen=True)
class RegularInfo:
    regular: bool
    k: float | None = None
    w: float | None = None


def _require_axioms(m: SubstitutionMatrix):
    if not check_axioms(m).ok:
        raise ValidationError("substitution matrix violates the M0/M1/M2 axioms")


def build_adjacency(m: SubstitutionMatrix) -> OperatorParams:
    _require_axioms(m)
    M = m.entries.astype(float)
    return OperatorParams(M, np.zeros(m.size), kind="adjacency", matrix=m)


def build_laplacian_dirichlet(m: SubstitutionMatrix) -> OperatorParams:
    """Graph Laplacian with Dirichlet condition; the root's missing parent
    edge is compensated so every label sees degree 1 + row sum."""
    _require_axioms(m)
    M = m.entries.astype(float)
    return OperatorParams(M, 1.0 + M.sum(axis=1), kind="laplacian", matrix=m)


def build_normalized_laplacian(m: SubstitutionMatrix) -> OperatorParams:
    _require_axioms(m)
    M = m.entries.astype(float)
    nu = 1.0 + M.sum(axis=1)
    return OperatorParams(M / nu[:, None] ** 2, np.ones(m.size), kind="normalized", matrix=m)


def build_custom(m: SubstitutionMatrix | None, offdiag, diag) -> OperatorParams:
    return OperatorParams(offdiag, diag, kind="custom", matrix=m)


BUILDERS = {
    "adjacency": build_adjacency,
    "laplacian": build_laplacian_dirichlet,
    "normalized": build_normalized_laplacian,
}


def load_operator(source, m: SubstitutionMatrix) -> OperatorParams:
    """Operator from a kind name, a dict, or a JSON file path.

    JSON layout: ``{"kind": ..., "offdiag": [[...]], "diag": [...]}``; the
    coefficient fields are only read for ``kind == "custom"``.
    """
    if isinstance(source, str) and source in BUILDERS:
        return BUILDERS[source](m)
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    kind = data.get("kind")
    if kind in BUILDERS:
        return BUILDERS[kind](m)
    if kind != "custom":
        raise ValidationError(f"unknown operator kind {kind!r}")
    try:
        return build_custom(m, data["offdiag"], data["diag"])
    except KeyError as exc:
        raise ValidationError(f"custom operator needs field {exc}") from None


def classify_regular(p: OperatorParams, rtol: float = REGULAR_RTOL) -> RegularInfo:
    """Constant row sums of ``offdiag`` and constant ``diag`` make the
    operator regular; the Green function is then label independent."""
    rows = p.offdiag.sum(axis=1)
    k = float(rows.mean())
    w = float(p.diag.mean())
    scale_k = max(abs(k), np.finfo(float).tiny)
    scale_w = max(np.abs(p.diag).max(), 1.0)
    if np.all(np.abs(rows - k) <= rtol * scale_k) and np.all(np.abs(p.diag - w) <= rtol * scale_w):
        return RegularInfo(True, k, w)
    return RegularInfo(False)


@dataclass(frozen=True)
class VertexOperator:
    """Operator on an explicit truncated tree.

    ``t[v]`` is the (real, nonnegative) weight of the edge between ``v`` and
    its parent, zero at the root; ``w`` the diagonal; ``nu`` the measure.
    """

    tree: TruncatedTree
    t: np.ndarray
    w: np.ndarray
    nu: np.ndarray


def realize_on_tree(p: OperatorParams, tree: TruncatedTree) -> VertexOperator:
    M = tree.matrix.entries
    if p.size != tree.matrix.size or np.any((p.offdiag > 0) != (M > 0)):
        raise ValidationError("operator zero pattern is incompatible with the tree")
    t2 = np.zeros_like(p.offdiag)
    np.divide(p.offdiag, M, out=t2, where=M > 0)
    labels = tree.labels
    par = tree.parent
    t = np.zeros(tree.n_vertices)
    nonroot = par >= 0
    t[nonroot] = np.sqrt(t2[labels[par[nonroot]], labels[nonroot]])
    return VertexOperator(tree=tree, t=t, w=p.diag[labels].copy(), nu=np.ones(tree.n_vertices))


def moderate_growth_indicator(tn: Sequence[float]) -> np.ndarray:
    """s_n = (1/t_{n+1}) sum_{k<=n} 1/t_k for n = 0 .. len(tn)-2.

    Unbounded growth of s_n indicates moderate off-diagonal growth.
    """
    t = np.asarray(tn, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("need a nonempty one-dimensional sequence")
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise ValidationError("growth sequence must be positive")
    return np.cumsum(1.0 / t)[:-1] / t[1:]
