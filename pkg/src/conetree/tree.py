"""Substitution matrices and explicit truncated trees of finite cone type."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_VERTEX_CAP = 5_000_000


class ValidationError(ValueError):
    """Malformed input (matrix, operator, potential, ...)."""


class SizeCapError(RuntimeError):
    """A construction would exceed its configured size budget."""


@dataclass(frozen=True)
class AxiomReport:
    M0: bool
    M1: bool
    M2: bool
    n: int | None = None

    @property
    def ok(self) -> bool:
        return self.M0 and self.M1 and self.M2

    def to_dict(self) -> dict:
        return {"M0": self.M0, "M1": self.M1, "M2": self.M2, "n": self.n}


@dataclass(frozen=True)
class SubstitutionMatrix:
    """Integer matrix M over an ordered label set.

    ``M[j, k]`` is the number of children with label ``k`` below a vertex
    with label ``j``.
    """

    labels: tuple[str, ...]
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.entries)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise ValidationError(f"substitution matrix must be square and nonempty, got shape {arr.shape}")
        if len(self.labels) != arr.shape[0]:
            raise ValidationError("number of labels does not match matrix size")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("labels must be distinct")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr != np.round(arr)):
            raise ValidationError("matrix entries must be nonnegative integers")
        arr = arr.astype(np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    @classmethod
    def from_array(cls, matrix, labels: Sequence[str] | None = None) -> "SubstitutionMatrix":
        arr = np.atleast_2d(np.asarray(matrix))
        if labels is None:
            labels = [str(i + 1) for i in range(arr.shape[0])]
        return cls(tuple(labels), arr)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def primitivity_exponent(self) -> int | None:
        return check_axioms(self).n

    def label_index(self, label) -> int:
        """Resolve a label name (or an integer index) to its position."""
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            if 0 <= label < self.size:
                return int(label)
            raise ValidationError(f"label index {label} out of range")
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ValidationError(f"unknown label {label!r}") from None

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "matrix": self.entries.tolist()}


def load_matrix(source) -> SubstitutionMatrix:
    """Read ``{"labels": [...], "matrix": [[...]]}`` from a path or a dict."""
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    if "matrix" not in data:
        raise ValidationError("matrix JSON needs a 'matrix' field")
    try:
        matrix = np.array(data["matrix"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad matrix entries: {exc}") from None
    return SubstitutionMatrix.from_array(matrix, data.get("labels"))


def check_axioms(m: SubstitutionMatrix) -> AxiomReport:
    """Report M0 (nondegenerate), M1 (positive diagonal) and M2 (primitive).

    Never raises.  The primitivity search stops at N**2 powers.
    """
    a = m.entries
    n_lab = a.shape[0]
    m0 = n_lab > 1 or int(a[0, 0]) > 1
    m1 = bool(np.all(np.diag(a) >= 1))
    # boolean powers avoid integer overflow for large exponents
    pattern = a > 0
    power = pattern.copy()
    exponent = None
    for n in range(1, n_lab * n_lab + 1):
        if power.all():
            exponent = n
            break
        power = (power.astype(np.int64) @ pattern.astype(np.int64)) > 0
    return AxiomReport(M0=m0, M1=m1, M2=exponent is not None, n=exponent)


@dataclass(frozen=True)
class TruncatedTree:
    """Finite labelled tree stored as flat arrays in breadth-first order.

    Vertex ``v`` has label ``labels[v]`` and depth ``depth[v]``.  Its parent is
    ``parent[v]`` (``-1`` for the root).  Its children are the contiguous
    range ``first_child[v] : first_child[v] + n_children[v]``.  Vertices of
    sphere ``n`` are ``level_start[n] : level_start[n + 1]``.
    """

    matrix: SubstitutionMatrix
    root_label: int
    depth_limit: int
    labels: np.ndarray
    depth: np.ndarray
    parent: np.ndarray
    first_child: np.ndarray
    n_children: np.ndarray
    level_start: np.ndarray

    root: int = 0

    @property
    def n_vertices(self) -> int:
        return int(self.labels.shape[0])

    def children(self, v: int) -> range:
        start = int(self.first_child[v])
        return range(start, start + int(self.n_children[v]))

    def sphere(self, n: int) -> range:
        if not 0 <= n <= self.depth_limit:
            raise ValidationError(f"sphere index {n} outside 0..{self.depth_limit}")
        return range(int(self.level_start[n]), int(self.level_start[n + 1]))

    def sphere_sizes(self) -> list[int]:
        return np.diff(self.level_start).tolist()

    def path_to_root(self, v: int) -> list[int]:
        """Vertices from the root down to ``v`` (inclusive)."""
        path = [int(v)]
        while self.parent[path[-1]] >= 0:
            path.append(int(self.parent[path[-1]]))
        return path[::-1]

    def to_json(self) -> dict:
        names = self.matrix.labels
        return {
            "root": self.root,
            "depth_limit": self.depth_limit,
            "vertices": [
                {"id": v, "label": names[int(self.labels[v])],
                 "parent": None if self.parent[v] < 0 else int(self.parent[v])}
                for v in range(self.n_vertices)
            ],
        }


def build_truncated_tree(m: SubstitutionMatrix, root_label, depth: int,
                         vertex_cap: int = DEFAULT_VERTEX_CAP,
                         require_axioms: bool = True) -> TruncatedTree:
    """Expand ``m`` breadth first from a root with the given label.

    Children of each vertex come in label order.  Raises :class:`SizeCapError`
    before allocating if the vertex count would exceed ``vertex_cap``.
    """
    if depth < 0:
        raise ValidationError("depth must be nonnegative")
    if require_axioms and not check_axioms(m).ok:
        raise ValidationError("substitution matrix violates the M0/M1/M2 axioms")
    root = m.label_index(root_label)
    a = m.entries

    # predicted size from integer matrix powers (python ints: no overflow)
    row = [0] * m.size
    row[root] = 1
    total = 1
    for _ in range(depth):
        row = [sum(row[j] * int(a[j, k]) for j in range(m.size)) for k in range(m.size)]
        total += sum(row)
        if total > vertex_cap:
            raise SizeCapError(f"tree of depth {depth} exceeds the vertex cap {vertex_cap}")

    level_labels = [np.array([root], dtype=np.int64)]
    level_parent = [np.array([-1], dtype=np.int64)]
    offset = 1
    first_child_parts = []
    n_children_parts = []
    for d in range(depth):
        labs = level_labels[-1]
        counts = a[labs]                    # (n_level, N)
        n_kids = counts.sum(axis=1)
        parent_ids = np.arange(offset - labs.size, offset)
        kid_labels = np.repeat(np.tile(np.arange(m.size), labs.size), counts.ravel())
        kid_parents = np.repeat(parent_ids, n_kids)
        first = offset + np.concatenate([[0], np.cumsum(n_kids)[:-1]])
        first_child_parts.append(first)
        n_children_parts.append(n_kids)
        level_labels.append(kid_labels)
        level_parent.append(kid_parents)
        offset += kid_labels.size
    last = level_labels[-1].size
    first_child_parts.append(np.full(last, offset, dtype=np.int64))
    n_children_parts.append(np.zeros(last, dtype=np.int64))

    sizes = [lv.size for lv in level_labels]
    labels = np.concatenate(level_labels)
    depth_arr = np.repeat(np.arange(depth + 1), sizes)
    arrays = dict(
        labels=labels,
        depth=depth_arr,
        parent=np.concatenate(level_parent),
        first_child=np.concatenate(first_child_parts).astype(np.int64),
        n_children=np.concatenate(n_children_parts).astype(np.int64),
        level_start=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
    )
    for arr in arrays.values():
        arr.setflags(write=False)
    return TruncatedTree(matrix=m, root_label=root, depth_limit=depth, **arrays)


def sphere_label_counts(t: TruncatedTree, n: int) -> dict[str, int]:
    """Number of vertices of each label in the sphere at distance ``n``."""
    sl = t.sphere(n)
    counts = np.bincount(t.labels[sl.start:sl.stop], minlength=t.matrix.size)
    return {lab: int(c) for lab, c in zip(t.matrix.labels, counts)}
