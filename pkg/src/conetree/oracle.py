"""Ground truth for truncated trees by generic linear algebra.

Nothing here uses the tree structure beyond reading off matrix entries:
resolvents come from an LU factorization of H - z and spectra from a
Hermitian eigensolver.  Keep it that way, the whole point is to be an
independent route to the numbers the recursion produces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import VertexOperator
from .tree import SizeCapError, ValidationError

DENSE_LU_CAP = 4000
LU_CAP = 20000
EIGEN_CAP = 4000


def assemble_matrix(vo: VertexOperator, dense: bool | None = None,
                    cap: int = LU_CAP):
    """Hermitian matrix of the operator on the truncated vertex set.

    Returns a dense array up to ``DENSE_LU_CAP`` vertices and a CSC sparse
    matrix above that, unless ``dense`` forces a choice.
    """
    n = vo.tree.n_vertices
    if n > cap:
        raise SizeCapError(f"{n} vertices exceed the oracle cap {cap}")
    child = np.flatnonzero(vo.tree.parent >= 0)
    par = vo.tree.parent[child]
    rows = np.concatenate([np.arange(n), child, par])
    cols = np.concatenate([np.arange(n), par, child])
    # with nu = 1 the symmetry condition reads t(x, y) = conj(t(y, x))
    vals = np.concatenate([vo.w, vo.t[child], np.conj(vo.t[child])]).astype(complex)
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    if dense is None:
        dense = n <= DENSE_LU_CAP
    if dense:
        out = mat.toarray()
        if not np.array_equal(out, out.conj().T):
            raise ValidationError("assembled matrix is not Hermitian")
        return out
    return mat


class Resolvent:
    """LU factorization of H - z with column solves on demand."""

    def __init__(self, mat, z: complex):
        z = complex(z)
        if z.imag <= 0:
            raise ValidationError("resolvent needs Im z > 0")
        self.z = z
        self.n = mat.shape[0]
        if sp.issparse(mat):
            a = sp.csc_matrix(mat, dtype=complex) - z * sp.identity(self.n, dtype=complex, format="csc")
            self._lu = spla.splu(a)
            self._solve = self._lu.solve
        else:
            a = np.array(mat, dtype=complex)
            a[np.diag_indices(self.n)] -= z
            lu_piv = sla.lu_factor(a, overwrite_a=True, check_finite=True)
            self._solve = lambda b: sla.lu_solve(lu_piv, b)

    def column(self, y: int) -> np.ndarray:
        """phi with (H - z) phi = delta_y."""
        rhs = np.zeros(self.n, dtype=complex)
        rhs[y] = 1.0
        return self._solve(rhs)

    def entry(self, x: int, y: int) -> complex:
        return complex(self.column(y)[x])


def resolvent_entry(mat, z: complex, x: int, y: int) -> complex:
    """<delta_x, (H - z)^{-1} delta_y> by a generic LU solve."""
    return Resolvent(mat, z).entry(x, y)


@dataclass(frozen=True)
class EigenHistogram:
    edges: np.ndarray
    counts: np.ndarray
    root_mass: np.ndarray
    eigenvalues: np.ndarray
    root_weights: np.ndarray

    def root_green(self, z) -> np.ndarray:
        """sum_n |psi_n(root)|^2 / (lambda_n - z)."""
        z = np.asarray(z, dtype=complex)
        return np.sum(self.root_weights / (self.eigenvalues - z[..., None]), axis=-1)


def eigen_histogram(mat, bins=100, root: int = 0, cap: int = EIGEN_CAP) -> EigenHistogram:
    """Eigenvalue histogram plus the spectral measure of the root vertex."""
    if sp.issparse(mat):
        mat = mat.toarray()
    n = mat.shape[0]
    if n > cap:
        raise SizeCapError(f"{n} vertices exceed the eigensolver cap {cap}")
    if np.iscomplexobj(mat) and not np.any(mat.imag):
        # real symmetric input: the real solver is several times faster
        mat = mat.real
    evals, evecs = np.linalg.eigh(mat)
    weights = np.abs(evecs[root]) ** 2
    counts, edges = np.histogram(evals, bins=bins)
    root_mass, _ = np.histogram(evals, bins=edges, weights=weights)
    return EigenHistogram(edges=edges, counts=counts, root_mass=root_mass,
                          eigenvalues=evals, root_weights=weights)
