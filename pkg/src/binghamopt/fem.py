"""Finite element core: quadrature, Lagrange bases, dof maps, assembly.

Conventions
-----------
* Reference triangle ``{(xi, eta): xi, eta >= 0, xi + eta <= 1}``; points are
  passed as barycentric triples ``(l0, l1, l2)`` with ``xi = l1, eta = l2``.
* P2 local nodes: vertices 0, 1, 2 followed by the midpoints of local edges
  0, 1, 2, where local edge ``k`` is opposite vertex ``k``.
* Vector spaces are blocked by component: global dof ``c * n_nodes + node``;
  cell-local dofs are ordered component-major ``[x-comp nodes, y-comp nodes]``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystemError
from .mesh import TAGS, TriangleMesh

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# quadrature (symmetric rules, weights normalised to sum 1 before scaling)


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (b, c, a), (c, a, b), (b, a, c), (a, c, b), (c, b, a)]


def _rule(groups):
    pts, wts = [], []
    for w, orbit in groups:
        pts += orbit
        wts += [w] * len(orbit)
    return np.array(pts), np.array(wts)


_RULES = {
    1: _rule([(1.0, [(1 / 3, 1 / 3, 1 / 3)])]),
    2: _rule([(1 / 3, _orbit3(1 / 6))]),
    4: _rule(
        [
            (0.223381589678011, _orbit3(0.445948490915965)),
            (0.109951743655322, _orbit3(0.091576213509771)),
        ]
    ),
    5: _rule(
        [
            (0.225, [(1 / 3, 1 / 3, 1 / 3)]),
            (0.132394152788506, _orbit3(0.470142064105115)),
            (0.125939180544827, _orbit3(0.101286507323456)),
        ]
    ),
    6: _rule(
        [
            (0.116786275726379, _orbit3(0.249286745170910)),
            (0.050844906370207, _orbit3(0.063089014491502)),
            (0.082851075618374, _orbit6(0.053145049844817, 0.310352451033784)),
        ]
    ),
}
_RULES[3] = _RULES[4]


def quadrature(degree: int):
    """Quadrature rule on the reference triangle exact up to ``degree``.

    Returns
    -------
    points : (nq, 3) barycentric coordinates
    weights : (nq,) weights summing to 1/2
    """
    if degree not in _RULES:
        raise ValueError(f"unsupported quadrature degree {degree} (supported: 1-6)")
    pts, w = _RULES[degree]
    w = w / w.sum()  # the tabulated weights carry 15 digits
    return pts.copy(), 0.5 * w


# ---------------------------------------------------------------------------
# Lagrange bases

_GRAD_LAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_P2_EDGES = ((1, 2), (2, 0), (0, 1))


def eval_basis(kind: str, point):
    """Basis values and reference gradients at a barycentric point.

    ``kind`` is ``"P1"`` or ``"P2"`` (the scalar element underlying the
    vector spaces).  Returns ``(values (n,), grads (n, 2))``.
    """
    lam = np.asarray(point, dtype=float)
    if kind in ("P1", "P1-scalar", "P1-vector2"):
        return lam.copy(), _GRAD_LAMBDA.copy()
    if kind in ("P2", "P2-vector2"):
        vals = np.empty(6)
        grads = np.empty((6, 2))
        for i in range(3):
            vals[i] = lam[i] * (2 * lam[i] - 1)
            grads[i] = (4 * lam[i] - 1) * _GRAD_LAMBDA[i]
        for k, (j, l) in enumerate(_P2_EDGES):
            vals[3 + k] = 4 * lam[j] * lam[l]
            grads[3 + k] = 4 * (lam[j] * _GRAD_LAMBDA[l] + lam[l] * _GRAD_LAMBDA[j])
        return vals, grads
    raise ValueError(f"unknown element kind {kind!r}")


def tabulate(kind, points):
    """Stack :func:`eval_basis` over quadrature points: (nq, n), (nq, n, 2)."""
    out = [eval_basis(kind, p) for p in points]
    return np.array([v for v, _ in out]), np.array([g for _, g in out])


# ---------------------------------------------------------------------------
# function spaces

# boundary nodes shared by several tags belong to the first tag in this order
TAG_PRIORITY = ("inflow", "walls", "shape", "outflow")


class FunctionSpace:
    """Scalar or 2-vector Lagrange space on a mesh topology.

    ``kind`` is one of ``"P1"`` (alias ``"P1-scalar"``), ``"P1-vector2"``,
    ``"P2"``, ``"P2-vector2"``.
    """

    def __init__(self, mesh: TriangleMesh, kind: str):
        kind = {"P1-scalar": "P1"}.get(kind, kind)
        if kind not in ("P1", "P1-vector2", "P2", "P2-vector2"):
            raise ValueError(f"unknown space kind {kind!r}")
        self.kind = kind
        self.degree = 2 if kind.startswith("P2") else 1
        self.ncomp = 2 if kind.endswith("vector2") else 1
        topo = mesh.topology
        self.topology = topo
        nv = topo.n_vertices
        if self.degree == 1:
            self.n_nodes = nv
            self.cell_nodes = topo.cells
        else:
            self.n_nodes = nv + topo.n_edges
            self.cell_nodes = np.hstack([topo.cells, nv + topo.cell_edges])
        self.n_local_nodes = self.cell_nodes.shape[1]
        self.dim = self.ncomp * self.n_nodes
        self.cell_dofs = np.hstack(
            [c * self.n_nodes + self.cell_nodes for c in range(self.ncomp)]
        )
        self._boundary_nodes = self._classify_boundary()

    @classmethod
    def on(cls, mesh, kind):
        """Space cached on the mesh topology."""
        key = ("space", kind)
        cache = mesh.topology.cache
        if key not in cache:
            cache[key] = cls(mesh, kind)
        return cache[key]

    def _classify_boundary(self):
        topo = self.topology
        nv = topo.n_vertices
        owner = {}
        for tag in reversed(TAG_PRIORITY):
            sel = topo.facet_tags == tag
            nodes = [topo.facets[sel].ravel()]
            if self.degree == 2:
                nodes.append(nv + topo.facet_edges[sel])
            for n in np.concatenate(nodes):
                owner[int(n)] = tag
        out = {tag: [] for tag in TAGS}
        for n, tag in owner.items():
            out[tag].append(n)
        return {tag: np.array(sorted(v), dtype=np.int64) for tag, v in out.items()}

    def boundary_nodes(self, tag):
        return self._boundary_nodes[tag]

    def boundary_dofs(self, tag, components=None):
        comps = range(self.ncomp) if components is None else components
        nodes = self._boundary_nodes[tag]
        return np.concatenate([c * self.n_nodes + nodes for c in comps])

    def node_coordinates(self, mesh):
        if self.degree == 1:
            return mesh.vertices
        e = self.topology.edges
        mid = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
        return np.vstack([mesh.vertices, mid])

    def interpolate(self, mesh, func):
        """Nodal interpolant of ``func(x) -> (..., ncomp)`` as a coefficient vector."""
        x = self.node_coordinates(mesh)
        vals = np.asarray(func(x), dtype=float).reshape(len(x), self.ncomp)
        return vals.T.ravel()


# ---------------------------------------------------------------------------
# cell geometry


class CellGeometry:
    """Affine maps and physical basis data at the quadrature points."""

    def __init__(self, mesh: TriangleMesh, degree=4):
        self.degree = degree
        pts, w = quadrature(degree)
        self.points, self.weights = pts, w
        v = mesh.vertices[mesh.cells]
        J = np.empty((mesh.n_cells, 2, 2))
        J[:, :, 0] = v[:, 1] - v[:, 0]
        J[:, :, 1] = v[:, 2] - v[:, 0]
        self.J = J
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.invJ = np.linalg.inv(J)
        self.area = 0.5 * np.abs(self.detJ)
        self.wdet = np.abs(self.detJ)[:, None] * w[None, :]  # (nc, nq)
        self.xq = np.einsum("qi,cid->cqd", pts, v)
        self.N1, g1 = tabulate("P1", pts)
        self.N2, g2 = tabulate("P2", pts)
        # physical gradient = reference gradient @ J^{-1}
        self.G1 = np.einsum("ad,cdj->caj", g1[0], self.invJ)  # constant per cell
        self.G2 = np.einsum("qad,cdj->cqaj", g2, self.invJ)

    @classmethod
    def on(cls, mesh, degree=4):
        key = ("geometry", degree)
        if key not in mesh.cache:
            mesh.cache[key] = cls(mesh, degree)
        return mesh.cache[key]


# ---------------------------------------------------------------------------
# sparse assembly


class SparsityPattern:
    """CSR structure for scatter-adding cell blocks ``(nc, nr, ncol)``.

    The COO-to-CSR map is computed once; assembling is a single ``bincount``.
    Duplicate contributions are summed in a fixed order, so results are
    deterministic.
    """

    def __init__(self, row_dofs, col_dofs, shape):
        row_dofs = np.asarray(row_dofs)
        col_dofs = np.asarray(col_dofs)
        nc, nr = row_dofs.shape
        ncl = col_dofs.shape[1]
        rows = np.broadcast_to(row_dofs[:, :, None], (nc, nr, ncl)).ravel()
        cols = np.broadcast_to(col_dofs[:, None, :], (nc, nr, ncl)).ravel()
        key = rows.astype(np.int64) * shape[1] + cols
        uniq, inv = np.unique(key, return_inverse=True)
        self.map = inv.ravel()
        self.nnz = len(uniq)
        self.indices = (uniq % shape[1]).astype(np.int32)
        urows = uniq // shape[1]
        self.indptr = np.zeros(shape[0] + 1, dtype=np.int32)
        np.add.at(self.indptr, urows + 1, 1)
        self.indptr = np.cumsum(self.indptr).astype(np.int32)
        self.shape = tuple(shape)
        self.block_shape = (nc, nr, ncl)

    def assemble(self, local) -> sp.csr_matrix:
        local = np.asarray(local)
        if local.shape != self.block_shape:
            raise ValueError(
                f"cell block shape {local.shape} does not match dof maps {self.block_shape}"
            )
        data = np.bincount(self.map, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def assemble_vector(local, dofs, n):
    local = np.asarray(local)
    if local.shape != dofs.shape:
        raise ValueError(f"cell vector shape {local.shape} does not match dof map {dofs.shape}")
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n)


def assemble(kernel, mesh, test_space, trial_space=None, degree=4):
    """Generic element loop.

    ``kernel(geometry)`` returns cell blocks: ``(nc, n_test_local)`` for a
    linear form (``trial_space=None``) or ``(nc, n_test_local,
    n_trial_local)`` for a bilinear form.  Returns a vector or a CSR matrix.
    """
    geom = CellGeometry.on(mesh, degree)
    local = np.asarray(kernel(geom))
    if trial_space is None:
        return assemble_vector(local, test_space.cell_dofs, test_space.dim)
    key = ("pattern", test_space.kind, trial_space.kind)
    cache = mesh.topology.cache
    if key not in cache:
        cache[key] = SparsityPattern(
            test_space.cell_dofs, trial_space.cell_dofs, (test_space.dim, trial_space.dim)
        )
    return cache[key].assemble(local)


def p1_mass_local(geom):
    """Exact P1 mass blocks ``area/12 * [[2,1,1],[1,2,1],[1,1,2]]``."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return geom.area[:, None, None] * ref[None]


def p1_stiffness_local(geom):
    return geom.area[:, None, None] * np.einsum("caj,cbj->cab", geom.G1, geom.G1)


def vector_block(local):
    """Expand scalar blocks ``(nc, n, n)`` to component-diagonal 2-vector blocks."""
    nc, n, _ = local.shape
    out = np.zeros((nc, 2 * n, 2 * n))
    out[:, :n, :n] = local
    out[:, n:, n:] = local
    return out


# ---------------------------------------------------------------------------
# Dirichlet conditions and solves


@dataclass
class SparseSystem:
    """Square sparse system with optional Dirichlet constraints."""

    A: sp.csr_matrix
    b: np.ndarray
    constrained: np.ndarray = None
    values: np.ndarray = None

    def __post_init__(self):
        if self.constrained is None:
            self.constrained = np.zeros(0, dtype=np.int64)
        self.constrained = np.asarray(self.constrained, dtype=np.int64)
        if self.values is None:
            self.values = np.zeros(len(self.constrained))
        self.values = np.broadcast_to(
            np.asarray(self.values, dtype=float), self.constrained.shape
        ).copy()


def apply_dirichlet(system: SparseSystem) -> SparseSystem:
    """Symmetric elimination of the constrained dofs.

    Constrained rows and columns are replaced by identity rows/columns and the
    prescribed values are lifted into the right-hand side of the free rows.
    """
    A = sp.csr_matrix(system.A)
    n = A.shape[0]
    idx, vals = system.constrained, system.values
    if len(idx):
        if idx.min() < 0 or idx.max() >= n:
            raise IndexError("constrained dof index out of range")
        order = np.argsort(idx, kind="stable")
        si, sv = idx[order], vals[order]
        dup = si[1:] == si[:-1]
        if np.any(dup & (sv[1:] != sv[:-1])):
            bad = si[1:][dup & (sv[1:] != sv[:-1])][0]
            raise ValueError(f"conflicting Dirichlet values at dof {bad}")
    free = np.ones(n)
    free[idx] = 0.0
    g = np.zeros(n)
    g[idx] = vals
    b = np.asarray(system.b, dtype=float) - A @ g
    b[idx] = vals
    D = sp.diags(free)
    A2 = (D @ A @ D + sp.diags(1.0 - free)).tocsr()
    A2.eliminate_zeros()
    return SparseSystem(A2, b, idx.copy(), vals.copy())


def _zero_pivot_dof(A):
    A = sp.csr_matrix(A)
    empty_rows = np.flatnonzero(np.diff(A.indptr) == 0)
    if len(empty_rows):
        return int(empty_rows[0])
    empty_cols = np.setdiff1d(np.arange(A.shape[1]), np.unique(A.indices))
    if len(empty_cols):
        return int(empty_cols[0])
    if A.shape[0] <= 6000:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lu, _ = scipy.linalg.lu_factor(A.toarray(), check_finite=False)
        d = np.abs(np.diag(lu))
        tol = d.max() * A.shape[0] * np.finfo(float).eps if d.size else 0.0
        small = np.flatnonzero(d <= tol)
        if len(small):
            return int(small[0])
    return None


def factorize(A):
    """Sparse LU factorisation (COLAMD ordering); raises on singularity."""
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SingularSystemError(f"sparse LU failed: {exc}", dof=_zero_pivot_dof(A)) from None


def solve_linear(system: SparseSystem) -> np.ndarray:
    """Direct solve of ``system`` (Dirichlet rows must already be applied)."""
    A = system.A
    if A.shape[0] != A.shape[1]:
        raise ValueError("system matrix must be square")
    lu = factorize(A)
    x = lu.solve(np.asarray(system.b, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution is not finite", dof=_zero_pivot_dof(A))
    return x


def solve_constrained(system: SparseSystem) -> np.ndarray:
    """Solve with Dirichlet constraints by factorising the free-dof block only.

    Equivalent to ``solve_linear(apply_dirichlet(system))`` but avoids
    carrying identity rows through the factorisation.
    """
    A = sp.csr_matrix(system.A)
    n = A.shape[0]
    x = np.zeros(n)
    x[system.constrained] = system.values
    free = np.ones(n, dtype=bool)
    free[system.constrained] = False
    fidx = np.flatnonzero(free)
    if len(fidx) == 0:
        return x
    Af = A[fidx]
    b = np.asarray(system.b, dtype=float)[fidx] - Af @ x
    Aff = Af[:, fidx]
    try:
        lu = spla.splu(sp.csc_matrix(Aff))
    except RuntimeError as exc:
        d = _zero_pivot_dof(Aff)
        raise SingularSystemError(
            f"sparse LU failed: {exc}", dof=None if d is None else int(fidx[d])
        ) from None
    xf = lu.solve(b)
    if not np.all(np.isfinite(xf)):
        d = _zero_pivot_dof(Aff)
        raise SingularSystemError("solution is not finite", dof=None if d is None else int(fidx[d]))
    x[fidx] = xf
    return x
