"""Elliptic model problem, P1 elements, quadrature, and error evaluation.

The model problem is  div p + f = 0,  p = A grad u  in Omega,  u = u_g on the
boundary, with a constant symmetric positive-definite coefficient A.  Scalar
callables (f, u_g, exact solution) receive point arrays of shape (..., 2) and
return values of shape (...); gradient callables return shape (..., 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, MeshError
from . import linalg

# Order-2 rule: edge midpoints, equal weights.  Exact for quadratics.
_MID_BARY = np.array([[0.0, 0.5, 0.5],
                      [0.5, 0.0, 0.5],
                      [0.5, 0.5, 0.0]])
_MID_W = np.full(3, 1.0 / 3.0)

# Degree-5 rule: centroid plus two symmetric point groups.
_S15 = np.sqrt(15.0)
_B1 = (6.0 - _S15) / 21.0
_B2 = (6.0 + _S15) / 21.0
_W1 = (155.0 - _S15) / 1200.0
_W2 = (155.0 + _S15) / 1200.0
_D5_BARY = np.array(
    [[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
     [1.0 - 2.0 * _B1, _B1, _B1],
     [_B1, 1.0 - 2.0 * _B1, _B1],
     [_B1, _B1, 1.0 - 2.0 * _B1],
     [1.0 - 2.0 * _B2, _B2, _B2],
     [_B2, 1.0 - 2.0 * _B2, _B2],
     [_B2, _B2, 1.0 - 2.0 * _B2]])
_D5_W = np.array([9.0 / 40.0, _W1, _W1, _W1, _W2, _W2, _W2])


def quad_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and unit-area weights of the requested rule."""
    if degree <= 2:
        return _MID_BARY, _MID_W
    return _D5_BARY, _D5_W


def tri_quad_points(mesh: TriMesh, degree: int = 2):
    """Physical quadrature points (T, Q, 2) and weights (T, Q) per triangle."""
    bary, w = quad_rule(degree)
    corners = mesh.vertices[mesh.triangles]            # (T, 3, 2)
    pts = np.einsum("qi,tid->tqd", bary, corners)
    weights = mesh.areas[:, None] * w[None, :]
    return pts, weights


def p1_gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients (T, 3, 2) of the three nodal basis functions per triangle."""
    p = mesh.vertices[mesh.triangles]
    grads = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        e = p[:, (i + 2) % 3, :] - p[:, (i + 1) % 3, :]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    return grads / (2.0 * mesh.areas[:, None, None])


@dataclass
class ScalarFieldP1:
    """Continuous piecewise-linear scalar field given by nodal values."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError("nodal value count does not match vertex count")

    @classmethod
    def interpolate(cls, mesh: TriMesh, fn) -> "ScalarFieldP1":
        return cls(mesh, np.asarray(fn(mesh.vertices), dtype=float))

    def gradient(self) -> np.ndarray:
        """Piecewise-constant gradient, one row per triangle."""
        g = p1_gradients(self.mesh)
        vals = self.values[self.mesh.triangles]        # (T, 3)
        return np.einsum("ti,tid->td", vals, g)

    def at_quad(self, bary: np.ndarray) -> np.ndarray:
        """Values at barycentric points, shape (T, Q)."""
        vals = self.values[self.mesh.triangles]
        return vals @ bary.T

    def copy(self) -> "ScalarFieldP1":
        return ScalarFieldP1(self.mesh, self.values.copy())


@dataclass
class EllipticProblem:
    """Coefficient matrix, source, boundary datum, optional exact solution."""

    A: np.ndarray
    f: Callable
    u_g: Callable
    exact_u: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    C_min: float = field(default=None)
    C_max: float = field(default=None)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.A.shape != (2, 2) or not np.allclose(self.A, self.A.T):
            raise ValueError("A must be a symmetric 2x2 matrix")
        eigs = np.linalg.eigvalsh(self.A)
        if eigs[0] <= 0:
            raise ValueError("A must be positive definite")
        if self.C_min is None:
            self.C_min = float(eigs[0])
        if self.C_max is None:
            self.C_max = float(eigs[-1])

    @property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)


def manufactured_lshape_problem() -> EllipticProblem:
    """Model problem on the L-shape with a known smooth solution.

    A is the identity and u_g is the trace of

        u(x, y) = (1/pi^2) (sin(pi x) sin(pi y)
                            + 1/2 (1 - cos(pi x)) (1 - cos(pi y))),

    so f = -Laplace(u) = 2 sin(pi x) sin(pi y)
           - 1/2 (cos(pi x)(1 - cos(pi y)) + (1 - cos(pi x)) cos(pi y)).
    """
    pi = np.pi

    def u(p):
        x, y = p[..., 0], p[..., 1]
        return (np.sin(pi * x) * np.sin(pi * y)
                + 0.5 * (1 - np.cos(pi * x)) * (1 - np.cos(pi * y))) / pi**2

    def grad_u(p):
        x, y = p[..., 0], p[..., 1]
        gx = (np.cos(pi * x) * np.sin(pi * y)
              + 0.5 * np.sin(pi * x) * (1 - np.cos(pi * y))) / pi
        gy = (np.sin(pi * x) * np.cos(pi * y)
              + 0.5 * (1 - np.cos(pi * x)) * np.sin(pi * y)) / pi
        return np.stack([gx, gy], axis=-1)

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return (2.0 * np.sin(pi * x) * np.sin(pi * y)
                - 0.5 * (np.cos(pi * x) * (1 - np.cos(pi * y))
                         + (1 - np.cos(pi * x)) * np.cos(pi * y)))

    return EllipticProblem(A=np.eye(2), f=f, u_g=u, exact_u=u, exact_grad=grad_u)


@dataclass
class LinearSystem:
    """Sparse symmetric system with optional Dirichlet constraints."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_nodes: Optional[np.ndarray] = None
    dirichlet_values: Optional[np.ndarray] = None
    mesh: Optional[TriMesh] = None


def assemble_stiffness(mesh: TriMesh, A) -> LinearSystem:
    """Stiffness matrix of the bilinear form  integral A grad u . grad w.

    Parameters
    ----------
    mesh : TriMesh
    A : (2, 2) array
        Constant coefficient matrix.

    Returns
    -------
    LinearSystem
        Matrix part only; the right-hand side is zero.
    """
    A = np.asarray(A, dtype=float)
    if np.any(mesh.signed_areas() <= 0):
        raise MeshError("mesh contains a degenerate triangle")
    g = p1_gradients(mesh)                              # (T, 3, 2)
    ag = np.einsum("de,tje->tjd", A, g)
    k_loc = np.einsum("tid,tjd->tij", g, ag) * mesh.areas[:, None, None]
    k_loc = 0.5 * (k_loc + k_loc.transpose(0, 2, 1))    # exact symmetry
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sp.coo_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return LinearSystem(K, np.zeros(n), mesh=mesh)


def assemble_load(mesh: TriMesh, f) -> np.ndarray:
    """Load vector  integral f phi_i  via the three-midpoint rule."""
    pts, _ = tri_quad_points(mesh, degree=2)
    fvals = np.asarray(f(pts), dtype=float)             # (T, 3)
    contrib = (mesh.areas[:, None] / 3.0) * (fvals @ _MID_BARY)
    vec = np.zeros(mesh.n_vertices)
    np.add.at(vec, mesh.triangles.ravel(), contrib.ravel())
    return vec


def solve_dirichlet(system: LinearSystem, boundary_nodes, boundary_values,
                    tol: float = 1e-12, cap: int | None = None) -> ScalarFieldP1:
    """Solve the system with prescribed nodal boundary values.

    Constrained unknowns are eliminated symmetrically; the free block is
    solved by preconditioned conjugate gradients to relative tolerance
    ``tol``.
    """
    K = system.matrix
    n = K.shape[0]
    x = np.zeros(n)
    boundary_nodes = np.asarray(boundary_nodes, dtype=np.int64)
    x[boundary_nodes] = boundary_values
    free = np.ones(n, dtype=bool)
    free[boundary_nodes] = False
    idx = np.nonzero(free)[0]
    if len(idx):
        r = system.rhs - K @ x
        K_ff = K[idx][:, idx].tocsr()
        x[idx] = linalg.spd_solve(linalg.SparseSymmetric.from_csr(K_ff),
                                  r[idx], tol=tol, cap=cap)
    if system.mesh is None:
        raise ValueError("LinearSystem carries no mesh reference")
    return ScalarFieldP1(system.mesh, x)


def energy_error(v: ScalarFieldP1, problem: EllipticProblem,
                 degree: int = 5) -> float:
    """Energy norm ||grad(u - v)||_A of the error against the exact solution."""
    if problem.exact_grad is None:
        raise ValueError("problem has no exact gradient to compare against")
    mesh = v.mesh
    pts, w = tri_quad_points(mesh, degree=degree)
    gu = problem.exact_grad(pts)                        # (T, Q, 2)
    d = gu - v.gradient()[:, None, :]
    ad = np.einsum("de,tqe->tqd", problem.A, d)
    val = np.einsum("tq,tqd,tqd->", w, d, ad)
    return float(np.sqrt(max(val, 0.0)))


def f_cell_integrals(mesh: TriMesh, f, degree: int = 5):
    """Per-triangle integrals of f and f^2 with the degree-5 rule."""
    pts, w = tri_quad_points(mesh, degree=degree)
    fv = np.asarray(f(pts), dtype=float)
    return (w * fv).sum(axis=1), (w * fv * fv).sum(axis=1)
