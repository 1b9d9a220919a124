import numpy as np
import pytest
import scipy.sparse as sp

from ddmcert.flux import (BrokenFluxField, average_gradient,
                          build_corrector_space, constraint_residuals,
                          corrected_flux, corrector_matrix, corrector_rhs,
                          improve_corrector_locally, solve_corrector,
                          write_coefficients_csv)
from ddmcert.majorant import (MajorantConstants, alpha_weights,
                              evaluate_majorant)
from ddmcert.mesh import (DIRICHLET, INACTIVE, MeshError, build_coarse_mesh,
                          build_lshape_mesh, build_rect_grid_decomposition)
from ddmcert.problem import (EllipticProblem, ScalarFieldP1, f_cell_integrals,
                             manufactured_lshape_problem)
from ddmcert.schwarz import SchwarzConfig, run_schwarz

BARY = np.array([[2 / 3, 1 / 6, 1 / 6],
                 [1 / 6, 2 / 3, 1 / 6],
                 [1 / 6, 1 / 6, 2 / 3]])


def l2_sq(mesh, y, target):
    """Integral of |y - target|^2 with target constant per triangle."""
    diff = y.values(BARY) - target[:, None, :]
    return float(np.einsum("t,tqd,tqd->", mesh.areas / 3, diff, diff))


# ---------------------------------------------------------------------------
# average_gradient
# ---------------------------------------------------------------------------


def test_averaging_preserves_affine_fields():
    mesh, decomp = build_lshape_mesh(0.25)
    v = ScalarFieldP1.interpolate(mesh, lambda p: 3 * p[..., 0] - p[..., 1])
    yt = average_gradient(v, decomp)
    grad = np.broadcast_to(np.array([3.0, -1.0]), (mesh.n_triangles, 2))
    assert l2_sq(mesh, yt, np.array(grad)) < 1e-26
    assert np.allclose(yt.divergence(), 0.0, atol=1e-12)
    for m in range(len(decomp.interfaces)):
        assert np.allclose(yt.jump_endpoint_values(m), 0.0, atol=1e-13)
    res = constraint_residuals(yt, lambda p: np.zeros(p.shape[:-1]), decomp)
    assert np.allclose(res.subdomain, 0.0, atol=1e-13)
    assert np.allclose(res.interface, 0.0, atol=1e-13)


def test_averaging_is_arithmetic_mean_on_equal_areas():
    # unit square split by the ll-ur diagonal; v = max(x, y) has
    # grad (1,0) on the lower triangle and (0,1) on the upper one
    mesh, decomp, _ = build_rect_grid_decomposition(1, 1, 1.0)
    v = ScalarFieldP1.interpolate(mesh, lambda p: np.maximum(p[..., 0],
                                                             p[..., 1]))
    yt = average_gradient(v, decomp)
    coords = mesh.vertices[mesh.triangles]          # (T, 3, 2)
    nodal = yt.p1_part
    for t in range(2):
        for i in range(3):
            x, y = coords[t, i]
            if np.isclose(x, 1.0) and np.isclose(y, 0.0):
                assert np.allclose(nodal[t, i], [1.0, 0.0])
            elif np.isclose(x, 0.0) and np.isclose(y, 1.0):
                assert np.allclose(nodal[t, i], [0.0, 1.0])
            else:                                   # shared diagonal vertices
                assert np.allclose(nodal[t, i], [0.5, 0.5])


def test_averaging_regression_value(cert4):
    # distance of the averaged flux to the raw gradient, sweep-16 iterate
    mesh = cert4.mesh
    raw = l2_sq(mesh, cert4.yt, cert4.v.gradient())
    assert np.isclose(raw, 0.018472285782012012, rtol=1e-9)


def test_interface_values_are_one_sided():
    mesh, decomp = build_lshape_mesh(0.5)
    # quadratic field: gradients differ between subdomains at the interface
    v = ScalarFieldP1.interpolate(mesh, lambda p: p[..., 0] * p[..., 1])
    yt = average_gradient(v, decomp)
    jumps = yt.jump_endpoint_values(0)
    assert np.abs(jumps).max() > 1e-3


# ---------------------------------------------------------------------------
# corrector space
# ---------------------------------------------------------------------------


def test_space_counts_lshape_H1():
    mesh, decomp = build_lshape_mesh(1.0)
    coarse = build_coarse_mesh(mesh, decomp, 1.0, cells="quad")
    space = build_corrector_space(coarse, decomp)
    # 8 Dirichlet edges + 2 interface edges x 2 sides, plus one diagonal
    # DOF per square cell
    assert space.n_edge_dofs == 12
    assert space.n_dofs == 15
    assert space.n_constraints == 5        # 3 subdomains + 2 interfaces
    assert space.dim_per_cell == 12        # 3 cells x 4 edges


def test_space_fine_mesh_every_edge_is_a_dof():
    mesh, decomp, _ = build_rect_grid_decomposition(2, 2, 0.5,
                                                    dirichlet_boundary=True)
    coarse = build_coarse_mesh(mesh, decomp, 0.5)
    space = build_corrector_space(coarse, decomp)
    # no interfaces: one DOF per fine edge, no duplication
    assert space.n_dofs == mesh.n_edges
    assert space.is_fine()
    assert coarse.dim_per_cell == 3 * mesh.n_triangles


def test_single_cell_represents_constants():
    mesh, decomp, coarse = build_rect_grid_decomposition(
        1, 1, 1.0, cell_type="quad", dirichlet_boundary=True)
    space = build_corrector_space(coarse, decomp)
    target = np.array([1.0, 0.0])
    coeffs = np.zeros(space.n_dofs)
    for dof, edge, side, cell in space.dof_table():
        if edge >= 0:
            e = coarse.edges[edge]
            coeffs[dof] = e.length * float(e.normal @ target)
        else:
            # diagonal from (0,0) to (1,1): length sqrt2, normal (-1,1)/sqrt2
            coeffs[dof] = -1.0
    zero = np.zeros((mesh.n_triangles, 3, 2))
    y = BrokenFluxField(mesh, decomp, zero, space, coeffs)
    vals = y.values(BARY)
    assert np.allclose(vals, target, atol=1e-13)
    assert np.allclose(y.divergence(), 0.0, atol=1e-13)


def test_incompatible_coarse_mesh_rejected():
    mesh, decomp, coarse = build_rect_grid_decomposition(
        1, 1, 1.0, dirichlet_boundary=False)
    with pytest.raises(MeshError, match="slack"):
        build_corrector_space(coarse, decomp)


# ---------------------------------------------------------------------------
# constraints and solve
# ---------------------------------------------------------------------------


def test_residuals_of_trivial_fields():
    mesh, decomp = build_lshape_mesh(0.5)
    const = np.broadcast_to(np.array([2.0, 1.0]),
                            (mesh.n_triangles, 3, 2)).copy()
    y = BrokenFluxField(mesh, decomp, const)
    res = constraint_residuals(y, lambda p: np.zeros(p.shape[:-1]), decomp)
    assert np.allclose(res.subdomain, 0.0, atol=1e-13)
    assert np.allclose(res.interface, 0.0, atol=1e-13)

    zero = BrokenFluxField(mesh, decomp, np.zeros((mesh.n_triangles, 3, 2)))
    res = constraint_residuals(zero, lambda p: np.ones(p.shape[:-1]), decomp)
    assert np.allclose(res.subdomain, 1.0)
    assert np.allclose(res.interface, 0.0, atol=1e-14)


def test_zero_residual_gives_zero_corrector():
    mesh, decomp = build_lshape_mesh(0.25)
    affine = EllipticProblem(
        A=np.eye(2), f=lambda p: np.zeros(p.shape[:-1]),
        u_g=lambda p: p[..., 0] + 2 * p[..., 1])
    v = ScalarFieldP1.interpolate(mesh, lambda p: p[..., 0] + 2 * p[..., 1])
    yt = average_gradient(v, decomp)
    coarse = build_coarse_mesh(mesh, decomp, 0.25)
    space = build_corrector_space(coarse, decomp)
    constants = MajorantConstants.default(decomp, affine)
    q, lam = solve_corrector(yt, v, affine, space,
                             alpha_weights((1, 1, 1), constants),
                             constants.beta)
    assert np.abs(q).max() < 1e-12
    assert np.abs(lam).max() < 1e-12


def test_single_cell_divergence_balance():
    # one unit square, exactly one Dirichlet edge active, ytilde = 0, f = 1:
    # the constraint forces  int div q = -1  over the cell
    mesh, decomp, coarse = build_rect_grid_decomposition(
        1, 1, 1.0, cell_type="quad", dirichlet_boundary=True)
    kept_one = False
    for e in coarse.edges:
        if e.kind == DIRICHLET:
            if kept_one:
                e.kind = INACTIVE
            kept_one = True
    coarse.N_fD = 1
    space = build_corrector_space(coarse, decomp)
    assert space.n_dofs == 2 and space.n_constraints == 1

    unit_source = EllipticProblem(A=np.eye(2),
                                  f=lambda p: np.ones(p.shape[:-1]),
                                  u_g=lambda p: np.zeros(p.shape[:-1]))
    zero_v = ScalarFieldP1(mesh, np.zeros(mesh.n_vertices))
    yt = BrokenFluxField(mesh, decomp, np.zeros((mesh.n_triangles, 3, 2)))
    constants = MajorantConstants(C_min=1.0, C_P=np.array([np.sqrt(2) / np.pi]),
                                  beta=np.zeros(0), E_max=2.0,
                                  C_F=np.sqrt(2) / np.pi)
    q, _ = solve_corrector(yt, zero_v, unit_source, space,
                           alpha_weights((1, 1, 1), constants), np.zeros(0))
    y = corrected_flux(yt, q, space)
    assert np.isclose(float((y.divergence() * mesh.areas).sum()), -1.0)
    res = constraint_residuals(y, unit_source.f, decomp)
    assert abs(res.subdomain[0]) < 1e-12


def test_corrected_flux_linearity(cert4):
    y1 = corrected_flux(cert4.yt, cert4.q, cert4.space)
    y2 = corrected_flux(cert4.yt, 2 * cert4.q, cert4.space)
    qv = y2.values(BARY) - y1.values(BARY)
    pure_q = corrected_flux(
        BrokenFluxField(cert4.mesh, cert4.decomp,
                        np.zeros_like(cert4.yt.p1_part)),
        cert4.q, cert4.space)
    assert np.allclose(qv, pure_q.values(BARY), atol=1e-13)
    assert np.allclose(y2.divergence() - y1.divergence(),
                       pure_q.divergence(), atol=1e-12)


def test_trace_jump_additivity(cert4):
    for m in range(len(cert4.decomp.interfaces)):
        jy = cert4.y.jump_endpoint_values(m)
        jt = cert4.yt.jump_endpoint_values(m)
        pure_q = corrected_flux(
            BrokenFluxField(cert4.mesh, cert4.decomp,
                            np.zeros_like(cert4.yt.p1_part)),
            cert4.q, cert4.space)
        jq = pure_q.jump_endpoint_values(m)
        assert np.allclose(jy, jt + jq, atol=1e-12)


def test_corrector_zero_is_identity(cert4):
    y0 = corrected_flux(cert4.yt, np.zeros(cert4.space.n_dofs), cert4.space)
    assert np.allclose(y0.values(BARY), cert4.yt.values(BARY))


def test_admissibility_after_solve(cert4):
    res = constraint_residuals(cert4.y, cert4.problem.f, cert4.decomp,
                               cert4.f_tri)
    assert np.abs(res.subdomain).max() < 1e-10
    assert np.abs(res.interface).max() < 1e-10


def test_saddle_block_structure(cert4):
    space = cert4.space
    alphas = alpha_weights((1.0, 1.0, 1.0), cert4.constants)
    G = corrector_matrix(space, alphas, cert4.constants.beta)
    asym = (G - G.T).tocoo()
    assert not asym.nnz or np.abs(asym.data).max() < 1e-14
    assert (G.diagonal() > 0).all()
    # constraint rows: one per subdomain, one per interface, all nonzero
    C = space.C.tocsr()
    assert C.shape[0] == space.n_constraints
    assert all(C[i].nnz > 0 for i in range(C.shape[0]))


def test_kkt_local_optimality(cert4):
    # perturbing any single DOF and re-projecting onto the constraints
    # never decreases the objective
    space, constants = cert4.space, cert4.constants
    alphas = alpha_weights((1.0, 1.0, 1.0), constants)
    G = corrector_matrix(space, alphas, constants.beta).toarray()
    b, d = corrector_rhs(space, cert4.yt, cert4.v, cert4.problem, alphas,
                         constants.beta, cert4.f_tri)
    C = space.C.toarray()
    CCt_inv = np.linalg.inv(C @ C.T)

    def objective(x):
        return x @ G @ x - 2 * b @ x

    base = objective(cert4.q)
    rng = np.random.default_rng(42)
    dofs = rng.choice(space.n_dofs, size=25, replace=False)
    for i in dofs:
        for delta in (1e-4, -1e-4):
            x = cert4.q.copy()
            x[i] += delta
            x -= C.T @ (CCt_inv @ (C @ x - d))
            assert objective(x) >= base - 1e-13 * abs(base)


def test_improvement_is_monotone_and_admissible():
    p = manufactured_lshape_problem()
    mesh, decomp = build_lshape_mesh(1 / 16)
    state = run_schwarz(mesh, decomp, p, SchwarzConfig(sweeps=8),
                        track_discrete=False)
    constants = MajorantConstants.default(decomp, p)
    alphas = alpha_weights((1.0, 1.0, 1.0), constants)
    f_tri, f_sq = f_cell_integrals(mesh, p.f)
    coarse = build_coarse_mesh(mesh, decomp, 0.25)
    space = build_corrector_space(coarse, decomp)
    yt = average_gradient(state.v, decomp, p.A)
    q, _ = solve_corrector(yt, state.v, p, space, alphas, constants.beta,
                           f_tri)
    y = corrected_flux(yt, q, space)
    before = evaluate_majorant(y, state.v, p, constants, f_tri=f_tri,
                               f_sq_tri=f_sq)
    improved = improve_corrector_locally(y, state.v, p, alphas,
                                         constants.beta)
    after = evaluate_majorant(improved, state.v, p, constants, f_tri=f_tri,
                              f_sq_tri=f_sq)
    assert after.total_sq <= before.total_sq * (1 + 1e-12)
    assert after.M2_sq < before.M2_sq          # the coarse bottleneck drops
    assert after.guaranteed
    res = constraint_residuals(improved, p.f, decomp, f_tri)
    assert np.abs(res.subdomain).max() < 1e-10
    assert np.abs(res.interface).max() < 1e-10


def test_improvement_noop_on_fine_space(cert4):
    improved = improve_corrector_locally(cert4.y, cert4.v, cert4.problem,
                                         alpha_weights((1, 1, 1),
                                                       cert4.constants),
                                         cert4.constants.beta)
    assert improved is cert4.y


def test_coefficient_csv_dump(tmp_path, cert4):
    path = tmp_path / "coeffs.csv"
    write_coefficients_csv(cert4.space, cert4.q, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "edge,side,cell,coefficient"
    assert len(lines) == cert4.space.n_dofs + 1
    edge, side, cell, val = lines[1].split(",")
    assert float(val) == cert4.q[0]
