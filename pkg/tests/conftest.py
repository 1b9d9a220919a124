"""Shared fixtures: small presets and one fully certified pipeline state."""

from types import SimpleNamespace

import pytest

from ddmcert.flux import (CorrectorSolver, average_gradient,
                          build_corrector_space, corrected_flux)
from ddmcert.majorant import (MajorantConstants, alpha_weights,
                              evaluate_majorant)
from ddmcert.mesh import build_coarse_mesh, build_lshape_mesh
from ddmcert.problem import f_cell_integrals, manufactured_lshape_problem
from ddmcert.schwarz import SchwarzConfig, run_schwarz


@pytest.fixture(scope="session")
def problem():
    return manufactured_lshape_problem()


@pytest.fixture(scope="session")
def lshape4():
    mesh, decomp = build_lshape_mesh(0.25)
    return mesh, decomp


@pytest.fixture(scope="session")
def cert4(lshape4, problem):
    """h=H=1/4 pipeline state after 16 sweeps, certified once."""
    mesh, decomp = lshape4
    state = run_schwarz(mesh, decomp, problem, SchwarzConfig(sweeps=16),
                        track_discrete=False)
    constants = MajorantConstants.default(decomp, problem)
    coarse = build_coarse_mesh(mesh, decomp, 0.25)
    space = build_corrector_space(coarse, decomp, problem.A)
    f_tri, f_sq = f_cell_integrals(mesh, problem.f)
    solver = CorrectorSolver(space, problem,
                             alpha_weights((1.0, 1.0, 1.0), constants),
                             constants.beta, f_tri)
    yt = average_gradient(state.v, decomp, problem.A)
    q, lam = solver.solve(yt, state.v)
    y = corrected_flux(yt, q, space)
    report = evaluate_majorant(y, state.v, problem, constants,
                               f_tri=f_tri, f_sq_tri=f_sq)
    return SimpleNamespace(mesh=mesh, decomp=decomp, problem=problem,
                           constants=constants, coarse=coarse, space=space,
                           solver=solver, v=state.v, yt=yt, q=q, lam=lam,
                           y=y, report=report, f_tri=f_tri, f_sq=f_sq)
