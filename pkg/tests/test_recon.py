import numpy as np
import pytest

from dmrikq.dae import default_layer_dims, init_model
from dmrikq.encoding import EncodingOperator, KQSampling, KSpaceData, add_noise, make_epi_masks, sample_kq
from dmrikq.metrics import psnr
from dmrikq.phantom import (DwiStack, PhantomConfig, ShotPhaseMaps, build_brain_phantom, render_dwis,
                            simulate_coil_maps, simulate_shot_phases)
from dmrikq.recon import (ReconConfig, conjugate_gradient, conjugate_residual, dc_cost, pnp_recon,
                          solve_dc, zero_filled_recon)
from dmrikq.signal_model import make_scheme

N, Q, C, S = 32, 12, 4, 4


@pytest.fixture(scope="module")
def phantom():
    scheme = make_scheme(Q)
    ph = build_brain_phantom(PhantomConfig(n1=N, n2=N), seed=1)
    return ph, render_dwis(ph, scheme)


def unitary_op(q=Q, n=N, s=S):
    return EncodingOperator(simulate_coil_maps(1, n, n, 0, uniform=True), ShotPhaseMaps(np.zeros((q, s, n, n))),
                            make_epi_masks(s, n), KQSampling(np.ones((q, s), bool)))


def undersampled(ph, truth, shots=S, per_q=1, sigma=0.005, seed=0):
    ops = EncodingOperator(simulate_coil_maps(C, N, N, seed + 3), simulate_shot_phases(Q, shots, N, N, 2, seed + 5),
                           make_epi_masks(shots, N), sample_kq(Q, shots, per_q, seed + 11), support=ph.mask)
    y = KSpaceData(ops.forward(truth.data), ops.sampling, ops.masks)
    return ops, add_noise(y, sigma, seed + 13)


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- Krylov solvers -------------------------------------------------------------------

@pytest.mark.parametrize("solver", [conjugate_gradient, conjugate_residual])
def test_krylov_solves_small_spd_system(solver):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((20, 20)) + 1j * rng.standard_normal((20, 20))
    m = a.conj().T @ a + 0.5 * np.eye(20)
    x_true = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    res = solver(lambda v: m @ v, m @ x_true, np.zeros(20, complex), 200, 1e-12)
    assert res.converged
    np.testing.assert_allclose(res.x, x_true, atol=1e-9)
    np.testing.assert_allclose(res.x, np.linalg.solve(m, m @ x_true), atol=1e-9)


def test_krylov_zero_rhs_converges_immediately():
    res = conjugate_residual(lambda v: 2 * v, np.zeros(4, complex), np.zeros(4, complex), 10, 1e-6)
    assert res.converged and res.iterations == 0


# -- solve_dc ---------------------------------------------------------------------------

def test_solve_dc_unitary_exact(phantom):
    _, truth = phantom
    ops = unitary_op()
    y = ops.forward(truth.data)
    zero = DwiStack(np.zeros(ops.shape, complex))
    out, res = solve_dc(y, zero, 0.0, ops, ReconConfig())
    assert rel_err(out.data, truth.data) <= 1e-6
    assert res.iterations == 1


def test_solve_dc_large_lambda_returns_aux(phantom):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    q_aux = DwiStack(np.random.default_rng(0).standard_normal(ops.shape) * ph.mask)
    out, _ = solve_dc(y, q_aux, 1e6, ops, ReconConfig(cg_iters=50))
    assert rel_err(out.data, q_aux.data) <= 1e-3


@pytest.mark.parametrize("lam", [0.5, 0.01])
def test_solve_dc_residual_monotone(phantom, lam):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    _, res = solve_dc(y, zero_filled_recon(y, ops), lam, ops, ReconConfig(cg_iters=30, cg_tolerance=1e-12))
    assert np.all(np.diff(res.residuals) <= 1e-10)


def test_solve_dc_does_not_raise_dc_cost(phantom):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    q_aux = zero_filled_recon(y, ops)
    before = dc_cost(ops, q_aux.data, y)
    out, _ = solve_dc(y, q_aux, 0.05, ops, ReconConfig(cg_iters=5))
    assert dc_cost(ops, out.data, y) <= before


def test_solve_dc_rejects_negative_lambda(phantom):
    with pytest.raises(ValueError):
        solve_dc(np.zeros((Q, 1, N, N)), DwiStack(np.zeros((Q, N, N), complex)), -1.0, unitary_op(), ReconConfig())


# -- zero-filled ------------------------------------------------------------------------

def test_zero_filled_unitary_exact(phantom):
    _, truth = phantom
    ops = unitary_op()
    np.testing.assert_allclose(zero_filled_recon(ops.forward(truth.data), ops).data, truth.data, atol=1e-12)


def test_zero_filled_zero_data(phantom):
    ph, truth = phantom
    ops, _ = undersampled(ph, truth)
    assert not zero_filled_recon(np.zeros(ops.kshape, complex), ops).data.any()


# -- pnp_recon --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def models():
    dims = default_layer_dims(Q)
    return (init_model(dims, seed=0, phase_normalize=True, linear_bottleneck=True),
            init_model(dims, seed=1))


def test_pnp_lambda_zero_fully_sampled_exact(phantom, models):
    _, truth = phantom
    ops = unitary_op()
    rec, trace = pnp_recon(ops.forward(truth.data), models[0], ops, ReconConfig(lam=0.0))
    assert rel_err(rec.data, truth.data) <= 1e-6
    assert all(trace.cg_converged)


def test_pnp_lambda_zero_independent_of_model(phantom, models):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    cfg = ReconConfig(lam=0.0, outer_iters=3, cg_iters=5)
    a, _ = pnp_recon(y, models[0], ops, cfg)
    b, _ = pnp_recon(y, models[1], ops, cfg)
    assert a.data.tobytes() == b.data.tobytes()


def test_pnp_trace_and_determinism(phantom, models, tmp_path):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    cfg = ReconConfig(lam=0.05, outer_iters=3, cg_iters=4)
    a, ta = pnp_recon(y, models[0], ops, cfg, truth=truth, mask=ph.mask)
    b, tb = pnp_recon(y, models[0], ops, cfg, truth=truth, mask=ph.mask)
    assert a.data.tobytes() == b.data.tobytes()
    assert len(ta.dc_cost) == len(ta.psnr) == 3
    assert all(np.isfinite(ta.dc_cost + ta.prior_cost + ta.psnr))
    ta.write_csv(tmp_path / "a.csv")
    tb.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "iter,dc_cost,prior_cost,psnr,psnr_denoised,cg_iters,cg_converged"


def test_pnp_final_dc_cost_below_initial(phantom, models):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    init = zero_filled_recon(y, ops).data
    _, trace = pnp_recon(y, models[0], ops, ReconConfig(lam=0.01, outer_iters=2, cg_iters=10))
    assert trace.dc_cost[0] <= dc_cost(ops, init, y)


def test_pnp_rejects_q_mismatch(phantom):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    with pytest.raises(ValueError, match="Q="):
        pnp_recon(y, init_model(default_layer_dims(Q + 1), 0), ops, ReconConfig())


@pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(outer_iters=0), dict(cg_tolerance=1.0),
                                dict(initializer="random"), dict(solver="gmres")])
def test_recon_config_validation(kw):
    with pytest.raises(ValueError):
        ReconConfig(**kw).validate()


def test_pnp_zero_initializer(phantom, models):
    ph, truth = phantom
    ops, y = undersampled(ph, truth)
    _, trace = pnp_recon(y, models[0], ops, ReconConfig(initializer="zero", outer_iters=1, cg_iters=3),
                         truth=truth, mask=ph.mask)
    assert trace.psnr_init == psnr(np.zeros_like(truth.data), truth, ph.mask)
