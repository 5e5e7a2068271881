import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrikq.encoding import (DimensionError, EncodingOperator, KQSampling, KSpaceData, add_noise,
                             adjoint, fft2c, forward, ifft2c, make_epi_masks, sample_kq)
from dmrikq.phantom import CoilMaps, DwiStack, ShotPhaseMaps, simulate_coil_maps, simulate_shot_phases


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def make_op(n=16, q=3, c=2, s=4, shots_per_q=None, seed=0, support=None, uniform=False):
    coils = simulate_coil_maps(c, n, n, seed=seed, uniform=uniform)
    phases = simulate_shot_phases(q, s, n, n, 2, seed=seed + 1)
    sampling = (KQSampling(np.ones((q, s), bool)) if shots_per_q is None
                else sample_kq(q, s, shots_per_q, seed=seed + 2))
    return EncodingOperator(coils, phases, make_epi_masks(s, n), sampling, support=support)


def dense_forward(op, x):
    """Loop-based reference using numpy.fft, independent of the vectorized operator."""
    q, n1, n2 = op.shape
    maps = op.coils.maps
    y = np.zeros(op.kshape, dtype=complex)
    for iq in range(q):
        for s in np.nonzero(op.sampling.selected[iq])[0]:
            img = x[iq] * np.exp(1j * op.phases.phases[iq, s])
            for c in range(maps.shape[0]):
                k = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(img * maps[c]))) / np.sqrt(n1 * n2)
                y[iq, c][op.masks.masks[s]] += k[op.masks.masks[s]]
    return y


# -- FFT and masks ---------------------------------------------------------------------

@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
def test_centered_fft_is_unitary(n1, n2, seed):
    x = crandn(np.random.default_rng(seed), n1, n2)
    k = fft2c(x)
    assert np.isclose(np.linalg.norm(k), np.linalg.norm(x))
    np.testing.assert_allclose(ifft2c(k), x, atol=1e-12)


def test_centered_fft_of_delta_is_flat():
    x = np.zeros((8, 8), complex)
    x[4, 4] = 1.0
    np.testing.assert_allclose(fft2c(x), np.full((8, 8), 1 / 8), atol=1e-15)


@given(st.integers(1, 8), st.integers(8, 40))
def test_epi_masks_partition_lines(s, n1):
    m = make_epi_masks(s, n1).masks
    assert m.shape == (s, n1)
    np.testing.assert_array_equal(m.sum(axis=0), np.ones(n1))
    assert np.all(m[0, ::s])


def test_epi_masks_reject_too_many_shots():
    with pytest.raises(DimensionError):
        make_epi_masks(17, 16)


def test_sample_kq_properties():
    sk = sample_kq(20, 6, 2, seed=4)
    assert sk.selected.shape == (20, 6)
    assert np.all(sk.selected.sum(axis=1) == 2)
    assert sk.acceleration == pytest.approx(3.0)
    np.testing.assert_array_equal(sk.selected, sample_kq(20, 6, 2, seed=4).selected)
    with pytest.raises(ValueError):
        sample_kq(4, 3, 4, seed=0)


# -- operator -----------------------------------------------------------------------

def test_forward_matches_loop_reference():
    op = make_op(n=8, q=3, c=2, s=4, shots_per_q=2, seed=3)
    x = crandn(np.random.default_rng(1), *op.shape)
    np.testing.assert_allclose(op.forward(x), dense_forward(op, x), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_adjoint_identity(seed, shots):
    op = make_op(shots_per_q=shots, seed=seed % 1000)
    rng = np.random.default_rng(seed)
    x, y = crandn(rng, *op.shape), crandn(rng, *op.kshape)
    lhs = np.vdot(op.forward(x).ravel(), y.ravel())
    rhs = np.vdot(x.ravel(), op.adjoint(y).ravel())
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300)


def test_adjoint_identity_with_support():
    support = np.zeros((16, 16), bool)
    support[4:12, 3:13] = True
    op = make_op(shots_per_q=2, support=support)
    rng = np.random.default_rng(9)
    x, y = crandn(rng, *op.shape), crandn(rng, *op.kshape)
    lhs = np.vdot(op.forward(x).ravel(), y.ravel())
    rhs = np.vdot(x.ravel(), op.adjoint(y).ravel())
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)
    assert np.all(op.adjoint(y)[:, ~support] == 0)


def test_fully_sampled_single_uniform_coil_is_unitary():
    # with zero shot phases every line is acquired exactly once through one FFT
    n, q, s = 16, 2, 4
    op = EncodingOperator(simulate_coil_maps(1, n, n, 0, uniform=True),
                          ShotPhaseMaps(np.zeros((q, s, n, n))), make_epi_masks(s, n),
                          KQSampling(np.ones((q, s), bool)))
    x = crandn(np.random.default_rng(2), *op.shape)
    y = op.forward(x)
    assert np.isclose(np.linalg.norm(y), np.linalg.norm(x))
    np.testing.assert_allclose(op.adjoint(y), x, atol=1e-12)


def test_unsampled_lines_are_zero():
    op = make_op(shots_per_q=1, seed=5)
    y = op.forward(crandn(np.random.default_rng(0), *op.shape))
    sampled = np.broadcast_to(op.sampled(), op.kshape)
    assert np.all(y[~sampled] == 0)
    assert np.count_nonzero(op.sampled()) == op.shape[0] * op.shape[1] // 4


def test_normal_operator_is_hermitian_psd():
    op = make_op(shots_per_q=2, seed=8)
    rng = np.random.default_rng(3)
    x, z = crandn(rng, *op.shape), crandn(rng, *op.shape)
    assert np.isclose(np.vdot(z.ravel(), op.normal(x).ravel()),
                      np.vdot(op.normal(z).ravel(), x.ravel()))
    assert np.vdot(x.ravel(), op.normal(x).ravel()).real >= 0


def test_module_level_wrappers():
    op = make_op(shots_per_q=2, seed=2)
    x = crandn(np.random.default_rng(4), *op.shape)
    y = forward(DwiStack(x), op.coils, op.phases, op.masks, op.sampling)
    assert isinstance(y, KSpaceData)
    np.testing.assert_array_equal(y.data, op.forward(x))
    back = adjoint(y, op.coils, op.phases, op.masks, op.sampling)
    np.testing.assert_array_equal(back.data, op.adjoint(y.data))


@pytest.mark.parametrize("mutate, axis", [
    (lambda c, p, m: (CoilMaps(c.maps[:, :15]), p, m), "grid"),
    (lambda c, p, m: (c, ShotPhaseMaps(p.phases[:2]), m), "(Q, S)"),
    (lambda c, p, m: (c, p, make_epi_masks(2, 16)), "S="),
])
def test_dimension_mismatch_names_axis(mutate, axis):
    coils = simulate_coil_maps(2, 16, 16, seed=0)
    phases = simulate_shot_phases(3, 4, 16, 16, 1, seed=0)
    masks = make_epi_masks(4, 16)
    c, p, m = mutate(coils, phases, masks)
    with pytest.raises(DimensionError, match=axis.replace("(", r"\(").replace(")", r"\)")):
        EncodingOperator(c, p, m, KQSampling(np.ones((3, 4), bool)))


def test_operator_input_shape_checked():
    op = make_op()
    with pytest.raises(DimensionError, match="N2"):
        op.forward(np.zeros((3, 16, 15), complex))


# -- noise --------------------------------------------------------------------------

def test_add_noise_variance_and_support():
    op = make_op(n=32, q=4, c=4, s=4, shots_per_q=2, seed=1)
    clean = KSpaceData(np.zeros(op.kshape, complex), op.sampling, op.masks)
    sigma = 0.3
    noisy = add_noise(clean, sigma, seed=11)
    sampled = np.broadcast_to(clean.sampled(), op.kshape)
    vals = noisy.data[sampled]
    # 4*4*32*32/2 = 8192 samples; sample variance within ~5 sigma of its standard error
    assert abs(np.mean(np.abs(vals) ** 2) / sigma ** 2 - 1) < 5 / np.sqrt(vals.size)
    assert abs(np.var(vals.real) / (sigma ** 2 / 2) - 1) < 0.1
    assert np.all(noisy.data[~sampled] == 0)
    np.testing.assert_array_equal(noisy.data, add_noise(clean, sigma, seed=11).data)
    np.testing.assert_array_equal(add_noise(clean, 0.0, seed=1).data, clean.data)
