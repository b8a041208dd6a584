import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from contraction_pinn import loss, network, sampling
from contraction_pinn.exceptions import ConfigError, NumericError
from contraction_pinn.systems import linear
from conftest import central_diff, naive_forward, random_net


def zero_system(n=2):
    return linear(np.zeros((n, n)), [[1.0] + [0.0] * (n - 1)], [[-1, 1]] * n, [[-1, 1]])


def cofactor_det(m):
    """Laplace expansion along the first row."""
    m = np.asarray(m)
    if m.shape == (1, 1):
        return m[0, 0]
    total = 0.0
    for j in range(m.shape[0]):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += (-1) ** j * m[0, j] * cofactor_det(minor)
    return total


def brute_d(system, net, xh, y, lam):
    """D assembled from finite-difference Jacobians of f and of the network."""
    jf = central_diff(system.f, xh)
    jk = central_diff(lambda v: network.forward(net, np.concatenate([v, y])), xh)
    m = jf + jk
    return 0.5 * (m + m.T) + 2 * lam * np.eye(len(xh))


def brute_mpdi_point(d, rho):
    out = 0.0
    for i in range(1, d.shape[0] + 1):
        delta = cofactor_det(d[:i, :i])
        out += rho[i - 1] * (max(0.0, delta) if i % 2 else max(0.0, -delta))
    return out


def test_contraction_matrix_zero_net_zero_field():
    cm = loss.contraction_matrix(zero_system(), network.zeros_like_shape([3, 4, 2]),
                                 [0.3, -0.2], [0.5], lam=1.0)
    np.testing.assert_array_equal(cm.d, 2 * np.eye(2))


def test_contraction_matrix_vanderpol_origin(vdp):
    cm = loss.contraction_matrix(vdp, network.zeros_like_shape([3, 4, 2]), [0.0, 0.0], [0.0], lam=0.0)
    np.testing.assert_array_equal(cm.d, [[0.0, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("seed", range(3))
def test_contraction_matrix_against_brute_force(vdp, seed):
    rng = np.random.default_rng(seed)
    net = random_net([3, 12, 12, 2], seed)
    xh, y = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 1)
    d = loss.contraction_matrix(vdp, net, xh, y, 2.5).d
    assert np.max(np.abs(d - d.T)) <= 1e-12
    np.testing.assert_allclose(d, brute_d(vdp, net, xh, y, 2.5), atol=1e-7)


def test_leading_minors_small():
    np.testing.assert_array_equal(loss.leading_minors(np.eye(2)), [1.0, 1.0])
    np.testing.assert_array_equal(loss.leading_minors(-np.eye(2)), [-1.0, 1.0])


@pytest.mark.parametrize("n", [3, 4, 5])
def test_leading_minors_against_cofactor_expansion(n):
    rng = np.random.default_rng(n)
    a = rng.normal(size=(n, n))
    d = a + a.T
    expected = [cofactor_det(d[:i, :i]) for i in range(1, n + 1)]
    np.testing.assert_allclose(loss.leading_minors(d), expected, rtol=1e-10)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_cofactors_are_determinant_gradient(n):
    a = np.random.default_rng(n).normal(size=(n, n))
    fd = central_diff(lambda v: cofactor_det(v.reshape(n, n)), a.ravel()).reshape(n, n)
    np.testing.assert_allclose(loss._cofactors(a), fd, atol=1e-7)


def test_minor_penalty_examples():
    m = loss.leading_minors(-np.eye(2))
    assert loss.minor_penalty(m, 1) == 0 and loss.minor_penalty(m, 2) == 0
    assert loss.minor_penalty(loss.leading_minors(np.diag([1.0, -1.0])), 1) == 1.0
    m = loss.leading_minors(np.diag([-1.0, 1.0]))
    assert m[1] == -1.0 and loss.minor_penalty(m, 2) == 1.0
    with pytest.raises(IndexError):
        loss.minor_penalty(m, 3)


def test_mpdi_hand_example():
    # zero gain on x' = diag(0, -2) x with lam = 0.5 gives D = diag(1, -1)
    system = linear(np.diag([0.0, -2.0]), [[1.0, 0.0]], [[-1, 1]] * 2, [[-1, 1]])
    net = network.zeros_like_shape([3, 4, 2])
    batch = sampling.CollocationSet([[0.1, 0.2]], [[0.3]])
    spec = loss.LossSpec(0.5, 1.0, 1.0, (1.0, 0.1))
    np.testing.assert_array_equal(loss.contraction_matrix(system, net, [0.1, 0.2], [0.3], 0.5).d,
                                  np.diag([1.0, -1.0]))
    assert loss.mpdi_loss(system, net, batch, spec) == pytest.approx(1.1, abs=1e-15)
    sq = loss.LossSpec(0.5, 1.0, 1.0, (1.0, 0.1), "squared_hinge")
    assert loss.mpdi_loss(system, net, batch, sq) == pytest.approx(1.1, abs=1e-15)


def test_mpdi_zero_when_nsd_everywhere():
    system = linear(-3 * np.eye(2), [[1.0, 0.0]], [[-1, 1]] * 2, [[-1, 1]])
    batch = sampling.sample_collocation(system, 50, 0)
    assert loss.mpdi_loss(system, network.zeros_like_shape([3, 4, 2]), batch, loss.LossSpec(1.0)) == 0.0


def test_mpdi_mean_normalised_and_permutation_invariant(vdp):
    net = random_net([3, 8, 2], 1)
    batch = sampling.sample_collocation(vdp, 20, 3)
    spec = loss.LossSpec(2.5, 1e-3, 1.0, (1.0, 0.1))
    base = loss.mpdi_loss(vdp, net, batch, spec)
    doubled = sampling.CollocationSet(np.vstack([batch.x_hat] * 2), np.vstack([batch.y] * 2))
    assert loss.mpdi_loss(vdp, net, doubled, spec) == pytest.approx(base, rel=1e-14)
    perm = np.random.default_rng(0).permutation(20)
    assert loss.mpdi_loss(vdp, net, batch.subset(perm), spec) == pytest.approx(base, rel=1e-14)
    scaled = loss.LossSpec(2.5, 1e-3, 1.0, (3.0, 0.3))
    assert loss.mpdi_loss(vdp, net, batch, scaled) == pytest.approx(3 * base, rel=1e-14)


def test_bc_loss_cases(vdp):
    batch = sampling.sample_collocation(vdp, 5, 0)
    assert loss.bc_loss(vdp, network.zeros_like_shape([3, 4, 2]), batch) == 0.0
    const = network.zeros_like_shape([3, 4, 2])
    const.biases[-1][:] = [0.6, -0.8]
    assert loss.bc_loss(vdp, const, batch) == pytest.approx(1.0, abs=1e-15)
    net = random_net([3, 6, 2], 5)
    ref = sum(
        np.sum(naive_forward(net.weights, net.biases, np.concatenate([x, vdp.h(x)])) ** 2)
        for x in batch.x_hat
    ) / 5
    assert loss.bc_loss(vdp, net, batch) == pytest.approx(ref, abs=1e-12)


def test_bc_loss_ignores_sampled_y(vdp):
    net = random_net([3, 6, 2], 5)
    batch = sampling.sample_collocation(vdp, 8, 0)
    other = sampling.CollocationSet(batch.x_hat, batch.y + 0.7)
    assert loss.bc_loss(vdp, net, batch) == loss.bc_loss(vdp, net, other)


def test_total_loss_weights(vdp):
    net = random_net([3, 8, 2], 2)
    batch = sampling.sample_collocation(vdp, 3, 9)
    assert loss.total_loss(vdp, net, batch, loss.LossSpec(2.5, 0.0, 0.0, (1.0, 0.1))) == 0.0
    bc = loss.bc_loss(vdp, net, batch)
    assert loss.total_loss(vdp, net, batch, loss.LossSpec(2.5, 0.0, 0.7, (1.0, 0.1))) == 0.7 * bc


def test_total_loss_benchmark_weights_hand_assembled(vdp):
    net = random_net([3, 8, 8, 2], 4)
    batch = sampling.sample_collocation(vdp, 3, 2)
    rho = (1.0, 0.1)
    mpdi = np.mean([brute_mpdi_point(brute_d(vdp, net, x, y, 2.5), rho)
                    for x, y in zip(batch.x_hat, batch.y)])
    bc = np.mean([np.sum(naive_forward(net.weights, net.biases, [x[0], x[1], x[0]]) ** 2)
                  for x in batch.x_hat])
    expected = 1e-3 * mpdi + 1.0 * bc
    got = loss.total_loss(vdp, net, batch, loss.LossSpec(2.5, 1e-3, 1.0, rho))
    assert got == pytest.approx(expected, rel=1e-7)


def test_non_finite_reports_index(vdp):
    batch = sampling.sample_collocation(vdp, 6, 0)
    x = batch.x_hat.copy()
    x[4, 1] = np.inf
    with pytest.raises(NumericError) as info:
        loss.mpdi_loss(vdp, random_net([3, 4, 2], 0), sampling.CollocationSet(x, batch.y),
                       loss.LossSpec(2.5))
    assert info.value.index == 4


def test_lossspec_validation():
    with pytest.raises(ConfigError):
        loss.LossSpec(0.0)
    with pytest.raises(ConfigError):
        loss.LossSpec(2.5, mu1=-1)
    with pytest.raises(ConfigError):
        loss.LossSpec(2.5, penalty_form="cubic")
    with pytest.warns(UserWarning, match="lambda"):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            loss.LossSpec(1.5)


sym2 = st.tuples(*[st.floats(-10, 10, allow_nan=False)] * 3)


@settings(max_examples=300, deadline=None)
@given(sym2)
def test_minor_hinges_zero_iff_nsd_2x2(abc):
    a, b, c = abc
    d = np.array([[a, b], [b, c]])
    m = loss.leading_minors(d)
    assume(abs(m[0]) > 1e-9 and abs(m[1]) > 1e-9)
    penalty = sum(loss.minor_penalty(m, i) for i in (1, 2))
    assert (penalty == 0) == (np.linalg.eigvalsh(d)[-1] <= 0)


def test_degenerate_minors_do_not_certify():
    # non-strict sign pattern passes while D is not negative semidefinite
    d = np.diag([0.0, 1.0])
    m = loss.leading_minors(d)
    assert loss.minor_penalty(m, 1) == 0 and loss.minor_penalty(m, 2) == 0
    assert np.linalg.eigvalsh(d)[-1] > 0


def test_rho_length_checked(vdp):
    batch = sampling.sample_collocation(vdp, 3, 0)
    with pytest.raises(ConfigError):
        loss.total_loss(vdp, random_net([3, 4, 2], 0), batch, loss.LossSpec(2.5, rho=(1.0,)))


@pytest.mark.parametrize("n", [3, 4])
def test_gradient_higher_dimensional_system(n):
    # exercises the closed-form 3x3 and the generic cofactor paths
    rng = np.random.default_rng(n)
    a = rng.normal(size=(n, n))
    system = linear(a, np.eye(1, n), [[-1, 1]] * n, [[-1, 1]])
    net = random_net([n + 1, 6, n], n)
    batch = sampling.sample_collocation(system, 6, 1)
    spec = loss.LossSpec(0.3, 1.0, 0.5, tuple(range(1, n + 1)), "squared_hinge")
    grad = network.loss_gradient(net, batch, spec, system)
    theta = network.pack(net)
    fd = central_diff(lambda th: loss.total_loss(system, network.unpack(net, th), batch, spec), theta)
    assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) < 1e-6
