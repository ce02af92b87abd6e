import numpy as np
import pytest

from merge_stack.params import LonWeights
from merge_stack.qp import QuadraticProgram, solve_qp
from merge_stack.stability import (
    GainSet,
    batch_matrices,
    classify_string_stability,
    explicit_gains,
    explicit_solution,
    l2_ratio,
    platoon_matrices,
    transfer_magnitude,
)

W = LonWeights()


def test_platoon_matrices_shape():
    A, B, D = platoon_matrices(0.1)
    np.testing.assert_array_equal(A, [[1, 0.1, 0], [0, 1, -0.1], [0, 0, 1]])
    np.testing.assert_array_equal(B, [0, 0, 0.1])
    np.testing.assert_array_equal(D, [0, 0.1, 0])


def test_smallest_batch_assembled_by_hand():
    m = batch_matrices(W, 1, 0.1)
    A, B, D = platoon_matrices(0.1)
    assert m.S_u.shape == (6, 2)
    np.testing.assert_array_equal(m.S_u[:3], np.zeros((3, 2)))
    np.testing.assert_array_equal(m.S_u[3:, 0], B)
    np.testing.assert_array_equal(m.S_u[3:, 1], np.zeros(3))  # last input unused
    np.testing.assert_array_equal(m.S_a[3:, 0], D)
    np.testing.assert_array_equal(m.S_x[:3], np.eye(3))
    np.testing.assert_array_equal(m.S_x[3:], A)


def test_prediction_blocks_match_matrix_powers():
    m = batch_matrices(W, 6, 0.1)
    A, B, D = platoon_matrices(0.1)
    np.testing.assert_allclose(m.S_x[6:9], A @ A, atol=1e-14)
    # block (k=3, j=1) of the input map is A^(k-1-j) B = A B
    np.testing.assert_allclose(m.S_u[9:12, 1], A @ B, atol=1e-14)
    np.testing.assert_allclose(m.S_a[9:12, 0], A @ (A @ D), atol=1e-14)


def test_condensed_hessian_symmetric_positive_definite():
    m = batch_matrices(W, 12, 0.1)
    np.testing.assert_allclose(m.H, m.H.T, atol=1e-12)
    assert np.linalg.eigvalsh(m.H)[0] > 0.0


def test_explicit_solution_zero_at_origin():
    m = batch_matrices(W, 12, 0.1)
    out = explicit_solution(np.zeros(3), np.zeros(13), m)
    np.testing.assert_allclose(out, np.zeros(13), atol=1e-12)


def test_explicit_solution_is_linear():
    m = batch_matrices(W, 12, 0.1)
    x0 = np.array([3.0, -1.0, 0.5])
    one = explicit_solution(x0, np.zeros(13), m)
    two = explicit_solution(2 * x0, np.zeros(13), m)
    np.testing.assert_allclose(two, 2 * one, atol=1e-9)


def test_explicit_solution_matches_constrained_solver_when_unconstrained():
    rng = np.random.default_rng(17)
    m = batch_matrices(W, 8, 0.1)
    for _ in range(5):
        x0 = rng.uniform(-5, 5, 3)
        accel = rng.uniform(-1, 1, 9)
        rhs = 2.0 * (m.F.T @ x0 + m.L.T @ accel)
        qp = QuadraticProgram(2.0 * m.H, rhs)
        sol = solve_qp(qp, 1e-10)
        np.testing.assert_allclose(sol.primal, explicit_solution(x0, accel, m),
                                   atol=1e-8)


def test_gains_reproduce_first_control():
    rng = np.random.default_rng(23)
    m = batch_matrices(W, 12, 0.1)
    g = explicit_gains(W, 12, 0.1)
    assert abs(g.feedforward_total - float(np.sum(g.feedforward))) < 1e-12
    for _ in range(5):
        x0 = rng.uniform(-5, 5, 3)
        accel = rng.uniform(-1, 1, 13)
        first = explicit_solution(x0, accel, m)[0]
        assert abs(first - (g.feedback @ x0 + g.feedforward @ accel)) < 1e-10


def test_gains_invariant_to_uniform_cost_scaling():
    scaled = LonWeights(state=7.0 * W.state, control=7.0 * W.control,
                        terminal=W.terminal)
    a = explicit_gains(W, 12, 0.1)
    b = explicit_gains(scaled, 12, 0.1)
    np.testing.assert_allclose(a.feedback, b.feedback, atol=1e-9)
    np.testing.assert_allclose(a.feedforward, b.feedforward, atol=1e-9)


def _gain_set(kd, kv, ka, kf):
    return GainSet(np.array([kd, kv, ka]), np.array([kf]), kf)


def test_transfer_magnitude_limits():
    g = _gain_set(0.5, 2.0, -1.5, 0.8)
    assert abs(transfer_magnitude(g, 1e-6) - 1.0) < 1e-6
    # high-frequency rolloff goes as feedforward_total / omega
    assert abs(transfer_magnitude(g, 1e6) - 0.8e-6) < 1e-11
    with pytest.raises(ValueError):
        transfer_magnitude(g, 0.0)


def test_transfer_magnitude_matches_complex_arithmetic():
    g = _gain_set(0.7, 1.3, -2.1, 0.4)
    s = 1j * 1.0
    kd, kv, ka, kf = 0.7, 1.3, -2.1, 0.4
    ref = abs((kf * s**2 + kv * s + kd) / (s**3 - ka * s**2 + kv * s + kd))
    assert abs(transfer_magnitude(g, 1.0) - ref) < 1e-12


def test_classifier_boundary_zero_spacing_gain():
    # k_spacing = 0 and k_accel = k_feedforward: q = 0, roots {0, -p}
    stable = classify_string_stability(_gain_set(0.0, -1.0, 1.0, 1.0))
    assert stable.p > 0 and stable.stable
    unstable = classify_string_stability(_gain_set(0.0, 1.0, 1.0, 1.0))
    assert unstable.p < 0 and not unstable.stable


def test_classifier_no_real_roots_is_stable():
    # engineered p = 1, q = 2: discriminant negative
    v = classify_string_stability(_gain_set(0.25, 0.0, 1.0, 0.0))
    assert abs(v.p - 1.0) < 1e-12 and abs(v.q - 2.0) < 1e-12
    assert v.stable and v.sweep_stable


def test_analytic_and_sweep_verdicts_agree_on_random_gains():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        g = GainSet(
            np.array([rng.uniform(0.05, 5), rng.uniform(-2, 8), rng.uniform(-6, 2)]),
            rng.uniform(-1, 1, 5), 0.0)
        g.feedforward_total = float(np.sum(g.feedforward))
        v = classify_string_stability(g)
        assert v.stable == v.sweep_stable
        assert not v.stable or v.worst_magnitude <= 1.0 + 1e-6


def test_l2_ratio_basics():
    x = np.array([1.0, -2.0, 0.5, 0.0])
    assert l2_ratio(x, x) == 1.0
    assert abs(l2_ratio(0.5 * x, x) - 0.5) < 1e-15
    with pytest.raises(ValueError):
        l2_ratio(x, np.zeros(4))
    with pytest.raises(ValueError):
        l2_ratio(x, x[:3])
