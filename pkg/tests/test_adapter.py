import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gola.adapter import AdapterPair, RankWarning, ShapeError, apply_permutation, effective_update, forward, merge
from helpers import random_adapter


def test_zero_branch_passes_through():
    a = AdapterPair(np.eye(2), np.zeros((1, 2)), np.zeros((2, 1)))
    np.testing.assert_array_equal(forward(a, np.array([3.0, 4.0])), [3.0, 4.0])


def test_rank_one_outer_product():
    a = AdapterPair(np.zeros((2, 2)), [[1.0, 0.0]], [[1.0], [1.0]])
    np.testing.assert_array_equal(forward(a, np.array([5.0, 7.0])), [5.0, 5.0])


def test_forward_matches_dense_product():
    rng = np.random.default_rng(0)
    a = random_adapter(rng, 8, 8, 2)
    h = rng.standard_normal(8)
    dense = (np.asarray(a.W) + np.asarray(a.B) @ np.asarray(a.A)) @ h
    out = forward(a, h)
    assert np.max(np.abs(out - dense)) <= 1e-6 * np.max(np.abs(dense))


def test_forward_batch_shape():
    rng = np.random.default_rng(1)
    a = random_adapter(rng, 5, 7, 2)
    assert forward(a, rng.standard_normal((7, 3))).shape == (5, 3)


@pytest.mark.parametrize(
    "W, A, B, axis",
    [
        (np.zeros((3, 4)), np.zeros((2, 5)), np.zeros((3, 2)), "input"),
        (np.zeros((3, 4)), np.zeros((2, 4)), np.zeros((3, 1)), "rank"),
        (np.zeros((3, 4)), np.zeros((2, 4)), np.zeros((2, 2)), "output"),
    ],
)
def test_shape_errors_name_the_axis(W, A, B, axis):
    with pytest.raises(ShapeError, match=axis):
        AdapterPair(W, A, B)


def test_forward_rejects_wrong_input_axis():
    a = AdapterPair(np.zeros((3, 4)), np.zeros((1, 4)), np.zeros((3, 1)))
    with pytest.raises(ShapeError, match="input"):
        forward(a, np.zeros((5, 2)))


def test_rank_bounds_and_warning():
    with pytest.raises(ShapeError):
        AdapterPair(np.zeros((3, 3)), np.zeros((4, 3)), np.zeros((3, 4)))
    with pytest.warns(RankWarning):
        AdapterPair(np.zeros((4, 4)), np.zeros((3, 4)), np.zeros((4, 3)))


def test_non_finite_rejected():
    A = np.zeros((1, 2))
    A[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        AdapterPair(np.zeros((2, 2)), A, np.zeros((2, 1)))


def test_adapter_is_immutable():
    a = AdapterPair(np.eye(2), np.zeros((1, 2)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        a.A[0, 0] = 1.0


def test_merge_zero_update_is_exact():
    rng = np.random.default_rng(2)
    W = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(merge(AdapterPair(W, np.zeros((2, 3)), rng.standard_normal((4, 2)))), W)
    np.testing.assert_array_equal(merge(AdapterPair(W, rng.standard_normal((2, 3)), np.zeros((4, 2)))), W)


def test_merge_hand_outer_product():
    a = AdapterPair(np.zeros((2, 2)), [[3.0, 1.0]], [[2.0], [0.0]])
    np.testing.assert_array_equal(merge(a), [[6.0, 2.0], [0.0, 0.0]])
    np.testing.assert_array_equal(effective_update(a), [[6.0, 2.0], [0.0, 0.0]])


def test_merge_equivalence_random_probes():
    rng = np.random.default_rng(3)
    a = random_adapter(rng, 12, 9, 3)
    Wm = merge(a)
    for _ in range(100):
        h = rng.standard_normal(9)
        ref = Wm @ h
        assert np.max(np.abs(forward(a, h) - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


def test_merge_minus_base_is_effective_update():
    rng = np.random.default_rng(4)
    a = random_adapter(rng, 6, 5, 2, scale=0.7)
    assert np.max(np.abs(merge(a) - np.asarray(a.W) - effective_update(a))) <= 1e-12


def test_scale_multiplies_branch():
    rng = np.random.default_rng(5)
    a = random_adapter(rng, 6, 5, 2, scale=2.5)
    np.testing.assert_allclose(effective_update(a), 2.5 * np.asarray(a.B) @ np.asarray(a.A), rtol=0, atol=1e-14)


def test_identity_permutation_is_bitwise_noop():
    rng = np.random.default_rng(6)
    a = random_adapter(rng, 6, 5, 3)
    p = apply_permutation(a, np.arange(3))
    assert p.A.tobytes() == a.A.tobytes() and p.B.tobytes() == a.B.tobytes()


def test_swap_two_ranks():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[5.0, 6.0], [7.0, 8.0]])
    a = AdapterPair(np.zeros((2, 2)), A, B)
    p = apply_permutation(a, [1, 0])
    np.testing.assert_array_equal(p.A, A[::-1])
    np.testing.assert_array_equal(p.B, B[:, ::-1])
    assert np.max(np.abs(merge(a) - merge(p))) <= 1e-12


def test_random_permutation_preserves_update():
    rng = np.random.default_rng(7)
    a = random_adapter(rng, 16, 16, 8)
    p = apply_permutation(a, rng.permutation(8))
    assert np.max(np.abs(effective_update(a) - effective_update(p))) <= 1e-12


@pytest.mark.parametrize("sigma", [[0, 0, 1], [0, 1], [0, 1, 3], [0.0, 1.0, 2.0]])
def test_invalid_permutation(sigma):
    a = AdapterPair(np.zeros((4, 4)), np.zeros((3, 4)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        apply_permutation(a, np.array(sigma))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_forward_is_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    a = random_adapter(rng, 7, 6, 3)
    h1, h2 = rng.standard_normal(6), rng.standard_normal(6)
    lhs = forward(a, alpha * h1 + beta * h2)
    rhs = alpha * forward(a, h1) + beta * forward(a, h2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * max(1.0, np.max(np.abs(rhs)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merge_equivalence_f32(seed):
    rng = np.random.default_rng(seed)
    a = random_adapter(rng, 24, 20, 4, dtype=np.float32)
    h = rng.standard_normal(20).astype(np.float32)
    err = np.max(np.abs(forward(a, h) - merge(a) @ h))
    assert err <= 1e-5 * (1 + np.max(np.abs(h)))
