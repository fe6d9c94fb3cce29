import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avfusion import autodiff as ad
from avfusion.align import (
    AlignParams,
    align_sequences,
    attend_window,
    coarse_align,
    coarse_centers,
    encode_audio_visual,
    expected_context,
    window,
)
from avfusion.errors import ConfigError, InvalidInputError
from avfusion.lstm import LstmParams, encode_sequence, init_lstm

# mpmath oracle: softmax(1 tanh .1, 2 tanh .2, 3 tanh .3)
SCALAR_WEIGHTS = [0.22161916205334057281, 0.29768713972639473239, 0.48069369822026469481]


def random_align(rng, d_a, d_v, k, w, scale=1.0):
    return AlignParams(
        rng.normal(0, scale, (k, d_a)), rng.normal(0, scale, (k, d_v)), rng.normal(0, scale, (2 * w + 1, k)), w
    )


# ---------------------------------------------------------------- coarse alignment


def test_coarse_equal_rates():
    assert coarse_align(5, 20, 20) == 5


def test_coarse_endpoint():
    for T, T_a in [(10, 25), (7, 3), (1, 9), (40, 100)]:
        assert coarse_align(T, T, T_a) == T_a


def test_coarse_hand_example():
    assert coarse_align(4, 10, 25) == 10


def test_coarse_rounds_half_up():
    assert coarse_align(1, 2, 1) == 1  # 0.5 rounds up, then clamps to 1
    assert coarse_align(1, 4, 10) == 3  # 2.5 -> 3


def test_coarse_rejects_out_of_range_step():
    with pytest.raises(InvalidInputError):
        coarse_align(0, 5, 5)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 80), st.integers(1, 200))
def test_coarse_centres_are_monotone_and_in_range(T, T_a):
    c = coarse_centers(T, T_a)
    assert np.all(np.diff(c) >= 0)
    assert c.min() >= 1 and c.max() == T_a
    assert [coarse_align(t, T, T_a) for t in range(1, T + 1)] == c.tolist()


# ---------------------------------------------------------------- window attention


def test_zero_scoring_weights_give_uniform_over_valid_slots(rng):
    p = AlignParams(np.zeros((3, 4)), np.zeros((3, 2)), np.zeros((5, 3)), 2)
    h = rng.standard_normal((10, 4))
    l, mask = attend_window(p, h, rng.standard_normal(2), 5)
    np.testing.assert_allclose(l, np.full(5, 0.2), rtol=1e-15)
    l, mask = attend_window(p, h, rng.standard_normal(2), 10)
    np.testing.assert_allclose(l, [1 / 3, 1 / 3, 1 / 3, 0, 0], rtol=1e-15)


def test_boundary_slots_masked_at_first_frame(rng):
    p = random_align(rng, 3, 2, 4, 2)
    l, mask = attend_window(p, rng.standard_normal((8, 3)), rng.standard_normal(2), 1)
    assert mask.tolist() == [False, False, True, True, True]
    assert l[0] == 0.0 and l[1] == 0.0
    assert abs(l.sum() - 1.0) < 1e-15


def test_scalar_scoring_example():
    p = AlignParams(np.ones((1, 1)), np.ones((1, 1)), np.array([[1.0], [2.0], [3.0]]), 1)
    h = np.array([[0.1], [0.2], [0.3]])
    l, _ = attend_window(p, h, np.zeros(1), 2)
    np.testing.assert_allclose(l, SCALAR_WEIGHTS, rtol=1e-14)


def test_shared_slot_vector_scores_all_slots_alike(rng):
    p = AlignParams(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), rng.standard_normal(3), 1)
    h = np.tile(rng.standard_normal(2), (5, 1))
    l, _ = attend_window(p, h, rng.standard_normal(2), 3)
    np.testing.assert_allclose(l, np.full(3, 1 / 3), rtol=1e-14)


def test_slot_rows_must_match_window(rng):
    p = AlignParams(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((4, 3)), 2)
    with pytest.raises(ConfigError):
        p.check()


# ---------------------------------------------------------------- expectation


def test_one_hot_weights_select_window_vector(rng):
    h = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(expected_context(np.array([0.0, 1.0, 0.0]), h), h[1])


def test_identical_window_vectors_return_that_vector(rng):
    u = rng.standard_normal(3)
    np.testing.assert_allclose(expected_context(np.array([0.2, 0.5, 0.3]), np.tile(u, (3, 1))), u, rtol=1e-15)


def test_expected_context_hand_example():
    assert float(expected_context(np.array([0.2, 0.3, 0.5]), np.array([[1.0], [2.0], [4.0]]))[0]) == pytest.approx(
        2.8, abs=1e-15
    )


# ---------------------------------------------------------------- properties over random cases


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_alignment_weights_normalized_and_contexts_in_hull(seed):
    r = np.random.default_rng(seed)
    w = int(r.integers(0, 4))
    T, T_a = int(r.integers(1, 8)), int(r.integers(1, 20))
    d_a, d_v, k = (int(x) for x in r.integers(1, 4, 3))
    p = random_align(r, d_a, d_v, k, w, scale=float(r.uniform(0.1, 5)))
    h = r.normal(0, 2, (1, T_a, d_a))
    v = r.normal(0, 2, (1, T, d_v))
    centers = coarse_centers(T, T_a)[None]
    ctx, weights, idx, mask = align_sequences(p, h, v, centers, np.array([T_a]))
    assert np.all(np.abs(weights.sum(-1) - 1.0) <= 1e-12)
    assert np.all(weights >= 0)
    assert np.all(weights[~mask] == 0.0)
    pos = np.clip(idx[0], 1, T_a) - 1
    for t in range(T):
        win = h[0, pos[t][mask[0, t]]]
        assert np.all(ctx[0, t] >= win.min(axis=0) - 1e-12)
        assert np.all(ctx[0, t] <= win.max(axis=0) + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-30, 30))
def test_constant_score_shift_leaves_weights_unchanged(seed, c):
    r = np.random.default_rng(seed)
    s = r.normal(0, 5, 7)
    mask = r.random(7) < 0.7
    mask[r.integers(7)] = True
    assert np.max(np.abs(ad.softmax(s, mask=mask) - ad.softmax(s + c, mask=mask))) < 1e-12


def test_window_indices_are_centred(rng):
    idx, mask = window(np.array([1, 5]), 6, 2)
    assert idx.tolist() == [[-1, 0, 1, 2, 3], [3, 4, 5, 6, 7]]
    assert mask.tolist() == [[False, False, True, True, True], [True, True, True, True, False]]


def test_batched_alignment_matches_single_frame_route(rng):
    p = random_align(rng, 3, 2, 4, 2)
    h = rng.standard_normal((11, 3))
    v = rng.standard_normal((4, 2))
    centers = coarse_centers(4, 11)
    _, weights, _, _ = align_sequences(p, h[None], v[None], centers[None], np.array([11]))
    for t in range(4):
        l, _ = attend_window(p, h, v[t], int(centers[t]))
        np.testing.assert_allclose(weights[0, t], l, rtol=1e-13, atol=1e-16)


# ---------------------------------------------------------------- audio-visual encoding


def test_single_visual_step(rng):
    av = init_lstm(3, 2 + 4, 1)
    h_av, trace = encode_audio_visual(av, random_align(rng, 4, 2, 3, 2), rng.standard_normal((5, 4)), rng.standard_normal((1, 2)))
    assert h_av.shape == (1, 3)
    assert trace.weights.shape == (1, 5)


def test_zero_weights_give_uniform_alignment_and_zero_states(rng):
    av = LstmParams(np.zeros((12, 3 + 2 + 4)), np.zeros(12))
    p = AlignParams(np.zeros((2, 4)), np.zeros((2, 2)), np.zeros((3, 2)), 1)
    h_a = rng.standard_normal((9, 4))
    h_av, trace = encode_audio_visual(av, p, h_a, rng.standard_normal((4, 2)))
    assert np.array_equal(h_av, np.zeros((4, 3)))
    for t in range(4):
        valid = trace.mask[t]
        np.testing.assert_allclose(trace.weights[t][valid], 1.0 / valid.sum(), rtol=1e-15)


def test_input_width_mismatch_is_config_error(rng):
    av = init_lstm(3, 5, 1)
    with pytest.raises(ConfigError):
        encode_audio_visual(av, random_align(rng, 4, 2, 3, 1), rng.standard_normal((5, 4)), rng.standard_normal((3, 2)))


def test_trace_heatmap_shape_and_expected_index(rng):
    av = init_lstm(3, 2 + 4, 1)
    _, trace = encode_audio_visual(av, random_align(rng, 4, 2, 3, 2), rng.standard_normal((13, 4)), rng.standard_normal((6, 2)))
    assert trace.heatmap().shape == (5, 6)
    e = trace.expected_index()
    assert np.all(e >= 1) and np.all(e <= 13)


def test_gradient_through_alignment_into_both_lstms(rng):
    d_a, d_v, d = 3, 2, 3
    x_audio = rng.standard_normal((12, 2))
    v = rng.standard_normal((5, d_v))
    a0, av0 = init_lstm(d_a, 2, 1), init_lstm(d, d_v + d_a, 2)
    al = random_align(rng, d_a, d_v, 2, 2)
    target = rng.standard_normal((5, d))

    def f(P):
        h_a = encode_sequence(LstmParams(P["aW"], P["ab"]), x_audio)
        h_av, _ = encode_audio_visual(
            LstmParams(P["vW"], P["vb"]), AlignParams(P["Wa"], P["Wv"], P["Ws"], 2), h_a, v
        )
        return ad.sum_(ad.mul(h_av, target))

    params = {"aW": a0.W, "ab": a0.b, "vW": av0.W, "vb": av0.b, "Wa": al.W_a, "Wv": al.W_v, "Ws": al.W_slot}
    assert ad.grad_check(f, params) < 1e-4
