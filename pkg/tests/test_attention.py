import math

import numpy as np
import pytest

from renov.attention import AttentionBlockInput, aggregated_attention, attention_backward
from renov.errors import InputError, NumericalError

# ---------------------------------------------------------------------------
# naive scalar oracle, written first


def oracle_attention(q, ks, vs):
    """Loop-based reference: ks/vs are [target] + refs in list order."""
    k = np.concatenate(ks, axis=0)
    v = np.concatenate(vs, axis=0)
    t_t, d = q.shape
    out = np.zeros((t_t, v.shape[1]))
    for i in range(t_t):
        logits = [sum(q[i, a] * k[j, a] for a in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        mx = max(logits)
        exps = [math.exp(l - mx) for l in logits]
        z = sum(exps)
        for j in range(k.shape[0]):
            w = exps[j] / z
            for b in range(v.shape[1]):
                out[i, b] += w * v[j, b]
    return out


def make_input(rng, t_t=2, ref_sizes=(3, 3), d=4, d_v=5):
    q = rng.normal(size=(t_t, d))
    target = (rng.normal(size=(t_t, d)), rng.normal(size=(t_t, d_v)))
    refs = tuple((rng.normal(size=(n, d)), rng.normal(size=(n, d_v))) for n in ref_sizes)
    return AttentionBlockInput(q, target, refs)


def flatten_input(inp):
    arrays = [inp.q, *inp.target_kv]
    for k, v in inp.ref_kv:
        arrays += [k, v]
    return arrays


def rebuild_input(template, arrays):
    q, tk, tv = arrays[0], arrays[1], arrays[2]
    refs = []
    rest = arrays[3:]
    for i in range(len(template.ref_kv)):
        refs.append((rest[2 * i], rest[2 * i + 1]))
    return AttentionBlockInput(q, (tk, tv), tuple(refs))


# ---------------------------------------------------------------------------
# forward

def test_single_key_returns_its_value():
    q = np.array([[0.3, -1.2]])
    target = (np.array([[2.0, 0.5]]), np.array([[7.0, 8.0, 9.0]]))
    out = aggregated_attention(AttentionBlockInput(q, target))
    np.testing.assert_allclose(out, [[7.0, 8.0, 9.0]], atol=1e-12)


def test_two_identical_keys_average_values():
    q = np.array([[1.0, 1.0]])
    k = np.array([[0.5, -0.5]])
    v1 = np.array([[2.0, 0.0]])
    v2 = np.array([[4.0, 6.0]])
    inp = AttentionBlockInput(q, (k, v1), ((k, v2),))
    out = aggregated_attention(inp)
    np.testing.assert_allclose(out, [[3.0, 3.0]], atol=1e-12)


def test_forward_matches_naive_oracle():
    rng = np.random.default_rng(0)
    inp = make_input(rng)
    out = aggregated_attention(inp)
    ref = oracle_attention(inp.q, [inp.target_kv[0]] + [k for k, _ in inp.ref_kv],
                           [inp.target_kv[1]] + [v for _, v in inp.ref_kv])
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_weights_rows_sum_to_one():
    rng = np.random.default_rng(1)
    inp = make_input(rng, t_t=5, ref_sizes=(4, 2, 7), d=6, d_v=3)
    _, weights = aggregated_attention(inp, return_weights=True)
    assert weights.shape == (5, 5 + 4 + 2 + 7)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-6)


def test_reference_permutation_invariance():
    rng = np.random.default_rng(2)
    inp = make_input(rng, ref_sizes=(3, 4, 2))
    out = aggregated_attention(inp)
    perm = AttentionBlockInput(inp.q, inp.target_kv,
                               (inp.ref_kv[2], inp.ref_kv[0], inp.ref_kv[1]))
    np.testing.assert_allclose(aggregated_attention(perm), out, atol=1e-12)


def test_logit_shift_invariance():
    """Adding a constant to every logit row leaves the output unchanged."""
    rng = np.random.default_rng(3)
    d = 4
    q = rng.normal(size=(3, d))
    k = rng.normal(size=(6, d))
    v = rng.normal(size=(6, 2))
    base = aggregated_attention(AttentionBlockInput(q, (k[:3], v[:3]), ((k[3:], v[3:]),)))
    # shifting all logits by c equals adding c*sqrt(d)*q_unit... instead verify
    # via explicit softmax comparison on shifted logits
    logits = q @ k.T / np.sqrt(d)
    for c in (5.0, -17.0, 300.0):
        shifted = logits + c
        w = np.exp(shifted - shifted.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(w @ v, base, atol=1e-10)


def test_width_mismatch_rejected():
    rng = np.random.default_rng(4)
    with pytest.raises(InputError):
        AttentionBlockInput(rng.normal(size=(2, 4)),
                            (rng.normal(size=(2, 3)), rng.normal(size=(2, 5))))


def test_value_width_mismatch_rejected():
    rng = np.random.default_rng(4)
    with pytest.raises(InputError):
        AttentionBlockInput(rng.normal(size=(2, 4)),
                            (rng.normal(size=(2, 4)), rng.normal(size=(2, 5))),
                            ((rng.normal(size=(3, 4)), rng.normal(size=(3, 6))),))


def test_nonfinite_rejected():
    rng = np.random.default_rng(5)
    inp = make_input(rng)
    bad = AttentionBlockInput(inp.q * np.nan, inp.target_kv, inp.ref_kv)
    with pytest.raises(NumericalError):
        aggregated_attention(bad)


# ---------------------------------------------------------------------------
# backward

def _loss(inp, upstream):
    return float(np.sum(aggregated_attention(inp) * upstream))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    inp = make_input(rng, t_t=2, ref_sizes=(3,), d=4, d_v=3)
    upstream = rng.normal(size=(2, 3))
    grads = attention_backward(inp, upstream)
    flat_grads = [grads.q, *grads.target_kv]
    for k, v in grads.ref_kv:
        flat_grads += [k, v]
    arrays = flatten_input(inp)
    h = 1e-5
    for a_idx, arr in enumerate(arrays):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = _loss(rebuild_input(inp, arrays), upstream)
            arr[idx] = orig - h
            dn = _loss(rebuild_input(inp, arrays), upstream)
            arr[idx] = orig
            num[idx] = (up - dn) / (2 * h)
        denom = np.maximum(np.abs(num), np.abs(flat_grads[a_idx]))
        rel = np.abs(num - flat_grads[a_idx]) / np.where(denom > 1e-6, denom, 1.0)
        assert rel.max() <= 1e-4


def test_backward_zero_upstream():
    rng = np.random.default_rng(7)
    inp = make_input(rng)
    grads = attention_backward(inp, np.zeros((2, 5)))
    assert np.all(grads.q == 0)
    assert np.all(grads.target_kv[0] == 0)
    for k, v in grads.ref_kv:
        assert np.all(k == 0) and np.all(v == 0)


def test_backward_saturated_unused_value_row():
    """A value row whose softmax weight underflows gets ~machine-eps gradient."""
    d = 2
    q = np.array([[40.0, 0.0]])
    k_used = np.array([[40.0, 0.0]])
    k_dead = np.array([[-40.0, 0.0]])  # logit gap ~ 2*40*40/sqrt(2): fully saturated
    v = np.array([[1.0, 2.0]])
    inp = AttentionBlockInput(q, (k_used, v), ((k_dead, np.array([[5.0, 6.0]])),))
    grads = attention_backward(inp, np.ones((1, 2)))
    dead_v_grad = grads.ref_kv[0][1]
    assert np.max(np.abs(dead_v_grad)) <= 1e-12


def test_backward_shape_mismatch():
    rng = np.random.default_rng(8)
    inp = make_input(rng)
    with pytest.raises(InputError):
        attention_backward(inp, np.zeros((2, 4)))
