import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from tablefill import tensor as T
from tablefill.tensor import Tensor
from tablefill.verify import OP_TOL, op_checks

rng = np.random.default_rng(0)
floats = st.floats(-5, 5, allow_nan=False)


def test_tensor_shape_invariants():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    assert x.size == x.data.size == 6 and x.shape == (2, 3)
    T.total(T.hadamard(x, x)).backward()
    assert x.grad.shape == x.shape


def test_linear_identity():
    x = Tensor(np.eye(2))
    assert np.array_equal(T.linear(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, np.eye(2))


def test_linear_bias_gradient_is_ones():
    x, w, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2))), T.zeros((2,))
    T.total(T.linear(x, w, b)).backward()
    assert np.array_equal(b.grad, np.full(2, 3.0))


def test_linear_shape_error_names_shapes():
    with pytest.raises(T.ShapeError, match=r"\(3, 4\).*\(5, 2\)"):
        T.linear(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))))


def test_linear_matches_finite_differences():
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    err = T.finite_diff_check(lambda x, w, b: T.total(T.hadamard(y := T.linear(x, w, b), y)),
                              [Tensor(x), Tensor(w), Tensor(b)])
    assert err < 1e-6


def test_hadamard_identities():
    a = Tensor(rng.normal(size=(2, 3)))
    assert np.array_equal(T.hadamard(a, Tensor(np.ones((2, 3)))).data, a.data)
    assert np.array_equal(T.hadamard(a, Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))
    with pytest.raises(T.ShapeError):
        T.hadamard(a, Tensor(np.ones((3, 2))))


def test_no_silent_broadcasting():
    with pytest.raises(T.ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    with pytest.raises(T.ShapeError):
        T.add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_softmax_uniform():
    y = T.softmax_last(Tensor(np.zeros((2, 8))))
    assert np.allclose(y.data, 0.125)


@settings(max_examples=50)
@given(hnp.arrays(np.float64, (3, 8), elements=floats))
def test_softmax_rows_and_log_softmax(x):
    p = T.softmax_last(Tensor(x)).data
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12, rtol=0)
    assert np.allclose(T.log_softmax_last(Tensor(x)).data, np.log(p), atol=1e-10, rtol=0)


def test_softmax_all_masked_row_is_zero():
    mask = np.array([[True, False], [False, False]])
    y = T.softmax_last(Tensor(np.ones((2, 2))), mask)
    assert np.array_equal(y.data, [[1.0, 0.0], [0.0, 0.0]])


def test_layer_norm_moments():
    x = Tensor(rng.normal(3, 2, size=(4, 16)))
    y = T.layer_norm(x, T.ones((16,)), T.zeros((16,)))
    assert np.allclose(y.data.mean(axis=-1), 0, atol=1e-12)
    assert np.allclose(y.data.var(axis=-1), 1, atol=1e-3)


def test_max_over_axis_example():
    vals, arg = T.max_over_axis(Tensor([[1.0, 3.0], [2.0, 0.0]]), axis=1)
    assert np.array_equal(vals.data, [3, 2]) and np.array_equal(arg, [1, 0])


def test_max_over_axis_ties_route_to_lowest_index():
    x = Tensor([[2.0, 2.0, 1.0]], requires_grad=True)
    vals, arg = T.max_over_axis(x, 1)
    assert arg[0] == 0
    T.total(vals).backward()
    assert np.array_equal(x.grad, [[1.0, 0.0, 0.0]])


def test_max_over_axis_bad_axis():
    with pytest.raises(T.ShapeError):
        T.max_over_axis(Tensor(np.ones((2, 2))), axis=2)


def test_attention_single_key_ignores_query():
    params = T.init_attention(8, np.random.default_rng(1))
    kv = Tensor(rng.normal(size=(1, 1, 8)))
    q1, q2 = Tensor(rng.normal(size=(1, 3, 8))), Tensor(rng.normal(size=(1, 3, 8)))
    o1 = T.multi_head_attention(q1, kv, kv, params, heads=2).data
    o2 = T.multi_head_attention(q2, kv, kv, params, heads=2).data
    v_proj = (kv.data @ params["wv"].data + params["bv"].data) @ params["wo"].data + params["bo"].data
    assert np.allclose(o1, o2) and np.allclose(o1, np.repeat(v_proj, 3, axis=1))


def test_attention_fully_masked_rows_are_zero():
    params = T.init_attention(4, np.random.default_rng(1))
    for p in params.values():
        p.data += 0.1
    q = Tensor(rng.normal(size=(2, 3, 4)))
    kv = Tensor(rng.normal(size=(2, 2, 4)))
    mask = np.array([[True, True], [False, False]])
    out = T.multi_head_attention(q, kv, kv, params, heads=2, key_mask=mask).data
    assert np.all(out[1] == 0) and np.all(np.isfinite(out)) and np.any(out[0] != 0)


def test_attention_head_divisibility():
    params = T.init_attention(6, np.random.default_rng(1))
    with pytest.raises(ValueError, match="divisible"):
        T.multi_head_attention(Tensor(np.ones((1, 2, 6))), Tensor(np.ones((1, 2, 6))),
                               Tensor(np.ones((1, 2, 6))), params, heads=4)


def test_attention_unbatched_equals_batched():
    params = T.init_attention(8, np.random.default_rng(2))
    q, kv = rng.normal(size=(4, 8)), rng.normal(size=(3, 8))
    a = T.multi_head_attention(Tensor(q), Tensor(kv), Tensor(kv), params, 2).data
    b = T.multi_head_attention(Tensor(q[None]), Tensor(kv[None]), Tensor(kv[None]), params, 2).data[0]
    assert np.allclose(a, b)


def test_cross_entropy_uniform_and_saturated():
    gold = rng.integers(0, 8, size=(3, 3, 2))
    mask = np.ones((3, 3), dtype=bool)
    loss, count = T.cross_entropy_masked(Tensor(np.zeros((3, 3, 2, 8))), gold, mask)
    assert count == 18
    assert np.isclose(loss.item() / count, np.log(8)) and np.isclose(np.log(8), 2.0794, atol=1e-4)
    logits = np.zeros((3, 3, 2, 8))
    np.put_along_axis(logits, gold[..., None], 1e4, axis=-1)
    loss, count = T.cross_entropy_masked(Tensor(logits), gold, mask)
    assert loss.item() / count < 1e-12


def test_cross_entropy_gradient_identity():
    z = rng.normal(size=(3, 3, 2, 8))
    gold = rng.integers(0, 8, size=(3, 3, 2))
    mask = rng.random((3, 3)) < 0.6
    x = Tensor(z, requires_grad=True)
    T.cross_entropy_masked(x, gold, mask)[0].backward()
    p = np.exp(z) / np.exp(z).sum(-1, keepdims=True)
    expected = (p - np.eye(8)[gold]) * mask[:, :, None, None]
    assert np.allclose(x.grad, expected, atol=1e-12)
    assert T.finite_diff_check(lambda x: T.cross_entropy_masked(x, gold, mask)[0], Tensor(z)) < 1e-7


def test_cross_entropy_gold_range():
    with pytest.raises(ValueError):
        T.cross_entropy_masked(Tensor(np.zeros((1, 8))), np.array([8]), np.ones(1, bool))


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    state = T.AdamState()
    T.adam_step([p], [np.array([0.3, 0.3])], state, lr=0.1)
    before = p.copy()
    m0 = state.m[0].copy()
    T.adam_step([p], [np.zeros(2)], state, lr=0.0)
    assert np.array_equal(p, before)
    assert np.all(np.abs(state.m[0]) < np.abs(m0))


def test_adam_first_step_closed_form():
    g = np.array([0.5, -2.0, 1e-3])
    p = np.zeros(3)
    T.adam_step([p], [g], T.AdamState(), lr=0.01, eps=1e-8)
    assert np.allclose(p, -0.01 * g / (np.abs(g) + 1e-8))


def test_adam_converges_on_quadratic():
    x = Tensor([1.0, 1.0], requires_grad=True)
    opt = T.Adam([x], lr=0.05)
    for _ in range(200):
        opt.zero_grad()
        T.total(T.hadamard(x, x)).backward()
        opt.step()
    assert np.linalg.norm(x.data) < 1e-2


def test_finite_diff_check_examples():
    # linear f: the only error left is rounding, and none with dyadic inputs and step
    assert T.finite_diff_check(T.total, Tensor(rng.normal(size=(4,)))) < 1e-10
    assert T.finite_diff_check(T.total, Tensor([1.0, -2.0, 3.0, 0.5]), h=2.0 ** -16) == 0.0
    y = Tensor(np.array([0.5, -1.2, 2.0, -0.3]))
    assert T.finite_diff_check(lambda t: T.total(T.relu(t)), y) < 1e-7


def test_finite_diff_check_rejects_nonfinite():
    with pytest.raises(T.GradCheckError):
        T.finite_diff_check(lambda t: T.total(T.scale(t, np.inf)), Tensor([1.0]))


def test_shared_subexpression_accumulates():
    x = Tensor([3.0], requires_grad=True)
    T.total(T.add(x, x)).backward()
    assert x.grad[0] == 2.0
    x.zero_grad()
    y = T.hadamard(x, x)
    T.total(T.add(y, y)).backward()
    assert x.grad[0] == pytest.approx(12.0)


def test_tape_visits_each_node_once():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = T.hadamard(x, x)
    z = T.add(y, y)
    tape = T.Tape.from_root(T.total(z))
    ids = [n.id for n in tape.nodes]
    assert len(ids) == len(set(ids)) == 4
    pos = {n.id: i for i, n in enumerate(tape.nodes)}
    assert all(pos[p.id] < pos[n.id] for n in tape.nodes for p in n.parents)


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = T.hadamard(x, x)
    assert not y.requires_grad and y.parents == ()


@pytest.mark.parametrize("result", op_checks(seed=3), ids=lambda r: r.name)
def test_every_op_passes_gradcheck(result):
    assert result.error < OP_TOL


def test_lstm_padding_is_inert():
    x = rng.normal(size=(1, 5, 3))
    wx, wh, b = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=8))
    for reverse in (False, True):
        short = T.lstm(Tensor(x[:, :3]), np.ones((1, 3), bool), wx, wh, b, reverse).data
        padded = T.lstm(Tensor(x), np.array([[1, 1, 1, 0, 0]], bool), wx, wh, b, reverse).data
        assert np.allclose(short, padded[:, :3], atol=1e-14)
        assert np.all(padded[:, 3:] == 0)


def test_checkpoint_round_trip(tmp_path):
    params = {"a": Tensor(rng.normal(size=(2, 3))), "b": Tensor(rng.normal(size=4) / 3)}
    path = tmp_path / "ck.json"
    T.save_checkpoint(path, params, {"note": 1})
    loaded, meta = T.load_checkpoint(path)
    assert meta == {"note": 1}
    for k in params:
        assert np.array_equal(loaded[k], params[k].data)
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and doc["params"][0]["shape"] == [2, 3]


def test_checkpoint_rejects_bad_version(tmp_path):
    path = tmp_path / "ck.json"
    path.write_text(json.dumps({"format": "tablefill-checkpoint", "format_version": 99, "params": []}))
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(path)
