import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gfr import tensor as T
from gfr.errors import ContractError, DimensionError, EmptyLossError, NonFiniteError
from gfr.verify import gradcheck_cases

# erf-form GELU and its derivative, evaluated with mpmath at 30 digits
GELU_ORACLE = {
    -3.0: (-0.00404969409489028357995544430281, -0.0119456472041839270001552433208),
    -1.0: (-0.158655253931457051414767454368, -0.0833154705876862983830627385676),
    -0.5: (-0.154268769362993448181147694696, 0.132504875343837157474955168593),
    0.0: (0.0, 0.5),
    0.5: (0.345731230637006551818852305304, 0.867495124656162842525044831407),
    1.0: (0.841344746068542948585232545632, 1.08331547058768629838306273857),
    2.5: (2.48447583668555966208255473856, 1.03761108590814520823841770084),
}
# mean(log(1 + e^-1), log(1 + e^2)), mpmath
CE_HAND = 1.22009484928059766524636115066

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def leaf(a):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    out = T.matmul(T.Tensor(np.eye(2)), T.Tensor([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_row_by_column():
    assert T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_grad_of_sum_is_ones_times_bt(rng):
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    T.backward(T.sum_(a @ b))
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=0, atol=1e-14)
    num = T.numerical_grad(lambda: T.sum_(a @ b), a)
    assert T.rel_error(a.grad, num) < 1e-6


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


# ---------------------------------------------------------------------------
# masked cross-entropy


def test_ce_uniform_logits_is_log_v():
    logits = T.Tensor(np.zeros((5, 8)))
    loss = T.softmax_ce_masked(logits, [1, 2, 3, 4, 5], [True, True, False, True, False])
    assert loss.item() == pytest.approx(math.log(8), abs=1e-14)


def test_ce_saturated_correct_class():
    logits = np.zeros((1, 4))
    logits[0, 2] = 1e4
    assert T.softmax_ce_masked(T.Tensor(logits), [2], [True]).item() == pytest.approx(0.0, abs=1e-12)


def test_ce_hand_example():
    logits = T.Tensor([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    loss = T.softmax_ce_masked(logits, [0, 0, 1], [True, False, True])
    assert loss.item() == pytest.approx(CE_HAND, abs=1e-14)


def test_ce_all_false_mask_is_error():
    with pytest.raises(EmptyLossError):
        T.softmax_ce_masked(T.Tensor(np.zeros((2, 3))), [0, 1], [False, False])


def test_ce_sum_equals_mean_times_count(rng):
    logits = T.Tensor(rng.normal(size=(6, 5)))
    mask = [True, False, True, True, False, True]
    t = rng.integers(0, 5, size=6)
    mean = T.softmax_ce_masked(logits, t, mask).item()
    total = T.softmax_ce_masked(logits, t, mask, reduction="sum").item()
    assert total == pytest.approx(4 * mean, rel=1e-14)


@given(hnp.arrays(np.float64, (4, 6), elements=finite), st.lists(st.booleans(), min_size=4, max_size=4), st.integers(0, 3))
def test_ce_unmasked_row_perturbation_changes_nothing(logits, mask, row):
    mask[0] = True
    if mask[row]:
        row = next((i for i, m in enumerate(mask) if not m), None)
        if row is None:
            return
    targets = np.arange(4) % 6
    base = T.softmax_ce_masked(T.Tensor(logits), targets, mask).item()
    bumped = logits.copy()
    bumped[row] += np.linspace(-5, 5, 6)
    assert T.softmax_ce_masked(T.Tensor(bumped), targets, mask).item() == base
    lg = leaf(logits)
    T.backward(T.softmax_ce_masked(lg, targets, mask))
    assert not lg.grad[row].any()


def test_ce_target_out_of_range():
    with pytest.raises(DimensionError):
        T.softmax_ce_masked(T.Tensor(np.zeros((1, 3))), [3], [True])


# ---------------------------------------------------------------------------
# layernorm


def test_layernorm_constant_row_is_zero():
    out = T.layernorm(T.Tensor(np.full((1, 4), 7.0)), T.Tensor(np.ones(4)), T.Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 4)))


def test_layernorm_two_values_symmetric():
    out = T.layernorm(T.Tensor([[1.0, 3.0]]), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), eps=1e-15)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-12)


def test_layernorm_moments(rng):
    x = rng.normal(size=(2, 8)) * 3 + 1
    eps = 1e-5
    out = T.layernorm(T.Tensor(x), T.Tensor(np.ones(8)), T.Tensor(np.zeros(8)), eps).data
    assert np.abs(out.mean(axis=1)).max() < 1e-9
    want = x.var(axis=1) / (x.var(axis=1) + eps)
    assert np.abs(out.var(axis=1) - want).max() < 1e-6


def test_layernorm_empty_axis():
    with pytest.raises(DimensionError):
        T.layernorm(T.Tensor(np.zeros((2, 0))), T.Tensor(np.zeros(0)), T.Tensor(np.zeros(0)))


# ---------------------------------------------------------------------------
# backward


def test_backward_square():
    x = leaf([1.0, -2.0, 3.0])
    T.backward(T.sum_(x * x))
    assert x.grad.tolist() == [2.0, -4.0, 6.0]


def test_unused_leaf_gets_no_gradient():
    x, y = leaf([1.0, 2.0]), leaf([3.0])
    T.backward(T.sum_(x * x))
    assert y.grad is None or not y.grad.any()


def test_backward_non_scalar_root():
    x = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        T.backward(x * x)


def test_backward_root_off_tape():
    with pytest.raises(ContractError):
        T.backward(T.sum_(T.Tensor([1.0, 2.0])))


def test_tape_is_topological_and_visits_each_node_once(rng):
    a, b = leaf(rng.normal(size=(2, 2))), leaf(rng.normal(size=(2, 2)))
    h = a @ b
    loss = T.sum_(T.gelu(h + h) * a)
    tape = T.Tape(loss)
    ids = [n.id for n in tape.nodes]
    assert ids == sorted(ids)
    pos = {id(t): i for i, t in enumerate(tape.tensors)}
    for i, t in enumerate(tape.tensors):
        for inp in t.node.inputs:
            if id(inp) in pos:
                assert pos[id(inp)] < i
    assert T.backward(loss) == len(tape) == len(set(ids))


def test_shared_subexpression_accumulates():
    x = leaf([2.0])
    y = x * x
    T.backward(T.sum_(y + y))
    assert x.grad.tolist() == [8.0]


# ---------------------------------------------------------------------------
# gelu, attention, gather and friends


@pytest.mark.parametrize("x", sorted(GELU_ORACLE))
def test_gelu_matches_erf_oracle(x):
    t = leaf([x])
    out = T.gelu(t)
    T.backward(T.sum_(out))
    f, df = GELU_ORACLE[x]
    assert out.data[0] == pytest.approx(f, abs=1e-15)
    assert t.grad[0] == pytest.approx(df, abs=1e-15)


def _loop_attention(q, k, v, causal):
    L, d = q.shape
    out = np.zeros_like(v)
    for i in range(L):
        js = range(i + 1) if causal else range(L)
        s = np.array([q[i] @ k[j] / math.sqrt(d) for j in js])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[i] = sum(wj * v[j] for wj, j in zip(w, js))
    return out


@pytest.mark.parametrize("causal", [False, True])
def test_attention_matches_loop_reference(rng, causal):
    q, k, v = (rng.normal(size=(5, 3)) for _ in range(3))
    got = T.attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), causal=causal).data
    assert np.allclose(got, _loop_attention(q, k, v, causal), rtol=0, atol=1e-13)


def test_attention_shape_mismatch():
    with pytest.raises(DimensionError):
        T.attention(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((3, 3))), T.Tensor(np.ones((2, 3))))


def test_gather_rows_scatter_adds_repeats():
    table = leaf(np.arange(6.0).reshape(3, 2))
    out = T.gather_rows(table, [2, 0, 2, -1])
    assert out.data.tolist() == [[4, 5], [0, 1], [4, 5], [0, 0]]
    T.backward(T.sum_(out))
    assert table.grad.tolist() == [[1, 1], [0, 0], [2, 2]]


def test_gather_rows_out_of_range():
    with pytest.raises(DimensionError):
        T.gather_rows(T.Tensor(np.zeros((2, 2))), [2])


def test_concat_split_roundtrip(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    cat = T.concat([T.Tensor(a), T.Tensor(b)], axis=0)
    x, y = T.split(cat, [2, 4], axis=0)
    assert np.array_equal(x.data, a) and np.array_equal(y.data, b)
    with pytest.raises(DimensionError):
        T.split(cat, [2, 3], axis=0)


def test_sum_and_mean_axes(rng):
    x = rng.normal(size=(3, 4))
    assert np.allclose(T.sum_(T.Tensor(x), axis=0).data, x.sum(axis=0))
    assert np.allclose(T.mean(T.Tensor(x), axis=1, keepdims=True).data, x.mean(axis=1, keepdims=True))


def test_broadcast_gradient_is_reduced():
    a, b = leaf(np.ones((3, 4))), leaf(np.ones(4))
    T.backward(T.sum_(a + b))
    assert b.grad.tolist() == [3.0] * 4


# ---------------------------------------------------------------------------
# gradient-check property and invariants


@pytest.mark.parametrize("name", sorted(T.OPS))
def test_every_registered_op_passes_gradcheck(name):
    cases = gradcheck_cases()
    assert set(cases) == set(T.OPS)
    fn, inputs = cases[name]
    assert T.gradcheck(fn, inputs) < 1e-4


# inputs stay O(1) so central-difference roundoff (~ulp(f) / eps) sits below
# the 1e-6 absolute floor of rel_error where a true gradient vanishes
unit = st.floats(-1, 1, allow_nan=False, allow_infinity=False)


@given(
    hnp.arrays(np.float64, (3, 4), elements=unit),
    hnp.arrays(np.float64, (4, 2), elements=unit),
    hnp.arrays(np.float64, (2,), elements=unit),
)
def test_gradcheck_property_on_composed_graph(a, b, c):
    ta, tb, tc = leaf(a), leaf(b), leaf(c)

    def fn():
        h = T.gelu(ta @ tb + tc)
        # large eps keeps the normalization well conditioned for arbitrary draws
        n = T.layernorm(h, T.as_tensor(np.ones(2)), T.as_tensor(np.zeros(2)), eps=1.0)
        return T.mean(n * h) + T.sum_(T.transpose(h).reshape(6) * T.as_tensor(np.arange(6.0) / 6))

    assert T.gradcheck(fn, [ta, tb, tc]) < 1e-4


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)), elements=finite))
def test_reshape_transpose_preserve_multiset(x):
    t = T.Tensor(x)
    assert np.array_equal(np.sort(T.transpose(t, (2, 0, 1)).data, axis=None), np.sort(x, axis=None))
    assert np.array_equal(np.sort(t.reshape(-1).data), np.sort(x, axis=None))


def test_determinism_bitwise(rng):
    x = rng.normal(size=(4, 6))

    def run():
        a = leaf(x)
        loss = T.mean(T.attention(a.reshape(1, 4, 6), a.reshape(1, 4, 6), a.reshape(1, 4, 6), causal=True))
        T.backward(loss)
        return loss.data.tobytes(), a.grad.tobytes()

    assert run() == run()


def test_non_finite_forward_is_an_error():
    with pytest.raises(NonFiniteError):
        T.Tensor([1e308]) * T.Tensor([1e308])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = x * x
    assert y.node is None and not y.requires_grad


def test_float32_mode():
    with T.precision(np.float32):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        loss = T.sum_(T.gelu(x))
        T.backward(loss)
        assert x.data.dtype == np.float32 and x.grad.dtype == np.float32
    assert T.get_default_dtype() is np.float64


def test_rel_error_floor():
    assert T.rel_error([0.0], [1e-9]) == pytest.approx(1e-3)
    assert T.rel_error([2.0], [2.0]) == 0.0
