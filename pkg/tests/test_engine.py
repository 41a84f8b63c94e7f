import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsearch import engine as E
from dgsearch.errors import CorruptFile, EmptySegment, MissingGrad, NonScalarLoss, ShapeMismatch, VersionMismatch

from oracles import central_difference


def _rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


def _leaf(rng, *shape):
    return E.Tensor(rng.normal(size=shape), requires_grad=True)


def test_segment_softmax_examples():
    out = E.segment_softmax(E.Tensor(np.ones(3)), E.Segments([0, 0, 0]))
    assert np.allclose(out.data, 1 / 3)
    out = E.segment_softmax(E.Tensor(np.array([2.0, 3.0])), E.Segments([0, 0]))
    assert np.allclose(out.data, [1 / (1 + math.e), math.e / (1 + math.e)])
    assert round(out.data[0], 4) == 0.2689


def test_leaky_relu_values():
    assert np.allclose(E.leaky_relu(E.Tensor(np.array([-1.0, 3.0]))).data, [-0.2, 3.0])


def test_segments_validation():
    with pytest.raises(EmptySegment):
        E.Segments([0, 0, 2], 3)
    with pytest.raises(ValueError):
        E.Segments([1, 0])


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        E.matmul(E.Tensor(np.ones((2, 3))), E.Tensor(np.ones((2, 3))))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.integers(0, 2**32))
def test_softmax_sums_to_one(sizes, seed):
    rng = np.random.default_rng(seed)
    ids = np.repeat(np.arange(len(sizes)), sizes)
    x = rng.normal(scale=30, size=ids.size)
    segs = E.Segments(ids)
    p = E.segment_softmax(E.Tensor(x), segs).data
    assert np.all(np.abs(segs.reduce_sum(p) - 1) < 1e-12)
    lp = E.segment_log_softmax(E.Tensor(x), segs).data
    assert np.allclose(np.exp(lp), p)


def test_linear_gradient():
    rng = np.random.default_rng(0)
    W = _leaf(rng, 3, 2)
    x = rng.normal(size=(4, 3))
    E.backward(E.total(E.matmul(E.Tensor(x), W)))
    assert np.allclose(W.grad, np.outer(x.sum(0), np.ones(2)))


def test_disconnected_parameter_has_zero_grad():
    store = E.ParamStore()
    a = store.add("a", np.ones(2))
    store.add("b", np.ones(2))
    E.backward(E.total(E.mul(a, a)))
    g = store.grads()
    assert np.array_equal(g["b"], np.zeros(2)) and np.array_equal(g["a"], [2.0, 2.0])


def test_non_scalar_loss():
    with pytest.raises(NonScalarLoss):
        E.backward(E.Tensor(np.ones(2), requires_grad=True))


def test_trace_cleared():
    rng = np.random.default_rng(0)
    w = _leaf(rng, 3)
    mid = E.exp(w)
    loss = E.total(mid)
    E.backward(loss)
    assert mid._parents == () and mid.grad is None and w.grad is not None


def test_no_grad_records_nothing():
    w = E.Tensor(np.ones(2), requires_grad=True)
    with E.no_grad():
        y = E.exp(w)
    assert not y.requires_grad and y._parents == ()


def _composite(rng):
    """A composite touching every op used by the policy."""
    n, H, d = 5, 2, 3
    src = np.array([0, 1, 0, 2, 3, 4, 1, 2, 3, 4])
    tgt = np.array([0, 1, 1, 2, 2, 3, 3, 4, 4, 4])
    segs = E.Segments(tgt, n)
    x = _leaf(rng, n, 4)
    W = _leaf(rng, 4, H * d)
    a = _leaf(rng, H, d)
    b = _leaf(rng, H * d)
    nodes = E.Segments([0, 0, 0, 1, 1], 2)
    mv = E.Segments([0, 0, 1, 1, 1], 2)

    def f():
        z = E.add(E.matmul(x, W), b)
        s = E.headwise_dot(z, a)
        logits = E.leaky_relu(E.add(E.gather_rows(s, tgt), E.gather_rows(s, src)))
        alpha = E.segment_softmax(logits, segs)
        h1 = E.attend(z, alpha, src, segs)
        h2 = E.segment_weighted_sum(E.gather_rows(z, src), alpha, segs)
        g = E.mean_pool(E.concat([h1, h2], axis=1), nodes)
        h = E.concat([h1, E.gather_rows(g, nodes.ids)], axis=1)
        sc = E.reshape(E.matmul(h, E.Tensor(np.linspace(-1, 1, h.shape[1])[:, None])), (-1,))
        lp = E.segment_log_softmax(sc, mv)
        ent = E.neg(E.segment_sum(E.mul(E.exp(lp), lp), mv))
        const = E.log(E.add(E.exp(E.scale(b, 0.1)), 1.0))
        return E.add(E.add(E.total(E.mul(lp, np.arange(5.0))), E.total(ent)), E.sub(E.total(const), E.total(E.neg(a))))

    return f, [x, W, a, b]


def test_attend_matches_unfused():
    rng = np.random.default_rng(4)
    n, H, d = 6, 3, 2
    src = rng.integers(0, n, size=15)
    tgt = np.sort(np.concatenate([np.arange(n), rng.integers(0, n, size=9)]))
    segs = E.Segments(tgt, n)
    z = rng.normal(size=(n, H * d))
    alpha = rng.random(size=(len(src), H))
    fused = E.attend(E.Tensor(z), E.Tensor(alpha), src, segs).data
    ref = E.segment_weighted_sum(E.gather_rows(E.Tensor(z), src), E.Tensor(alpha), segs).data
    assert np.allclose(fused, ref, atol=1e-13)


def test_composite_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    f, leaves = _composite(rng)
    E.backward(f())
    analytic = [t.grad.copy() for t in leaves]
    with E.no_grad():
        for t, g in zip(leaves, analytic):
            fd = central_difference(lambda: f().item(), t.data)
            assert _rel_err(g, fd) < 1e-6


def test_adam_zero_gradient_keeps_params():
    store = E.ParamStore()
    w = store.add("w", np.array([1.0, -2.0]))
    w.grad = np.zeros(2)
    E.optimizer_step(store, 0.1)
    assert np.array_equal(w.data, [1.0, -2.0])


def test_adam_descends_square():
    store = E.ParamStore()
    w = store.add("w", np.array([1.0]))
    E.backward(E.total(E.mul(w, w)))
    E.optimizer_step(store, 1e-2)
    assert w.data[0] ** 2 < 1.0


@pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
def test_adam_first_step_magnitude(scale):
    # after bias correction m = g and sqrt(v) = |g|, so each coordinate moves by lr * g / (|g| + eps)
    store = E.ParamStore()
    w = store.add("w", np.zeros(3))
    g = np.array([scale, -scale, 2 * scale])
    w.grad = g.copy()
    E.optimizer_step(store, 1e-3)
    assert np.allclose(w.data, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-9)
    assert np.all(np.abs(np.abs(w.data) - 1e-3) < 1e-3 * 1e-2) or scale < 1e-4
    assert w.grad is None


def test_missing_grad():
    store = E.ParamStore()
    store.add("w", np.zeros(1))
    with pytest.raises(MissingGrad):
        E.optimizer_step(store, 0.1)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = [("a", rng.normal(size=(2, 3))), ("b", rng.normal(size=4))]
    path = tmp_path / "x.ckpt"
    E.write_checkpoint(path, {"k": 1}, tensors)
    header, back = E.read_checkpoint(path)
    assert header["config"] == {"k": 1}
    for (n1, a1), (n2, a2) in zip(tensors, back):
        assert n1 == n2 and np.array_equal(a1, a2)
    blob = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[:-3])
    with pytest.raises(CorruptFile):
        E.read_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"garbage" + blob)
    with pytest.raises(CorruptFile):
        E.read_checkpoint(tmp_path / "m.ckpt")
    (tmp_path / "v.ckpt").write_bytes(blob.replace(b'"format_version": 1', b'"format_version": 9'))
    with pytest.raises(VersionMismatch):
        E.read_checkpoint(tmp_path / "v.ckpt")


def test_determinism():
    f1, _ = _composite(np.random.default_rng(7))
    f2, _ = _composite(np.random.default_rng(7))
    assert f1().item() == f2().item()
