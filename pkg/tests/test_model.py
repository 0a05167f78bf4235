import numpy as np
import pytest

from rafm.model import MLP, Adam, param_count, sigmoid, swish
from rafm.numerics import Prng


def closed_form_count(d):
    return (d + 1) * 128 + 128 + 128 * 128 + 128 + 128 * 128 + 128 + 128 * d + d


@pytest.mark.parametrize("d", [1, 2, 4, 16, 32, 64, 256])
def test_param_count_closed_form(d):
    assert param_count(d) == closed_form_count(d)
    assert MLP(d, Prng(0)).n_params == closed_form_count(d)


@pytest.mark.xfail(strict=True, reason=(
    "published approximate counts grow by 128 per dimension, but the stated layer "
    "shapes add 257 per dimension (see decisions ledger)"))
@pytest.mark.parametrize("d,expected", [(2, 33_920), (16, 35_712), (256, 66_304)])
def test_param_count_published_table(d, expected):
    assert MLP(d, Prng(0)).n_params == expected


def test_architecture_shapes():
    m = MLP(4, Prng(0))
    assert [p.shape for p in m.params] == [(5, 128), (128,), (128, 128), (128,),
                                           (128, 128), (128,), (128, 4), (4,)]


def test_init_ranges():
    m = MLP(16, Prng(1), dtype=np.float64)
    for (fan_in, _), w, b in zip(m.shapes, m.params[0::2], m.params[1::2]):
        k = 1 / np.sqrt(fan_in)
        assert np.abs(w).max() <= k and np.abs(b).max() <= k
        # uniform on [-k, k]: variance k^2 / 3
        assert np.var(w) == pytest.approx(k * k / 3, rel=0.1)


def test_init_deterministic():
    assert np.array_equal(MLP(3, Prng(5)).flat, MLP(3, Prng(5)).flat)
    assert np.any(MLP(3, Prng(5)).flat != MLP(3, Prng(6)).flat)


def test_sigmoid_and_swish():
    x = np.linspace(-30, 30, 101)
    assert np.allclose(sigmoid(x), 1 / (1 + np.exp(-x)), rtol=1e-14, atol=1e-16)
    assert swish(0.0) == 0.0


def test_call_matches_forward():
    m = MLP(3, Prng(2), dtype=np.float64)
    x = Prng(3).normal((7, 3))
    t = Prng(4).uniform(7)
    out, _ = m.forward(t, x)
    assert np.allclose(m(t, x), out, rtol=1e-13, atol=1e-13)


def test_time_input_broadcast_and_shape_errors():
    m = MLP(2, Prng(0), dtype=np.float64)
    x = Prng(1).normal((5, 2))
    assert np.array_equal(m(0.3, x), m(np.full(5, 0.3), x))
    with pytest.raises(ValueError):
        m(0.3, np.zeros((5, 3)))
    with pytest.raises(ValueError):
        m(0.3, np.full((5, 2), np.nan))


def manual_forward(params, t, x):
    # independent oracle: plain loops over layers with explicit logistic function
    h = np.concatenate([x, t[:, None]], axis=1)
    n = len(params) // 2
    for i in range(n):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < n - 1:
            h = h / (1 + np.exp(-h))
    return h


def test_forward_matches_reference():
    m = MLP(4, Prng(7), dtype=np.float64)
    x, t = Prng(8).normal((6, 4)), Prng(9).uniform(6)
    assert np.allclose(m(t, x), manual_forward(m.params, t, x), rtol=1e-12, atol=1e-14)


def finite_difference_grads(m, t, x, upstream, h=1e-6):
    grads = []
    for p in m.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = np.sum(upstream * manual_forward(m.params, t, x))
            p[idx] = old - h
            fm = np.sum(upstream * manual_forward(m.params, t, x))
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def test_backward_matches_finite_differences():
    # small width keeps the full finite-difference sweep cheap
    m = MLP(4, Prng(10), width=8, dtype=np.float64)
    x, t = Prng(11).normal((8, 4)), Prng(12).uniform(8)
    upstream = Prng(13).normal((8, 4))
    _, cache = m.forward(t, x)
    got = m.backward(cache, upstream)
    ref = finite_difference_grads(m, t, x, upstream)
    for g, r in zip(got, ref):
        assert np.max(np.abs(g - r)) <= 1e-4 * max(1.0, np.max(np.abs(r)))


def test_copy_and_astype_are_independent():
    m = MLP(2, Prng(0))
    c = m.copy()
    c.params[0][0, 0] += 1.0
    assert c.flat[0] == c.params[0][0, 0]
    assert m.params[0][0, 0] != c.params[0][0, 0]
    d = m.astype(np.float64)
    assert d.flat.dtype == np.float64 and d.params[0].dtype == np.float64


def test_save_load_roundtrip(tmp_path):
    m = MLP(3, Prng(1))
    m.save(tmp_path / "c.pt", step=42)
    back, step = MLP.load(tmp_path / "c.pt")
    assert step == 42
    assert np.array_equal(back.flat, m.flat)
    x = Prng(2).normal((4, 3))
    assert np.array_equal(back(0.5, x), m(0.5, x))


def reference_adam(p, grads_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    # textbook form with explicit bias-corrected moments
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for k, g in enumerate(grads_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**k)
        vhat = v / (1 - b2**k)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


def test_adam_matches_reference():
    rng = Prng(3)
    p0 = rng.normal(20)
    grads = [rng.normal(20) for _ in range(50)]
    p = p0.copy()
    opt = Adam([p], lr=1e-2)
    for g in grads:
        opt.step([p], [g])
    # our update folds the bias corrections into the step size, hence eps placement differs slightly
    assert np.allclose(p, reference_adam(p0, grads, lr=1e-2), rtol=0, atol=1e-8)


def test_adam_first_step_is_lr_sign():
    p = np.array([1.0, -2.0, 3.0])
    Adam([p], lr=0.1).step([p], [np.array([5.0, -0.2, 1e-3])])
    assert np.allclose(p, [0.9, -1.9, 2.9], atol=1e-6)


def test_adam_shape_checks():
    p = np.zeros(3)
    opt = Adam([p])
    with pytest.raises(ValueError):
        opt.step([p], [np.zeros(4)])
    with pytest.raises(ValueError):
        opt.step([p, p], [p, p])


def test_adam_keeps_float32():
    m = MLP(2, Prng(0))
    opt = Adam([m.flat])
    opt.step([m.flat], [np.ones_like(m.flat)])
    assert m.flat.dtype == np.float32
