import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accent_tts.errors import ConfigError, ShapeError
from accent_tts.nn import (
    Adam,
    ParamStore,
    Tensor,
    bigru,
    concat,
    conv1d,
    dropout,
    embedding,
    grad_check,
    gru,
    layer_norm,
    linear,
    mse_loss,
    noam_lr,
    relu,
    self_attention,
    sigmoid,
    sinusoid_positions,
    softmax,
    tanh,
)
from accent_tts.nn.tensor import exp, log, take_rows

TOL = 1e-4
SHAPES = range(20)


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def project(out, seed=99):
    """Scalar probe ``sum(out * R)`` with a fixed random R."""
    R = np.random.default_rng(seed).normal(size=out.shape)
    return (out * R).sum()


def dims(seed, *ranges):
    r = np.random.default_rng(seed)
    return r, [int(r.integers(lo, hi + 1)) for lo, hi in ranges]


# ---------------------------------------------------------------- forward examples

def test_linear_examples():
    out = linear(T([[1.0, 2.0]]), T(np.eye(2)), T([3.0, 3.0]))
    np.testing.assert_array_equal(out.data, [[4.0, 5.0]])
    x = T(np.random.default_rng(0).normal(size=(3, 4)))
    np.testing.assert_array_equal(linear(x, T(np.eye(4)), T(np.zeros(4))).data, x.data)
    with pytest.raises(ShapeError):
        linear(T(np.ones((2, 3))), T(np.ones((4, 2))))


def test_embedding_examples():
    table = T(np.arange(12.0).reshape(4, 3))
    table.requires_grad = True
    out = embedding(table, [0, 0])
    np.testing.assert_array_equal(out.data, [[0, 1, 2], [0, 1, 2]])
    embedding(table, [0, 2, 2, 3]).sum().backward()
    np.testing.assert_array_equal(table.grad, np.array([[1] * 3, [0] * 3, [2] * 3, [1] * 3]))
    with pytest.raises(IndexError):
        embedding(table, [4])
    with pytest.raises(IndexError):
        embedding(table, [-1])


def test_conv_identity_kernels(rng):
    x = T(rng.normal(size=(7, 3)))
    k1 = np.eye(3)[None]
    np.testing.assert_array_equal(conv1d(x, T(k1)).data, x.data)
    k3 = np.zeros((3, 3, 3))
    k3[1] = np.eye(3)
    np.testing.assert_allclose(conv1d(x, T(k3), T(np.zeros(3))).data, x.data)
    with pytest.raises(ConfigError):
        conv1d(x, T(np.zeros((2, 3, 3))))
    with pytest.raises(ShapeError):
        conv1d(x, T(np.zeros((3, 4, 3))))


def test_conv_direct_sum(rng):
    x = rng.normal(size=(6, 2))
    K = rng.normal(size=(5, 2, 3))
    b = rng.normal(size=3)
    out = conv1d(T(x), T(K), T(b)).data
    for t in range(6):
        for c in range(3):
            ref = b[c]
            for j in range(5):
                s = t + j - 2
                if 0 <= s < 6:
                    ref += x[s] @ K[j, :, c]
            assert out[t, c] == pytest.approx(ref, abs=1e-12)


def test_attention_identical_positions(rng):
    d = 8
    row = rng.normal(size=d)
    x = T(np.tile(row, (5, 1)))
    W = [T(rng.normal(size=(d, d))) for _ in range(4)]
    out = self_attention(x, 2, *W).data
    np.testing.assert_allclose(out, np.tile(out[0], (5, 1)), atol=1e-12)


def test_attention_uniform_when_queries_vanish(rng):
    d = 6
    x = T(rng.normal(size=(4, d)))
    Wv, Wo = rng.normal(size=(d, d)), rng.normal(size=(d, d))
    out = self_attention(x, 3, T(np.zeros((d, d))), T(np.zeros((d, d))), T(Wv), T(Wo)).data
    expect = (x.data @ Wv).mean(axis=0) @ Wo
    np.testing.assert_allclose(out, np.tile(expect, (4, 1)), atol=1e-12)
    with pytest.raises(ConfigError):
        self_attention(x, 4, *(T(np.eye(d)) for _ in range(4)))


def test_softmax_rows_sum_to_one(rng):
    s = softmax(T(rng.normal(size=(5, 7)) * 30), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_gru_zero_weights_fixed_point(rng):
    H, din = 4, 3
    x = T(rng.normal(size=(6, din)))
    out = gru(x, np.zeros(H), T(np.zeros((din, 3 * H))), T(np.zeros((H, 3 * H))),
              T(np.zeros(3 * H)), T(np.zeros(3 * H)))
    assert np.all(out.data == 0)


def test_gru_single_step_matches_cell(rng):
    H, din = 3, 5
    x = rng.normal(size=(1, din))
    h0 = rng.normal(size=H)
    W, U = rng.normal(size=(din, 3 * H)), rng.normal(size=(H, 3 * H))
    bi, bh = rng.normal(size=3 * H), rng.normal(size=3 * H)
    out = gru(T(x), T(h0), T(W), T(U), T(bi), T(bh)).data[0]

    def sig(v):
        return 1 / (1 + np.exp(-v))

    gi = x[0] @ W + bi
    gh = h0 @ U + bh
    r = sig(gi[:H] + gh[:H])
    z = sig(gi[H:2 * H] + gh[H:2 * H])
    n = np.tanh(gi[2 * H:] + r * gh[2 * H:])
    np.testing.assert_allclose(out, (1 - z) * n + z * h0, atol=1e-12)


def test_gru_shape_error(rng):
    with pytest.raises(ShapeError):
        gru(T(np.ones((3, 2))), np.zeros(4), T(np.zeros((3, 12))), T(np.zeros((4, 12))),
            T(np.zeros(12)), T(np.zeros(12)))


def test_bigru_concatenates_directions(rng):
    H, din, n = 3, 2, 5
    x = T(rng.normal(size=(n, din)))
    fwd = tuple(T(rng.normal(size=s)) for s in ((din, 3 * H), (H, 3 * H), (3 * H,), (3 * H,)))
    bwd = tuple(T(rng.normal(size=s)) for s in ((din, 3 * H), (H, 3 * H), (3 * H,), (3 * H,)))
    out, hf, hb = bigru(x, np.zeros(H), fwd, bwd)
    f_only = gru(x, np.zeros(H), *fwd).data
    b_only = gru(T(x.data[::-1]), np.zeros(H), *bwd).data[::-1]
    np.testing.assert_allclose(out.data, np.concatenate([f_only, b_only], axis=1), atol=1e-12)
    np.testing.assert_allclose(hf.data, f_only[-1])
    np.testing.assert_allclose(hb.data, b_only[0])


def test_layer_norm_examples(rng):
    out = layer_norm(T(np.full((3, 5), 2.5)), T(np.ones(5)), T(np.zeros(5))).data
    assert np.all(out == 0)
    g1 = layer_norm(T(rng.normal(size=(4, 6))), T(np.ones(6)), T(np.full(6, 0.7))).data
    np.testing.assert_allclose(g1.mean(axis=-1), 0.7, atol=1e-12)
    np.testing.assert_allclose(g1.var(axis=-1), 1.0, atol=1e-3)


def test_mse_examples():
    a = T([1.0, 2.0])
    assert mse_loss(a, a).item() == 0.0
    assert mse_loss(T([0.0, 0.0]), T([3.0, 4.0])).item() == 12.5
    with pytest.raises(ShapeError):
        mse_loss(T([1.0]), T([1.0, 2.0]))


def test_mse_gradient_formula(rng):
    a, b = T(rng.normal(size=7)), rng.normal(size=7)
    a.requires_grad = True
    mse_loss(a, T(b)).backward()
    np.testing.assert_allclose(a.grad, 2 * (a.data - b) / 7, atol=1e-15)


def test_positions_row_zero():
    pe = sinusoid_positions(4, 10).data
    np.testing.assert_array_equal(pe[0], [0, 1] * 5)
    assert len({tuple(r) for r in pe}) == 4


# ---------------------------------------------------------------- gradient checks

def test_grad_check_trivial_functions(rng):
    assert grad_check(lambda x: x.sum(), T(rng.normal(size=(3, 4)))) < 1e-10
    assert grad_check(lambda x: (x * x).sum() * 0.5, T(rng.normal(size=6))) < 1e-8


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_linear(seed):
    r, (n, din, dout) = dims(seed, (1, 5), (1, 6), (1, 6))
    xs = [T(r.normal(size=(n, din))), T(r.normal(size=(din, dout))), T(r.normal(size=dout))]
    assert grad_check(lambda v: project(linear(*v)), xs) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_embedding(seed):
    r, (rows, dim, n) = dims(seed, (1, 6), (1, 5), (1, 8))
    idx = r.integers(0, rows, size=n)
    assert grad_check(lambda t: project(embedding(t, idx)), T(r.normal(size=(rows, dim)))) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_conv1d(seed):
    r, (n, cin, cout, half) = dims(seed, (1, 7), (1, 4), (1, 4), (0, 2))
    xs = [T(r.normal(size=(n, cin))), T(r.normal(size=(2 * half + 1, cin, cout))), T(r.normal(size=cout))]
    assert grad_check(lambda v: project(conv1d(*v)), xs) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_self_attention(seed):
    r, (n, heads, dk) = dims(seed, (1, 5), (1, 3), (1, 3))
    d = heads * dk
    xs = [T(r.normal(size=(n, d)))] + [T(r.normal(size=(d, d)) * 0.7) for _ in range(4)]
    assert grad_check(lambda v: project(self_attention(v[0], heads, *v[1:])), xs) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_gru(seed):
    r, (n, din, H) = dims(seed, (1, 6), (1, 4), (1, 4))
    xs = [T(r.normal(size=(n, din))), T(r.normal(size=H)), T(r.normal(size=(din, 3 * H))),
          T(r.normal(size=(H, 3 * H))), T(r.normal(size=3 * H)), T(r.normal(size=3 * H))]
    assert grad_check(lambda v: project(gru(*v)), xs) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_bigru_final_states(seed):
    r, (n, din, H) = dims(seed, (1, 5), (1, 3), (1, 3))
    shapes = ((din, 3 * H), (H, 3 * H), (3 * H,), (3 * H,))
    xs = [T(r.normal(size=(n, din)))] + [T(r.normal(size=s)) for s in shapes + shapes]

    def fn(v):
        out, hf, hb = bigru(v[0], np.zeros(H), tuple(v[1:5]), tuple(v[5:9]))
        return project(out) + project(concat([hf, hb]), seed=5)

    assert grad_check(fn, xs) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_layer_norm(seed):
    r, (n, d) = dims(seed, (1, 5), (2, 7))
    xs = [T(r.normal(size=(n, d))), T(r.normal(size=d)), T(r.normal(size=d))]
    assert grad_check(lambda v: project(layer_norm(*v)), xs) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_mse(seed):
    r, (n,) = dims(seed, (1, 9))
    xs = [T(r.normal(size=n)), T(r.normal(size=n))]
    assert grad_check(lambda v: mse_loss(*v), xs) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_dropout_fixed_mask(seed):
    r, (n, d) = dims(seed, (1, 5), (1, 5))
    assert grad_check(lambda x: project(dropout(x, 0.5, np.random.default_rng(seed))),
                      T(r.normal(size=(n, d)))) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_grad_elementwise_and_structural(seed):
    r, (n, d) = dims(seed, (1, 5), (1, 5))
    idx = r.integers(0, n, size=3)

    def fn(v):
        a, b = v
        h = tanh(a) * sigmoid(b) + relu(a - b) / (1.5 + b * b) - (a ** 2) * 0.1
        c = concat([softmax(h, axis=-1), exp(h * 0.5), log(b * b + 1.0)], axis=-1)
        return project(c) + project(take_rows(h, idx), seed=3) + (h @ h.T).mean()

    xs = [T(r.normal(size=(n, d))), T(r.normal(size=(n, d)))]
    assert grad_check(fn, xs) < TOL


# ---------------------------------------------------------------- dropout and determinism

def test_dropout_eval_identity(rng):
    x = T(rng.normal(size=(4, 4)))
    assert dropout(x, 0.5, None) is x


def test_dropout_reproducible_and_unbiased():
    x = T(np.ones((200, 200)))
    a = dropout(x, 0.5, np.random.default_rng(11)).data
    b = dropout(x, 0.5, np.random.default_rng(11)).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
    assert a.mean() == pytest.approx(1.0, abs=0.02)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_forward_bit_identical(seed):
    r = np.random.default_rng(seed)
    x, W = r.normal(size=(4, 6)), [r.normal(size=(6, 6)) for _ in range(4)]

    def run():
        h = self_attention(T(x), 2, *(T(w) for w in W))
        return dropout(h, 0.5, np.random.default_rng(seed)).data

    np.testing.assert_array_equal(run(), run())


# ---------------------------------------------------------------- parameters and optimizer

def test_param_store_names_unique(rng):
    ps = ParamStore()
    ps.scope("enc").weight("W", (3, 4), rng)
    with pytest.raises(ValueError):
        ps.scope("enc").weight("W", (3, 4), rng)
    w = ps["enc.W"].data
    assert np.all(np.abs(w) <= 1 / np.sqrt(3))


def test_noam_schedule_peak():
    d, warm = 64, 100
    lrs = [noam_lr(s, d, warm) for s in range(1, 400)]
    assert int(np.argmax(lrs)) + 1 == warm
    assert lrs[warm - 1] == pytest.approx(d**-0.5 * warm**-0.5)


def test_adam_descends_quadratic(rng):
    ps = ParamStore()
    ps.add("w", rng.normal(size=5))
    opt = Adam(ps, d_model=4, warmup=10, lr_scale=2.0)
    target = np.arange(5.0)
    first = None
    for _ in range(300):
        ps.zero_grad()
        loss = mse_loss(ps["w"], T(target))
        loss.backward()
        first = first if first is not None else loss.item()
        opt.step()
    assert mse_loss(ps["w"], T(target)).item() < 0.01 * first
