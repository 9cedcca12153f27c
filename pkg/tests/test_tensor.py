import numpy as np
import pytest

from impromptu import nn, optim
from impromptu.blob import BlobFormatError, dump_array, load_array
from impromptu.linalg import AsymmetryError, matrix_sqrt_psd
from impromptu.rng import RngStream
from impromptu.tensor import (
    ConfigError,
    ShapeError,
    Tensor,
    concat,
    cross_entropy,
    gumbel_softmax,
    layer_norm,
    matmul,
    mse,
    no_grad,
    softmax,
)

from conftest import check_grads, numeric_grad, rel_error


# ---- elementwise -----------------------------------------------------------


def test_add_values():
    assert np.allclose((Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_relu_values():
    assert np.allclose(Tensor([-1.0, 0.0, 2.0]).relu().data, [0.0, 0.0, 2.0])


def test_product_sum_gradient():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 5.0])
    (a * b).sum().backward()
    assert np.allclose(a.grad, [3.0, 5.0])
    num = numeric_grad(lambda: (a * b).sum(), a)
    assert rel_error(a.grad, num) < 1e-2


def test_broadcast_shape_error_names_shapes():
    with pytest.raises(ShapeError) as e:
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4, 5)))
    assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "relu", "gelu",
                                "exp", "log", "sigmoid", "tanh"])
def test_elementwise_gradcheck(op, rng_np):
    a = Tensor(rng_np.uniform(0.2, 1.5, size=(3, 4)), requires_grad=True)
    b = Tensor(rng_np.uniform(0.4, 1.5, size=(4,)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((3, 4)))
    import impromptu.tensor as T

    builders = {
        "add": lambda: (T.add(a, b) * w).sum(),
        "sub": lambda: (T.sub(a, b) * 0.7).sum(),
        "mul": lambda: T.mul(a, b).sum(),
        "div": lambda: T.div(a, b).sum(),
        "relu": lambda: T.relu(a - 0.8).sum(),
        "gelu": lambda: T.gelu(a * 2.0 - 1.5).sum(),
        "exp": lambda: T.exp(a).sum(),
        "log": lambda: T.log(a).sum(),
        "sigmoid": lambda: T.sigmoid(a * 3.0).sum(),
        "tanh": lambda: T.tanh(a).sum(),
    }
    params = [a, b] if op in ("add", "sub", "mul", "div") else [a]
    check_grads(builders[op], params)


def test_broadcast_grad_shapes(rng_np):
    a = Tensor(rng_np.standard_normal((2, 3, 4)), requires_grad=True)
    b = Tensor(rng_np.standard_normal((4,)), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.shape == (2, 3, 4)
    assert b.grad.shape == (4,)


# ---- matmul ----------------------------------------------------------------


def test_matmul_identity():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(matmul(Tensor(np.eye(2)), m).data, m.data)


def test_matmul_values():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert np.allclose(out.data, [[11.0]])


def test_matmul_inner_dim_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_matmul_gradcheck(rng_np):
    a = Tensor(rng_np.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng_np.standard_normal((4, 2)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((3, 2)))
    check_grads(lambda: (matmul(a, b) * w).sum(), [a, b], tol=1e-3)


def test_matmul_batched_gradcheck(rng_np):
    a = Tensor(rng_np.standard_normal((2, 3, 4)), requires_grad=True)
    b = Tensor(rng_np.standard_normal((4, 5)), requires_grad=True)
    check_grads(lambda: matmul(a, b).sum(), [a, b])


# ---- softmax / cross entropy ------------------------------------------------


def test_softmax_uniform():
    assert np.allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-6)


def test_softmax_stability():
    out = softmax(Tensor([1000.0, 0.0])).data
    assert np.isfinite(out).all()
    assert np.allclose(out, [1.0, 0.0])


def test_softmax_values():
    out = softmax(Tensor([1.0, 2.0, 3.0])).data
    assert np.allclose(out, [0.0900, 0.2447, 0.6652], atol=1e-4)
    assert abs(out.sum() - 1.0) < 1e-6


def test_softmax_nan_rejected():
    with pytest.raises(ValueError):
        softmax(Tensor([np.nan, 1.0]))


def test_softmax_gradcheck(rng_np):
    a = Tensor(rng_np.standard_normal((2, 5)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((2, 5)))
    check_grads(lambda: (softmax(a) * w).sum(), [a])


def test_cross_entropy_uniform_logits():
    loss = cross_entropy(Tensor(np.zeros((4, 512))), np.array([3, 99, 500, 0]))
    assert abs(loss.item() - np.log(512)) < 1e-3


def test_cross_entropy_confident_limit():
    logits = np.full((1, 8), -50.0, dtype=np.float32)
    logits[0, 2] = 50.0
    loss = cross_entropy(Tensor(logits), np.array([2]))
    assert loss.item() < 1e-5


def test_cross_entropy_gradient_closed_form(rng_np):
    raw = rng_np.standard_normal((3, 6)).astype(np.float32)
    logits = Tensor(raw, requires_grad=True)
    targets = np.array([1, 4, 0])
    cross_entropy(logits, targets).backward()
    p = np.exp(raw - raw.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    onehot = np.eye(6, dtype=np.float32)[targets]
    assert np.allclose(logits.grad, (p - onehot) / 3, atol=1e-5)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((1, 4))), np.array([4]))


# ---- layer norm -------------------------------------------------------------


def test_layer_norm_constant_row():
    x = Tensor(np.full((2, 5), 3.7))
    out = layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
    assert np.allclose(out.data, 0.0, atol=1e-3)


def test_layer_norm_two_points():
    out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_gradcheck(rng_np):
    x = Tensor(rng_np.standard_normal((3, 6)), requires_grad=True)
    g = Tensor(rng_np.uniform(0.5, 1.5, 6), requires_grad=True)
    b = Tensor(rng_np.standard_normal(6), requires_grad=True)
    w = Tensor(rng_np.standard_normal((3, 6)))
    check_grads(lambda: (layer_norm(x, g, b) * w).sum(), [x, g, b])


# ---- attention --------------------------------------------------------------


def _identity_mha(d):
    mha = nn.MultiHeadAttention(d, 1, RngStream(0))
    for lin in (mha.q_proj, mha.k_proj, mha.v_proj, mha.out_proj):
        lin.weight.data = np.eye(d, dtype=np.float32)
        lin.bias.data = np.zeros(d, dtype=np.float32)
    return mha


def test_attention_identical_keys_mean_values(rng_np):
    d = 4
    mha = _identity_mha(d)
    q = Tensor(rng_np.standard_normal((1, 3, d)))
    k = Tensor(np.tile(rng_np.standard_normal((1, 1, d)), (1, 5, 1)))
    v = Tensor(rng_np.standard_normal((1, 5, d)))
    out = mha(q, k, v)
    assert np.allclose(out.data, v.data.mean(axis=1, keepdims=True), atol=1e-5)


def test_attention_causal_first_position(rng_np):
    d = 4
    mha = _identity_mha(d)
    x = Tensor(rng_np.standard_normal((1, 4, d)))
    out = mha(x, x, x, mask=nn.causal_mask(4))
    assert np.allclose(out.data[0, 0], x.data[0, 0], atol=1e-5)


def test_attention_matches_hand_rolled(rng_np):
    d = 4
    mha = _identity_mha(d)
    q = rng_np.standard_normal((1, 2, d)).astype(np.float32)
    k = rng_np.standard_normal((1, 2, d)).astype(np.float32)
    v = rng_np.standard_normal((1, 2, d)).astype(np.float32)
    att = q[0] @ k[0].T / np.sqrt(d)
    att = np.exp(att - att.max(1, keepdims=True))
    att /= att.sum(1, keepdims=True)
    expected = att @ v[0]
    out = mha(Tensor(q), Tensor(k), Tensor(v))
    assert np.allclose(out.data[0], expected, atol=1e-5)


def test_attention_head_divisibility():
    with pytest.raises(ConfigError):
        nn.MultiHeadAttention(10, 3, RngStream(0))


def test_attention_gradcheck(rng_np):
    mha = nn.MultiHeadAttention(4, 2, RngStream(3))
    x = Tensor(rng_np.standard_normal((1, 3, 4)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((1, 3, 4)))
    check_grads(lambda: (mha(x, x, x) * w).sum(), [x])


# ---- conv -------------------------------------------------------------------


def test_conv_identity_kernel(rng_np):
    conv = nn.Conv2d(1, 1, RngStream(0))
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    conv.weight.data = w
    conv.bias.data = np.zeros(1, dtype=np.float32)
    x = Tensor(rng_np.standard_normal((1, 1, 5, 5)))
    assert np.allclose(conv(x).data, x.data, atol=1e-6)


def test_conv_stride2_stack_shape(rng_np):
    rng = RngStream(1)
    convs = [nn.Conv2d(3 if i == 0 else 8, 8, rng, stride=2) for i in range(4)]
    x = Tensor(rng_np.standard_normal((1, 3, 32, 32)))
    for c in convs:
        x = c(x)
    assert x.shape == (1, 8, 2, 2)


def test_conv_channel_mismatch():
    conv = nn.Conv2d(3, 4, RngStream(0))
    with pytest.raises(ShapeError):
        conv(Tensor(np.zeros((1, 2, 8, 8))))


def test_conv_gradcheck(rng_np):
    conv = nn.Conv2d(1, 2, RngStream(5), stride=1)
    x = Tensor(rng_np.standard_normal((1, 1, 4, 4)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((1, 2, 4, 4)))
    check_grads(lambda: (conv(x) * w).sum(), [x, conv.weight.tensor])


def test_conv_stride2_gradcheck(rng_np):
    conv = nn.Conv2d(2, 2, RngStream(6), stride=2)
    x = Tensor(rng_np.standard_normal((2, 2, 4, 4)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((2, 2, 2, 2)))
    check_grads(lambda: (conv(x) * w).sum(), [x, conv.weight.tensor])


def test_conv_transpose_doubles_extent(rng_np):
    ct = nn.ConvTranspose2d(3, 5, RngStream(2), stride=2)
    out = ct(Tensor(rng_np.standard_normal((1, 3, 8, 8))))
    assert out.shape == (1, 5, 16, 16)


def test_conv_transpose_is_conv_adjoint(rng_np):
    """<conv(x), y> == <x, convT(y)> when they share one weight."""
    rng = RngStream(9)
    conv = nn.Conv2d(2, 3, rng, stride=2)
    ct = nn.ConvTranspose2d(3, 2, RngStream(0), stride=2)
    ct.weight.data = conv.weight.data.transpose(0, 1, 2, 3)  # [3->OC? no] see below
    # conv weight [OC=3, C=2, k, k]; transpose stores [c_in=3, c_out=2, k, k]
    ct.weight.data = conv.weight.data
    ct.bias.data = np.zeros(2, dtype=np.float32)
    conv.bias.data = np.zeros(3, dtype=np.float32)
    x = rng_np.standard_normal((1, 2, 8, 8)).astype(np.float32)
    y = rng_np.standard_normal((1, 3, 4, 4)).astype(np.float32)
    lhs = float((conv(Tensor(x)).data * y).sum())
    rhs = float((ct(Tensor(y)).data * x).sum())
    assert abs(lhs - rhs) / max(abs(lhs), 1.0) < 1e-4


def test_conv_transpose_gradcheck(rng_np):
    ct = nn.ConvTranspose2d(2, 1, RngStream(7), stride=2)
    x = Tensor(rng_np.standard_normal((1, 2, 3, 3)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((1, 1, 6, 6)))
    check_grads(lambda: (ct(x) * w).sum(), [x, ct.weight.tensor])


# ---- gru --------------------------------------------------------------------


def test_gru_zero_weights_halves_state():
    cell = nn.GRUCell(3, RngStream(0))
    for p in cell.parameters():
        p.data = np.zeros_like(p.data)
    state = Tensor(np.array([[2.0, -4.0, 6.0]], dtype=np.float32))
    out = cell(state, Tensor(np.zeros((1, 3))))
    assert np.allclose(out.data, 0.5 * state.data, atol=1e-6)


def test_gru_saturated_update_gate_passes_state(rng_np):
    cell = nn.GRUCell(3, RngStream(4))
    cell.w_z.bias.data = np.full(3, 80.0, dtype=np.float32)  # force z -> 1
    state = Tensor(rng_np.standard_normal((2, 3)))
    out = cell(state, Tensor(rng_np.standard_normal((2, 3))))
    assert np.allclose(out.data, state.data, atol=1e-5)


def test_gru_shape_mismatch():
    cell = nn.GRUCell(3, RngStream(0))
    with pytest.raises(ShapeError):
        cell(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))))


def test_gru_gradcheck(rng_np):
    cell = nn.GRUCell(3, RngStream(8))
    s = Tensor(rng_np.standard_normal((2, 3)), requires_grad=True)
    x = Tensor(rng_np.standard_normal((2, 3)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((2, 3)))
    check_grads(lambda: (cell(s, x) * w).sum(), [s, x])


# ---- gumbel softmax ---------------------------------------------------------


def test_gumbel_low_tau_concentrates():
    logits = Tensor(np.array([10.0, 0.0, 0.0], dtype=np.float32))
    rng = RngStream(11)
    hits = 0
    for _ in range(1000):
        out = gumbel_softmax(logits, tau=0.1, rng=rng)
        if out.data[0] > 0.99:
            hits += 1
    assert hits >= 990


def test_gumbel_hard_is_one_hot(rng_np):
    logits = Tensor(rng_np.standard_normal((4, 6)))
    out = gumbel_softmax(logits, tau=0.5, rng=RngStream(3), hard=True)
    assert np.allclose(np.sort(out.data, axis=-1)[:, :-1], 0.0)
    assert np.allclose(out.data.max(axis=-1), 1.0)
    assert np.allclose(out.data.sum(axis=-1), 1.0)


def test_gumbel_zero_noise_is_tempered_softmax(rng_np):
    raw = rng_np.standard_normal((2, 5)).astype(np.float32)
    out = gumbel_softmax(Tensor(raw), tau=0.25, noise=np.zeros((2, 5), dtype=np.float32))
    expected = softmax(Tensor(raw / 0.25)).data
    assert np.allclose(out.data, expected, atol=1e-6)


def test_gumbel_rejects_bad_tau():
    with pytest.raises(ConfigError):
        gumbel_softmax(Tensor([1.0]), tau=0.0, rng=RngStream(0))


def test_gumbel_straight_through_gradient(rng_np):
    raw = rng_np.standard_normal((2, 4)).astype(np.float32)
    noise = np.zeros((2, 4), dtype=np.float32)
    logits_hard = Tensor(raw.copy(), requires_grad=True)
    w = rng_np.standard_normal((2, 4)).astype(np.float32)
    (gumbel_softmax(logits_hard, 0.7, noise=noise, hard=True) * Tensor(w)).sum().backward()
    logits_soft = Tensor(raw.copy(), requires_grad=True)
    (gumbel_softmax(logits_soft, 0.7, noise=noise, hard=False) * Tensor(w)).sum().backward()
    assert np.allclose(logits_hard.grad, logits_soft.grad, atol=1e-6)


# ---- optimizer --------------------------------------------------------------


def test_adam_zero_grad_is_identity():
    p = nn.Parameter(np.array([1.0, 2.0], dtype=np.float32), name="p")
    opt = optim.Adam([p], lr=0.1)
    p.tensor.grad = np.zeros(2, dtype=np.float32)
    before = p.data.copy()
    opt.step()
    assert np.allclose(p.data, before)


def test_adam_first_step_magnitude():
    p = nn.Parameter(np.array([0.0], dtype=np.float32), name="p")
    opt = optim.Adam([p], lr=0.01)
    p.tensor.grad = np.ones(1, dtype=np.float32)
    opt.step()
    assert np.allclose(p.data, [-0.01], atol=1e-6)


def test_adam_minimizes_quadratic():
    p = nn.Parameter(np.array([1.0], dtype=np.float32), name="x")
    opt = optim.Adam([p], lr=0.1)
    for _ in range(100):
        p.tensor.grad = 2.0 * p.data
        opt.step()
    assert abs(float(p.data[0])) < 0.05


def test_clip_grad_norm():
    p = nn.Parameter(np.zeros(2, dtype=np.float32), name="p")
    p.tensor.grad = np.array([3.0, 4.0], dtype=np.float32)
    norm = optim.clip_grad_norm([p], 1.0)
    assert abs(norm - 5.0) < 1e-6
    assert np.allclose(p.tensor.grad, [0.6, 0.8], atol=1e-6)
    # idempotent
    norm2 = optim.clip_grad_norm([p], 1.0)
    assert abs(norm2 - 1.0) < 1e-5
    assert np.allclose(p.tensor.grad, [0.6, 0.8], atol=1e-6)


def test_clip_under_norm_unchanged():
    p = nn.Parameter(np.zeros(2, dtype=np.float32), name="p")
    p.tensor.grad = np.array([0.3, 0.4], dtype=np.float32)
    norm = optim.clip_grad_norm([p], 1.0)
    assert abs(norm - 0.5) < 1e-6
    assert np.allclose(p.tensor.grad, [0.3, 0.4])


def test_lr_schedule():
    assert optim.lr_schedule(0, 100, 1e-3) == 0.0
    assert abs(optim.lr_schedule(50, 100, 1e-3) - 5e-4) < 1e-12
    assert optim.lr_schedule(15000, 15000, 1e-4) == 1e-4
    assert optim.lr_schedule(5, 0, 1e-4) == 1e-4


# ---- matrix sqrt ------------------------------------------------------------


def test_sqrt_psd_identity():
    assert np.allclose(matrix_sqrt_psd(np.eye(3)), np.eye(3), atol=1e-8)


def test_sqrt_psd_diagonal():
    assert np.allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-8)


def test_sqrt_psd_random_property(rng_np):
    for _ in range(50):
        a = rng_np.standard_normal((6, 6))
        m = a @ a.T
        r = matrix_sqrt_psd(m)
        err = np.linalg.norm(r @ r - m) / np.linalg.norm(m)
        assert err < 1e-4


def test_sqrt_psd_rejects_asymmetric():
    m = np.eye(3)
    m[0, 1] = 0.5
    with pytest.raises(AsymmetryError):
        matrix_sqrt_psd(m)


# ---- rng and blobs ----------------------------------------------------------


def test_rng_reproducible():
    a = RngStream(42).normal((5,))
    b = RngStream(42).normal((5,))
    assert np.array_equal(a, b)


def test_rng_counter_advances():
    r = RngStream(42)
    a = r.normal((5,))
    b = r.normal((5,))
    assert not np.array_equal(a, b)
    assert r.counter == 2


def test_rng_resume_from_state():
    r = RngStream(7)
    r.uniform((3,))
    resumed = RngStream.from_state(r.state())
    assert np.array_equal(r.uniform((4,)), resumed.uniform((4,)))


def test_rng_children_differ():
    r = RngStream(1)
    a, b = r.child(0), r.child(1)
    assert a.seed != b.seed
    assert not np.array_equal(a.normal((4,)), b.normal((4,)))


def test_blob_roundtrip_f32(rng_np):
    arr = rng_np.standard_normal((2, 3, 4)).astype(np.float32)
    out = load_array(dump_array(arr))
    assert out.dtype == np.float32
    assert np.array_equal(out, arr)


def test_blob_roundtrip_u8(rng_np):
    arr = rng_np.integers(0, 256, size=(3, 8, 8)).astype(np.uint8)
    out = load_array(dump_array(arr))
    assert out.dtype == np.uint8
    assert np.array_equal(out, arr)


def test_blob_truncation_detected(rng_np):
    buf = dump_array(rng_np.standard_normal((4, 4)).astype(np.float32))
    with pytest.raises(BlobFormatError):
        load_array(buf[:-3])


def test_blob_bad_magic():
    with pytest.raises(BlobFormatError):
        load_array(b"NOPE" + b"\x00" * 16)


def test_blob_bad_version(rng_np):
    buf = bytearray(dump_array(np.zeros(2, dtype=np.float32)))
    buf[4] = 9
    with pytest.raises(BlobFormatError):
        load_array(bytes(buf))


# ---- misc graph behavior ------------------------------------------------------


def test_u8_tensor_rejects_grad():
    with pytest.raises(ConfigError):
        Tensor(np.zeros(3), requires_grad=True, dtype="u8")


def test_no_grad_builds_no_graph():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        out = (a * 2.0).sum()
    assert not out.requires_grad
    assert out._backward is None


def test_embedding_gradcheck(rng_np):
    table = Tensor(rng_np.standard_normal((5, 3)), requires_grad=True)
    idx = np.array([0, 2, 2, 4])
    import impromptu.tensor as T
    w = Tensor(rng_np.standard_normal((4, 3)))
    check_grads(lambda: (T.embedding(table, idx) * w).sum(), [table])


def test_structural_ops_gradcheck(rng_np):
    a = Tensor(rng_np.standard_normal((2, 6)), requires_grad=True)
    b = Tensor(rng_np.standard_normal((2, 2)), requires_grad=True)
    w = Tensor(rng_np.standard_normal((4, 4)))

    def build():
        joined = concat([a[:, 1:3], b], axis=1)  # [2, 4]
        return (joined.reshape(4, 2).transpose(1, 0).reshape(2, 4) * w[:2]).sum()

    check_grads(build, [a, b])


def test_mse_loss(rng_np):
    a = Tensor(rng_np.standard_normal((3, 3)), requires_grad=True)
    b = Tensor(rng_np.standard_normal((3, 3)))
    check_grads(lambda: mse(a, b), [a])
