import numpy as np
import pytest

from drt.tensor import ShapeError, Tensor, grad_check
from drt.model import (
    ModelConfig,
    count_macs,
    count_params,
    deep_features,
    forward,
    init_params,
    patch_embed,
    reconstruct,
)
from drt.train import mse_loss

from oracles import conv2d_np

TOY = ModelConfig(rtb_count=1, recursions=2, stbs_per_block=1,
                  embed_dim=8, heads=2, window_size=2)


def rand_image(rng, shape, dtype=np.float32):
    return Tensor(rng.random(shape).astype(dtype))


# ----------------------------------------------------------------------
# config validation
# ----------------------------------------------------------------------

def test_default_config_is_reference():
    cfg = ModelConfig()
    assert (cfg.rtb_count, cfg.recursions, cfg.stbs_per_block) == (6, 3, 2)
    assert (cfg.embed_dim, cfg.heads, cfg.window_size) == (96, 2, 7)
    assert (cfg.patch_size, cfg.mlp_ratio, cfg.conv_kernel, cfg.channels) == (1, 1, 3, 3)


def test_config_rejects_bad_values():
    with pytest.raises(ShapeError):
        ModelConfig(embed_dim=10, heads=4)
    with pytest.raises(ShapeError):
        ModelConfig(rtb_count=0)
    with pytest.raises(ShapeError):
        ModelConfig(conv_kernel=4)


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------

def test_patch_embed_preserves_extent_at_p1():
    rng = np.random.default_rng(0)
    params = init_params(TOY, seed=1)
    img = rand_image(rng, (2, 3, 10, 13))
    out = patch_embed(img, params)
    assert out.shape == (2, 10, 13, 8)


def test_patch_embed_zero_weights_zero_output():
    params = init_params(TOY, seed=1)
    params.embed_weight.data[...] = 0.0
    params.embed_bias.data[...] = 0.0
    img = rand_image(np.random.default_rng(1), (1, 3, 5, 5))
    assert np.all(patch_embed(img, params).data == 0.0)


def test_patch_embed_matches_conv_oracle():
    rng = np.random.default_rng(2)
    cfg = TOY.with_overrides(embed_dim=4)
    params = init_params(cfg, seed=3, dtype=np.float64)
    w = rng.uniform(-1, 1, size=(4, 3, 3, 3))
    b = rng.uniform(-1, 1, size=4)
    params.embed_weight.data = w.copy()
    params.embed_bias.data = b.copy()
    img = rng.random((1, 3, 2, 2))
    out = patch_embed(Tensor(img), params)
    want = conv2d_np(img, w, b, stride=1, padding=1).transpose(0, 2, 3, 1)
    assert np.allclose(out.data, want, atol=1e-12)


def test_patch_embed_stride_two():
    cfg = TOY.with_overrides(patch_size=2)
    params = init_params(cfg, seed=4)
    img = rand_image(np.random.default_rng(3), (1, 3, 8, 8))
    assert patch_embed(img, params).shape == (1, 4, 4, 8)
    with pytest.raises(ShapeError):
        patch_embed(rand_image(np.random.default_rng(4), (1, 3, 7, 8)), params)


def test_deep_features_zero_chain_is_residual_only():
    params = init_params(TOY, seed=5)
    for name, t in params.named_tensors():
        if name.startswith("rtb"):
            t.data[...] = 0.0
    rng = np.random.default_rng(6)
    e = Tensor(rng.random((1, 4, 4, 8)).astype(np.float32))
    out = deep_features(e, params)
    assert np.array_equal(out.data, e.data)


def test_deep_features_single_rtb_composition():
    from drt.blocks import rtb_forward

    params = init_params(TOY, seed=7, dtype=np.float64)
    rng = np.random.default_rng(8)
    e = Tensor(rng.random((1, 4, 4, 8)))
    got = deep_features(e, params).data
    want = rtb_forward(e, params.rtbs[0], TOY.recursions).data + e.data
    assert np.allclose(got, want, atol=1e-12)


def test_reconstruct_zero_head_returns_input_exactly():
    params = init_params(TOY, seed=9)
    params.recon_weight.data[...] = 0.0
    params.recon_bias.data[...] = 0.0
    rng = np.random.default_rng(10)
    d = Tensor(rng.random((1, 6, 6, 8)).astype(np.float32))
    r_input = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
    out = reconstruct(d, r_input, params)
    assert np.array_equal(out.data, r_input.data)


def test_reconstruct_matches_conv_oracle():
    params = init_params(TOY, seed=11, dtype=np.float64)
    rng = np.random.default_rng(12)
    d = rng.random((1, 5, 5, 8))
    r_input = rng.random((1, 3, 5, 5))
    got = reconstruct(Tensor(d), Tensor(r_input), params).data
    want = conv2d_np(
        d.transpose(0, 3, 1, 2), params.recon_weight.data, params.recon_bias.data, padding=1
    ) + r_input
    assert np.allclose(got, want, atol=1e-12)


# ----------------------------------------------------------------------
# end-to-end forward
# ----------------------------------------------------------------------

@pytest.mark.parametrize("hw", [(1, 1), (7, 7), (10, 10), (56, 56), (100, 100), (10, 23)])
def test_forward_preserves_shape(hw):
    h, w = hw
    params = init_params(TOY, seed=13)
    img = rand_image(np.random.default_rng(h + w), (1, 3, h, w))
    assert forward(img, params).shape == (1, 3, h, w)


def test_forward_zero_head_is_identity_bitwise():
    params = init_params(TOY, seed=14)
    params.recon_weight.data[...] = 0.0
    params.recon_bias.data[...] = 0.0
    for h, w in ((10, 10), (7, 13), (1, 5)):
        img = rand_image(np.random.default_rng(h * w), (2, 3, h, w))
        out = forward(img, params)
        assert np.array_equal(out.data, img.data)


# ----------------------------------------------------------------------
# parameter counting vs reference budgets
# ----------------------------------------------------------------------

REFERENCE_ROWS = [
    (dict(), 1.18),
    (dict(rtb_count=3), 0.591),
    (dict(rtb_count=9), 1.77),
    (dict(rtb_count=8, recursions=2), 1.57),
    (dict(stbs_per_block=1), 0.841),
    (dict(stbs_per_block=3), 1.52),
]


@pytest.mark.parametrize("overrides,reference", REFERENCE_ROWS)
def test_count_params_reproduces_reference_budgets(overrides, reference):
    cfg = ModelConfig().with_overrides(**overrides)
    millions = count_params(cfg) / 1e6
    assert abs(millions - reference) / reference < 0.01


def test_count_params_default_exact_value():
    assert count_params(ModelConfig()) == 1_182_651


def test_count_params_independent_of_recursions():
    counts = {count_params(ModelConfig().with_overrides(recursions=l)) for l in (1, 2, 3, 4)}
    assert len(counts) == 1


def test_count_params_matches_instantiation():
    for cfg in (TOY, ModelConfig(rtb_count=2, embed_dim=16, window_size=3, recursions=2)):
        params = init_params(cfg, seed=0)
        assert params.scalar_count() == count_params(cfg)


# ----------------------------------------------------------------------
# MAC accounting
# ----------------------------------------------------------------------

def test_count_macs_single_conv_reference():
    # one 3x3 conv, 96 -> 96 channels, applied at 336x336
    report = count_macs(ModelConfig(), 336, 336)
    per_tail = report.items["rtb_tail_conv"] // 6
    assert per_tail == 9_364_045_824


def test_count_macs_scales_linearly_in_area():
    cfg = ModelConfig()
    small = count_macs(cfg, 112, 112).total
    tall = count_macs(cfg, 224, 112).total
    big = count_macs(cfg, 224, 224).total
    assert tall == 2 * small
    assert big == 4 * small


def test_count_macs_itemization_covers_total():
    report = count_macs(ModelConfig(), 336, 336)
    assert set(report.items) == {
        "embed_conv", "attention_qkv", "attention_scores_values",
        "attention_proj", "mlp", "rtb_tail_conv", "recon_conv",
    }
    assert report.total == sum(report.items.values())
    assert report.total > 0
    # sanity anchor for the audited figure at the reference input size
    assert report.total == 319_743_148_032


def test_count_macs_window_terms_match_closed_form():
    # per-STB attention qkv+proj+scores at the padded grid must equal the
    # windowed closed form 4*h*w*C^2 + 2*M^2*h*w*C
    from drt.attention import wmsa_complexity

    cfg = ModelConfig()
    report = count_macs(cfg, 336, 336)
    passes = cfg.rtb_count * cfg.recursions * cfg.stbs_per_block
    per_pass = (
        report.items["attention_qkv"] + report.items["attention_proj"]
        + report.items["attention_scores_values"]
    ) // passes
    windowed, _ = wmsa_complexity(336, 336, cfg.embed_dim, cfg.window_size)
    assert per_pass == windowed


# ----------------------------------------------------------------------
# initialization
# ----------------------------------------------------------------------

def test_init_params_deterministic_per_seed():
    a = init_params(TOY, seed=42)
    b = init_params(TOY, seed=42)
    for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)
    c = init_params(TOY, seed=43)
    assert not np.array_equal(a.embed_weight.data, c.embed_weight.data)


def test_init_params_truncation_bound():
    # sampled weights stay inside +/- 2 std; everything else is zeros
    # (biases, bias tables, LN betas) or ones (LN gammas)
    params = init_params(ModelConfig(rtb_count=2, embed_dim=32, recursions=1), seed=0)
    sampled = 0
    for name, t in params.named_tensors():
        if np.all(t.data == 0.0) or np.all(t.data == 1.0):
            continue
        sampled += 1
        assert np.all(np.abs(t.data) <= 0.04 + 1e-7), name
        assert t.data.std() > 0.005, name
    assert sampled > 0


def test_init_params_structure():
    params = init_params(TOY, seed=1)
    assert len(params.rtbs) == TOY.rtb_count
    assert len(params.rtbs[0].stbs) == TOY.stbs_per_block
    assert all(t.requires_grad for _, t in params.named_tensors())
    names = [n for n, _ in params.named_tensors()]
    assert len(names) == len(set(names))


def test_no_parameter_sharing_across_rtbs():
    cfg = TOY.with_overrides(rtb_count=2)
    params = init_params(cfg, seed=2)
    seen = set()
    for _, t in params.named_tensors():
        assert id(t.data) not in seen
        seen.add(id(t.data))


# ----------------------------------------------------------------------
# non-acceptance config paths: P > 1 stem/head, multi-conv tails
# ----------------------------------------------------------------------

def test_forward_patch_size_two():
    cfg = TOY.with_overrides(patch_size=2)
    params = init_params(cfg, seed=20, dtype=np.float64)
    img = Tensor(np.random.default_rng(21).random((1, 3, 8, 10)), requires_grad=True)
    out = forward(img, params)
    assert out.shape == (1, 3, 8, 10)
    report = grad_check(
        lambda v: mse_loss(forward(v, params), Tensor(np.zeros((1, 3, 8, 10)))),
        img, tolerance=1e-3,
    )
    assert report.passed, str(report)


def test_forward_multi_conv_tail():
    cfg = TOY.with_overrides(tail_convs=2)
    params = init_params(cfg, seed=22, dtype=np.float64)
    assert params.scalar_count() == count_params(cfg)
    assert len(params.rtbs[0].tail) == 2
    img = Tensor(np.random.default_rng(23).random((1, 3, 6, 6)), requires_grad=True)
    out = forward(img, params)
    assert out.shape == (1, 3, 6, 6)
    report = grad_check(
        lambda v: mse_loss(forward(v, params), Tensor(np.zeros((1, 3, 6, 6)))),
        img, tolerance=1e-3,
    )
    assert report.passed, str(report)


def test_reference_config_one_training_step(tmp_path):
    # the full 1.18M-parameter model runs forward/backward at the training
    # crop size, takes an optimizer step, and checkpoints bit-exactly
    from drt.checkpoint import load_checkpoint, save_checkpoint
    from drt.train import adam_step, init_adam_state

    cfg = ModelConfig()
    params = init_params(cfg, seed=0)
    assert params.scalar_count() == 1_182_651

    rng = np.random.default_rng(0)
    img = Tensor(rng.random((1, 3, 56, 56)).astype(np.float32))
    target = Tensor(rng.random((1, 3, 56, 56)).astype(np.float32))
    loss = mse_loss(forward(img, params), target)
    assert np.isfinite(loss.item())
    loss.backward()
    before = params.embed_weight.data.copy()
    state = init_adam_state(params)
    adam_step(params, state, lr=1e-4)
    params.zero_grads()
    assert not np.array_equal(before, params.embed_weight.data)

    path = tmp_path / "ref.ckpt"
    save_checkpoint(path, cfg, params, opt_state=state, seed=0)
    back = load_checkpoint(path)
    assert np.array_equal(back.params.embed_weight.data, params.embed_weight.data)
    assert back.opt_state.step == 1


# ----------------------------------------------------------------------
# end-to-end gradient fidelity (toy config, 64-bit)
# ----------------------------------------------------------------------

def test_end_to_end_gradient_check_toy_config():
    rng = np.random.default_rng(15)
    params = init_params(TOY, seed=16, dtype=np.float64)
    img_data = rng.random((1, 3, 8, 8))
    target = Tensor(rng.random((1, 3, 8, 8)))
    img = Tensor(img_data, requires_grad=True)

    def loss_fn(_):
        return mse_loss(forward(img, params), target)

    worst = 0.0
    for name, t in list(params.named_tensors()) + [("input", img)]:
        report = grad_check(loss_fn, t, step=1e-5, tolerance=1e-3)
        worst = max(worst, report.max_rel_error)
        assert report.passed, f"{name}: {report}"
    assert worst < 1e-3
