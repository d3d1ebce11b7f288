import numpy as np
import pytest

from sodkit import netpbm, ops
from sodkit.backbone import Backbone, tiny_backbone
from sodkit.errors import DimensionError, UsageError
from sodkit.gradcheck import as_param, gradcheck, params_of, to_double
from sodkit.interactors import (CII, InteractorConfig, PPMBlock, RGCBlock,
                                dump_features)
from sodkit.tensor import Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def zero_convs(module):
    for name, p in module.named_parameters():
        if name.endswith("weight") and p.data.ndim == 4:
            p.data[...] = 0.0


def tiny_pyramid(seed=0, n=1, size=64):
    net = Backbone(tiny_backbone(), rng(seed))
    x = Tensor(rng(seed + 100).uniform(0, 1, (n, 3, size, size)).astype(np.float32))
    return net(x)


# -- config ------------------------------------------------------------


def test_config_rejects_unknown_kind():
    with pytest.raises(UsageError):
        InteractorConfig(kind="attention")


def test_config_rejects_bad_kernel_and_depth():
    with pytest.raises(UsageError):
        InteractorConfig(kind="plain", kernel=5)
    with pytest.raises(UsageError):
        InteractorConfig(kind="plain", depth=0)


def test_ablation_rows_expressible():
    rows = [InteractorConfig("plain", kernel=1, depth=1, shared=False, channels=16),
            InteractorConfig("plain", kernel=3, depth=2, shared=False, channels=16),
            InteractorConfig("plain", kernel=3, depth=2, shared=True, channels=16),
            InteractorConfig("plain", kernel=3, depth=4, shared=True, channels=16)]
    for cfg in rows:
        CII(rng(), (16, 16, 32, 64, 128), cfg)


# -- projections -------------------------------------------------------


def test_projections_map_all_stages_to_common_width():
    pyr = tiny_pyramid()
    cii = CII(rng(1), pyr.channels, InteractorConfig(channels=16))
    p = cii.project(pyr)
    for before, after in zip(pyr.stages, p):
        assert after.data.shape[1] == 16
        assert after.data.shape[2:] == before.data.shape[2:]


def test_projection_param_count_closed_form():
    chans = (64, 64, 128, 256, 512)
    cii = CII(rng(), chans, InteractorConfig(kind="plain", channels=64))
    got = sum(p.data.size for _, p in cii.projections.named_parameters())
    want = sum(c * 64 for c in chans) + 5 * 2 * 64
    assert got == want == 66176


def test_projection_channel_mismatch_raises():
    pyr = tiny_pyramid()
    cii = CII(rng(), (16, 16, 32, 64, 64), InteractorConfig(channels=16))
    with pytest.raises(DimensionError):
        cii.project(pyr)


# -- plain stacks -------------------------------------------------------


@pytest.mark.parametrize("kernel", [1, 3])
@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_plain_stack_preserves_shape(kernel, depth):
    cfg = InteractorConfig("plain", kernel=kernel, depth=depth, channels=8)
    cii = CII(rng(2), (8,), cfg)
    x = Tensor(rng(3).uniform(-1, 1, (2, 8, 6, 5)).astype(np.float32))
    out = cii.body_for(0)(x, x)
    assert out.data.shape == x.data.shape


def test_plain_stack_zero_convs_give_zero():
    cfg = InteractorConfig("plain", channels=8)
    cii = CII(rng(2), (8,), cfg)
    zero_convs(cii)
    x = Tensor(rng(3).uniform(-1, 1, (1, 8, 4, 4)).astype(np.float32))
    assert np.all(cii.body_for(0)(x, x).data == 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_plain_stack_gradcheck(seed):
    cfg = InteractorConfig("plain", channels=4)
    body = to_double(CII(rng(seed), (4,), cfg)).body_for(0)
    r = rng(600 + seed)
    x = as_param(r, (2, 4, 5, 5))
    up = r.uniform(-1, 1, (2, 4, 5, 5))

    def fn():
        return (body(x, x) * Tensor(up)).sum()

    params = params_of(body)
    params["x"] = x
    rep = gradcheck(fn, params, eps=1e-4, tol=1e-4, max_elems=24, rng=r)
    assert rep.passed, rep.per_param


# -- rgc ----------------------------------------------------------------


def test_rgc_zero_convs_constant_input():
    cfg = InteractorConfig("rgc", channels=8)
    block = RGCBlock(rng(4), cfg)
    zero_convs(block)
    c = 1.3
    x = Tensor(np.full((2, 8, 5, 5), c, dtype=np.float32))
    out = block(x, x)
    want = c / (1.0 + np.exp(-c)) * np.ones_like(x.data)
    np.testing.assert_allclose(out.data, want, rtol=1e-5)


def test_rgc_gate_shape_and_range():
    block = RGCBlock(rng(5), InteractorConfig("rgc", channels=8))
    x = Tensor(rng(6).uniform(-1, 1, (3, 8, 6, 6)).astype(np.float32))
    block(x, x)
    g = block.last_gate
    assert g.shape == (3, 8, 1, 1)
    assert np.all(g > 0) and np.all(g < 1)


def test_rgc_gate_override_degenerates_to_ungated():
    block = RGCBlock(rng(7), InteractorConfig("rgc", channels=8))
    x = Tensor(rng(8).uniform(-1, 1, (1, 8, 6, 6)).astype(np.float32))
    block.gate_logit_override = 1e9
    out = block(x, x)
    block.gate_logit_override = None
    left = x + block._run(block.local, x)
    want = left + block._run(block.fuse, left)
    np.testing.assert_allclose(out.data, want.data, rtol=1e-5, atol=1e-6)


def test_rgc_and_dagger_param_counts_equal():
    chans = (16, 16, 32, 64, 128)
    a = CII(rng(9), chans, InteractorConfig("rgc", channels=16))
    b = CII(rng(9), chans, InteractorConfig("rgc_dagger", channels=16))
    assert a.param_count() == b.param_count()


def test_rgc_body_conv_weight_count_at_64():
    block = RGCBlock(rng(0), InteractorConfig("rgc", channels=64))
    conv_w = sum(p.data.size for name, p in block.named_parameters()
                 if name.endswith("conv.weight"))
    bn = sum(p.data.size for name, p in block.named_parameters()
             if name.endswith(("gamma", "beta")))
    assert conv_w == 6 * 9 * 64 * 64 == 221184
    assert bn == 768


def test_rgc_dagger_accepts_coarser_right_input():
    block = RGCBlock(rng(10), InteractorConfig("rgc_dagger", channels=8))
    x = Tensor(rng(11).uniform(-1, 1, (1, 8, 8, 8)).astype(np.float32))
    succ = Tensor(rng(12).uniform(-1, 1, (1, 8, 4, 4)).astype(np.float32))
    out = block(x, succ)
    assert out.data.shape == x.data.shape


def test_rgc_channel_mismatch_raises():
    block = RGCBlock(rng(0), InteractorConfig("rgc", channels=8))
    with pytest.raises(DimensionError):
        block(Tensor(np.zeros((1, 8, 4, 4))), Tensor(np.zeros((1, 4, 4, 4))))


@pytest.mark.parametrize("seed", range(2))
def test_rgc_gradcheck_two_stage(seed):
    # RGC applied as the shared body of a 2-stage pyramid
    cfg = InteractorConfig("rgc_dagger", channels=4)
    block = to_double(RGCBlock(rng(seed), cfg))
    r = rng(700 + seed)
    x1 = as_param(r, (1, 4, 6, 6))
    x2 = as_param(r, (1, 4, 3, 3))
    u1 = r.uniform(-1, 1, (1, 4, 6, 6))
    u2 = r.uniform(-1, 1, (1, 4, 3, 3))

    def fn():
        c1 = block(x1, x2)
        c2 = block(x2, x2)
        return (c1 * Tensor(u1)).sum() + (c2 * Tensor(u2)).sum()

    params = params_of(block)
    params["x1"] = x1
    params["x2"] = x2
    rep = gradcheck(fn, params, eps=1e-4, tol=1e-4, max_elems=16, rng=r)
    assert rep.passed, rep.per_param


# -- ppm ----------------------------------------------------------------


def test_ppm_output_shape_and_branch_count():
    block = PPMBlock(rng(13), InteractorConfig("ppm", channels=16))
    assert len(block.branches) == 4
    x = Tensor(rng(14).uniform(-1, 1, (2, 16, 8, 8)).astype(np.float32))
    assert block(x, x).data.shape == x.data.shape


def test_ppm_zero_convs_constant_input_gives_zero():
    block = PPMBlock(rng(15), InteractorConfig("ppm", channels=16))
    zero_convs(block)
    x = Tensor(np.full((2, 16, 7, 7), 2.0, dtype=np.float32))
    assert np.all(block(x, x).data == 0.0)


def test_ppm_train_mode_needs_batch_of_two():
    # the 1x1-bin branch normalizes a single value per image; batch
    # statistics are undefined for n*h*w = 1
    block = PPMBlock(rng(15), InteractorConfig("ppm", channels=16))
    x = Tensor(np.zeros((1, 16, 7, 7), dtype=np.float32))
    with pytest.raises(DimensionError):
        block(x, x)
    block.eval()
    with pytest.warns(UserWarning):  # eval stats never collected
        out = block(x, x)
    assert out.data.shape == x.data.shape


def test_ppm_small_input_is_config_error():
    block = PPMBlock(rng(16), InteractorConfig("ppm", channels=16))
    x = Tensor(np.zeros((1, 16, 5, 5), dtype=np.float32))
    with pytest.raises(UsageError):
        block(x, x)


def test_ppm_dagger_pools_the_successor():
    block = PPMBlock(rng(17), InteractorConfig("ppm_dagger", channels=16))
    x = Tensor(rng(18).uniform(-1, 1, (2, 16, 12, 12)).astype(np.float32))
    succ = Tensor(rng(19).uniform(-1, 1, (2, 16, 6, 6)).astype(np.float32))
    out = block(x, succ)
    assert out.data.shape == x.data.shape
    # successor too small to pool -> config error
    with pytest.raises(UsageError):
        block(x, Tensor(np.zeros((2, 16, 5, 5), dtype=np.float32)))


# -- cii orchestration ---------------------------------------------------


def test_shared_body_mutation_changes_all_stages():
    pyr = tiny_pyramid(20)
    cfg = InteractorConfig("plain", shared=True, channels=16)
    cii = CII(rng(21), pyr.channels, cfg)
    base = [c.data.copy() for c in cii(pyr)]
    w = cii.bodies[0].layers[0].conv.weight
    w.data[0, 0, 1, 1] += 0.5
    after = cii(pyr)
    changed = [not np.array_equal(b, a.data) for b, a in zip(base, after)]
    assert all(changed)


def test_unshared_body_mutation_changes_one_stage():
    pyr = tiny_pyramid(22)
    cfg = InteractorConfig("plain", shared=False, channels=16)
    cii = CII(rng(23), pyr.channels, cfg)
    base = [c.data.copy() for c in cii(pyr)]
    w = cii.bodies[2].layers[0].conv.weight
    w.data[0, 0, 1, 1] += 0.5
    after = cii(pyr)
    changed = [not np.array_equal(b, a.data) for b, a in zip(base, after)]
    assert changed == [False, False, True, False, False]


def test_shared_body_count_independent_of_stage_count():
    cfg = InteractorConfig("rgc", shared=True, channels=16)
    one = CII(rng(24), (16,), cfg)
    five = CII(rng(24), (16, 16, 32, 64, 128), cfg)

    def body_size(cii):
        return sum(p.data.size for _, p in cii.bodies.named_parameters())

    assert body_size(one) == body_size(five)


def test_unshared_plain_body_is_five_times_shared():
    chans = (16, 16, 32, 64, 128)
    shared = CII(rng(25), chans, InteractorConfig("plain", shared=True, channels=16))
    unshared = CII(rng(25), chans, InteractorConfig("plain", shared=False, channels=16))

    def body_size(cii):
        return sum(p.data.size for _, p in cii.bodies.named_parameters())

    assert body_size(unshared) == 5 * body_size(shared)


@pytest.mark.parametrize("kind", ["plain", "rgc", "rgc_dagger", "ppm", "ppm_dagger"])
def test_every_kind_preserves_stage_shapes(kind):
    size = 192 if kind.startswith("ppm") else 64
    pyr = tiny_pyramid(26, n=2, size=size)
    cfg = InteractorConfig(kind, channels=16)
    cii = CII(rng(27), pyr.channels, cfg)
    out = cii(pyr)
    assert len(out) == 5
    for c, b in zip(out, pyr.stages):
        assert c.data.shape[2:] == b.data.shape[2:]
        assert c.data.shape[1] == 16


@pytest.mark.parametrize("stage", range(5))
def test_gradient_reaches_shared_body_from_each_stage(stage):
    pyr = tiny_pyramid(28)
    cfg = InteractorConfig("rgc_dagger", channels=16)
    cii = CII(rng(29), pyr.channels, cfg)
    cii.zero_grad()
    out = cii(pyr)
    out[stage].sum().backward()
    w = cii.bodies[0].local[0].conv.weight
    assert w.grad is not None and np.abs(w.grad).max() > 0


# -- feature dumps -------------------------------------------------------


def test_dump_features_files_and_sizes(tmp_path):
    pyr = tiny_pyramid(30)
    paths = dump_features(pyr.stages, tmp_path, "before")
    assert len(paths) == 5
    for i, (p, s) in enumerate(zip(paths, pyr.stages), start=1):
        assert p.endswith(f"stage{i}_before.pgm")
        img = netpbm.read_pgm(p)
        assert img.shape[1:] == s.data.shape[2:]


def test_dump_features_constant_map_is_mid_gray(tmp_path):
    t = Tensor(np.full((1, 4, 8, 8), 3.7, dtype=np.float32))
    (path,) = dump_features([t], tmp_path, "after")
    raw = netpbm.read_pgm(path) * 255.0
    assert np.all(np.round(raw) == 128)
