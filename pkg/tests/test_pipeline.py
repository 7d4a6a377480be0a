import numpy as np
import pytest

from qrestore import pipeline as pl
from qrestore.autodiff import NonFiniteError
from qrestore.config import TrainConfig, replace
from qrestore.degrade import DegradeSpec, degrade, synthetic_scene


@pytest.fixture(scope="module")
def model(toy_cfg):
    return pl.build_model(toy_cfg, seed=0)


@pytest.fixture(scope="module")
def pairs():
    r = np.random.default_rng(0)
    clean = [synthetic_scene(32, r) for _ in range(2)]
    return [(degrade(c, DegradeSpec(seed=i)), c) for i, c in enumerate(clean)]


def test_restore_contract(model, rng):
    img = rng.uniform(size=(32, 48, 3))
    out = pl.restore_image(img, model)
    assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1
    assert np.array_equal(out, pl.restore_image(img, model))


def test_restore_rejects_bad_sides(model):
    with pytest.raises(ValueError):
        pl.restore_image(np.zeros((24, 32, 3)), model)


def test_trace_stage_contracts(model, rng):
    _, st = pl.restore_image(rng.uniform(size=(32, 32, 3)), model, trace=True)
    assert np.all(st["S0"][:, 1:] >= 1e-3) and np.all(st["S0"] <= 1)
    assert np.all(st["T0"][:, 1:] <= 10)
    for k in ("M_S", "M_T"):
        assert np.all((st[k] > 0) & (st[k] < 1))
    assert st["product"].min() >= 0 and st["product"].max() <= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_stage_is_named(model):
    bad = pl.build_model(model.cfg, seed=0)
    bad.latent_m.conv.bias.data[:] = np.nan
    with pytest.raises(NonFiniteError, match="M"):
        pl.restore_image(np.full((32, 32, 3), 0.5), bad)


def test_tiling_arithmetic():
    assert pl.tile_starts(96, 64, 16) == [0, 32]
    assert pl.tile_starts(64, 64, 16) == [0]


def test_single_tile_equals_untiled(model, rng):
    img = rng.uniform(size=(32, 32, 3))
    out, n = pl.restore_tiled(img, model, tile=32, overlap=8)
    assert n == 1 and np.array_equal(out, pl.restore_image(img, model))


def test_tile_count_and_constant_seams():
    img = np.full((96, 96, 3), 0.3)
    out, n = pl.restore_tiled(img, None, tile=64, overlap=16, restore_fn=lambda t: t * 0 + 0.7)
    assert n == 4
    np.testing.assert_allclose(out, 0.7, atol=1e-15)


def test_tiling_identity_fn(rng):
    img = rng.uniform(size=(80, 112, 3))
    out, _ = pl.restore_tiled(img, None, tile=48, overlap=16, restore_fn=lambda t: t)
    np.testing.assert_allclose(out, img, atol=1e-14)


def test_tiling_args_validated(model):
    with pytest.raises(ValueError):
        pl.restore_tiled(np.zeros((64, 64, 3)), model, tile=40)
    with pytest.raises(ValueError):
        pl.restore_tiled(np.zeros((64, 64, 3)), model, tile=32, overlap=4)


def test_cosine_schedule_points():
    assert pl.cosine_lr(0, 11, 1e-3, 1e-7) == 1e-3
    assert pl.cosine_lr(10, 11, 1e-3, 1e-7) == pytest.approx(1e-7, rel=1e-12)
    assert pl.cosine_lr(5, 11, 1e-3, 1e-7) == pytest.approx((1e-3 + 1e-7) / 2, rel=1e-12)


def test_count_params_by_group(model):
    assert sum(pl.count_params(model, g) for g in model.groups()) == pl.count_params(model)
    with pytest.raises(KeyError):
        pl.count_params(model, "nope")


def _snapshot(m):
    return {k: p.data.copy() for k, p in m.named_parameters()}


def test_all_frozen_changes_nothing(toy_cfg, pairs):
    m = pl.build_model(toy_cfg, seed=1)
    before = _snapshot(m)
    pl.train(pairs, TrainConfig(epochs=2, freeze_epochs=0, frozen_groups=pl.GROUPS, patch=32), m)
    assert all(np.array_equal(before[k], p.data) for k, p in m.named_parameters())


def test_freeze_schedule(toy_cfg, pairs):
    m = pl.build_model(toy_cfg, seed=1)
    before = _snapshot(m)
    pl.train(pairs, TrainConfig(epochs=2, freeze_epochs=2, patch=32, optimizer="adam"), m)
    moved = {g: False for g in m.groups()}
    for k, p in m.named_parameters():
        g = k.split(".")[0]
        same = np.array_equal(before[k], p.data)
        if g in pl.FREEZE_SCHEDULE_GROUPS:
            assert same, k
        moved[g] |= not same
    assert all(moved[g] for g in moved if g not in pl.FREEZE_SCHEDULE_GROUPS)


def test_stage1_only_touches_dnet_fnet(toy_cfg, pairs):
    m = pl.build_model(toy_cfg, seed=1)
    before = _snapshot(m)
    # stage 2 runs one epoch with everything held, so only stage 1 can move weights
    cfg = TrainConfig(epochs=1, stage1_epochs=1, freeze_epochs=1, patch=32, optimizer="adam",
                      frozen_groups=("tnet_h", "tnet_s", "latent_m"))
    res = pl.train(pairs, cfg, m)
    assert len(res.history) == 2
    for k, p in m.named_parameters():
        if k.split(".")[0] not in pl.STAGE1_GROUPS:
            assert np.array_equal(before[k], p.data), k
    assert not np.array_equal(before["fnet.att_s.conv1.weight_r"], m.fnet.att_s.conv1.weight_r.data)


def test_training_is_reproducible(toy_cfg, pairs):
    runs = []
    for _ in range(2):
        m = pl.build_model(toy_cfg, seed=2)
        res = pl.train(pairs, TrainConfig(epochs=2, freeze_epochs=0, patch=16, seed=3, augment=True), m)
        runs.append((res.history, _snapshot(m)))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(toy_cfg, pairs):
    m = pl.build_model(toy_cfg, seed=1)
    with pytest.raises((pl.TrainingDiverged, NonFiniteError)):
        pl.train(pairs, TrainConfig(epochs=3, freeze_epochs=0, lr_init=1e12, lr_final=1.0, patch=32), m)


def test_training_validates_dataset(toy_cfg):
    m = pl.build_model(toy_cfg)
    with pytest.raises(ValueError):
        pl.train([], TrainConfig(), m)
    with pytest.raises(ValueError):
        pl.train([(np.zeros((32, 32, 3)), np.zeros((16, 16, 3)))], TrainConfig(), m)
    with pytest.raises(ValueError):
        pl.train([(np.zeros((32, 32, 3)), np.zeros((32, 32, 3)))], TrainConfig(frozen_groups=("x",)), m)


@pytest.mark.parametrize("change", [{"use_dnet": False}, {"quaternion_layers": False}])
def test_ablations_build_and_step(toy_cfg, pairs, change):
    m = pl.build_model(replace(toy_cfg, **change))
    res = pl.train(pairs, TrainConfig(epochs=1, freeze_epochs=0, patch=32), m)
    assert np.isfinite(res.final_loss)
    if not change.get("use_dnet", True):
        assert "dnet_s" not in m.groups()


def test_whole_model_gradient_matches_finite_differences(toy_cfg):
    from qrestore import autodiff as ad
    from qrestore.autodiff import Tensor

    m = pl.build_model(toy_cfg, seed=3)
    r = np.random.default_rng(0)
    x = Tensor(pl.encode_batch(r.uniform(0.1, 0.9, (16, 16, 3))))
    y = Tensor(pl.encode_batch(r.uniform(0.1, 0.9, (16, 16, 3))))
    tc = TrainConfig(l1_weight=1.0)
    loss = lambda: pl.compute_loss(m.forward(x), y, tc)
    ad.backward(loss(), m.parameters())
    named = list(m.named_parameters())[::5]
    assert {n.split(".")[0] for n, _ in named} >= {"dnet_s", "tnet_h", "fnet", "projection"}
    worst = 0.0
    for _, p in named:
        i = int(r.integers(p.size))
        old = p.data.flat[i]
        p.data.flat[i] = old + 1e-6
        up = float(loss().data)
        p.data.flat[i] = old - 1e-6
        down = float(loss().data)
        p.data.flat[i] = old
        an = p.grad.flat[i]
        worst = max(worst, abs((up - down) / 2e-6 - an) / max(1.0, abs(an)))
    assert worst < 1e-6
