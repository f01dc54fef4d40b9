import numpy as np
import pytest

from axsty import backbone as bb
from axsty.tensor import ShapeError, Tensor


@pytest.fixture(scope="module")
def toy():
    return bb.ToyBackbone(seed=7)


def test_level_schedule_224(toy, rng):
    x = Tensor(rng.uniform(0, 1, (3, 224, 224)))
    pyr = toy.forward(x)
    sizes = [lvl.shape[1] for lvl in pyr.levels]
    assert sizes == [224, 112, 56, 28, 14]
    assert pyr.bottleneck.shape == (512, 14, 14)
    assert [lvl.shape[0] for lvl in pyr.levels] == [64, 128, 256, 512, 512]


def test_level_schedule_32(toy, rng):
    pyr = toy.forward(Tensor(rng.uniform(0, 1, (3, 32, 32))))
    assert [lvl.shape[1] for lvl in pyr.levels] == [32, 16, 8, 4, 2]


def test_deterministic_given_seed(rng):
    x = rng.uniform(0, 1, (3, 32, 32))
    a = bb.ToyBackbone(seed=3).forward(Tensor(x))
    b = bb.ToyBackbone(seed=3).forward(Tensor(x))
    for la, lb2 in zip(a.levels, b.levels):
        np.testing.assert_array_equal(la.data, lb2.data)
    np.testing.assert_array_equal(a.bottleneck.data, b.bottleneck.data)


def test_seed_changes_features(rng):
    x = rng.uniform(0, 1, (3, 32, 32))
    a = bb.ToyBackbone(seed=3).forward(Tensor(x))
    b = bb.ToyBackbone(seed=4).forward(Tensor(x))
    assert not np.allclose(a.levels[0].data, b.levels[0].data)


def test_indivisible_dims_rejected(toy):
    with pytest.raises(ShapeError, match="divisible"):
        toy.forward(Tensor(np.zeros((3, 24, 32))))


def test_weights_frozen(toy):
    assert not any(w.requires_grad for w in toy.weights)
    assert not toy.bottleneck_w.requires_grad


def test_fixture_roundtrip_bit_exact(tmp_path, toy, rng):
    pyr = toy.forward(Tensor(rng.uniform(0, 1, (3, 32, 32))))
    # fixtures store f32; quantise once so the round trip is bit-exact
    f32 = bb.FeaturePyramid(
        levels=[Tensor(l.data.astype(np.float32).astype(np.float64)) for l in pyr.levels],
        bottleneck=Tensor(pyr.bottleneck.data.astype(np.float32).astype(np.float64)))
    bb.save_fixture_pyramid(tmp_path, f32)
    back = bb.load_fixture_pyramid(tmp_path)
    for a, b in zip(f32.levels, back.levels):
        np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(f32.bottleneck.data, back.bottleneck.data)


def test_fixture_wrong_channels_names_level(tmp_path, toy, rng):
    pyr = toy.forward(Tensor(rng.uniform(0, 1, (3, 32, 32))))
    bb.save_fixture_pyramid(tmp_path, pyr)
    from axsty.ntf import write_ntf
    write_ntf(tmp_path / "level3.ntf", np.zeros((7, 8, 8), dtype=np.float32))
    with pytest.raises(ShapeError, match="level 3"):
        bb.load_fixture_pyramid(tmp_path)


def test_pyramid_invariants():
    levels = [Tensor(np.zeros((c, 32 // 2 ** i, 32 // 2 ** i)))
              for i, c in enumerate(bb.LEVEL_CHANNELS)]
    with pytest.raises(ShapeError, match="bottleneck"):
        bb.FeaturePyramid(levels=levels, bottleneck=Tensor(np.zeros((512, 4, 4))))
    bad = list(levels)
    bad[1] = Tensor(np.zeros((128, 8, 8)))
    with pytest.raises(ShapeError):
        bb.FeaturePyramid(levels=bad, bottleneck=Tensor(np.zeros((512, 2, 2))))


class TestProjection:
    def test_shapes_and_common_width(self, toy, rng):
        pyr = toy.forward(Tensor(rng.uniform(0, 1, (3, 32, 32))))
        params = bb.ProjectionParams.init(256, np.random.default_rng(0))
        levels, bott = bb.project_features(pyr, params)
        for lvl, src in zip(levels, pyr.levels):
            assert lvl.shape == (256, *src.shape[1:])
        assert bott.shape == (256, 2, 2)

    def test_zero_weights_zero_features(self, toy, rng):
        pyr = toy.forward(Tensor(rng.uniform(0, 1, (3, 32, 32))))
        params = bb.ProjectionParams.init(16, np.random.default_rng(0))
        for w in params.level_w:
            w.data[:] = 0.0
        params.bottleneck_w.data[:] = 0.0
        levels, bott = bb.project_features(pyr, params)
        for lvl in levels:
            np.testing.assert_array_equal(lvl.data, 0.0)
        np.testing.assert_array_equal(bott.data, 0.0)

    def test_outputs_non_negative(self, toy, rng):
        pyr = toy.forward(Tensor(rng.uniform(0, 1, (3, 32, 32))))
        params = bb.ProjectionParams.init(32, np.random.default_rng(5))
        levels, bott = bb.project_features(pyr, params)
        assert all(np.all(lvl.data >= 0) for lvl in levels)
        assert np.all(bott.data >= 0)
