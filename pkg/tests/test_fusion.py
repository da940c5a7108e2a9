import numpy as np
import pytest

from survfusion import fusion
from survfusion.core import TimeGrid
from survfusion.errors import InputError
from survfusion.fusion import FusionConfig, MultimodalBatch

GRID = TimeGrid([50.0, 120.0, 260.0])


def desk_batch(n=6, variant="v2", seed=0, d=2, shape=(16, 16, 16)):
    r = np.random.default_rng(seed)
    images = {p: r.standard_normal((n, 1, *shape)) for p in fusion.PATHS[variant]}
    time = r.uniform(10, 400, n)
    event = np.arange(n) % 3 != 2
    return MultimodalBatch([f"p{i}" for i in range(n)], images, r.standard_normal((n, d)),
                           time, event)


def desk_model(variant="v2", d=2, **kw):
    return fusion.build_model(FusionConfig.desk(variant, **kw), d, GRID)


def test_desk_and_full_scale_profiles_share_wiring():
    for variant, paths in (("v1", 3), ("v2", 1)):
        desk = fusion.layer_kinds(desk_model(variant))
        full_cfg = FusionConfig.paper(variant)
        assert len(full_cfg.path_names) == paths
        specs = fusion.path_specs(full_cfg)
        assert [type(s).__name__ for s in specs] == [type(s).__name__ for s in
                                                      fusion.path_specs(FusionConfig.desk(variant))]
        assert len(desk) == paths + 1
        assert desk["fused"][:8] == ["conv3d", "relu", "batchnorm3d", "conv3d", "relu",
                                     "batchnorm3d", "maxpool3d", "conv3d"]
        assert desk["fused"][-2:] == ["global_avg_pool", "linear"]


def test_full_scale_profile_channels_and_kernels():
    convs = [s for s in fusion.path_specs(FusionConfig.paper()) if type(s).__name__ == "Conv3d"]
    assert [(c.in_ch, c.out_ch, c.kernel) for c in convs] == [
        (1, 32, 3), (32, 64, 5), (64, 128, 3), (128, 256, 5)]
    assert fusion.path_specs(FusionConfig.paper())[-1].out_features == 256


def test_feature_lengths_desk():
    for variant, width in (("v1", 48), ("v2", 16)):
        feats = desk_model(variant).image_features(desk_batch(3, variant))
        assert feats.shape == (3, width)


def test_config_errors():
    with pytest.raises(InputError, match="variant"):
        FusionConfig(variant="v3")
    with pytest.raises(InputError, match="two convolutions per block"):
        FusionConfig(channels=(4, 4, 8))
    with pytest.raises(InputError, match="unknown fusion config keys"):
        FusionConfig.from_dict({"variant": "v2", "width": 3})
    with pytest.raises(InputError, match="fused"):
        desk_model("v2").risk(MultimodalBatch(["a"], {"ct": np.zeros((1, 1, 16, 16, 16))},
                                              np.zeros((1, 2))))
    with pytest.raises(InputError, match="expected"):
        MultimodalBatch(["a", "b"], {"fused": np.zeros((1, 1, 4, 4, 4))}, np.zeros((2, 1)))


@pytest.mark.parametrize("variant", ["v2", "v1"])
def test_desk_end_to_end_gradient(variant):
    model = desk_model(variant, input_shape=(8, 8, 8))
    batch = desk_batch(2, variant, seed=1, shape=(8, 8, 8))
    report = fusion.grad_check_model(model, batch, tolerance=1e-3, max_per_tensor=6)
    assert report.passed, report.errors
    assert report.max_rel_error < 1e-3


def test_zero_epochs_keeps_initialization():
    model = desk_model()
    before = {k: v.copy() for k, v in model.state_dict().items()}
    trace = fusion.train(model, desk_batch(), FusionConfig.desk(epochs=0))
    assert trace == []
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_full_batch_training_is_deterministic():
    cfg = FusionConfig.desk(epochs=3, full_batch=True, input_shape=(8, 8, 8))
    traces, states = [], []
    for _ in range(2):
        model = fusion.build_model(cfg, 2, GRID)
        traces.append(fusion.train(model, desk_batch(shape=(8, 8, 8)), cfg))
        states.append(model.state_dict())
    assert traces[0] == traces[1] and len(traces[0]) == 3
    assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])


def test_training_reduces_loss_and_logs_validation():
    cfg = FusionConfig.desk(epochs=8, batch_size=4, lr=0.01, input_shape=(8, 8, 8))
    model = fusion.build_model(cfg, 2, GRID)
    batch = desk_batch(12, shape=(8, 8, 8))
    start = fusion.eval_loss(model, batch)
    trace = fusion.train(model, batch, cfg, validation=batch)
    assert [row[0] for row in trace] == list(range(8))
    assert all(0.0 <= row[2] <= 1.0 for row in trace)
    assert fusion.eval_loss(model, batch) < start


def test_training_needs_an_event():
    batch = desk_batch(4)
    batch.event = np.zeros(4, dtype=bool)
    with pytest.raises(InputError, match="event"):
        fusion.train(desk_model(), batch)


def test_eval_batch_invariance_and_duplicates():
    model = desk_model("v1")
    fusion.train(model, desk_batch(8, "v1"), FusionConfig.desk("v1", epochs=1, batch_size=4))
    batch = desk_batch(8, "v1", seed=5)
    full = model.risk(batch)
    for i in (0, 5):
        alone = model.risk(batch.subset([i]))
        assert abs(alone[0] - full[i]) < 1e-10
    dup = model.risk(batch.subset([3, 3, 1]))
    assert dup[0] == dup[1]


def test_zero_inputs_give_equal_finite_risks():
    model = desk_model()
    batch = MultimodalBatch(["a", "b", "c"], {"fused": np.zeros((3, 1, 16, 16, 16))},
                            np.zeros((3, 2)))
    risks = model.risk(batch)
    assert np.all(np.isfinite(risks)) and risks[0] == risks[1] == risks[2]


def test_checkpoint_round_trip(tmp_path):
    model = desk_model("v1")
    fusion.train(model, desk_batch(6, "v1"), FusionConfig.desk("v1", epochs=1))
    model.save(tmp_path / "m", extra={"note": "x"})
    again, manifest = fusion.DeepFusionModel.load(tmp_path / "m")
    batch = desk_batch(4, "v1", seed=9)
    assert np.array_equal(again.risk(batch), model.risk(batch))
    assert manifest["note"] == "x" and manifest["config"]["variant"] == "v1"
