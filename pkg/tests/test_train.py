import json

import numpy as np
import pytest
import torch

from occlandmarks.losses import LossWeights, NonFiniteLossError
from occlandmarks.train import (
    TrainConfig,
    _batch,
    prepare_samples,
    train,
    train_config_from_dict,
)


def _cfg(**kw):
    base = {"epochs": 2, "warm_start_epochs": 1, "batch_size": 8, "lr": 1e-3, "weights": LossWeights(stages=[1.0])}
    base.update(kw)
    return TrainConfig(**base)


def _vis_state(model):
    return {k: v.clone() for k, v in model.visibility.state_dict().items()}


def test_warm_start_log_and_frozen_head(make_model, prepared):
    data = prepared(32, crop=32)
    model = make_model()
    before = _vis_state(model)
    result = train(model, data, _cfg(epochs=1, warm_start_epochs=1))
    line = result.log[0]
    assert line["L_vis"] == 0.0 and line["L_syn"] == 0.0
    assert line["L_hm"] > 0
    after = model.visibility.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_head_joins_after_warm_start(make_model, prepared):
    model = make_model()
    before = _vis_state(model)
    result = train(model, prepared(32, crop=32), _cfg())
    assert result.log[1]["L_vis"] > 0
    assert any(not torch.equal(before[k], v) for k, v in model.visibility.state_dict().items())


def test_log_schema(make_model, prepared, tmp_path):
    train(make_model(), prepared(16, crop=32), _cfg(), out_dir=tmp_path)
    lines = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [x["epoch"] for x in lines] == [1, 2]
    for x in lines:
        assert set(x) == {"epoch", "L_hm", "L_pt", "L_edge", "L_vis", "L_syn", "total", "lr"}
        assert x["total"] == pytest.approx(sum(x[k] for k in ("L_hm", "L_pt", "L_edge", "L_vis", "L_syn")))
    assert (tmp_path / "checkpoint.pt").exists()


def test_deterministic(make_model, prepared):
    a = train(make_model(), prepared(16, crop=32), _cfg()).log
    b = train(make_model(), prepared(16, crop=32), _cfg()).log
    assert a == b


def test_resume_matches_uninterrupted(make_model, prepared, tmp_path):
    data = prepared(16, crop=32)
    full = train(make_model(), data, _cfg(epochs=3)).log
    part = tmp_path / "run"

    class Stop(Exception):
        pass

    def stop_after_two(line):
        if line["epoch"] == 2:
            raise Stop

    with pytest.raises(Stop):
        train(make_model(), data, _cfg(epochs=3), out_dir=part, log_fn=stop_after_two)
    resumed = train(make_model(), data, _cfg(epochs=3), out_dir=part, resume=True)
    assert resumed.log == full
    assert resumed.step == 3 * 2


def test_periodic_checkpoints(make_model, prepared, tmp_path):
    train(make_model(), prepared(8, crop=32), _cfg(epochs=2, checkpoint_every=1), out_dir=tmp_path)
    assert (tmp_path / "checkpoint_epoch001.pt").exists() and (tmp_path / "checkpoint_epoch002.pt").exists()


def test_empty_dataset(make_model):
    empty = prepare_samples([], (32, 32), 4)
    with pytest.raises(ValueError, match="empty train split"):
        train(make_model(), empty, _cfg())


def test_non_finite_loss_aborts(make_model, prepared):
    model = make_model()
    with torch.no_grad():
        model.backbone.heatmap_heads[0].bias.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as info:
        train(model, prepared(8, crop=32), _cfg())
    assert info.value.term == "L_hm"


def test_occluded_heatmap_weight_changes_loss(make_model, prepared):
    data = prepared(16, crop=32)
    assert np.any(data.visibility == 0)
    a = train(make_model(), data, _cfg(epochs=1)).log[0]["L_hm"]
    b = train(make_model(), data, _cfg(epochs=1, occluded_heatmap_weight=0.0)).log[0]["L_hm"]
    assert b < a


def test_config_validation():
    errs = TrainConfig(epochs=2, warm_start_epochs=3, lr=0, mask_prob=2.0).problems()
    assert len(errs) == 3
    assert TrainConfig(epochs=8).warm_epochs == 2
    cfg = train_config_from_dict({"epochs": 4, "weights": {"vis": 2.0}, "mask": {"count": [1, 2]}})
    assert cfg.weights.vis == 2.0 and cfg.mask.count == (1, 2)


def test_smoke_heatmap_loss_halves(make_model, prepared):
    model = make_model(stacks=1, channels=16, crop=64)
    log = train(model, prepared(200), TrainConfig(epochs=20, batch_size=16, lr=3e-3,
                                                 weights=LossWeights(stages=[1.0]))).log
    assert log[-1]["L_hm"] < 0.5 * log[0]["L_hm"]


def test_masked_views_are_appended(prepared):
    data = prepared(6, crop=32)
    data.visibility[1, :5] = 0
    idx, flags = np.array([3, 1, 4, 0]), np.array([False, True, False, True])
    b = _batch(data, idx, flags, 0, 1, _cfg(mask_prob=1.0), 4)
    assert b["crops"].shape[0] == 6
    assert b["masked"].tolist() == [0, 0, 0, 0, 1, 1]
    assert torch.equal(b["crops"][:4], torch.from_numpy(data.crops[idx]))
    assert torch.equal(b["heatmaps"][4], torch.from_numpy(data.heatmaps[1]))
    assert torch.equal(b["labels"][:4], torch.from_numpy(data.visibility[idx].astype(np.float32)))
    # a point occluded in the source image can never turn visible in its masked view
    assert torch.all(b["labels"][4] <= b["visibility"][4]) and torch.all(b["labels"][4, :5] == 0)


def test_no_masking_keeps_the_batch_clean(prepared):
    data = prepared(4, crop=32)
    b = _batch(data, np.arange(4), np.zeros(4, bool), 0, 1, _cfg(mask_prob=0.0), 4)
    assert b["crops"].shape[0] == 4 and float(b["masked"].sum()) == 0.0
