import json

import numpy as np
import pytest

from anyvariate.archive import Archive, SubDataset
from anyvariate.autodiff import NumericError, Tensor
from anyvariate.encoder import ModelConfig
from anyvariate.patching import ConfigError
from anyvariate.sampler import TaskSampler
from anyvariate.trainer import (
    AdamWConfig,
    OptimizerState,
    ScheduleConfig,
    adamw_step,
    clip_grad_norm,
    config_from_dict,
    config_to_dict,
    load_model,
    lr_at,
    make_config,
    next_batch,
    train,
)

from conftest import make_series

SMALL = ModelConfig(layers=1, d_model=32, d_ff=64, heads=2, d_kv=16, patch_sizes=(8, 16, 32))


@pytest.fixture(scope="module")
def sine_archive():
    lengths = np.linspace(120, 300, 6).astype(int)
    return Archive([SubDataset("sine", [make_series(n=int(n), seed=i, sid=f"s{i}") for i, n in enumerate(lengths)])])


def cfg(steps, lr=1e-2, **kw):
    return make_config("desk", model=SMALL, schedule=dict(total_steps=steps, warmup_steps=min(20, steps), base_lr=lr),
                       batch_size=1, row_len=128, **kw)


def test_lr_schedule():
    s = ScheduleConfig(total_steps=1000, warmup_steps=100, base_lr=1e-3)
    assert lr_at(0, s) == 0.0
    assert lr_at(100, s) == pytest.approx(1e-3)
    assert lr_at(50, s) == pytest.approx(5e-4)
    assert lr_at(550, s) == pytest.approx(5e-4)
    assert lr_at(1000, s) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(2000, s) == 0.0
    with pytest.raises(ConfigError):
        ScheduleConfig(total_steps=10, warmup_steps=20)


def _adam(hp, data, grad, lr):
    p = {"w": Tensor(np.array(data, float))}
    st = OptimizerState(hp=hp)
    adamw_step(p, {"w": np.array(grad, float)}, st, lr)
    return p["w"].data, st


def test_adamw_zero_gradient_no_decay_is_identity():
    out, _ = _adam(AdamWConfig(weight_decay=0.0), [1.0, -2.0], [0.0, 0.0], 1e-2)
    np.testing.assert_array_equal(out, [1.0, -2.0])


def test_adamw_first_step_magnitude_is_lr():
    out, st = _adam(AdamWConfig(weight_decay=0.0), [1.0, -2.0, 0.5], [3.0, -0.2, 1e-3], 1e-2)
    np.testing.assert_allclose(np.array([1.0, -2.0, 0.5]) - out, [1e-2, -1e-2, 1e-2 * 1e-3 / (1e-3 + 1e-8)], rtol=1e-6)
    assert st.step == 1


def test_adamw_decay_only_shrinks():
    out, _ = _adam(AdamWConfig(weight_decay=0.1), [2.0, -4.0], [0.0, 0.0], 1e-2)
    np.testing.assert_allclose(out, np.array([2.0, -4.0]) * (1 - 1e-2 * 0.1), rtol=1e-15)


def test_adamw_names_bad_parameter():
    p = {"layers.0.w": Tensor(np.ones(2))}
    with pytest.raises(NumericError, match="layers.0.w"):
        adamw_step(p, {"layers.0.w": np.array([1.0, np.inf])}, OptimizerState(), 1e-3)


def test_clip_grad_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert np.sqrt(g["a"] ** 2 + g["b"] ** 2)[0] == pytest.approx(1.0)
    g = {"a": np.array([0.3])}
    clip_grad_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_make_config_merges_schedule():
    c = make_config("desk", schedule=dict(total_steps=50))
    assert c.schedule.total_steps == 50 and c.schedule.warmup_steps == 50 and c.schedule.base_lr == 1e-3
    assert make_config("paper").batch_size == 256
    with pytest.raises(ConfigError):
        make_config("cluster")
    c2 = config_from_dict(json.loads(json.dumps(config_to_dict(cfg(5)))))
    assert c2 == cfg(5)


def test_next_batch_rewinds_overflowing_draw(sine_archive):
    a = TaskSampler(sine_archive, seed=3)
    b1 = next_batch(a, rows=1, row_len=64)
    b2 = next_batch(a, rows=1, row_len=64)
    # replay draws one by one: the first sample of batch two followed batch one's samples
    ref = TaskSampler(sine_archive, seed=3)
    seq = [ref.sample() for _ in range(len(b1.samples) + 1)]
    np.testing.assert_array_equal(seq[-1].patches, b2.samples[0].patches)


def test_overfits_sinusoids(sine_archive):
    res = train(sine_archive, cfg(500))
    assert res.losses[-1] < res.losses[0] - 1.0


def test_bit_identical_and_resume(sine_archive, tmp_path):
    c = cfg(40)
    c.checkpoint_every = 10
    full = train(sine_archive, c, out_dir=tmp_path / "a")
    again = train(sine_archive, c)
    assert full.losses == again.losses
    part = train(sine_archive, c, out_dir=tmp_path / "b", stop_at=20)
    assert len(part.losses) == 20
    resumed = train(sine_archive, c, out_dir=tmp_path / "b", resume=tmp_path / "b" / "step_00000020.ckpt")
    np.testing.assert_allclose(resumed.losses, full.losses, rtol=0, atol=1e-9)

    # rotation keeps the last three periodic checkpoints plus the final one
    assert sorted(p.name for p in (tmp_path / "a").glob("*.ckpt")) == [
        "final.ckpt", "step_00000020.ckpt", "step_00000030.ckpt", "step_00000040.ckpt"]
    records = [json.loads(line) for line in (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == 40
    assert set(records[0]) == {"step", "lr", "nll", "tokens", "padding_fraction"}
    assert [r["nll"] for r in records] == full.losses
    lines_b = (tmp_path / "b" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["step"] for x in lines_b] == list(range(1, 41))

    model, loaded_cfg, extras = load_model(tmp_path / "a" / "final.ckpt")
    assert loaded_cfg == c and extras["step"] == 40
    for k, v in full.model.state_dict().items():
        assert np.array_equal(model.state_dict()[k], v)
