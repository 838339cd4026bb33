"""Training loop: sample -> pack -> forward -> NLL -> clipped AdamW."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .archive import Archive
from .autodiff import NumericError, Tensor
from .encoder import Model, ModelConfig
from .packing import ROW_LEN, PackedBatch, first_fit_decreasing, pack, padding_fraction
from .patching import ConfigError
from .sampler import SamplingConfig, TaskSampler


@dataclass
class ScheduleConfig:
    total_steps: int = 5000
    warmup_steps: int = 100
    base_lr: float = 1e-3

    def __post_init__(self):
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"need 0 <= warmup ({self.warmup_steps}) <= total ({self.total_steps}), total >= 1")


@dataclass
class AdamWConfig:
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    clip_norm: float | None = 1.0


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    hp: AdamWConfig = field(default_factory=AdamWConfig)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    batch_size: int = 8  # packed rows per step
    row_len: int = ROW_LEN
    seed: int = 0
    checkpoint_every: int = 500
    keep_checkpoints: int = 3


PROFILES = {
    "desk": dict(schedule=dict(total_steps=5000, warmup_steps=100), batch_size=8),
    # documentation parity with the large-scale recipe; not meant to run here
    "paper": dict(schedule=dict(total_steps=100_000, warmup_steps=10_000), batch_size=256),
}


def lr_at(step: int, schedule: ScheduleConfig) -> float:
    """Linear warmup then cosine decay to zero; zero past ``total_steps``."""
    s, w, total, base = step, schedule.warmup_steps, schedule.total_steps, schedule.base_lr
    if s < 0:
        raise ValueError("negative step")
    if s > total:
        return 0.0
    if s <= w:
        return base * s / w if w > 0 else base
    return base * 0.5 * (1.0 + math.cos(math.pi * (s - w) / (total - w)))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm > max_norm:
        k = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= k
    return norm


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState, lr: float) -> None:
    """In-place bias-corrected Adam with decoupled weight decay."""
    hp = state.hp
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r} at step {state.step}")
    state.step += 1
    c1 = 1.0 - hp.beta1 ** state.step
    c2 = 1.0 - hp.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= hp.beta1
        m += (1 - hp.beta1) * g
        v *= hp.beta2
        v += (1 - hp.beta2) * g * g
        p.data = p.data - lr * ((m / c1) / (np.sqrt(v / c2) + hp.eps) + hp.weight_decay * p.data)


def next_batch(sampler: TaskSampler, rows: int, row_len: int = ROW_LEN) -> PackedBatch:
    """Draw samples until one more would not fit in ``rows`` FFD rows.

    The RNG is rewound before the overflowing draw, so the next batch starts
    with that same sample and no state besides the RNG needs saving.
    """
    samples, sizes = [], []
    while True:
        state = sampler.get_state()
        s = sampler.sample()
        if len(first_fit_decreasing(sizes + [s.num_tokens], row_len)) > rows:
            if not samples:
                raise ConfigError("batch cannot hold a single sample")
            sampler.set_state(state)
            return pack(samples, row_len)
        samples.append(s)
        sizes.append(s.num_tokens)


def _from_dict(cls, d):
    return cls(**d) if isinstance(d, dict) else d


def make_config(profile: str = "desk", **overrides) -> TrainConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    base = dict(PROFILES[profile])
    sched = dict(base.get("schedule", {}))
    sched.update(overrides.pop("schedule", None) or {})
    base.update(overrides)
    base.pop("schedule", None)
    # a short run keeps the warmup no longer than itself
    sched["warmup_steps"] = min(sched.get("warmup_steps", 0), sched.get("total_steps", ScheduleConfig.total_steps))
    cfg = TrainConfig(**{k: v for k, v in base.items() if k not in ("model", "sampling", "optimizer")})
    cfg.schedule = ScheduleConfig(**sched)
    for key, cls in (("model", ModelConfig), ("sampling", SamplingConfig), ("optimizer", AdamWConfig)):
        if key in base:
            setattr(cfg, key, _from_dict(cls, base[key]))
    return cfg


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["model"]["patch_sizes"] = list(cfg.model.patch_sizes)
    d["model"]["components"] = list(cfg.model.components)
    d["sampling"]["pred_proportion_range"] = list(cfg.sampling.pred_proportion_range)
    d["sampling"]["betabinom"] = list(cfg.sampling.betabinom)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    return TrainConfig(
        model=ModelConfig(**d.pop("model")),
        schedule=ScheduleConfig(**d.pop("schedule")),
        sampling=SamplingConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("sampling").items()}),
        optimizer=AdamWConfig(**d.pop("optimizer")),
        **d,
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model, opt: OptimizerState, sampler: TaskSampler, cfg: TrainConfig,
                    losses: list[float]) -> Path:
    arrays = {f"param.{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"adam.m.{k}": v for k, v in opt.m.items()})
    arrays.update({f"adam.v.{k}": v for k, v in opt.v.items()})
    extras = {"step": opt.step, "sampler_rng": sampler.get_state(), "losses": losses}
    return ckpt.save(path, config_to_dict(cfg), arrays, extras)


def load_model(path) -> tuple[Model, TrainConfig, dict]:
    config, arrays, extras = ckpt.load(path)
    cfg = config_from_dict(config)
    model = Model(cfg.model, seed=cfg.seed)
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
    return model, cfg, {"arrays": arrays, **extras}


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    model: Model
    losses: list[float]
    optimizer: OptimizerState
    checkpoints: list[Path]
    seconds: float


def _rotate_checkpoints(out: Path, keep: int) -> list[Path]:
    found = sorted(out.glob("step_*.ckpt"))
    for old in found[:-keep]:
        old.unlink()
    return found[-keep:]


def train(archive: Archive, cfg: TrainConfig, out_dir=None, resume=None, stop_at: int | None = None,
          log=None) -> TrainResult:
    """Run (or resume) training.

    ``stop_at`` ends the loop early without changing the schedule, which lets
    tests interrupt and resume a run. ``log`` receives each metrics record.
    """
    model = Model(cfg.model, seed=cfg.seed)
    sampler = TaskSampler(archive, cfg.sampling, seed=cfg.seed)
    opt = OptimizerState(hp=cfg.optimizer)
    losses: list[float] = []
    if resume is not None:
        _, arrays, extras = ckpt.load(resume)
        model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
        opt.m = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
        opt.v = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}
        opt.step = int(extras["step"])
        sampler.set_state(extras["sampler_rng"])
        losses = list(extras.get("losses", []))

    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.jsonl", "a" if resume is not None else "w")
    params = model.parameters()
    end = cfg.schedule.total_steps if stop_at is None else min(stop_at, cfg.schedule.total_steps)
    t0 = time.perf_counter()
    try:
        while opt.step < end:
            batch = next_batch(sampler, cfg.batch_size, cfg.row_len)
            model.zero_grad()
            loss = model.loss(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at step {opt.step}")
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            if cfg.optimizer.clip_norm is not None:
                clip_grad_norm(grads, cfg.optimizer.clip_norm)
            lr = lr_at(opt.step + 1, cfg.schedule)
            adamw_step(params, grads, opt, lr)
            losses.append(value)
            record = {"step": opt.step, "lr": lr, "nll": value, "tokens": batch.num_tokens,
                      "padding_fraction": padding_fraction(batch)}
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record) + "\n")
            if log is not None:
                log(record)
            if out is not None and opt.step % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"step_{opt.step:08d}.ckpt", model, opt, sampler, cfg, losses)
                _rotate_checkpoints(out, cfg.keep_checkpoints)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    kept = []
    if out is not None:
        save_checkpoint(out / "final.ckpt", model, opt, sampler, cfg, losses)
        kept = _rotate_checkpoints(out, cfg.keep_checkpoints) + [out / "final.ckpt"]
    return TrainResult(model, losses, opt, kept, time.perf_counter() - t0)
