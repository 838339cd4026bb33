"""Pre-norm encoder-only Transformer with any-variate attention and SwiGLU."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, SegmentLayout, attend
from .autodiff import Tensor
from .mixture import COMPONENTS, N_DIST_PARAMS, mixture_log_prob
from .packing import PackedBatch
from .patching import MAX_PATCH_SIZE, PATCH_SIZES, ConfigError
from .projections import ProjectionBank, embed_rows, project_out

RMS_EPS = 1e-6


@dataclass
class ModelConfig:
    layers: int = 2
    d_model: int = 64
    d_ff: int = 256
    heads: int = 2
    d_kv: int = 32
    patch_sizes: tuple = PATCH_SIZES
    components: tuple = COMPONENTS

    def __post_init__(self):
        self.patch_sizes = tuple(int(p) for p in self.patch_sizes)
        self.components = tuple(self.components)
        if self.d_kv % 2:
            raise ConfigError("d_kv must be even")
        if min(self.layers, self.d_model, self.d_ff, self.heads) < 1:
            raise ConfigError("model dimensions must be positive")

    @property
    def ffn_hidden(self) -> int:
        # SwiGLU has three maps; 2/3 width keeps the plain-FFN parameter count
        return int(round(2 * self.d_ff / 3))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


PRESETS = {
    "tiny": ModelConfig(2, 64, 256, 2, 32),
    "small": ModelConfig(6, 384, 1536, 6, 64),
    "base": ModelConfig(12, 768, 3072, 12, 64),
    "large": ModelConfig(24, 1024, 4096, 16, 64),
}


def preset(name: str) -> ModelConfig:
    try:
        return ModelConfig(**asdict(PRESETS[name]))
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def count_parameters(cfg: ModelConfig) -> int:
    """Parameter count from dimensions alone (nothing is allocated)."""
    d, inner, hid = cfg.d_model, cfg.heads * cfg.d_kv, cfg.ffn_hidden
    attn = 4 * d * inner + 2 * cfg.d_kv + 2 * cfg.heads
    ffn = 3 * d * hid
    per_layer = attn + ffn + 2 * d
    proj = len(cfg.patch_sizes) * (MAX_PATCH_SIZE * d + d * MAX_PATCH_SIZE * N_DIST_PARAMS)
    return cfg.layers * per_layer + d + proj + d


def rms_norm(x, gain, eps: float = RMS_EPS) -> Tensor:
    """``x / sqrt(mean(x^2) + eps) * gain`` over the last axis."""
    return ad.rms_norm(x, gain, eps)


def swiglu_ffn(x, w_gate, w_up, w_down) -> Tensor:
    return ad.swiglu_gate(x @ w_gate, x @ w_up) @ w_down


@dataclass
class Layer:
    attn_norm: Tensor
    attn: AttentionParams
    ffn_norm: Tensor
    w_gate: Tensor
    w_up: Tensor
    w_down: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.attn_norm, *self.attn.parameters(), self.ffn_norm, self.w_gate, self.w_up, self.w_down]


class Model:
    """Projection bank + encoder stack + mixture head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, hid = cfg.d_model, cfg.ffn_hidden

        def xavier(fan_in, fan_out, name):
            std = (2.0 / (fan_in + fan_out)) ** 0.5
            return Tensor(rng.normal(0, std, (fan_in, fan_out)), requires_grad=True, name=name)

        self.bank = ProjectionBank(d, rng, cfg.patch_sizes)
        self.layers: list[Layer] = []
        for i in range(cfg.layers):
            pre = f"layers.{i}."
            self.layers.append(Layer(
                attn_norm=Tensor(np.ones(d), requires_grad=True, name=pre + "attn_norm"),
                attn=AttentionParams.init(d, cfg.heads, cfg.d_kv, rng, prefix=pre + "attn."),
                ffn_norm=Tensor(np.ones(d), requires_grad=True, name=pre + "ffn_norm"),
                w_gate=xavier(d, hid, pre + "ffn.w_gate"),
                w_up=xavier(d, hid, pre + "ffn.w_up"),
                w_down=xavier(hid, d, pre + "ffn.w_down"),
            ))
        self.final_norm = Tensor(np.ones(d), requires_grad=True, name="final_norm")

    # -- parameters ---------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.bank.parameters())
        for layer in self.layers:
            params.update({t.name: t for t in layer.parameters()})
        params["final_norm"] = self.final_norm
        return params

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters {sorted(missing)[:5]}")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigError(f"{k}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.copy()

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    # -- forward ------------------------------------------------------------
    def forward(self, batch: PackedBatch) -> Tensor:
        """Encoded tokens ``[rows, row_len, d_model]``."""
        r, n = batch.sample_id.shape
        x = embed_rows(
            batch.patches.reshape(r * n, -1), batch.patch_size.reshape(-1), batch.is_mask.reshape(-1), self.bank
        ).reshape(r, n, self.cfg.d_model)
        layout = SegmentLayout.build(batch.sample_id, batch.variate_id)
        for layer in self.layers:
            x = x + attend(rms_norm(x, layer.attn_norm), batch.time_id, batch.variate_id, batch.sample_id,
                           layer.attn, layout=layout)
            h = rms_norm(x, layer.ffn_norm)
            x = x + swiglu_ffn(h, layer.w_gate, layer.w_up, layer.w_down)
        return rms_norm(x, self.final_norm)

    def _groups(self, batch: PackedBatch, tokens: np.ndarray):
        flat_ps = batch.patch_size.reshape(-1)
        for p in np.unique(flat_ps[tokens]):
            yield int(p), tokens[flat_ps[tokens] == p]

    def loss(self, batch: PackedBatch, encoded: Tensor | None = None) -> Tensor:
        """Mean NLL over loss-mask elements (normalized space)."""
        encoded = self.forward(batch) if encoded is None else encoded
        r, n = batch.sample_id.shape
        flat = encoded.reshape(r * n, self.cfg.d_model)
        lmask = batch.loss_mask.reshape(r * n, -1)
        patches = batch.patches.reshape(r * n, -1)
        tokens = np.flatnonzero(lmask.any(axis=1))
        if tokens.size == 0:
            raise ad.ContractError("batch has no loss elements")
        raws, ys = [], []
        for p, idx in self._groups(batch, tokens):
            raw = project_out(ad.take(flat, idx, axis=0), self.bank, p)
            sel = np.flatnonzero(lmask[idx, :p].ravel())
            raws.append(ad.take(raw.reshape(-1, N_DIST_PARAMS), sel, axis=0))
            ys.append(patches[idx, :p].ravel()[sel])
        raw_el = raws[0] if len(raws) == 1 else ad.concat(raws, axis=0)
        lp = mixture_log_prob(raw_el, np.concatenate(ys), self.cfg.components)
        return -lp.mean()

    def raw_outputs(self, batch: PackedBatch) -> list[np.ndarray]:
        """Raw mixture parameters ``[tokens, P, 12]`` per packed sample."""
        with ad.no_grad():
            encoded = self.forward(batch)
            out = []
            for i, s in enumerate(batch.samples):
                enc = batch.sample_rows(i, encoded.data)
                out.append(project_out(Tensor(enc), self.bank, s.patch_size).data)
        return out
