"""Multi patch size input/output projections and the learnable mask embedding.

One bias-free input map and one output map exist per patch size in
``PATCH_SIZES``. Each is allocated at the width of the largest patch size and
a size-``P`` sequence reads only its first ``P`` input rows / ``P`` output
element blocks (equivalent to zero-padding patches up to 128 steps).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mixture import N_DIST_PARAMS
from .patching import MAX_PATCH_SIZE, PATCH_SIZES, ConfigError, FlattenedTokens


class ProjectionBank:
    def __init__(self, d_model: int, rng: np.random.Generator | None = None,
                 patch_sizes=PATCH_SIZES, n_dist_params: int = N_DIST_PARAMS, zero: bool = False):
        self.d_model = d_model
        self.patch_sizes = tuple(patch_sizes)
        self.n_dist_params = n_dist_params
        rng = rng or np.random.default_rng(0)
        self.in_proj: dict[int, Tensor] = {}
        self.out_proj: dict[int, Tensor] = {}
        for p in self.patch_sizes:
            w_in = np.zeros((MAX_PATCH_SIZE, d_model)) if zero else rng.normal(0, (1.0 / p) ** 0.5, (MAX_PATCH_SIZE, d_model))
            w_out = np.zeros((d_model, MAX_PATCH_SIZE * n_dist_params)) if zero else rng.normal(0, 1e-3, (d_model, MAX_PATCH_SIZE * n_dist_params))
            self.in_proj[p] = Tensor(w_in, requires_grad=True, name=f"in_proj.{p}")
            self.out_proj[p] = Tensor(w_out, requires_grad=True, name=f"out_proj.{p}")
        mask = np.zeros(d_model) if zero else rng.normal(0, 0.02, d_model)
        self.mask_embedding = Tensor(mask, requires_grad=True, name="mask_embedding")

    def parameters(self) -> dict[str, Tensor]:
        params = {t.name: t for t in self.in_proj.values()}
        params.update({t.name: t for t in self.out_proj.values()})
        params["mask_embedding"] = self.mask_embedding
        return params

    def _check(self, patch_size: int) -> None:
        if patch_size not in self.in_proj:
            raise ConfigError(f"no projection weights for patch size {patch_size}")


def embed(tokens: FlattenedTokens, bank: ProjectionBank) -> Tensor:
    """Embed one flattened sequence: ``[num_tokens, d_model]``."""
    return embed_rows(tokens.patches, np.full(tokens.num_tokens, tokens.patch_size), tokens.is_mask, bank)


def embed_rows(patches: np.ndarray, patch_size: np.ndarray, is_mask: np.ndarray, bank: ProjectionBank) -> Tensor:
    """Embed tokens of mixed patch sizes.

    ``patches`` is ``[n, width]`` with each row's first ``patch_size[i]``
    entries meaningful; tokens with ``patch_size == 0`` (padding) embed to zero.
    Masked tokens are replaced outright by the mask embedding.
    """
    patches = np.asarray(patches, dtype=np.float64)
    patch_size = np.asarray(patch_size)
    is_mask = np.asarray(is_mask, dtype=bool)
    n = patches.shape[0]
    parts, order = [], []
    for p in np.unique(patch_size[patch_size > 0]):
        p = int(p)
        bank._check(p)
        idx = np.flatnonzero((patch_size == p) & ~is_mask)
        if idx.size:
            parts.append(ad.Tensor(patches[idx, :p]) @ bank.in_proj[p][:p])
            order.append(idx)
    masked = np.flatnonzero(is_mask & (patch_size > 0))
    if masked.size:
        parts.append(ad.broadcast_to(bank.mask_embedding, (masked.size, bank.d_model)))
        order.append(masked)
    rest = np.setdiff1d(np.arange(n), np.concatenate(order) if order else [])
    if rest.size:
        parts.append(ad.Tensor(np.zeros((rest.size, bank.d_model))))
        order.append(rest)
    stacked = ad.concat(parts, axis=0)
    inverse = np.empty(n, dtype=np.int64)
    inverse[np.concatenate(order)] = np.arange(n)
    return ad.take(stacked, inverse, axis=0)


def project_out(encoded: Tensor, bank: ProjectionBank, patch_size: int) -> Tensor:
    """Raw mixture parameters ``[num_tokens, patch_size, n_dist_params]``."""
    encoded = ad.as_tensor(encoded)
    if encoded.shape[-1] != bank.d_model:
        raise ad.ShapeError(f"encoded width {encoded.shape[-1]} != d_model {bank.d_model}")
    bank._check(patch_size)
    k = bank.n_dist_params
    w = bank.out_proj[patch_size][:, : patch_size * k]
    return (encoded @ w).reshape(encoded.shape[0], patch_size, k)
