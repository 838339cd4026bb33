"""Parameter counts of every preset, from dimensions alone."""

from anyvariate.encoder import PRESETS, count_parameters

for name, cfg in PRESETS.items():
    print(f"{name:6s} layers {cfg.layers:2d}  d_model {cfg.d_model:5d}  params {count_parameters(cfg):>13,}")
