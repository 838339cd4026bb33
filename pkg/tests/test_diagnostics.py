import numpy as np

from anyvariate.archive import Archive, SubDataset
from anyvariate.diagnostics import histogram_total, pack_stats, tune
from anyvariate.evaluation import DEFAULT_PROTOCOL
from anyvariate.patching import Frequency

from conftest import make_series


def small_archive():
    return Archive([
        SubDataset("m", [make_series(n=150, sid=f"m{i}", seed=i) for i in range(3)]),
        SubDataset("mv", [make_series(nvar=4, n=300, sid="mv")]),
    ])


def test_pack_stats_histogram_and_bounds():
    rep = pack_stats(small_archive(), iterations=5, samples_per_iteration=32, seed=1)
    assert histogram_total(rep) == 5 * 32
    assert 0 <= rep.packed_padding < rep.unpacked_padding < 1
    assert rep.histogram_edges[0] == 0 and rep.histogram_edges[-1] == 512
    again = pack_stats(small_archive(), iterations=5, samples_per_iteration=32, seed=1)
    assert again == rep


def test_tune_picks_grid_minimum(micro_model):
    ar = Archive([SubDataset("m", [make_series(n=80, sid="a")])])
    chosen = tune(micro_model, ar, {Frequency.MONTHLY: (6, 1)}, contexts=(12, 40), n_samples=8)
    c = chosen["m"]
    grid = {(g["context_length"], g["patch_size"]): g["crps"] for g in c["grid"]}
    assert set(grid) == {(12, 8), (12, 16), (12, 32), (40, 8), (40, 16), (40, 32)}
    assert c["validation_crps"] == min(grid.values())
    assert grid[(c["context_length"], c["patch_size"])] == c["validation_crps"]
    assert DEFAULT_PROTOCOL[Frequency.HOURLY] == (24, 7)
    assert np.isfinite(c["validation_crps"])
