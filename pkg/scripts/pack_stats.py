"""Padding fraction of packed vs one-sample-per-row batches on the desk archive."""

import argparse

from anyvariate.diagnostics import pack_stats
from anyvariate.synthetic import desk_archive


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--batch-samples", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rep = pack_stats(desk_archive(0), iterations=args.iterations, samples_per_iteration=args.batch_samples,
                     seed=args.seed)
    print(f"packed padding   {rep.packed_padding:.2%}")
    print(f"unpacked padding {rep.unpacked_padding:.2%}")
    print(f"mean tokens per sample {rep.mean_tokens:.1f}")
    width = max(rep.histogram_counts)
    for lo, c in zip(rep.histogram_edges, rep.histogram_counts):
        print(f"{lo:4d}+ {'#' * round(40 * c / width)}")


if __name__ == "__main__":
    main()
