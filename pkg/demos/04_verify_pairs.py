"""Pair verification: distances, threshold selection, and densities.

Runs the trained checkpoint from demo 03 (training it first if needed),
then shows how match/non-match decisions work: embed both images with the
tied-weight encoder, take the distance, and compare against a threshold
swept on held-back training pairs.  The two distance histograms separate
as the model learns.
"""

import dataclasses
import os

from siamcaps import eval_run, overlap_coefficient
from siamcaps.harness import (build_run_encoder, evaluate, load_dataset,
                              make_split)

import importlib.util

_spec = importlib.util.spec_from_file_location(
    "train_demo", os.path.join(os.path.dirname(__file__),
                               "03_train_synthetic.py"))
train_demo = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(train_demo)


def main():
    ckpt = os.path.join(train_demo.OUT, "final.ckpt")
    if not os.path.isfile(ckpt):
        print("no checkpoint yet - running the training demo first\n")
        train_demo.main()
        print()

    # Reuse the training configuration, point the outputs elsewhere.
    cfg = dataclasses.replace(
        _reconstruct_cfg(), output_dir=os.path.join(
            os.path.dirname(__file__), "runs", "verify_demo"))

    res = eval_run(ckpt, cfg)
    print(f"zero-shot loss      : {res.loss:.4f}")
    print(f"zero-shot accuracy  : {res.accuracy:.2f}")
    print(f"decision threshold  : {res.threshold:.4f}")

    trained_overlap = overlap_coefficient(res.match_counts,
                                          res.nonmatch_counts)

    # Compare against an untrained encoder on the same split.
    fin = cfg.finalize()
    ds = load_dataset(fin)
    split = make_split(ds, fin)
    untrained = evaluate(build_run_encoder(fin), ds, split, fin)
    untrained_overlap = overlap_coefficient(untrained.match_counts,
                                            untrained.nonmatch_counts)

    print(f"histogram overlap   : trained {trained_overlap:.3f} vs "
          f"untrained {untrained_overlap:.3f}")
    print("density.csv written :",
          os.path.join(cfg.output_dir, "density.csv"))

    _ascii_density(res)


def _reconstruct_cfg():
    """The exact config demo 03 trained with."""
    from siamcaps import RunConfig
    return RunConfig(
        dataset="synthetic", model="scn", loss="contrastive",
        metric="euclidean_sq", m=2.0, epochs=6, pairs_per_epoch=24,
        batch_size=8, eval_pairs=40, holdout=2, synth_subjects=8,
        synth_per_subject=4, input_size=37, conv_channels=8,
        primary_types=4, primary_d=4, face_caps=8, face_d=8, embed_dim=10,
        routing_iters=3, alpha=0.01, seed=7, output_dir="unused")


def _ascii_density(res):
    print("\ndistance densities (#=match, o=non-match):")
    peak = max(res.match_counts.max(), res.nonmatch_counts.max(), 1)
    for i in range(0, len(res.match_counts), 5):
        lo = res.bin_edges[i]
        m = int(round(res.match_counts[i:i + 5].sum() * 30 / (peak * 5)))
        n = int(round(res.nonmatch_counts[i:i + 5].sum() * 30 / (peak * 5)))
        print(f"  D={lo:6.3f} | {'#' * m}{'o' * n}")


if __name__ == "__main__":
    main()
