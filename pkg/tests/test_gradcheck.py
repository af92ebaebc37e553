"""The bundled layer-by-layer gradient verification suite."""

import numpy as np
import pytest

from siamcaps import autodiff as ad
from siamcaps import gradcheck as gc


EXPECTED_NAMES = [
    "conv2d", "batchnorm", "dense", "squash", "dynamic_routing",
    "capsule_layer_tanh", "contrastive_loss", "double_margin_loss",
    "concrete_dropout",
]


def test_suite_lists_each_layer_once():
    names = [name for name, _ in gc.CHECKS]
    assert names == EXPECTED_NAMES
    assert len(set(names)) == len(names)


def test_suite_all_below_threshold():
    results = gc.run_suite(seed=0)
    assert [n for n, _ in results] == EXPECTED_NAMES
    for name, err in results:
        assert np.isfinite(err), name
        assert err < gc.THRESHOLD, f"{name}: {err}"
    assert gc.suite_passes(results)


def test_suite_deterministic():
    a = gc.run_suite(seed=7)
    b = gc.run_suite(seed=7)
    assert a == b


def test_report_format():
    results = gc.run_suite(seed=0)
    report = gc.format_report(results)
    lines = report.splitlines()
    assert len(lines) == len(EXPECTED_NAMES) + 1
    for name, line in zip(EXPECTED_NAMES, lines):
        assert line.startswith(name)
        assert "max_rel_err=" in line and line.rstrip().endswith("ok")
    assert lines[-1].startswith("overall") and lines[-1].endswith("PASS")


def test_corrupted_tanh_backward_fails_suite(monkeypatch):
    """Negative control: a broken vjp must be caught, not masked."""
    real_tanh = ad.tanh

    def bad_tanh(x):
        out = real_tanh(x)
        g = ad.active_graph()
        if g is not None and g.nodes:
            op, out_id, input_ids, real_vjp = g.nodes[-1]
            scaled = lambda grad: [gi * 1.01 if gi is not None else None
                                   for gi in real_vjp(grad)]
            g.nodes[-1] = (op, out_id, input_ids, scaled)
        return out

    monkeypatch.setattr(ad, "tanh", bad_tanh)
    monkeypatch.setattr("siamcaps.capsules.ad.tanh", bad_tanh)
    results = gc.run_suite(seed=0)
    failed = [name for name, err in results if err >= gc.THRESHOLD]
    assert "capsule_layer_tanh" in failed
    assert not gc.suite_passes(results)
    report = gc.format_report(results)
    assert report.splitlines()[-1].endswith("FAIL")


def test_suite_fast_enough():
    import time
    t0 = time.monotonic()
    gc.run_suite(seed=1)
    assert time.monotonic() - t0 < 60.0
