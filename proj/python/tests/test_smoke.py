"""Smoke tests for the _mscred extension module.

Exercises the bound operations end to end on throwaway-sized data; the
heavy numeric validation lives in the C++ suites.
"""

import math
import os
import sys
import tempfile

import _mscred as m


def test_generate_shapes():
    x = m.generate_synthetic(n=6, T=400, lambda_=0.3, seed=1)
    assert x.shape == (6, 400)
    again = m.generate_synthetic(n=6, T=400, lambda_=0.3, seed=1)
    assert (x == again).all()


def test_signature_tensor():
    x = m.generate_synthetic(n=6, T=400, seed=2)
    t = m.signature_tensor(x, 300, [10, 30, 60])
    assert t.shape == (6, 6, 3)
    # symmetric per channel
    for c in range(3):
        ch = t[:, :, c]
        assert abs(ch - ch.T).max() == 0.0


def test_sequence_and_schedule():
    x = m.generate_synthetic(n=6, T=400, seed=3)
    seq = m.signature_sequence(x, 200, [10, 30, 60], h=5, gap=10)
    assert len(seq) == 5
    anchors = m.anchor_schedule(0, 400, [10, 30, 60], 5, 10)
    assert anchors[0] == 100
    assert anchors[-1] == 390


def test_inject_labels():
    x = m.generate_synthetic(n=8, T=1200, seed=4)
    injected, labels = m.inject_anomalies(x, 3, [30, 60, 90], 2, 600, 1200, seed=5)
    assert injected.shape == x.shape
    assert len(labels) == 3
    for label in labels:
        assert 600 <= label.start < 1200
        assert len(label.root_causes) == 2


def test_metrics_identity():
    metrics = m.event_metrics(
        [(1000, 1060), (1500, 1560), (2000, 2060), (2500, 2560)],
        [(1000, 60), (1500, 60), (2000, 60), (2500, 60), (3000, 60)],
        extend=10,
    )
    assert metrics.precision == 1.0
    assert abs(metrics.recall - 0.8) < 1e-12
    assert round(metrics.f1, 2) == 0.89


def test_recall_at_k():
    assert m.recall_at_k([[1, 2, 3]], [[1, 2, 3]], 3) == 1.0
    assert m.recall_at_k([[4, 5, 6]], [[1, 2, 3]], 3) == 0.0


def test_pipeline_micro():
    # A deliberately tiny end-to-end pass: generate, train a few epochs,
    # detect, evaluate. Checks wiring, not quality.
    with tempfile.TemporaryDirectory() as work:
        overrides = {
            "data_csv": f"{work}/series.csv",
            "labels_json": f"{work}/labels.json",
            "cache_path": f"{work}/signatures.bin",
            "checkpoint": f"{work}/ckpt.bin",
            "train_log": f"{work}/log.csv",
            "reports_dir": f"{work}/reports",
            "epochs": "3",
            "verbosity": "0",
        }
        m.run_generate("toy", overrides)
        log = m.run_train("toy", overrides)
        assert len(log) >= 2
        assert log[1][1] < log[0][1]  # loss decreased after one epoch
        events = m.run_detect("toy", overrides)
        result = m.run_eval("toy", overrides)
        assert 0.0 <= result["f1"] <= 1.0
        assert os.path.exists(f"{work}/reports/detection.jsonl")


def test_grad_check_micro():
    report = m.grad_check("toy", {}, coords=2)
    assert report["max_rel_err"] < 1e-3


def main():
    tests = [(name, fn) for name, fn in sorted(globals().items())
             if name.startswith("test_") and callable(fn)]
    for name, fn in tests:
        fn()
        print(f"ok {name}")
    print(f"{len(tests)} smoke tests passed")


if __name__ == "__main__":
    main()
