"""Smoke test for the autolabel_kit extension module.

Build and install first, e.g.:

    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/autolabel_kit-*.whl
    python python/smoke_test.py
"""

import math
import os
import tempfile

import autolabel_kit as ak


def check_geometry():
    a = ak.Box3D(0, 0, 0, 4, 2, 1.5, 0)
    b = ak.Box3D(2, 0, 0, 4, 2, 1.5, 0)
    assert ak.iou_bev(a, b) == 1 / 3
    assert ak.iou_3d(a, a) == 1.0
    assert ak.Box3D.from_list(a.to_list()) == a
    turned = ak.Box3D(0, 0, 0, 4, 2, 1.5, 3 * math.pi)
    assert -math.pi <= turned.yaw < math.pi
    try:
        ak.Box3D(0, 0, 0, -4, 2, 1.5, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative length accepted")

    mid, ambiguous = ak.interpolate_box(a, ak.Box3D(2, 2, 0, 4, 2, 1.5, 0.2))
    assert (mid.cx, mid.cy) == (1.0, 1.0) and not ambiguous
    assert abs(mid.yaw - 0.1) < 1e-12


def check_metrics():
    p, r, f1 = ak.precision_recall_f1(3, 1, 2)
    assert (p, r) == (0.75, 0.6)
    assert abs(f1 - 2 * p * r / (p + r)) < 1e-15
    assert round(ak.f1_score(0.878, 0.593), 3) == 0.708


def check_pipeline():
    truth, dets = ak.simulate(seed=3, n_sequences=4)
    assert truth.num_frames == 40 and len(dets) == 40
    assert all(o.confidence is not None for f in dets.frames() for o in f.objects)

    sweep = ak.select_threshold(dets, truth)
    assert [row[0] for row in sweep["rows"]] == [0.1, 0.3, 0.5]
    assert sweep["best_tau"] in (0.1, 0.3, 0.5)

    kept = ak.threshold(dets, 0.3)
    assert all(o.confidence >= 0.3 for f in kept.frames() for o in f.objects)

    corrupted, log = ak.inject_errors(kept, n_fa=2, n_miss=2, seed=1)
    refined, stats = ak.refine(corrupted)
    assert stats["removed_false_alarms"] >= len(log["false_alarms"]) - 1
    assert stats["inserted_misses"] >= 1

    report = ak.evaluate(refined, truth, subset="NOFRL")
    assert set(report["per_condition"]) <= {"normal", "overcast", "fog", "rain", "light_snow"}
    ap_bev, ap_3d = report["overall"]
    assert 0.0 <= ap_3d <= 1.0 and 0.0 <= ap_bev <= 1.0
    exact_truth, exact = ak.simulate(seed=3, n_sequences=2, weather="fog", noise="perfect")
    assert ak.average_precision(exact, exact_truth, kind="3d") == 1.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "labels.jsonl")
        refined.save(path)
        assert ak.Dataset.load(path) == refined
        try:
            ak.Dataset.load(os.path.join(tmp, "missing.jsonl"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file loaded")


def check_construction():
    obj = ak.ObjectLabel("Sedan", ak.Box3D(10, 0, -1, 4, 2, 1.5, 0), confidence=0.9, object_id="o1")
    frames = [ak.Frame("s", t, weather="heavy_snow", objects=[obj]) for t in range(3)]
    d = ak.Dataset("mine", frames)
    assert d.sequence_ids() == ["s"] and d.num_objects == 3
    assert len(d.filter_subset("NOFRL")) == 0
    assert len(d.filter_subset("ALL")) == 3
    try:
        ak.Frame("s", 0, weather="drizzle")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown weather accepted")


if __name__ == "__main__":
    check_geometry()
    check_metrics()
    check_pipeline()
    check_construction()
    print("autolabel_kit smoke test: ok")
