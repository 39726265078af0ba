import json
import os
import shutil

import numpy as np
import pytest

from vaupipe.errors import IoError, MissingComponent, SchemaViolation, ValueOutOfRange, VaupipeError
from vaupipe.ingest import (
    Bundle, BundleManifest, Detection, FrameRecord, RelationFeature, find_bundles, frozen_array,
    load_bundle, write_bundle,
)
from vaupipe.scoring import ScoreSeries
from vaupipe.synth import ScenarioSpec, generate_scenario

from conftest import small_bundle


def _arr_eq(a, b):
    if a is None or b is None:
        return a is None and b is None
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def assert_bundle_equal(a, b):
    assert a.manifest == b.manifest
    assert (a.scores is None) == (b.scores is None)
    if a.scores is not None:
        for name in ("p_anomaly", "fused", "argmax_class"):
            assert _arr_eq(getattr(a.scores, name), getattr(b.scores, name)), name
    assert len(a.frames) == len(b.frames)
    for fa, fb in zip(a.frames, b.frames):
        assert fa.t == fb.t and len(fa.detections) == len(fb.detections) and len(fa.relations) == len(fb.relations)
        for da, db in zip(fa.detections, fb.detections):
            assert da.bbox == db.bbox and da.label == db.label and _arr_eq(da.appearance, db.appearance)
        for ra, rb in zip(fa.relations, fb.relations):
            assert (ra.subject_index, ra.object_index) == (rb.subject_index, rb.object_index)
            assert _arr_eq(ra.feat, rb.feat)
    assert (a.class_names is None and b.class_names is None) or tuple(a.class_names) == tuple(b.class_names)
    assert _arr_eq(a.class_embeddings, b.class_embeddings)
    assert _arr_eq(a.frame_feats, b.frame_feats)


def read_all(path):
    return {p: (path / p).read_bytes() for p in sorted(os.listdir(path))}


def test_three_frame_bundle_loads(tmp_path):
    b = small_bundle(3)
    write_bundle(b, tmp_path)
    loaded = load_bundle(tmp_path)
    assert len(loaded.frames) == 3
    assert all(isinstance(f, FrameRecord) for f in loaded.frames)
    assert_bundle_equal(b, loaded)


def test_short_scores_table_rejected(tmp_path):
    write_bundle(small_bundle(3), tmp_path)
    lines = (tmp_path / "scores.csv").read_text().splitlines()
    (tmp_path / "scores.csv").write_text("\n".join(lines[:3]) + "\n")
    with pytest.raises(SchemaViolation):
        load_bundle(tmp_path)


def test_degenerate_bbox_names_frame(tmp_path):
    write_bundle(small_bundle(3), tmp_path)
    lines = (tmp_path / "frames.jsonl").read_text().splitlines()
    obj = json.loads(lines[2])
    x1 = obj["detections"][0]["bbox"][0]
    obj["detections"][0]["bbox"][2] = x1
    lines[2] = json.dumps(obj)
    (tmp_path / "frames.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueOutOfRange, match="frame 2"):
        load_bundle(tmp_path)


def test_missing_components(tmp_path):
    with pytest.raises(MissingComponent):
        load_bundle(tmp_path / "nope")
    write_bundle(small_bundle(3), tmp_path)
    (tmp_path / "scores.csv").unlink()
    with pytest.raises(MissingComponent):
        load_bundle(tmp_path)
    (tmp_path / "manifest.json").unlink()
    with pytest.raises(MissingComponent):
        load_bundle(tmp_path)


def test_feature_only_bundle_flags_scoring_path(tmp_path):
    b, _ = generate_scenario(ScenarioSpec(num_frames=20, anomaly_events=((10, 3, 0.9),)))
    write_bundle(Bundle(b.manifest, None, b.frames, b.class_names, b.class_embeddings, b.frame_feats), tmp_path)
    loaded = load_bundle(tmp_path)
    assert loaded.scores is None and loaded.score_source == "features"
    assert load_bundle(_written(b, tmp_path / "full")).score_source == "table"


def _written(bundle, path):
    write_bundle(bundle, path)
    return path


def test_synth_bundle_round_trips(tmp_path):
    b, _ = generate_scenario(ScenarioSpec(num_frames=40, noise_std=0.1, seed=3,
                                          anomaly_events=((20, 4, 0.8),), relation_events=((21, (0, 1), 5.0),)))
    write_bundle(b, tmp_path)
    assert_bundle_equal(b, load_bundle(tmp_path))


def test_empty_detections_round_trip(tmp_path):
    from vaupipe.tracking import track_frames
    from vaupipe.volatility import volatility_curve

    b = small_bundle(5, n_det=0)
    write_bundle(b, tmp_path)
    loaded = load_bundle(tmp_path)
    assert_bundle_equal(b, loaded)
    curve = volatility_curve(loaded.frames, track_frames(loaded.frames, range(5)))
    assert np.all(curve.raw == 0) and np.all(curve.smoothed == 0)


def test_write_then_rewrite_is_byte_identical(tmp_path):
    rng = np.random.default_rng(9)
    b = small_bundle(7, d_app=3, d_rel=4, rng=rng, n_det=3)
    write_bundle(b, tmp_path / "a")
    write_bundle(load_bundle(tmp_path / "a"), tmp_path / "b")
    assert read_all(tmp_path / "a") == read_all(tmp_path / "b")


def test_unwritable_path_raises_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        write_bundle(small_bundle(2), blocker / "sub")


def test_stale_optional_files_removed(tmp_path):
    b, _ = generate_scenario(ScenarioSpec(num_frames=10))
    write_bundle(b, tmp_path)
    assert (tmp_path / "frame_feats.csv").exists()
    write_bundle(small_bundle(3), tmp_path)
    assert not (tmp_path / "frame_feats.csv").exists() and not (tmp_path / "class_dirs.json").exists()
    load_bundle(tmp_path)


def test_find_bundles(tmp_path):
    write_bundle(small_bundle(2, video_id="a"), tmp_path / "c" / "a")
    write_bundle(small_bundle(2, video_id="b"), tmp_path / "c" / "b")
    assert [p.name for p in find_bundles([tmp_path / "c"])] == ["a", "b"]
    assert [p.name for p in find_bundles([tmp_path / "c" / "b"])] == ["b"]


# --- golden byte layout ----------------------------------------------------
#
# 64 frames, d_rel = 8, two detections per frame, both ordered relations.
# Every value is a dyadic rational so its shortest decimal form is obvious;
# the expected files are spelled out by hand below rather than produced by
# the writer under test.

def golden_bundle():
    frames = []
    for t in range(64):
        dets = (
            Detection((t / 128, 0.25, t / 128 + 0.25, 0.75), frozen_array([1.0, -0.5]), "car"),
            Detection((0.5, 0.0, 1.0, 0.5), frozen_array([0.0, 2.0]), None),
        )
        rels = (
            RelationFeature(0, 1, frozen_array([t / 8 + k / 16 for k in range(8)])),
            RelationFeature(1, 0, frozen_array([-k / 4 for k in range(8)])),
        )
        frames.append(FrameRecord(t, dets, rels))
    manifest = BundleManifest("golden", 64, False, 2, 8, 1, 30.0)
    return Bundle(manifest, ScoreSeries([t / 64 for t in range(64)]), tuple(frames))


def _num(x):
    # shortest round-trip text of a dyadic rational
    return repr(float(x))


def golden_files():
    manifest = (
        '{\n  "video_id": "golden",\n  "num_frames": 64,\n  "is_normal": false,\n'
        '  "d_app": 2,\n  "d_rel": 8,\n  "num_classes": 1,\n  "fps": 30.0\n}\n'
    )
    scores = "t,p_anomaly\n" + "".join(f"{t},{_num(t / 64)}\n" for t in range(64))
    lines = []
    for t in range(64):
        f01 = ", ".join(_num(t / 8 + k / 16) for k in range(8))
        f10 = ", ".join(_num(-k / 4) for k in range(8))
        lines.append(
            f'{{"t": {t}, "detections": ['
            f'{{"bbox": [{_num(t / 128)}, 0.25, {_num(t / 128 + 0.25)}, 0.75], "appearance": [1.0, -0.5], "label": "car"}}, '
            f'{{"bbox": [0.5, 0.0, 1.0, 0.5], "appearance": [0.0, 2.0], "label": null}}], '
            f'"relations": [{{"i": 0, "j": 1, "feat": [{f01}]}}, {{"i": 1, "j": 0, "feat": [{f10}]}}]}}\n'
        )
    return {"frames.jsonl": "".join(lines).encode(), "manifest.json": manifest.encode(), "scores.csv": scores.encode()}


def test_golden_byte_layout(tmp_path):
    write_bundle(golden_bundle(), tmp_path)
    assert read_all(tmp_path) == golden_files()
    assert "0.015625" in (tmp_path / "scores.csv").read_text()


# --- fuzzing: every malformed input yields a typed error -------------------

JUNK = [None, "x", -1, 2, 1.5, -0.5, [], {}, [1, 2], True, float("nan"), 10**6, "NaN"]


def _mutate_json(obj, rng):
    """Replace or delete one random node of a JSON tree."""
    path = []
    node = obj
    while isinstance(node, (dict, list)) and node and rng.random() < 0.75:
        key = rng.choice(sorted(node)) if isinstance(node, dict) else int(rng.integers(len(node)))
        path.append((node, key))
        node = node[key]
    if not path:
        return JUNK[int(rng.integers(len(JUNK)))]
    parent, key = path[-1]
    if rng.random() < 0.2:
        if isinstance(parent, dict):
            del parent[key]
        else:
            parent.pop(key)
    else:
        parent[key] = JUNK[int(rng.integers(len(JUNK)))]
    return obj


def _mutate(bundle_dir, rng):
    target = rng.choice(sorted(os.listdir(bundle_dir)))
    path = bundle_dir / target
    text = path.read_text()
    mode = rng.integers(5)
    if mode == 0:
        path.write_text(text[: int(rng.integers(len(text)))])
    elif mode == 1:
        path.unlink()
    elif target.endswith(".csv"):
        lines = text.splitlines()
        k = int(rng.integers(len(lines)))
        cells = lines[k].split(",")
        cells[int(rng.integers(len(cells)))] = str(JUNK[int(rng.integers(len(JUNK)))])
        if rng.random() < 0.3:
            cells.append("0")
        lines[k] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
    elif target == "frames.jsonl":
        lines = text.splitlines()
        k = int(rng.integers(len(lines)))
        lines[k] = json.dumps(_mutate_json(json.loads(lines[k]), rng))
        path.write_text("\n".join(lines) + "\n")
    else:
        path.write_text(json.dumps(_mutate_json(json.loads(text), rng)))


def test_validation_is_total(tmp_path):
    rng = np.random.default_rng(0)
    base, _ = generate_scenario(ScenarioSpec(num_frames=6, num_objects=2, d_app=2, d_rel=2, d_feat=3, num_classes=2))
    write_bundle(base, tmp_path / "base")
    rejected = 0
    for k in range(400):
        d = tmp_path / f"m{k}"
        shutil.copytree(tmp_path / "base", d)
        _mutate(d, rng)
        try:
            b = load_bundle(d)
        except VaupipeError:
            rejected += 1
            continue
        # accepted inputs must be complete and valid
        write_bundle(b, tmp_path / f"w{k}")
        assert len(b.frames) == b.manifest.num_frames
    assert rejected > 300
