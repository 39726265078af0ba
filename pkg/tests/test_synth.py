import json

import numpy as np
import pytest

from vaupipe.errors import ValueOutOfRange
from vaupipe.ingest import load_bundle, validate_bundle
from vaupipe.synth import ScenarioSpec, generate_scenario, generate_score_curve, make_corpus, write_scenario
from vaupipe.tracking import track_frames
from vaupipe.volatility import volatility_curve


def test_score_curve_examples():
    assert np.all(generate_score_curve(ScenarioSpec(num_frames=50)).p_anomaly == 0.05)
    s = generate_score_curve(ScenarioSpec(num_frames=100, anomaly_events=((50, 8, 0.9),)))
    assert int(np.argmax(s.p_anomaly)) == 50
    spec = ScenarioSpec(num_frames=100, anomaly_events=((50, 8, 0.9),), noise_std=0.1, seed=4)
    assert generate_score_curve(spec).p_anomaly.tobytes() == generate_score_curve(spec).p_anomaly.tobytes()


def test_single_relation_spike_height():
    spec = ScenarioSpec(num_frames=60, relation_events=((30, (1, 2), 10.0),), seed=2)
    bundle, truth = generate_scenario(spec)
    curve = volatility_curve(bundle.frames, track_frames(bundle.frames, range(60)))
    assert np.count_nonzero(curve.raw) == 1
    assert curve.raw[29] == pytest.approx(10.0, abs=1e-12)
    assert truth.positives == [{"t": 30, "pair": [1, 2], "magnitude": 10.0}]


def test_normal_spec_rules():
    with pytest.raises(ValueOutOfRange):
        ScenarioSpec(is_normal=True, relation_events=((5, (0, 1), 1.0),))
    _, truth = generate_scenario(ScenarioSpec(is_normal=True, num_frames=10))
    assert truth.positives == []


def test_two_objects_identity_map():
    bundle, truth = generate_scenario(ScenarioSpec(num_frames=50, num_objects=2, d_app=2, seed=8))
    res = track_frames(bundle.frames, range(50))
    assert len(res.tracks) == 2
    for tr in res.tracks:
        assert len({truth.identity[t][d] for t, d in tr.observations.items()}) == 1


def test_generated_bundles_validate_and_are_deterministic(tmp_path):
    for spec in make_corpus(3, 2, num_frames=80, seed=5):
        bundle, truth = generate_scenario(spec)
        validate_bundle(bundle)
        again, _ = generate_scenario(spec)
        for f1, f2 in zip(bundle.frames, again.frames):
            for r1, r2 in zip(f1.relations, f2.relations):
                assert r1.feat.tobytes() == r2.feat.tobytes()
        write_scenario(spec, tmp_path / spec.video_id)
        load_bundle(tmp_path / spec.video_id)
        assert json.loads((tmp_path / spec.video_id / "truth.json").read_text())["video_id"] == spec.video_id


def test_noise_free_positives_are_injected_events():
    spec = ScenarioSpec(num_frames=120, relation_events=((20, (0, 1), 4.0), (70, (2, 0), 6.0)), seed=3)
    bundle, truth = generate_scenario(spec)
    curve = volatility_curve(bundle.frames, track_frames(bundle.frames, range(120)))
    assert [int(curve.frames[k + 1]) for k in np.flatnonzero(curve.raw)] == [p["t"] for p in truth.positives]


def test_spec_json_round_trip():
    spec = make_corpus(1, 0, seed=2)[0]
    assert ScenarioSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


def test_truth_segments():
    _, truth = generate_scenario(ScenarioSpec(num_frames=200, anomaly_events=((100, 8, 0.9),)))
    (ev,) = truth.events
    assert ev["on"] == [92, 108] and ev["pre"] == [76, 91] and ev["post"] == [109, 124]
