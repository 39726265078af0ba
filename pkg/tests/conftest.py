import numpy as np
import pytest

from vaupipe import kernels
from vaupipe.ingest import Bundle, BundleManifest, Detection, FrameRecord, RelationFeature, frozen_array
from vaupipe.scoring import ScoreSeries


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    mod = kernels.BACKENDS[request.param]
    for name in ("solve_assignment", "convolve_reflect", "local_extrema"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return mod


def small_bundle(num_frames=3, d_app=2, d_rel=2, video_id="v", is_normal=False, rng=None, n_det=2):
    rng = rng or np.random.default_rng(0)
    frames = []
    for t in range(num_frames):
        dets = []
        for _ in range(n_det):
            x1, y1 = rng.uniform(0, 0.5, size=2)
            w, h = rng.uniform(0.05, 0.5, size=2)
            dets.append(Detection((float(x1), float(y1), float(x1 + w), float(y1 + h)),
                                  frozen_array(rng.standard_normal(d_app)), None))
        rels = tuple(RelationFeature(i, j, frozen_array(rng.standard_normal(d_rel)))
                     for i in range(n_det) for j in range(n_det) if i != j)
        frames.append(FrameRecord(t, tuple(dets), rels))
    manifest = BundleManifest(video_id, num_frames, is_normal, d_app, d_rel, 1, 25.0)
    return Bundle(manifest, ScoreSeries(rng.uniform(0, 1, num_frames)), tuple(frames))
