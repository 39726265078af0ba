"""Feature-bundle format: a directory of per-frame scores, detections and
pairwise relation features.

Layout::

    manifest.json      video_id, num_frames, is_normal, d_app, d_rel, num_classes, fps
    scores.csv         t,p_anomaly[,fused,argmax_class]
    frames.jsonl       one {"t", "detections", "relations"} object per frame
    class_dirs.json    optional {"classes": [...], "embeddings": [[...], ...]}
    frame_feats.csv    optional t,f0,...,f{d-1}

Reals are written with ``repr`` so every float64 survives a write/load
cycle bit for bit.
"""

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoError, MissingComponent, SchemaViolation, ValueOutOfRange
from .scoring import ScoreSeries

MANIFEST_KEYS = ("video_id", "num_frames", "is_normal", "d_app", "d_rel", "num_classes", "fps")


@dataclass(frozen=True)
class BundleManifest:
    video_id: str
    num_frames: int
    is_normal: bool
    d_app: int
    d_rel: int
    num_classes: int = 1
    fps: float = 30.0


@dataclass(frozen=True)
class Detection:
    bbox: tuple
    appearance: np.ndarray
    label: str | None = None


@dataclass(frozen=True)
class RelationFeature:
    subject_index: int
    object_index: int
    feat: np.ndarray


@dataclass(frozen=True)
class FrameRecord:
    t: int
    detections: tuple
    relations: tuple


@dataclass(frozen=True)
class Bundle:
    manifest: BundleManifest
    scores: ScoreSeries | None
    frames: tuple
    class_names: tuple | None = None
    class_embeddings: np.ndarray | None = None
    frame_feats: np.ndarray | None = None

    @property
    def video_id(self):
        return self.manifest.video_id

    @property
    def score_source(self):
        """``"table"`` when p_anomaly was supplied, ``"features"`` when only
        frame features and class directions are available, else ``None``."""
        if self.scores is not None:
            return "table"
        if self.frame_feats is not None and self.class_embeddings is not None:
            return "features"
        return None


def frozen_array(values, dtype=np.float64):
    a = np.array(values, dtype=dtype)
    a.setflags(write=False)
    return a


def _fmt(x):
    return repr(float(x))


# --- validation helpers -----------------------------------------------------

def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _real(x, where):
    if not _is_num(x):
        raise SchemaViolation(f"{where}: expected a number, got {type(x).__name__}")
    x = float(x)
    if not math.isfinite(x):
        raise ValueOutOfRange(f"{where}: non-finite value")
    return x


def _vector(values, dim, where):
    if not isinstance(values, list):
        raise SchemaViolation(f"{where}: expected a list")
    if len(values) != dim:
        raise SchemaViolation(f"{where}: length {len(values)}, expected {dim}")
    return frozen_array([_real(v, where) for v in values])


def _parse_csv_real(text, where):
    try:
        x = float(text)
    except ValueError as exc:
        raise SchemaViolation(f"{where}: not a number: {text!r}") from exc
    if not math.isfinite(x):
        raise ValueOutOfRange(f"{where}: non-finite value")
    return x


def validate_manifest(obj):
    if not isinstance(obj, dict):
        raise SchemaViolation("manifest: expected a JSON object")
    if set(obj) != set(MANIFEST_KEYS):
        raise SchemaViolation(f"manifest: keys must be exactly {list(MANIFEST_KEYS)}, got {sorted(obj)}")
    if not isinstance(obj["video_id"], str):
        raise SchemaViolation("manifest.video_id: expected a string")
    if not isinstance(obj["is_normal"], bool):
        raise SchemaViolation("manifest.is_normal: expected a boolean")
    for key in ("num_frames", "d_app", "d_rel", "num_classes"):
        if not _is_int(obj[key]):
            raise SchemaViolation(f"manifest.{key}: expected an integer")
        if obj[key] < 1:
            raise ValueOutOfRange(f"manifest.{key}: must be >= 1, got {obj[key]}")
    fps = _real(obj["fps"], "manifest.fps")
    if fps < 0:
        raise ValueOutOfRange("manifest.fps: must be non-negative")
    return BundleManifest(
        obj["video_id"], obj["num_frames"], obj["is_normal"], obj["d_app"], obj["d_rel"], obj["num_classes"], fps
    )


def validate_detection(obj, d_app, where):
    if not isinstance(obj, dict) or not {"bbox", "appearance"} <= set(obj) <= {"bbox", "appearance", "label"}:
        raise SchemaViolation(f"{where}: expected keys bbox, appearance[, label]")
    bbox = obj["bbox"]
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise SchemaViolation(f"{where}.bbox: expected four numbers")
    x1, y1, x2, y2 = (_real(v, f"{where}.bbox") for v in bbox)
    if not all(0.0 <= v <= 1.0 for v in (x1, y1, x2, y2)):
        raise ValueOutOfRange(f"{where}.bbox: coordinates outside [0, 1]")
    if not (x1 < x2 and y1 < y2):
        raise ValueOutOfRange(f"{where}.bbox: degenerate box {[x1, y1, x2, y2]}")
    label = obj.get("label")
    if label is not None and not isinstance(label, str):
        raise SchemaViolation(f"{where}.label: expected a string or null")
    return Detection((x1, y1, x2, y2), _vector(obj["appearance"], d_app, f"{where}.appearance"), label)


def validate_frame(obj, manifest, expected_t):
    where = f"frame {expected_t}"
    if not isinstance(obj, dict) or set(obj) != {"t", "detections", "relations"}:
        raise SchemaViolation(f"{where}: keys must be exactly t, detections, relations")
    t = obj["t"]
    if not _is_int(t):
        raise SchemaViolation(f"{where}: t must be an integer")
    if not 0 <= t < manifest.num_frames:
        raise ValueOutOfRange(f"{where}: t={t} outside [0, {manifest.num_frames})")
    if t != expected_t:
        raise SchemaViolation(f"{where}: frames must be listed in order, found t={t}")
    if not isinstance(obj["detections"], list) or not isinstance(obj["relations"], list):
        raise SchemaViolation(f"{where}: detections and relations must be lists")
    dets = tuple(
        validate_detection(d, manifest.d_app, f"{where} detection {k}") for k, d in enumerate(obj["detections"])
    )
    rels = []
    seen = set()
    for k, r in enumerate(obj["relations"]):
        rw = f"{where} relation {k}"
        if not isinstance(r, dict) or set(r) != {"i", "j", "feat"}:
            raise SchemaViolation(f"{rw}: keys must be exactly i, j, feat")
        i, j = r["i"], r["j"]
        if not (_is_int(i) and _is_int(j)):
            raise SchemaViolation(f"{rw}: i and j must be integers")
        if i == j:
            raise SchemaViolation(f"{rw}: self-relation ({i}, {j})")
        if not (0 <= i < len(dets) and 0 <= j < len(dets)):
            raise SchemaViolation(f"{rw}: index ({i}, {j}) outside {len(dets)} detections")
        if (i, j) in seen:
            raise SchemaViolation(f"{rw}: duplicate relation ({i}, {j})")
        seen.add((i, j))
        rels.append(RelationFeature(i, j, _vector(r["feat"], manifest.d_rel, f"{rw}.feat")))
    return FrameRecord(t, dets, tuple(rels))


# --- reading -------------------------------------------------------------

def _read_text(path):
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingComponent(f"{path.name} not found in {path.parent}") from exc
    except UnicodeDecodeError as exc:
        raise SchemaViolation(f"{path.name}: not valid UTF-8") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _read_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path.name}: invalid JSON ({exc})") from exc


def _read_csv(path, expected_rows):
    try:
        rows = list(csv.reader(io.StringIO(_read_text(path))))
    except csv.Error as exc:
        raise SchemaViolation(f"{path.name}: malformed CSV ({exc})") from exc
    if not rows:
        raise SchemaViolation(f"{path.name}: empty file")
    header, body = rows[0], rows[1:]
    if len(body) != expected_rows:
        raise SchemaViolation(f"{path.name}: {len(body)} rows, manifest says {expected_rows} frames")
    for t, row in enumerate(body):
        if len(row) != len(header):
            raise SchemaViolation(f"{path.name}: frame {t} has {len(row)} columns, expected {len(header)}")
        if row[0] != str(t):
            raise SchemaViolation(f"{path.name}: row {t} has t={row[0]!r}")
    return header, body


def _load_scores(path, manifest):
    header, body = _read_csv(path, manifest.num_frames)
    if header not in (["t", "p_anomaly"], ["t", "p_anomaly", "fused", "argmax_class"]):
        raise SchemaViolation(f"scores.csv: unexpected header {header}")
    p = []
    fused = []
    arg = []
    for t, row in enumerate(body):
        pa = _parse_csv_real(row[1], f"scores.csv frame {t} p_anomaly")
        if not 0.0 <= pa <= 1.0:
            raise ValueOutOfRange(f"scores.csv frame {t}: p_anomaly {pa} outside [0, 1]")
        p.append(pa)
        if len(header) == 4:
            fu = _parse_csv_real(row[2], f"scores.csv frame {t} fused")
            if not 0.0 <= fu <= pa:
                raise ValueOutOfRange(f"scores.csv frame {t}: fused {fu} outside [0, p_anomaly]")
            try:
                c = int(row[3])
            except ValueError as exc:
                raise SchemaViolation(f"scores.csv frame {t}: argmax_class not an integer") from exc
            if not 0 <= c < manifest.num_classes:
                raise ValueOutOfRange(f"scores.csv frame {t}: argmax_class {c} outside [0, {manifest.num_classes})")
            fused.append(fu)
            arg.append(c)
    if len(header) == 4:
        return ScoreSeries(p, fused, arg)
    return ScoreSeries(p)


def _load_frames(path, manifest):
    lines = _read_text(path).split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != manifest.num_frames:
        raise SchemaViolation(f"frames.jsonl: {len(lines)} records, manifest says {manifest.num_frames} frames")
    frames = []
    for t, line in enumerate(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"frames.jsonl frame {t}: invalid JSON ({exc})") from exc
        frames.append(validate_frame(obj, manifest, t))
    return tuple(frames)


def _load_class_dirs(path, manifest):
    obj = _read_json(path)
    if not isinstance(obj, dict) or set(obj) != {"classes", "embeddings"}:
        raise SchemaViolation("class_dirs.json: keys must be exactly classes, embeddings")
    names, emb = obj["classes"], obj["embeddings"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise SchemaViolation("class_dirs.json: classes must be a list of strings")
    if not isinstance(emb, list) or len(names) != manifest.num_classes or len(emb) != manifest.num_classes:
        raise SchemaViolation(f"class_dirs.json: expected {manifest.num_classes} classes and embeddings")
    if not emb or not isinstance(emb[0], list) or not emb[0]:
        raise SchemaViolation("class_dirs.json: embeddings must be non-empty lists")
    dim = len(emb[0])
    rows = [_vector(e, dim, f"class_dirs.json embedding {k}") for k, e in enumerate(emb)]
    return tuple(names), frozen_array(rows)


def _load_frame_feats(path, manifest):
    header, body = _read_csv(path, manifest.num_frames)
    dim = len(header) - 1
    if dim < 1 or header != ["t"] + [f"f{k}" for k in range(dim)]:
        raise SchemaViolation(f"frame_feats.csv: unexpected header {header[:4]}...")
    feats = [[_parse_csv_real(v, f"frame_feats.csv frame {t}") for v in row[1:]] for t, row in enumerate(body)]
    return frozen_array(feats)


def load_bundle(path):
    """Read and fully validate a bundle directory."""
    path = Path(path)
    if not path.is_dir():
        raise MissingComponent(f"bundle directory {path} not found")
    manifest = validate_manifest(_read_json(path / "manifest.json"))
    frames = _load_frames(path / "frames.jsonl", manifest)
    class_names = class_emb = feats = None
    if (path / "class_dirs.json").exists():
        class_names, class_emb = _load_class_dirs(path / "class_dirs.json", manifest)
    if (path / "frame_feats.csv").exists():
        feats = _load_frame_feats(path / "frame_feats.csv", manifest)
        if class_emb is not None and feats.shape[1] != class_emb.shape[1]:
            raise SchemaViolation(
                f"frame_feats.csv dimension {feats.shape[1]} differs from class embeddings {class_emb.shape[1]}"
            )
    scores = None
    if (path / "scores.csv").exists():
        scores = _load_scores(path / "scores.csv", manifest)
    elif feats is None or class_emb is None:
        raise MissingComponent(f"scores.csv not found in {path} and no frame features to score from")
    return Bundle(manifest, scores, frames, class_names, class_emb, feats)


def validate_bundle(bundle):
    """Check an in-memory bundle against the same invariants the loader enforces."""
    m = validate_manifest({k: getattr(bundle.manifest, k) for k in MANIFEST_KEYS})
    if len(bundle.frames) != m.num_frames:
        raise SchemaViolation(f"{len(bundle.frames)} frames, manifest says {m.num_frames}")
    for t, fr in enumerate(bundle.frames):
        validate_frame(_frame_obj(fr), m, t)
    if bundle.scores is not None and len(bundle.scores) != m.num_frames:
        raise SchemaViolation(f"{len(bundle.scores)} scores, manifest says {m.num_frames}")
    if bundle.scores is not None:
        p = bundle.scores.p_anomaly
        bad = np.flatnonzero(~((p >= 0) & (p <= 1)))
        if bad.size:
            raise ValueOutOfRange(f"frame {int(bad[0])}: p_anomaly {p[bad[0]]} outside [0, 1]")


# --- writing -------------------------------------------------------------

def _frame_obj(fr):
    return {
        "t": fr.t,
        "detections": [
            {"bbox": [float(v) for v in d.bbox], "appearance": np.asarray(d.appearance, dtype=float).tolist(), "label": d.label}
            for d in fr.detections
        ],
        "relations": [
            {"i": r.subject_index, "j": r.object_index, "feat": np.asarray(r.feat, dtype=float).tolist()}
            for r in fr.relations
        ],
    }


def _csv_text(header, rows):
    return "".join(",".join(r) + "\n" for r in [header, *rows])


def write_bundle(bundle, path):
    validate_bundle(bundle)
    path = Path(path)
    m = bundle.manifest
    files = {}
    manifest = {k: getattr(m, k) for k in MANIFEST_KEYS}
    manifest["fps"] = float(manifest["fps"])
    files["manifest.json"] = json.dumps(manifest, indent=2) + "\n"
    if bundle.scores is not None:
        s = bundle.scores
        if s.fused is None:
            files["scores.csv"] = _csv_text(["t", "p_anomaly"], ([str(t), _fmt(p)] for t, p in enumerate(s.p_anomaly)))
        else:
            files["scores.csv"] = _csv_text(
                ["t", "p_anomaly", "fused", "argmax_class"],
                ([str(t), _fmt(p), _fmt(f), str(int(c))] for t, (p, f, c) in enumerate(zip(s.p_anomaly, s.fused, s.argmax_class))),
            )
    files["frames.jsonl"] = "".join(json.dumps(_frame_obj(fr)) + "\n" for fr in bundle.frames)
    if bundle.class_embeddings is not None:
        files["class_dirs.json"] = json.dumps(
            {"classes": list(bundle.class_names), "embeddings": np.asarray(bundle.class_embeddings, dtype=float).tolist()}
        ) + "\n"
    if bundle.frame_feats is not None:
        feats = np.asarray(bundle.frame_feats, dtype=float)
        header = ["t"] + [f"f{k}" for k in range(feats.shape[1])]
        files["frame_feats.csv"] = _csv_text(header, ([str(t)] + [_fmt(v) for v in row] for t, row in enumerate(feats)))
    try:
        path.mkdir(parents=True, exist_ok=True)
        for name in ("scores.csv", "class_dirs.json", "frame_feats.csv"):
            if name not in files and (path / name).exists():
                (path / name).unlink()
        for name, text in files.items():
            (path / name).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write bundle to {path}: {exc}") from exc


def find_bundles(paths):
    """Expand each path into bundle directories (a bundle itself, or a parent of bundles)."""
    found = []
    for p in map(Path, paths):
        if (p / "manifest.json").exists():
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(q for q in p.iterdir() if (q / "manifest.json").exists()))
        else:
            raise MissingComponent(f"corpus path {p} not found")
    return found
