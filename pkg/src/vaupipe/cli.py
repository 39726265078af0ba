"""Command-line entry point: ``vaupipe <subcommand> ...``.

Flags override values from ``--config``, which override built-in defaults.
Exit codes: 0 success, 2 validation error, 3 stage failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .caes import caes, slope_series
from .encoder import encode_batch, train
from .errors import (
    DegenerateLabels,
    MissingComponent,
    SchemaViolation,
    ValueOutOfRange,
    VaupipeError,
)
from .evaluate import ablation_grid, embedding_separation
from .ingest import Bundle, find_bundles, load_bundle, write_bundle
from .pipeline import (
    PipelineConfig,
    corpus_prototype,
    dump_jsonl,
    evaluation_set,
    fused_scores,
    load_model,
    model_json,
    process_corpus,
    run_pipeline,
    split_videos,
    volatility_csv,
)
from .synth import ScenarioSpec, make_corpus, write_scenario
from .tracking import TrackingResult, track_frames
from .volatility import RelationChangePair, mine_samples, volatility_curve

log = logging.getLogger("vaupipe")

VALIDATION_ERRORS = (SchemaViolation, ValueOutOfRange, MissingComponent, DegenerateLabels)

# flag dest -> (config section, field)
OVERRIDES = {
    "percentile": ("caes", "threshold_percentile"),
    "slope_window": ("caes", "slope_window"),
    "rise": ("caes", "rise_percentile"),
    "calm": ("caes", "calm_percentile"),
    "max_context": ("caes", "max_context"),
    "n_pre": ("caes", "n_pre"),
    "n_on": ("caes", "n_on"),
    "n_post": ("caes", "n_post"),
    "budget": ("caes", "budget"),
    "min_score": ("caes", "min_score"),
    "appearance_weight": ("assoc", "appearance_weight"),
    "min_similarity": ("assoc", "min_similarity"),
    "max_age": ("assoc", "max_age"),
    "sigma": ("mining", "sigma"),
    "topk": ("mining", "top_k_percent"),
    "topk_scope": ("mining", "topk_scope"),
    "negative_ratio": ("mining", "negative_ratio"),
    "margin": ("train", "margin"),
    "pool_size": ("train", "pool_size"),
    "lr": ("train", "learning_rate"),
    "epochs": ("train", "epochs"),
    "lr_step": ("train", "lr_step"),
    "lr_gamma": ("train", "lr_gamma"),
    "batch_size": ("train", "batch_size"),
    "hidden": ("train", "hidden"),
    "token_dim": ("train", "token_dim"),
}


def resolve_config(args):
    cfg = PipelineConfig()
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise MissingComponent(f"config file {args.config} not found") from exc
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"config file {args.config}: invalid JSON ({exc})") from exc
        try:
            cfg = PipelineConfig.from_json(obj)
        except TypeError as exc:
            raise SchemaViolation(f"config file {args.config}: {exc}") from exc
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from exc
    sections = {}
    for dest, (section, name) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            sections.setdefault(section, {})[name] = value
    if getattr(args, "iou_weight", None) is None and "appearance_weight" in sections.get("assoc", {}):
        sections["assoc"]["iou_weight"] = 1.0 - sections["assoc"]["appearance_weight"]
    for section, values in sections.items():
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    top = {}
    for name in ("seed", "holdout", "temperature", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            top[name] = value
    if getattr(args, "corpus", None):
        top["corpus"] = list(args.corpus)
    if args.out is not None:
        top["out"] = args.out
    return replace(cfg, **top).resolved()


def _write_text(path, text):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read_jsonl(path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise MissingComponent(f"{path} not found") from exc
    try:
        return [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON line ({exc})") from exc


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingComponent(f"{path} not found") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc


def _require_out(args):
    if args.out is None:
        raise SchemaViolation(f"{args.command}: --out is required")
    return args.out


# --- subcommands ---------------------------------------------------------

def cmd_synth(args, cfg):
    out = Path(_require_out(args))
    if args.spec:
        obj = _read_json(args.spec)
        specs = [ScenarioSpec.from_json(o) for o in (obj if isinstance(obj, list) else [obj])]
    else:
        specs = make_corpus(args.abnormal, args.normal, args.frames, seed=cfg.seed or 0, noise_std=args.noise)
    if len(specs) == 1 and args.spec:
        write_scenario(specs[0], out)
    else:
        for spec in specs:
            write_scenario(spec, out / spec.video_id)
    print(f"wrote {len(specs)} scenario(s) to {out}")


def cmd_score(args, cfg):
    bundle = load_bundle(args.bundle)
    refs = [load_bundle(p) for p in find_bundles(args.normal)] if args.normal else []
    if not refs and bundle.manifest.is_normal:
        refs = [bundle]
    proto = corpus_prototype(refs)
    if proto is None or bundle.frame_feats is None or bundle.class_embeddings is None:
        raise MissingComponent("scoring needs frame_feats.csv, class_dirs.json and normal reference features")
    stripped = Bundle(bundle.manifest, None if bundle.scores is None else type(bundle.scores)(bundle.scores.p_anomaly),
                      bundle.frames, bundle.class_names, bundle.class_embeddings, bundle.frame_feats)
    scores = fused_scores(stripped, proto, cfg.temperature)
    if args.out:
        lines = ["t,p_anomaly,fused,argmax_class"] + [
            f"{t},{float(p)!r},{float(f)!r},{int(c)}"
            for t, (p, f, c) in enumerate(zip(scores.p_anomaly, scores.fused, scores.argmax_class))
        ]
        _write_text(args.out, "\n".join(lines) + "\n")
    else:
        write_bundle(replace(bundle, scores=scores), args.bundle)
    print(f"scored {len(scores)} frames of {bundle.video_id}")


def cmd_sample(args, cfg):
    bundle = load_bundle(args.bundle)
    scores = fused_scores(bundle, None)
    kf = caes(scores, cfg.caes)
    _write_text(_require_out(args), json.dumps(kf.to_json(bundle.video_id), indent=1) + "\n")
    if args.emit_curve:
        slopes = slope_series(scores.curve, cfg.caes.slope_window)
        tags = dict(kf.frames)
        rows = ["t,score,slope,selected,tag"] + [
            f"{t},{float(scores.curve[t])!r},{float(slopes[t])!r},{int(t in tags)},{tags.get(t, '')}"
            for t in range(len(scores))
        ]
        _write_text(args.emit_curve, "\n".join(rows) + "\n")
    print(f"{bundle.video_id}: {len(kf.frames)} keyframes, {len(kf.intervals)} interval(s)")


def cmd_track(args, cfg):
    bundle = load_bundle(args.bundle)
    kf = _read_json(args.keyframes)
    indices = [int(t) for t, _ in kf["frames"]]
    if any(not 0 <= t < bundle.manifest.num_frames for t in indices):
        raise ValueOutOfRange("keyframe index outside the bundle")
    result = track_frames(bundle.frames, indices, cfg.assoc)
    _write_text(_require_out(args), json.dumps(result.to_json(bundle.video_id)) + "\n")
    print(f"{bundle.video_id}: {len(result.tracks)} track(s) over {len(indices)} frames")


def cmd_volatility(args, cfg):
    bundle = load_bundle(args.bundle)
    tracking = TrackingResult.from_json(_read_json(args.tracks))
    curve = volatility_curve(bundle.frames, tracking, cfg.mining.sigma)
    _write_text(_require_out(args), volatility_csv(curve))
    print(f"{bundle.video_id}: {len(curve)} transitions, max volatility {float(curve.raw.max(initial=0.0)):.4g}")


def cmd_mine(args, cfg):
    videos = process_corpus(cfg)
    samples = mine_samples([(v.video_id, v.curve, v.is_normal) for v in videos], cfg.mining)
    _write_text(_require_out(args), dump_jsonl(s.to_json() for s in samples))
    n_pos = sum(s.label == "positive" for s in samples)
    print(f"mined {n_pos} positive and {len(samples) - n_pos} negative pair(s)")


def _load_samples(path):
    try:
        return [RelationChangePair.from_json(o) for o in _read_jsonl(path)]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"{path}: malformed sample ({exc})") from exc


def cmd_train(args, cfg):
    samples = _load_samples(args.samples)
    level = logging.INFO if args.verbose else logging.DEBUG
    params, history = train(samples, cfg.train, log=lambda e, loss, lr: log.log(level, "epoch %d loss %.6f lr %.2e", e, loss, lr))
    _write_text(_require_out(args), json.dumps(model_json(params, cfg.train, history)) + "\n")
    print(f"trained on {len(samples)} samples; final loss {history[-1] if history else float('nan'):.6f}")


def cmd_encode(args, cfg):
    params = load_model(_read_json(args.model))
    samples = _load_samples(args.samples)
    tokens = encode_batch(params, np.array([s.vec for s in samples])) if samples else []
    _write_text(_require_out(args), dump_jsonl(
        {"source": s.source, "label": s.label, "token": tok.tolist()} for s, tok in zip(samples, tokens)
    ))
    print(f"encoded {len(samples)} pair(s)")


def truth_label(source, truths):
    """Positive iff a ground-truth relation event falls inside the sampled transition."""
    truth = truths.get(source["video_id"])
    if truth is None:
        raise MissingComponent(f"no truth for video {source['video_id']!r}")
    return any(source["t_prev"] < p["t"] <= source["t"] for p in truth["positives"])


def cmd_eval(args, cfg):
    records = _read_jsonl(args.tokens)
    tokens = np.array([r["token"] for r in records])
    if args.truth:
        truths = {}
        for path in args.truth:
            p = Path(path)
            files = [p] if p.is_file() else sorted(p.rglob("truth.json"))
            for f in files:
                t = _read_json(f)
                truths[t["video_id"]] = t
        labels = [truth_label(r["source"], truths) for r in records]
    else:
        labels = [r["label"] == "positive" for r in records]
    sep = embedding_separation(tokens, labels)
    print(json.dumps({"separation": sep, "positives": int(sum(labels)), "negatives": len(labels) - int(sum(labels))}))


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise SchemaViolation(f"expected comma-separated numbers, got {text!r}") from exc


def cmd_ablate(args, cfg):
    videos = process_corpus(cfg)
    held = split_videos([(v.video_id, v.is_normal) for v in videos], cfg.seed, cfg.holdout)
    train_videos = [(v.video_id, v.curve, v.is_normal) for v in videos if v.video_id not in held]
    eval_samples, split = evaluation_set(videos, held, cfg.mining)
    if split == "train":
        eval_samples = mine_samples(train_videos, replace(cfg.mining, negative_ratio=None))
    grid = ablation_grid(train_videos, eval_samples, _floats(args.sigmas), _floats(args.topks),
                         cfg.mining, cfg.train, seed=cfg.seed or 0)
    _write_text(_require_out(args), grid.to_csv())
    print(grid.table())


def cmd_pipeline(args, cfg):
    if not cfg.corpus:
        raise SchemaViolation("pipeline: no corpus given (use --corpus or the config file)")
    report = run_pipeline(cfg)
    print(json.dumps({k: report[k] for k in ("videos", "eval_split", "separation", "counts")}, indent=2))


# --- parser --------------------------------------------------------------

def _caes_flags(p):
    g = p.add_argument_group("keyframe sampling")
    g.add_argument("--percentile", type=float)
    g.add_argument("--slope-window", type=int)
    g.add_argument("--rise", type=float)
    g.add_argument("--calm", type=float)
    g.add_argument("--max-context", type=int)
    g.add_argument("--pre", dest="n_pre", type=int)
    g.add_argument("--on", dest="n_on", type=int)
    g.add_argument("--post", dest="n_post", type=int)
    g.add_argument("--budget", type=int)
    g.add_argument("--min-score", type=float)


def _assoc_flags(p):
    g = p.add_argument_group("association")
    g.add_argument("--appearance-weight", type=float)
    g.add_argument("--min-similarity", type=float)
    g.add_argument("--max-age", type=int)


def _mining_flags(p):
    g = p.add_argument_group("mining")
    g.add_argument("--sigma", type=float)
    g.add_argument("--topk", type=float)
    g.add_argument("--topk-scope", choices=["video", "global"])
    g.add_argument("--negative-ratio", type=float)


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--margin", type=float)
    g.add_argument("--pool-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr-step", type=int)
    g.add_argument("--lr-gamma", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--token-dim", type=int)


def _corpus_flags(p):
    p.add_argument("--corpus", nargs="+", default=None, help="bundle directories or parents of bundles")
    p.add_argument("--holdout", type=float, help="fraction of videos per class held out for evaluation")
    p.add_argument("--workers", type=int)
    p.add_argument("--temperature", type=float)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vaupipe", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic bundles")
    p.add_argument("--spec", help="ScenarioSpec JSON (object or list)")
    p.add_argument("--abnormal", type=int, default=10)
    p.add_argument("--normal", type=int, default=10)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", parents=[common], help="fuse anomaly scores from frame features")
    p.add_argument("--bundle", required=True)
    p.add_argument("--normal", nargs="+", help="normal bundles for the prototype")
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sample", parents=[common], help="context-aware keyframe sampling")
    p.add_argument("--bundle", required=True)
    p.add_argument("--emit-curve", help="per-frame CSV of the score curve with slope and tag columns")
    _caes_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("track", parents=[common], help="associate detections over keyframes")
    p.add_argument("--bundle", required=True)
    p.add_argument("--keyframes", required=True)
    _assoc_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("volatility", parents=[common], help="relational volatility curve")
    p.add_argument("--bundle", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--sigma", type=float)
    p.set_defaults(func=cmd_volatility)

    p = sub.add_parser("mine", parents=[common], help="mine labelled relation-change pairs")
    _corpus_flags(p)
    _caes_flags(p)
    _assoc_flags(p)
    _mining_flags(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", parents=[common], help="train the relation encoder")
    p.add_argument("--samples", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="encode pairs into relation tokens")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", parents=[common], help="embedding separation of exported tokens")
    p.add_argument("--tokens", required=True)
    p.add_argument("--truth", nargs="+", help="truth.json files or directories containing them")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="sigma x top-k ablation grid")
    _corpus_flags(p)
    p.add_argument("--sigmas", default="1,2,3")
    p.add_argument("--topks", default="3,5,7")
    _caes_flags(p)
    _assoc_flags(p)
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage over a corpus")
    _corpus_flags(p)
    _caes_flags(p)
    _assoc_flags(p)
    _mining_flags(p)
    _train_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except VaupipeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2 if isinstance(getattr(exc, "cause", None), VALIDATION_ERRORS) else 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
