"""Command-line pipeline: generate, train, segment, eval, recognize.

One JSON config file drives every stage; flags override single values and
the effective config is echoed into the output directory.  Exit status 2
flags usage/config problems, 1 runtime failures, each with a one-line
machine-parsable error on stderr.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import inference, matching, model as model_mod, trainer as trainer_mod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Corpus, CorpusSpec, generate_corpus, read_corpus, write_corpus
from .losses import LossConfig
from .model import ModelConfig
from .trainer import TrainConfig

DEFAULT_CONFIG = {
    "model": {"n_prototypes": 50, "embed_dim": None, "distance": "euclidean"},
    "loss": {"alpha": 0.5, "lambda": 0.15, "tau": 4.0},
    "train": {"lr": 0.001, "epochs": 240, "batch_size": 8, "seed": 0},
    "infer": {"sigma": 5.0, "nprime_mode": "gt", "nprime": 5, "eta": 0.0},
    "eval": {"scope": "global", "kl": False, "f1": False},
    "recognize": {"wp": 0.5, "wg": 0.5},
    "corpus": {
        "n_activities": 4,
        "n_actions": 10,
        "shared_actions": 3,
        "actions_per_activity": [2, 8],
        "videos_per_activity": 25,
        "frames_range": [100, 300],
        "feature_dim": 32,
        "cluster_separation": 6.0,
        "noise": 1.0,
        "drop_prob": 0.2,
        "background_ratio": 0.0,
        "seed": 0,
    },
    "paths": {"manifest": None, "out_dir": "out", "checkpoint": None},
    "threads": 1,
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def _build_parser() -> _Parser:
    parser = _Parser(prog="protoseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "segment", "eval", "recognize"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--scope", choices=["video", "activity", "global"])
        p.add_argument("--sigma", type=float)
        p.add_argument("--nprime", help="integer, or 'gt' for per-activity truth")
        p.add_argument("--eta", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--lambda", dest="lambda_", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--no-decode", action="store_true")
        p.add_argument("--no-smooth", action="store_true")
        p.add_argument("--wp", type=float)
        p.add_argument("--wg", type=float)
        p.add_argument("--manifest", help="override paths.manifest")
        p.add_argument("--out-dir", help="override paths.out_dir")
        p.add_argument("--checkpoint", help="override paths.checkpoint")
    return parser


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, prefix + key + ".")
        else:
            out[key] = value
    return out


def _load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            from_file = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"unparseable config {path}: {exc}") from exc
        cfg = _merge(cfg, from_file)
    if args.scope is not None:
        cfg["eval"]["scope"] = args.scope
    if args.sigma is not None:
        cfg["infer"]["sigma"] = args.sigma
    if args.nprime is not None:
        if args.nprime == "gt":
            cfg["infer"]["nprime_mode"] = "gt"
        else:
            try:
                cfg["infer"]["nprime"] = int(args.nprime)
            except ValueError:
                raise ConfigError(f"--nprime must be an integer or 'gt', got {args.nprime!r}")
            cfg["infer"]["nprime_mode"] = "fixed"
    if args.eta is not None:
        cfg["infer"]["eta"] = args.eta
    if args.alpha is not None:
        cfg["loss"]["alpha"] = args.alpha
    if args.lambda_ is not None:
        cfg["loss"]["lambda"] = args.lambda_
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["corpus"]["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg["threads"] = args.threads
    if args.wp is not None:
        cfg["recognize"]["wp"] = args.wp
    if args.wg is not None:
        cfg["recognize"]["wg"] = args.wg
    if args.manifest is not None:
        cfg["paths"]["manifest"] = args.manifest
    if args.out_dir is not None:
        cfg["paths"]["out_dir"] = args.out_dir
    if args.checkpoint is not None:
        cfg["paths"]["checkpoint"] = args.checkpoint
    cfg["no_decode"] = bool(args.no_decode)
    cfg["no_smooth"] = bool(args.no_smooth)
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["paths"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: Path) -> None:
    with open(out / "effective_config.json", "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


def _require_path(cfg: dict, key: str, must_exist: bool = True) -> Path:
    value = cfg["paths"][key]
    if not value:
        raise ConfigError(f"paths.{key} is required for this command")
    path = Path(value)
    if must_exist and not path.exists():
        raise ConfigError(f"paths.{key} {path} does not exist")
    return path


def _loss_config(cfg: dict) -> LossConfig:
    section = cfg["loss"]
    return LossConfig(
        alpha=section["alpha"],
        smooth_weight=section["lambda"],
        truncation=section["tau"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    section = cfg["train"]
    return TrainConfig(
        lr=section["lr"],
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        seed=section["seed"],
    )


def _model_config(cfg: dict, corpus: Corpus) -> ModelConfig:
    return ModelConfig(
        input_dim=corpus.videos[0].features.shape[1],
        n_activities=corpus.n_activities,
        n_prototypes=cfg["model"]["n_prototypes"],
        embed_dim=cfg["model"]["embed_dim"],
        distance=cfg["model"]["distance"],
    )


def _affinities(corpus: Corpus, ckpt: Checkpoint, threads: int):
    """Affinity matrix and head probabilities per video id."""

    def run(video):
        return video.video_id, model_mod.infer(video.features, ckpt.params, ckpt.model)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, corpus.videos))
    else:
        results = [run(v) for v in corpus.videos]
    return dict(results)


# ---------------------------------------------------------------------------
# commands


def _cmd_generate(cfg: dict) -> int:
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    spec = CorpusSpec(
        n_activities=cfg["corpus"]["n_activities"],
        n_actions=cfg["corpus"]["n_actions"],
        shared_actions=cfg["corpus"]["shared_actions"],
        actions_per_activity=tuple(cfg["corpus"]["actions_per_activity"]),
        videos_per_activity=cfg["corpus"]["videos_per_activity"],
        frames_range=tuple(cfg["corpus"]["frames_range"]),
        feature_dim=cfg["corpus"]["feature_dim"],
        cluster_separation=cfg["corpus"]["cluster_separation"],
        noise=cfg["corpus"]["noise"],
        drop_prob=cfg["corpus"]["drop_prob"],
        background_ratio=cfg["corpus"]["background_ratio"],
        seed=cfg["corpus"]["seed"],
    )
    manifest_cfg = cfg["paths"]["manifest"]
    if manifest_cfg:
        manifest_path = Path(manifest_cfg)
        if manifest_path.name != "manifest.json":
            raise ConfigError("generate writes 'manifest.json'; point paths.manifest there")
        corpus_dir = manifest_path.parent
    else:
        corpus_dir = out / "corpus"
    corpus = generate_corpus(spec)
    manifest_path = write_corpus(corpus, corpus_dir)
    print(f"wrote {len(corpus.videos)} videos to {manifest_path}")
    return 0


def _cmd_train(cfg: dict) -> int:
    manifest = _require_path(cfg, "manifest")
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    corpus = read_corpus(manifest)
    model_cfg = _model_config(cfg, corpus)
    train_cfg = _train_config(cfg)
    loss_cfg = _loss_config(cfg)
    result = trainer_mod.train(corpus.videos, model_cfg, train_cfg, loss_cfg)
    ckpt_path = cfg["paths"]["checkpoint"] or str(out / "model.ckpt")
    save_checkpoint(
        Checkpoint(
            params=result.params,
            model=model_cfg,
            train=train_cfg,
            loss=loss_cfg,
            epoch=train_cfg.epochs,
            rng_digest=result.rng_digest,
        ),
        ckpt_path,
    )
    with open(out / "loss_trace.tsv", "w", encoding="utf-8") as f:
        f.write("epoch\tloss\tloss_p\tloss_g\tloss_smooth\n")
        for row in result.trace:
            f.write(
                f"{row['epoch']}\t{row['loss']:.10g}\t{row['loss_p']:.10g}"
                f"\t{row['loss_g']:.10g}\t{row['loss_smooth']:.10g}\n"
            )
    print(
        f"trained {train_cfg.epochs} epochs; final loss "
        f"{result.trace[-1]['loss']:.6f}; checkpoint {ckpt_path}"
    )
    return 0


def _nprime_by_activity(cfg: dict, corpus: Corpus):
    if cfg["infer"]["nprime_mode"] == "fixed":
        return int(cfg["infer"]["nprime"])
    if cfg["infer"]["nprime_mode"] != "gt":
        raise ConfigError(f"unknown nprime_mode {cfg['infer']['nprime_mode']!r}")
    counts = {}
    for video in corpus.videos:
        if video.gt_actions is None:
            raise ConfigError(
                "nprime_mode 'gt' needs ground truth; use a fixed --nprime instead"
            )
        actions = counts.setdefault(video.activity, set())
        actions.update(int(a) for a in np.unique(video.gt_actions) if a != 0)
    return {activity: len(actions) for activity, actions in counts.items()}


def _cmd_segment(cfg: dict) -> int:
    manifest = _require_path(cfg, "manifest")
    ckpt_path = _require_path(cfg, "checkpoint")
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    corpus = read_corpus(manifest)
    ckpt = load_checkpoint(ckpt_path)
    scope = cfg["eval"]["scope"]
    if scope == "video":
        raise ConfigError("segment supports --scope global or activity")
    affinities = _affinities(corpus, ckpt, cfg["threads"])
    affinity_only = {vid: a for vid, (a, _, _) in affinities.items()}
    activities = {v.video_id: v.activity for v in corpus.videos}
    smooth = scope == "activity" and not cfg["no_smooth"]
    decode = scope == "activity" and not cfg["no_decode"]
    labelings = inference.segment_corpus(
        affinity_only,
        activities,
        scope=scope,
        smooth=smooth,
        sigma=cfg["infer"]["sigma"],
        decode=decode,
        n_keep=_nprime_by_activity(cfg, corpus) if scope == "activity" else None,
        eta=cfg["infer"]["eta"],
    )
    seg_dir = out / "segments"
    seg_dir.mkdir(exist_ok=True)
    for vid, labeling in sorted(labelings.items()):
        _write_segment_file(seg_dir / f"{vid}.seg.txt", labeling)
    index = {
        "scope": scope,
        "smooth": smooth,
        "decode": decode,
        "sigma": cfg["infer"]["sigma"],
        "eta": cfg["infer"]["eta"],
        "manifest": str(manifest),
        "checkpoint": str(ckpt_path),
        "videos": sorted(labelings),
    }
    with open(seg_dir / "index.json", "w", encoding="utf-8") as f:
        json.dump(index, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"segmented {len(labelings)} videos into {seg_dir} (scope={scope})")
    return 0


def _write_segment_file(path: Path, labeling: inference.Labeling, matched=None) -> None:
    """One line per frame: frame_index prototype(-1=background) matched_action."""
    bg = labeling.background
    with open(path, "w", encoding="utf-8") as f:
        for t, label in enumerate(labeling.labels):
            proto = -1 if bg is not None and bg[t] else int(label)
            action = -1 if matched is None or proto == -1 else int(matched[t])
            f.write(f"{t} {proto} {action}\n")


def _read_segment_file(path: Path) -> inference.Labeling:
    labels, background = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            _, proto, _ = line.split()
            proto = int(proto)
            background.append(proto == -1)
            labels.append(proto if proto != -1 else 1)
    return inference.Labeling(np.array(labels), np.array(background))


def _cmd_eval(cfg: dict) -> int:
    manifest = _require_path(cfg, "manifest")
    ckpt_path = _require_path(cfg, "checkpoint")
    out = _out_dir(cfg)
    seg_dir = out / "segments"
    if not (seg_dir / "index.json").exists():
        raise ConfigError(f"no segmentation index under {seg_dir}; run segment first")
    _echo_config(cfg, out)
    corpus = read_corpus(manifest)
    scope = cfg["eval"]["scope"]

    videos = []
    labelings = {}
    for video in corpus.videos:
        if video.gt_actions is None:
            raise ConfigError(f"video {video.video_id!r} has no ground truth to evaluate")
        labeling = _read_segment_file(seg_dir / f"{video.video_id}.seg.txt")
        if len(labeling.labels) != video.n_frames:
            raise ConfigError(
                f"segmentation for {video.video_id!r} has {len(labeling.labels)} "
                f"frames, corpus says {video.n_frames}"
            )
        labelings[video.video_id] = labeling
        videos.append(
            matching.VideoEval(
                video_id=video.video_id,
                activity=video.activity,
                pred=labeling.labels,
                gt=video.gt_actions,
                background=labeling.background,
            )
        )
    result = matching.match_at_level(videos, scope)

    # fill matched action labels back into the segmentation files
    for video in corpus.videos:
        labeling = labelings[video.video_id]
        mapped = matching.apply_assignment(
            labeling.labels, result.assignments[video.video_id]
        )
        _write_segment_file(seg_dir / f"{video.video_id}.seg.txt", labeling, mapped)

    report = {
        "scope": scope,
        "mof": result.mof,
        "units": [
            {
                "unit": rep.unit,
                "assignment": [[c, a] for c, a in rep.assignment],
                "n_evaluated": rep.n_evaluated,
                "n_correct": rep.n_correct,
                "mof": rep.mof,
                "mop": rep.mop,
                "moc": rep.moc,
            }
            for rep in result.reports
        ],
    }
    if cfg["eval"]["f1"]:
        report["f1"] = matching.corpus_f1(videos, result.assignments)
    if cfg["eval"]["kl"]:
        ckpt = load_checkpoint(ckpt_path)
        affinities = _affinities(corpus, ckpt, cfg["threads"])
        by_activity = {}
        for video in corpus.videos:
            labels = inference.naive_labels(affinities[video.video_id][0])
            by_activity.setdefault(video.activity, []).append(labels)
        sharing, activity_ids = matching.kl_prototype_sharing(
            by_activity, ckpt.model.n_prototypes
        )
        action_kl = {}
        for activity in sorted({v.activity for v in videos}):
            group = [v for v in videos if v.activity == activity]
            mapped = [
                matching.apply_assignment(v.pred, result.assignments[v.video_id])
                for v in group
            ]
            gts = [v.gt for v in group]
            bgs = [v.background for v in group]
            action_kl[str(activity)] = {
                "pred_vs_gt": matching.kl_action_distribution(mapped, gts, bgs),
                "gt_vs_pred": matching.kl_action_distribution(gts, mapped, bgs),
            }
        report["kl"] = {
            "action_distribution": action_kl,
            "prototype_sharing": {
                "activities": activity_ids,
                "matrix": sharing.tolist(),
            },
        }
    report_path = out / f"metrics_{scope}.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / f"per_video_mof_{scope}.tsv", "w", encoding="utf-8") as f:
        f.write("video_id\tmof\n")
        for vid in sorted(result.per_video_mof):
            f.write(f"{vid}\t{result.per_video_mof[vid]:.10g}\n")
    print(f"scope={scope} MoF={result.mof:.4f} report={report_path}")
    return 0


def _cmd_recognize(cfg: dict) -> int:
    manifest = _require_path(cfg, "manifest")
    ckpt_path = _require_path(cfg, "checkpoint")
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    corpus = read_corpus(manifest)
    ckpt = load_checkpoint(ckpt_path)
    wp, wg = cfg["recognize"]["wp"], cfg["recognize"]["wg"]
    outputs = _affinities(corpus, ckpt, cfg["threads"])
    rows = []
    correct = 0
    for video in corpus.videos:
        _, yp, yg = outputs[video.video_id]
        pred = inference.recognize_activity(yp, yg, wp, wg)
        rows.append((video.video_id, video.activity, pred))
        correct += int(pred == video.activity)
    accuracy = correct / len(rows)
    with open(out / "activity_predictions.tsv", "w", encoding="utf-8") as f:
        f.write("video_id\ttrue_activity\tpredicted_activity\n")
        for vid, true, pred in rows:
            f.write(f"{vid}\t{true}\t{pred}\n")
    print(f"recognized {len(rows)} videos; accuracy={accuracy:.4f}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "segment": _cmd_segment,
    "eval": _cmd_eval,
    "recognize": _cmd_recognize,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
