"""Command-line entry point: dataset generation, training, evaluation,
pseudo-label export, and score-curve export.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for runtime
contract or format violations.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, RunConfig, load_config, resolve_config
from .data import DatasetManifest, generate_synthetic, load_split
from .errors import ConfigError, WsvadError
from .evaluation import evaluate
from .losses import LossReport
from .model import AnomalyModel
from .prompts import compute_nvp, enhance_normal_text
from .pseudolabels import pseudo_labels
from .training import train

_META_KEY = "__meta__"


def _bool_flag(value: str) -> bool:
    if value in ("on", "true", "1"):
        return True
    if value in ("off", "false", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def save_checkpoint(path: Path, model: AnomalyModel, run: RunConfig) -> None:
    meta = json.dumps({"config": run.to_flat_dict(), "config_hash": run.config_hash()})
    np.savez(path, **model.state_arrays(), **{_META_KEY: np.array(meta)})


def load_checkpoint(path: Path, manifest: DatasetManifest) -> tuple[AnomalyModel, RunConfig]:
    with np.load(path) as bundle:
        meta = json.loads(str(bundle[_META_KEY][()]))
        arrays = {k: bundle[k] for k in bundle.files if k != _META_KEY}
    run = resolve_config(meta["config"])
    model = AnomalyModel.from_run_config(manifest, run)
    model.load_state_arrays(arrays)
    return model, run


def _write_csv(path: Path, header: list[str], rows, config_hash: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _guard_collision(out_dir: Path, run: RunConfig) -> None:
    marker = out_dir / "config_resolved.json"
    if marker.exists():
        previous = json.loads(marker.read_text(encoding="utf-8"))
        if previous.get("config_hash") != run.config_hash():
            raise ConfigError(
                f"{out_dir} already holds artifacts for a different config "
                f"({previous.get('config_hash', '?')[:8]}); refusing to mix runs"
            )


def _write_resolved(out_dir: Path, run: RunConfig) -> None:
    doc = {"config_hash": run.config_hash(), **run.to_flat_dict()}
    (out_dir / "config_resolved.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    run = load_config(args.config, {"seed": args.seed})
    out = Path(args.out)
    manifest = generate_synthetic(run.synthetic, out)
    print(f"wrote {len(manifest.videos)} videos under {out} (config {run.config_hash()[:8]})")
    return 0


def _train_overrides(args) -> dict:
    return {
        "seed": args.seed,
        "preset": args.preset,
        "epochs": args.epochs,
        "theta": args.theta,
        "alpha": args.alpha,
        "nvp": args.nvp,
        "normality_guidance": args.normality_guidance,
        "temporal": args.temporal,
        "use_rank_normal": args.rank_normal,
        "use_rank_abnormal": args.rank_abnormal,
        "use_dil": args.dil,
    }


def cmd_train(args) -> int:
    run = load_config(args.config, _train_overrides(args))
    manifest = DatasetManifest.load(args.data)
    base_dir = Path(args.data).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _guard_collision(out, run)
    _write_resolved(out, run)

    def progress(epoch, last_row):
        print(f"epoch {epoch}: total={last_row['total']:.4f}", flush=True)

    result = train(manifest, base_dir, run, progress=progress)
    save_checkpoint(out / "params.npz", result.model, run)

    header = ["epoch", "step", *LossReport.TERMS]
    rows = [[r["epoch"], r["step"], *(r[t] for t in LossReport.TERMS)] for r in result.log_rows]
    _write_csv(out / "training_log.csv", header, rows, run.config_hash())

    by_epoch: dict[int, list[dict]] = {}
    for r in result.log_rows:
        by_epoch.setdefault(r["epoch"], []).append(r)
    breakdown = [
        [epoch, term, sum(r[term] for r in rs) / len(rs)]
        for epoch, rs in sorted(by_epoch.items())
        for term in LossReport.TERMS
    ]
    _write_csv(out / "loss_breakdown.csv", ["epoch", "term", "value"], breakdown, run.config_hash())
    print(f"saved model and logs under {out}")
    return 0


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.data)
    model, run = load_checkpoint(Path(args.model), manifest)
    result = evaluate(manifest, model, Path(args.data).parent, split=args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {**result.as_dict(), "config_hash": run.config_hash()}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    auc = "undefined" if doc["auc"] is None else f"{doc['auc']:.4f}"
    ap = "undefined" if doc["ap"] is None else f"{doc['ap']:.4f}"
    print(f"auc={auc} ap={ap} over {result.num_frames} frames")
    return 0


def cmd_pseudo_labels(args) -> int:
    manifest = DatasetManifest.load(args.data)
    model, run = load_checkpoint(Path(args.model), manifest)
    cfg = run.train
    if args.theta is not None or args.alpha is not None:
        cfg.theta = cfg.theta if args.theta is None else args.theta
        cfg.alpha = cfg.alpha if args.alpha is None else args.alpha
    videos = load_split(manifest, args.split, Path(args.data).parent)
    normals = [v for v in videos if not v.is_abnormal]

    emb = model.embedding_set()
    rows = []
    abnormal_seen = 0
    for video in videos:
        if video.is_abnormal and cfg.nvp != "off":
            if not normals:
                raise ConfigError(
                    f"split {args.split!r} has no normal videos to build the visual prompt from; "
                    "train with nvp=off or pick another split"
                )
            pair = normals[abnormal_seen % len(normals)]
            nvp = compute_nvp(emb.normal, pair.frames, mode=cfg.nvp, video_id=pair.video_id)
            enhanced = enhance_normal_text(emb.normal, nvp, model.nvp_ffn)
            abnormal_seen += 1
        else:
            enhanced = emb.normal
        labels = pseudo_labels(video, emb.as_arrays(), enhanced.data, cfg.plg())
        for frame, (psi, gamma) in enumerate(zip(labels.psi_norm, labels.gamma)):
            rows.append([video.video_id, frame, f"{psi:.10g}", int(gamma)])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "pseudo_labels.csv", ["video_id", "frame", "psi", "gamma"], rows, run.config_hash())
    print(f"wrote pseudo labels for {len(videos)} videos to {out / 'pseudo_labels.csv'}")
    return 0


def cmd_export_scores(args) -> int:
    manifest = DatasetManifest.load(args.data)
    model, run = load_checkpoint(Path(args.model), manifest)
    result = evaluate(manifest, model, Path(args.data).parent, split=args.split)
    scores_dir = Path(args.out) / "scores"
    scores_dir.mkdir(parents=True, exist_ok=True)
    for frame_scores, truth in result.curves:
        rows = [
            [frame, f"{score:.10g}", int(t)]
            for frame, (score, t) in enumerate(zip(frame_scores.eta, truth))
        ]
        _write_csv(scores_dir / f"{frame_scores.video_id}.csv",
                   ["frame", "score", "truth"], rows, run.config_hash())
    print(f"wrote {len(result.curves)} score curves under {scores_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsvad",
        description="Weakly supervised video anomaly detection on frame embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic benchmark dataset")
    gen.add_argument("--config", required=True, help="JSON config file")
    gen.add_argument("--out", required=True, help="dataset output directory")
    gen.add_argument("--seed", type=int, default=None, help="master seed override")
    gen.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", help="train a detector on a dataset")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True, help="path to manifest.json")
    tr.add_argument("--out", required=True, help="run output directory")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--preset", choices=sorted(PRESETS), default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--theta", type=float, default=None)
    tr.add_argument("--alpha", type=float, default=None)
    tr.add_argument("--nvp", choices=["off", "frame-average", "similarity-aggregate"], default=None)
    tr.add_argument("--normality-guidance", type=_bool_flag, default=None, metavar="on|off")
    tr.add_argument("--temporal", choices=["tcsal", "plain-encoder"], default=None)
    tr.add_argument("--rank-normal", type=_bool_flag, default=None, metavar="on|off")
    tr.add_argument("--rank-abnormal", type=_bool_flag, default=None, metavar="on|off")
    tr.add_argument("--dil", type=_bool_flag, default=None, metavar="on|off")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained model on frame truth")
    ev.add_argument("--model", required=True, help="params.npz from train")
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--split", default="test")
    ev.set_defaults(func=cmd_eval)

    pl = sub.add_parser("pseudo-labels", help="export per-frame pseudo labels as CSV")
    pl.add_argument("--model", required=True)
    pl.add_argument("--data", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--split", default="train")
    pl.add_argument("--theta", type=float, default=None)
    pl.add_argument("--alpha", type=float, default=None)
    pl.set_defaults(func=cmd_pseudo_labels)

    ex = sub.add_parser("export-scores", help="export per-video score curves as CSV")
    ex.add_argument("--model", required=True)
    ex.add_argument("--data", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--split", default="test")
    ex.set_defaults(func=cmd_export_scores)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except WsvadError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
