"""Command implementations: data generation, training, scoring, ablation.

Every function validates its configuration before touching the file
system and returns a JSON-ready dict.  Outputs carry no timestamps or
timings, so a fixed seed gives byte-identical files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint, save_state
from .config import ExperimentConfig
from .data import DatasetSplit, load_split, split_records, synth_generate, write_features, write_manifest
from .kanformer import build_model
from .numerics import ConfigurationError
from .metrics import metrics_report, write_metrics, write_scores
from .train import predict, score_set, train_loop

log = logging.getLogger(__name__)

ROLES = ("train", "dev", "eval")

ABLATION_VARIANTS = {
    "kanformer": dict(kan_projection=True, kan_feedforward=True, kan_convolution=True),
    "no_kan_projection": dict(kan_projection=False, kan_feedforward=True, kan_convolution=True),
    "no_kan_feedforward": dict(kan_projection=True, kan_feedforward=False, kan_convolution=True),
    "no_kan_convolution": dict(kan_projection=True, kan_feedforward=True, kan_convolution=False),
}


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_splits(cfg: ExperimentConfig) -> dict[str, DatasetSplit]:
    """Train/dev/eval splits from the synthetic generator or from files."""
    t_fix = cfg.data.t_fix
    if cfg.data.source == "synthetic":
        splits = split_records(synth_generate(cfg.synthetic_config()), cfg.seed)
        for s in splits.values():
            s.t_fix = t_fix
        return splits
    feature_dir = cfg.data.resolve("feature_dir", cfg.base_dir)
    return {
        role: load_split(cfg.data.resolve(f"{role}_manifest", cfg.base_dir), feature_dir, role, t_fix)
        for role in ROLES
    }


# -- gen-data -------------------------------------------------------------------------------


def gen_data(cfg: ExperimentConfig, out_dir) -> dict:
    """Write ``features/<utt>.kft`` plus one ``<role>.csv`` manifest per split.

    Also writes ``config.json``: the same experiment pointed at the files.
    """
    cfg.validate()
    if cfg.data.source != "synthetic":
        raise ConfigurationError("gen-data needs data.source = 'synthetic'")
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    splits = split_records(synth_generate(cfg.synthetic_config()), cfg.seed)
    counts = {}
    for role in ROLES:
        rows = []
        for rec in splits[role].records:
            write_features(feat_dir / f"{rec.id}.kft", rec.features)
            rows.append((rec.id, rec.label))
        write_manifest(out / f"{role}.csv", rows)
        counts[role] = len(rows)
    files_cfg = cfg.to_dict()
    files_cfg["data"]["source"] = "files"
    files_cfg["data"]["files"] = {
        "feature_dir": "features",
        **{f"{role}_manifest": f"{role}.csv" for role in ROLES},
    }
    write_json(out / "config.json", files_cfg)
    return {"out": str(out), "counts": counts, "n_files": sum(counts.values())}


# -- train ----------------------------------------------------------------------------------


def train(cfg: ExperimentConfig, out_dir=None, splits=None) -> dict:
    """Train one model.  With ``out_dir``, write ``best.kfck``,
    ``top{rank}.kfck`` and ``report.json``."""
    cfg.validate()
    splits = splits or load_splits(cfg)
    model = build_model(cfg.model, seed=cfg.seed)
    report, best = train_loop(model, splits, cfg.train_config(), cfg.data.t_fix, cfg.metrics)
    result = {
        "config": cfg.to_dict(),
        "n_parameters": int(sum(p.size for p in model.parameters())),
        "best_epoch": best[0].epoch,
        "best": best[0].metrics,
        **report.to_dict(),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "best.kfck")
        for rank, snap in enumerate(best, start=1):
            save_state(snap.state, cfg.model, out / f"top{rank}.kfck")
        write_json(out / "report.json", result)
    return result


# -- eval -----------------------------------------------------------------------------------


def evaluate(cfg: ExperimentConfig, checkpoint, split: str, out_dir) -> dict:
    """Score ``split`` with a checkpoint; write ``scores_<split>.txt`` and
    ``metrics_<split>.json``."""
    cfg.validate()
    if split not in ROLES:
        raise ConfigurationError(f"split must be one of {ROLES}, got {split!r}")
    model = load_checkpoint(checkpoint, cfg.model)
    data = load_splits(cfg)[split]
    x, y = data.arrays(cfg.data.t_fix)
    ids = [r.id for r in data.records]
    _, scores = predict(model, x)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(out / f"scores_{split}.txt", list(zip(ids, scores.tolist())))
    report = metrics_report(score_set(ids, y, scores), cfg.metrics)
    write_metrics(out / f"metrics_{split}.json", report)
    return report


# -- ablate ---------------------------------------------------------------------------------


def ablate(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Train the full model and each single-component ablation at one seed."""
    cfg.validate()
    splits = load_splits(cfg)
    variants = []
    for name, flags in ABLATION_VARIANTS.items():
        vcfg = replace(cfg, model=replace(cfg.model, **flags))
        log.info("ablation variant %s", name)
        res = train(vcfg, None, splits)
        variants.append(
            {
                "name": name,
                "flags": flags,
                "n_parameters": res["n_parameters"],
                "best_epoch": res["best_epoch"],
                "stopped_epoch": res["stopped_epoch"],
                "dev_eer": res["best"].get("dev_eer"),
                "eval_eer": res["best"].get("eval_eer"),
                "top_k_mean": res["averaged"],
            }
        )
    result = {"seed": cfg.seed, "variants": variants}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "ablation.json", result)
    return result
