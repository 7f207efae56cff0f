"""Command-line pipeline: prepare, synth, train, eval, mine-hardneg, optimize, ladder, analyze.

Every command prints its resolved configuration, embeds it in the report it
writes, and derives all randomness from the configured root seed. Wall-clock
measurements go to a `.timing.json` sidecar so that reports are bit-identical
across reruns at workers=1.

Exit codes: 0 success, 1 runtime failure, 2 config/validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from songvec import config as config_mod
from songvec import corpus, hardneg, hpo, metrics, neighbors, popularity, synth, trainer
from songvec.config import ConfigError

logger = logging.getLogger("songvec")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override a config value (repeatable); precedence CLI > file > defaults",
    )
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--workers", type=int, help="parallel workers for training")


def _resolve(args) -> dict:
    cfg = config_mod.resolve(args.config, args.overrides)
    if args.out:
        cfg["out_dir"] = args.out
    if args.workers is not None:
        cfg["workers"] = args.workers
    print("resolved config:")
    print(config_mod.dump(cfg))
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_path(cfg: dict, key: str) -> Path:
    value = cfg["paths"].get(key)
    if not value:
        raise ConfigError(f"paths.{key} must be set")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"paths.{key} does not exist: {path}")
    return path


def _write_report(out: Path, name: str, payload: dict, cfg: dict, timing: dict) -> Path:
    report = {"config": cfg, **payload}
    path = out / f"{name}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(out / f"{name}.timing.json", "w", encoding="utf-8") as fh:
        json.dump(timing, fh, indent=2)
    print(f"wrote {path}")
    return path


def _load_split_dataset(cfg: dict) -> corpus.SequenceDataset:
    ds = corpus.load_sequences(_require_path(cfg, "sequences"))
    return corpus.split(ds, tuple(cfg["split"]["ratios"]), cfg["seed"])


def _hyperparams(cfg: dict) -> trainer.HyperParams:
    return trainer.HyperParams(seed=cfg["seed"], **cfg["hyperparams"])


def _coherence_plan(cfg: dict) -> metrics.CoherenceSamplingPlan:
    return metrics.CoherenceSamplingPlan(**cfg["coherence"])


def _evaluator(cfg: dict, ds, vocab, catalog=None, hns=None) -> metrics.Evaluator:
    e = cfg["eval"]
    return metrics.Evaluator(
        ds,
        vocab,
        catalog=catalog,
        k=e["k"],
        split_label=e["split"],
        pair_mode=e["pair_mode"],
        max_inset_pairs=e["max_inset_pairs"],
        max_outset_pairs=e["max_outset_pairs"],
        include_inset=e["include_inset"],
        hard_negatives=hns,
        coherence_plan=_coherence_plan(cfg),
        coherence_modes=tuple(e["coherence_modes"]),
        seed=cfg["seed"],
    )


def cmd_prepare(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    ds = _load_split_dataset(cfg)
    vocab = corpus.build_vocabulary(ds, cfg["vocab"]["min_count"])
    ds.write_split_manifest(out / "split_manifest.tsv")
    vocab.save(out / "vocabulary.tsv")
    labels = ds.split_labels or []
    payload = {
        "sequences": len(ds),
        "dropped_short_lines": ds.dropped,
        "split_counts": {s: labels.count(s) for s in corpus.SPLITS},
        "vocabulary_size": len(vocab),
        "total_events": vocab.total_events,
    }
    _write_report(out, "prepare", payload, cfg, {"seconds": time.monotonic() - t0})
    return 0


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    s = dict(cfg["synth"])
    n_observations = s.pop("n_observations")
    scfg = synth.SynthConfig(seed=cfg["seed"], **s)
    ds, catalog = synth.generate_corpus(scfg)
    seq_path = out / "sequences.txt"
    with open(seq_path, "w", encoding="utf-8") as fh:
        for seq in ds.sequences:
            fh.write(" ".join(seq) + "\n")
    cat_path = out / "catalog.tsv"
    with open(cat_path, "w", encoding="utf-8") as fh:
        fh.write("song_id\tartist_id\tgenre_id\tplay_count\n")
        for sid in sorted(catalog.entries):
            e = catalog.entries[sid]
            fh.write(f"{sid}\t{e.artist_id}\t{e.genre_id}\t{e.play_count}\n")
    payload = {
        "sequences_file": str(seq_path),
        "catalog_file": str(cat_path),
        "n_sequences": len(ds),
        "n_songs": len(catalog),
    }
    if n_observations:
        emb_path = cfg["paths"].get("embeddings")
        if not emb_path:
            raise ConfigError(
                "synth.n_observations > 0 requires paths.embeddings "
                "(observations are similarity-driven)"
            )
        space = trainer.load_embeddings_binary(Path(emb_path))
        obs = synth.generate_play_observations(space, n_observations, seed=cfg["seed"])
        obs_path = out / "observations.tsv"
        popularity.save_observations(obs, space.vocabulary, obs_path)
        payload["observations_file"] = str(obs_path)
        payload["n_observations"] = len(obs)
    _write_report(out, "synth", payload, cfg, {"seconds": time.monotonic() - t0})
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    ds = _load_split_dataset(cfg)
    vocab = corpus.build_vocabulary(ds, cfg["vocab"]["min_count"])
    space = trainer.train(
        ds,
        vocab,
        _hyperparams(cfg),
        budget=cfg["train"]["budget"],
        workers=cfg["workers"],
        mask_last=cfg["train"]["mask_last"],
    )
    space.save_binary(out / "embeddings.bin")
    space.save_text(out / "embeddings.txt")
    payload = {
        "vocabulary_size": len(vocab),
        "dim": space.dim,
        "budget_truncated": space.budget_truncated,
        "epoch_losses": space.epoch_losses,
        "embeddings": str(out / "embeddings.bin"),
    }
    timing = {"seconds": time.monotonic() - t0, "train_seconds": space.train_time}
    _write_report(out, "train", payload, cfg, timing)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    space = trainer.load_embeddings_binary(_require_path(cfg, "embeddings"))
    ds = _load_split_dataset(cfg)
    catalog = None
    if cfg["paths"].get("catalog"):
        catalog = corpus.load_catalog(_require_path(cfg, "catalog"))
    hns = None
    if cfg["paths"].get("hard_negatives"):
        hns = hardneg.load_hard_negatives(
            _require_path(cfg, "hard_negatives"), space.vocabulary
        )
    evaluator = _evaluator(cfg, ds, space.vocabulary, catalog, hns)
    report = evaluator.evaluate(space)
    _write_report(out, "eval", {"metrics": report.to_dict()}, cfg,
                  {"seconds": time.monotonic() - t0})
    return 0


def cmd_mine_hardneg(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    ds = _load_split_dataset(cfg)
    vocab = corpus.build_vocabulary(ds, cfg["vocab"]["min_count"])
    stats = hardneg.collect_bigrams(ds, vocab)
    h = cfg["hardneg"]
    threshold = h["threshold"]
    if threshold is None:
        threshold = h["threshold_factor"] * (
            sum(stats.occurrence.values()) if h["threshold_base"] == "slots" else stats.total_tokens
        )
    hns = hardneg.mine_hard_negatives(
        stats, threshold=threshold, min_cooccurrence=h["min_cooccurrence"]
    )
    hardneg.save_hard_negatives(hns, stats, vocab, out / "hard_negatives.tsv")
    payload = {
        "total_bigrams": stats.total_bigrams,
        "threshold": threshold,
        "min_cooccurrence": h["min_cooccurrence"],
        "n_pairs": len(hns),
        "mean_per_song": hns.mean_per_song,
        "dump": str(out / "hard_negatives.tsv"),
    }
    _write_report(out, "mine_hardneg", payload, cfg, {"seconds": time.monotonic() - t0})
    return 0


def _study_payload(study: hpo.Study) -> dict:
    # wall-clock stays out of the report for rerun bit-identity
    return {
        "objective": {"kind": study.objective.kind, "alpha": study.objective.alpha},
        "seed": study.seed,
        "n_trials": len(study.trials),
        "best_index": study.best_index,
        "trials": [
            {
                "hp": t.hp.to_dict(),
                "metrics": t.metrics.to_dict(),
                "objective_value": t.objective_value,
                "budget_truncated": t.budget_truncated,
            }
            for t in study.trials
        ],
    }


def cmd_optimize(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    ds = _load_split_dataset(cfg)
    vocab = corpus.build_vocabulary(ds, cfg["vocab"]["min_count"])
    catalog = None
    if cfg["paths"].get("catalog"):
        catalog = corpus.load_catalog(_require_path(cfg, "catalog"))
    objective = hpo.Objective(kind=cfg["hpo"]["objective"], alpha=cfg["hpo"]["alpha"])
    resume = None
    if cfg["paths"].get("study"):
        resume = hpo.Study.load(_require_path(cfg, "study"))
    study = hpo.run_study(
        ds,
        vocab,
        objective,
        max_trials=cfg["hpo"]["max_trials"],
        time_budget_factor=cfg["hpo"]["time_budget_factor"],
        seed=cfg["seed"],
        workers=cfg["workers"],
        evaluator=_evaluator(cfg, ds, vocab, catalog),
        catalog=catalog,
        base_hp=_hyperparams(cfg),
        resume=resume,
        checkpoint_path=out / "study.json",
    )
    timing = {
        "seconds": time.monotonic() - t0,
        "trial_wall_clock": [t.wall_clock for t in study.trials],
        "budget": study.budget,
    }
    _write_report(out, "optimize", _study_payload(study), cfg, timing)
    return 0


def cmd_ladder(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    ds = _load_split_dataset(cfg)
    catalog = None
    if cfg["paths"].get("catalog"):
        catalog = corpus.load_catalog(_require_path(cfg, "catalog"))
    objective = hpo.Objective(kind=cfg["hpo"]["objective"], alpha=cfg["hpo"]["alpha"])
    rows = hpo.scale_ladder(
        ds,
        list(cfg["ladder"]["rates"]),
        objective,
        seed=cfg["seed"],
        max_trials=cfg["ladder"]["max_trials"],
        min_count=cfg["vocab"]["min_count"],
        workers=cfg["workers"],
        catalog=catalog,
        time_budget_factor=cfg["hpo"]["time_budget_factor"],
        base_hp=_hyperparams(cfg),
    )
    payload = {
        "rows": [
            {k: v for k, v in row.to_dict().items() if k != "optimization_time"}
            for row in rows
        ]
    }
    timing = {
        "seconds": time.monotonic() - t0,
        "optimization_time": {str(row.rate): row.optimization_time for row in rows},
    }
    _write_report(out, "ladder", payload, cfg, timing)
    return 0


def cmd_analyze(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    space = trainer.load_embeddings_binary(_require_path(cfg, "embeddings"))
    if args.what == "popularity":
        ds = _load_split_dataset(cfg)
        catalog = corpus.load_catalog(_require_path(cfg, "catalog"))
        pairs, dropped = metrics.make_outset_pairs(
            ds, space.vocabulary, cfg["eval"]["split"], cfg["eval"]["pair_mode"]
        )
        buckets = popularity.bucketize(space, catalog, cfg["popularity"]["buckets"])
        matrix = popularity.bucket_hitrate_matrix(
            space,
            pairs,
            buckets,
            samples_per_cell=cfg["popularity"]["samples_per_cell"],
            k=cfg["eval"]["k"],
            seed=cfg["seed"],
        )
        matrix.to_tsv(out / "bucket_hitrate.tsv")
        matrix.diagonal_tsv(out / "bucket_hitrate_diagonal.tsv")
        payload = {
            "pairs": len(pairs),
            "dropped_pairs": dropped,
            "bucket_mass": buckets.mass_per_bucket,
            "heatmap": str(out / "bucket_hitrate.tsv"),
            "filled_cells": int((matrix.n_sampled > 0).sum()),
        }
        name = "analyze_popularity"
    elif args.what == "play":
        obs = popularity.load_observations(
            _require_path(cfg, "observations"), space.vocabulary
        )
        r_all, r_frequent = popularity.play_correlation(
            space, obs, cfg["popularity"]["frequent_threshold"]
        )
        curve = popularity.relative_play_rate_curve(
            obs, space, cfg["popularity"]["quantization"]
        )
        popularity.save_curve(curve, out / "play_rate_curve.tsv")
        payload = {
            "n_observations": len(obs),
            "pearson_all": r_all,
            "pearson_frequent": r_frequent,
            "curve": str(out / "play_rate_curve.tsv"),
        }
        name = "analyze_play"
    else:
        raise ConfigError(f"unknown analysis {args.what!r}")
    _write_report(out, name, payload, cfg, {"seconds": time.monotonic() - t0})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="songvec",
        description="Train, evaluate and optimize behavioral song embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in [
        ("prepare", cmd_prepare, "split sequences and build the vocabulary"),
        ("synth", cmd_synth, "generate a synthetic corpus, catalog and observations"),
        ("train", cmd_train, "train SGNS embeddings"),
        ("eval", cmd_eval, "compute the metric report for an embedding file"),
        ("mine-hardneg", cmd_mine_hardneg, "mine chi-squared hard-negative pairs"),
        ("optimize", cmd_optimize, "run single- or multi-objective HPO"),
        ("ladder", cmd_ladder, "run HPO at increasing subsample rates"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("analyze", help="popularity or play-prediction analysis")
    p.add_argument("what", choices=["popularity", "play"])
    _add_common(p)
    p.set_defaults(fn=cmd_analyze)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("runtime failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
