"""Command-line entry point.

Subcommands wire datasets, training, ensemble fitting and evaluation into
reproducible run directories. Exit codes: 0 success, 1 usage or state
error, 2 data/format error, 3 numeric failure; failures emit one JSON
object on stderr (``{"error", "message", "exit_code"}``).

`--threads` (or the ``MOSE_THREADS`` environment variable) caps worker
threads for query-parallel scoring; it is persisted into ``config.json``
like every other setting, so a rerun from that file reproduces the run
bit-for-bit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ensemble, runs, synth
from .config import TEMPERATURE_GRID, RunConfig, load_config, save_config
from .errors import ConfigError, MoseError, StateError
from .evaluator import evaluate, fuse_scores, modality_scores, temperature_sweep
from .store import Checkpoint, init_params, load_checkpoint, save_checkpoint
from .trainer import fit


class _Parser(argparse.ArgumentParser):
    """argparse maps its own failures to exit code 2; route them through
    the package's usage-error path (exit code 1) instead."""

    def error(self, message):
        raise ConfigError(message)


def _add_threads(parser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap worker threads (default: MOSE_THREADS or 1)",
    )


def _resolve_threads(args) -> int | None:
    """Explicit flag wins, then MOSE_THREADS, then None (keep config)."""
    value = getattr(args, "threads", None)
    if value is None:
        env = os.environ.get("MOSE_THREADS")
        if not env:
            return None
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"MOSE_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError(f"--threads must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mose", description="Modality-split ensemble KG completion.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert a dataset directory into a run bundle")
    p.add_argument("--data", required=True, help="dataset directory (train/valid/test TSVs + MSEF files)")
    p.add_argument("--out", required=True, help="run directory to create")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("kind", choices=["random", "complementary"])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--entities", type=int, default=None)
    p.add_argument("--relations", type=int, default=None, help="random KG only")
    p.add_argument("--triples", type=int, default=None, help="random KG only")
    p.add_argument("--feat-dim", type=int, default=None, help="random KG only")
    p.add_argument("--code-dim", type=int, default=None, help="complementary KG only")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train modality-split embeddings on a run bundle")
    p.add_argument("--run", required=True)
    p.add_argument("--config", default=None, help="JSON config file (flags below override it)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--n3-weight", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--tie-relations", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--modalities", default=None, help="comma-separated subset of structure,visual,text")
    _add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-ensemble", help="fit ensemble weights on the validation meta-set")
    p.add_argument("--run", required=True)
    p.add_argument("--method", required=True, choices=["ai", "bi", "mi"])
    _add_threads(p)
    p.set_defaults(func=cmd_fit_ensemble)

    p = sub.add_parser("evaluate", help="filtered-ranking metrics for one inference mode")
    p.add_argument("--run", required=True)
    p.add_argument(
        "--inference",
        required=True,
        choices=["ai", "bi", "mi", "single:structure", "single:visual", "single:text"],
    )
    p.add_argument("--split", choices=["valid", "test"], default="test")
    _add_threads(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-temperature", help="train once per temperature, report metrics per T")
    p.add_argument("--run", required=True)
    p.add_argument("--grid", default=None, help='comma-separated temperatures, e.g. "0.5,1,2,4,8,16,32"')
    p.add_argument("--split", choices=["valid", "test"], default="valid")
    _add_threads(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-weights", help="write fitted boosting weights as TSV")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_export_weights)

    p = sub.add_parser("predict", help="rank tail entities for one (head, relation) query")
    p.add_argument("--run", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--relation", required=True, help="relation name; append _inv for the head direction")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument(
        "--inference",
        default="ai",
        choices=["ai", "bi", "mi", "single:structure", "single:visual", "single:text"],
    )
    _add_threads(p)
    p.set_defaults(func=cmd_predict)
    return parser


def cmd_ingest(args) -> int:
    bundle = runs.ingest_dataset(args.data, args.out)
    counts = bundle.meta["counts"]
    print(
        f"ingested {bundle.n_entities} entities, {bundle.n_relations} relations, "
        f"{counts['train']}/{counts['valid']}/{counts['test']} train/valid/test triples "
        f"-> {bundle.run_dir}"
    )
    return 0


def _default(value, fallback):
    return fallback if value is None else value


def cmd_synth(args) -> int:
    if args.kind == "random":
        out = synth.generate_random_kg(
            args.out,
            seed=args.seed,
            n_entities=_default(args.entities, 50),
            n_relations=_default(args.relations, 5),
            n_triples=_default(args.triples, 300),
            feat_dim=_default(args.feat_dim, 16),
        )
    else:
        for flag in ("relations", "triples", "feat_dim"):
            if getattr(args, flag) is not None:
                raise ConfigError(f"--{flag.replace('_', '-')} applies to the random generator only")
        out = synth.generate_complementary_kg(
            args.out,
            seed=args.seed,
            n_entities=_default(args.entities, 400),
            code_dim=_default(args.code_dim, 8),
        )
    print(f"wrote dataset {out}")
    return 0


_TRAIN_OVERRIDES = (
    "seed",
    "dim",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "temperature",
    "n3_weight",
    "patience",
    "tie_relations",
)


def _resolve_train_config(args) -> RunConfig:
    merged = RunConfig().to_dict()
    if args.config is not None:
        merged.update(load_config(args.config).to_dict())
    for name in _TRAIN_OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            merged[name] = value
    if args.modalities is not None:
        merged["modalities"] = [m.strip() for m in args.modalities.split(",") if m.strip()]
    threads = _resolve_threads(args)
    if threads is not None:
        merged["threads"] = threads
    return RunConfig.from_dict(merged)


def cmd_train(args) -> int:
    bundle = runs.load_run(args.run)
    config = _resolve_train_config(args)
    save_config(config, bundle.path(runs.CONFIG_FILE))

    params = init_params(
        seed=config.seed,
        dim=config.dim,
        n_entities=bundle.n_entities,
        n_relations=bundle.n_relations,
        features=bundle.features,
        modalities=tuple(config.modalities),
        tie_relations=config.tie_relations,
    )
    result = fit(bundle.split("train"), bundle.split("valid"), params, config, bundle.filter_index())
    save_checkpoint(
        bundle.path(runs.CHECKPOINT_FILE),
        result.params,
        result.optimizer.accumulators,
        config.to_dict(),
        epoch=result.best_epoch,
        rng_state=result.rng_state,
    )
    with open(bundle.path(runs.TRAIN_LOG_FILE), "w", encoding="utf-8") as fh:
        for record in result.log:
            fh.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")
    print(
        f"trained {len(result.log)} epochs; best valid Hits@10 {result.best_hits10:.4f} "
        f"at epoch {result.best_epoch}; checkpoint -> {bundle.path(runs.CHECKPOINT_FILE)}"
    )
    return 0


def _load_trained(bundle: runs.RunBundle) -> tuple[RunConfig, Checkpoint]:
    path = bundle.path(runs.CHECKPOINT_FILE)
    if not path.exists():
        raise StateError(f"{bundle.run_dir} has no trained checkpoint; run `mose train` first")
    checkpoint = load_checkpoint(path, features=bundle.features)
    return RunConfig.from_dict(checkpoint.config), checkpoint


def cmd_fit_ensemble(args) -> int:
    bundle = runs.load_run(args.run)
    config, checkpoint = _load_trained(bundle)
    threads = _resolve_threads(args)
    if threads is not None:
        config = config.replace(threads=threads)
    meta_queries = bundle.split("valid")
    model = checkpoint.params

    if args.method == "ai":
        names = model.modality_names
        weights = ensemble.RelationWeights(
            modalities=names,
            weights={},
            fallback=np.full(len(names), 1.0 / len(names)),
        )
        runs.write_json(bundle.path(runs.ensemble_file("ai")), {"method": "ai", **weights.to_json_dict()})
        print(f"recorded uniform weights -> {bundle.path(runs.ensemble_file('ai'))}")
        return 0

    tensors = modality_scores(meta_queries, model)
    if args.method == "bi":
        weights = ensemble.fit_rankboost(
            meta_queries, tensors, bundle.filter_index(), config, bundle.n_entities
        )
        runs.write_json(bundle.path(runs.ensemble_file("bi")), {"method": "bi", **weights.to_json_dict()})
        print(
            f"fitted boosting weights for {len(weights.weights)} relations "
            f"-> {bundle.path(runs.ensemble_file('bi'))}"
        )
        return 0

    meta_params = ensemble.fit_metalearner(meta_queries, tensors, config)
    checkpoint.sections["MI"] = {
        "meta": {"modalities": list(meta_params.modalities), "hidden": meta_params.hidden},
        "blocks": meta_params.blocks(),
    }
    save_checkpoint(
        bundle.path(runs.CHECKPOINT_FILE),
        checkpoint.params,
        checkpoint.opt_state,
        checkpoint.config,
        epoch=checkpoint.epoch,
        rng_state=checkpoint.rng_state,
        sections=checkpoint.sections,
    )
    print(f"fitted meta-learner (hidden {meta_params.hidden}) -> section MI of {bundle.path(runs.CHECKPOINT_FILE)}")
    return 0


def _load_ensemble_model(bundle: runs.RunBundle, checkpoint: Checkpoint, inference: str):
    if inference == "bi":
        path = bundle.path(runs.ensemble_file("bi"))
        if not path.exists():
            raise StateError(
                f"{bundle.run_dir} has no boosting weights; run `mose fit-ensemble --method bi` first"
            )
        return ensemble.RelationWeights.from_json_dict(runs.read_json(path))
    if inference == "mi":
        section = checkpoint.sections.get("MI")
        if section is None:
            raise StateError(
                f"{bundle.run_dir} has no meta-learner; run `mose fit-ensemble --method mi` first"
            )
        return ensemble.MetaLearnerParams.from_blocks(
            section["meta"]["modalities"], section["blocks"]
        )
    return None


_TSV_COLUMNS = ("count", "hits1", "hits3", "hits10", "mr", "mrr")


def _metrics_tsv_rows(label: str, split: str, report_dict: dict):
    sections = [("overall", report_dict)] + [
        (direction, report_dict["directions"][direction])
        for direction in ("tail", "head")
        if direction in report_dict.get("directions", {})
    ]
    for direction, block in sections:
        yield (
            label,
            split,
            direction,
            str(block["count"]),
            f"{block['hits1']:.4f}",
            f"{block['hits3']:.4f}",
            f"{block['hits10']:.4f}",
            str(round(block["mr"])),
            f"{block['mrr']:.4f}",
        )


def _write_metrics_tsv(path, merged: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("inference\tsplit\tdirection\tcount\thits@1\thits@3\thits@10\tmr\tmrr\n")
        for mode in sorted(merged):
            entry = merged[mode]
            for row in _metrics_tsv_rows(mode, entry["split"], entry["metrics"]):
                fh.write("\t".join(row) + "\n")


def cmd_evaluate(args) -> int:
    bundle = runs.load_run(args.run)
    config, checkpoint = _load_trained(bundle)
    threads = _resolve_threads(args) or config.threads
    ensemble_model = _load_ensemble_model(bundle, checkpoint, args.inference)
    report = evaluate(
        bundle.split(args.split),
        checkpoint.params,
        args.inference,
        bundle.filter_index(),
        ensemble_model=ensemble_model,
        threads=threads,
    )

    metrics_path = bundle.path(runs.METRICS_JSON)
    merged = runs.read_json(metrics_path) if metrics_path.exists() else {}
    merged[args.inference] = {"split": args.split, "metrics": report.to_json_dict()}
    runs.write_json(metrics_path, merged)
    _write_metrics_tsv(bundle.path(runs.METRICS_TSV), merged)
    print(
        f"{args.inference} on {args.split}: hits@1 {report.hits1:.4f} hits@3 {report.hits3:.4f} "
        f"hits@10 {report.hits10:.4f} mr {round(report.mr)} mrr {report.mrr:.4f} "
        f"({report.count} queries)"
    )
    return 0


def cmd_sweep(args) -> int:
    bundle = runs.load_run(args.run)
    config_path = bundle.path(runs.CONFIG_FILE)
    config = load_config(config_path) if config_path.exists() else RunConfig()
    threads = _resolve_threads(args)
    if threads is not None:
        config = config.replace(threads=threads)
    if args.grid is None:
        grid = list(TEMPERATURE_GRID)
    else:
        try:
            grid = [float(part) for part in args.grid.split(",") if part.strip()]
        except ValueError:
            raise ConfigError(f"--grid must be comma-separated numbers, got {args.grid!r}") from None
        if not grid:
            raise ConfigError("--grid is empty")

    rows = temperature_sweep(
        bundle.split("train"),
        bundle.split("valid"),
        bundle.split(args.split),
        config,
        grid,
        bundle.filter_index(),
        n_entities=bundle.n_entities,
        n_relations=bundle.n_relations,
        features=bundle.features,
    )
    payload = {
        "split": args.split,
        "rows": [{"temperature": t, "metrics": report.to_json_dict()} for t, report in rows],
    }
    runs.write_json(bundle.path(runs.SWEEP_JSON), payload)
    with open(bundle.path(runs.SWEEP_TSV), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("temperature\tcount\thits@1\thits@3\thits@10\tmr\tmrr\n")
        for t, report in rows:
            fh.write(
                f"{t:g}\t{report.count}\t{report.hits1:.4f}\t{report.hits3:.4f}"
                f"\t{report.hits10:.4f}\t{round(report.mr)}\t{report.mrr:.4f}\n"
            )
    for t, report in rows:
        print(f"T={t:g}: hits@10 {report.hits10:.4f} mrr {report.mrr:.4f}")
    return 0


def cmd_export_weights(args) -> int:
    bundle = runs.load_run(args.run)
    path = bundle.path(runs.ensemble_file("bi"))
    if not path.exists():
        raise StateError(
            f"{bundle.run_dir} has no boosting weights; run `mose fit-ensemble --method bi` first"
        )
    weights = ensemble.RelationWeights.from_json_dict(runs.read_json(path))
    by_modality = {name: i for i, name in enumerate(weights.modalities)}
    out_path = bundle.path(runs.WEIGHTS_TSV)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("relation_name\tw_structure\tw_visual\tw_text\n")
        for rid in range(2 * bundle.n_relations):
            vector = weights.for_relation(rid)
            cells = [
                repr(float(vector[by_modality[name]])) if name in by_modality else "0.0"
                for name in ("structure", "visual", "text")
            ]
            fh.write(bundle.vocab.relation_label(rid) + "\t" + "\t".join(cells) + "\n")
    print(f"wrote {out_path}")
    return 0


def cmd_predict(args) -> int:
    if args.topk < 1:
        raise ConfigError(f"--topk must be >= 1, got {args.topk}")
    bundle = runs.load_run(args.run)
    config, checkpoint = _load_trained(bundle)
    ensemble_model = _load_ensemble_model(bundle, checkpoint, args.inference)

    head = bundle.vocab.entity_id(args.head)
    name = args.relation
    if name in bundle.vocab.relation_index:
        relation = bundle.vocab.relation_id(name)
    elif name.endswith("_inv") and name[: -len("_inv")] in bundle.vocab.relation_index:
        relation = bundle.vocab.relation_id(name[: -len("_inv")]) + bundle.n_relations
    else:
        raise ConfigError(f"unknown relation {name!r} (reciprocals end in _inv)")

    queries = np.array([[head, relation, 0]], dtype=np.int64)
    tensors = modality_scores(queries, checkpoint.params)
    fused = fuse_scores(
        tensors, args.inference, relations=queries[:, 1], ensemble_model=ensemble_model
    )
    scores = fused.values[0]
    top = np.lexsort((np.arange(scores.shape[0]), -scores))[: args.topk]
    for entity in top:
        print(f"{bundle.vocab.entity_names[int(entity)]}\t{float(scores[entity])!r}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except MoseError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(payload), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": 2}
        print(json.dumps(payload), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
