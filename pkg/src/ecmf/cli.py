"""Command-line front end.

Subcommands map 1:1 onto the library: synth / ingest for data, train / cv /
eval for modeling, refine / review for the label pipeline, ensemble for
voting, serve-review for the HTTP review service. Every command that writes
an output also writes a `<output>.manifest.json` sidecar recording the
command, its resolved options, and sha256 digests of the inputs it read —
enough to rerun it exactly.

Exit codes: 0 success, 1 bad input or bad usage, 2 internal/runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .dataset import (
    Dataset,
    LABELS,
    StreamSchema,
    default_schema,
    infer_schema,
    ingest,
    load_labels,
    save_labels,
    synth_clean_labels,
    synth_generate,
    write_manifest,
)
from .ensemble import ABLATION_FLAGS, ensemble_metrics, make_variants, train_variants
from .errors import InvalidConfig, RuntimeFailure, ValidationFailure
from .fusion import ModelConfig, load_checkpoint, save_checkpoint
from .metrics import format_waf
from .preprocess import make_folds
from .refinement import (
    apply_decisions,
    export_labels,
    load_external_source,
    load_vote_records,
    refine,
    replay_log,
    review_stats,
    save_vote_records,
)
from .training import TrainConfig, TrainedModel, evaluate, run_cv, train_one

# Option dests a --config JSON file may set as defaults (hyperparameters only;
# explicit command-line flags always win).
_CONFIG_KEYS = frozenset({
    "hidden_dim", "dropout", "heads", "attn_layers",
    "no_modal_token", "no_residual_mlp", "no_norm",
    "lr", "clip", "max_epochs", "batch_size", "patience", "seed",
    "k", "val_fraction", "n_seeds", "ablations", "voting",
})


class _Parser(argparse.ArgumentParser):
    """argparse's stock usage-error exit code is 2; here bad usage is a
    validation problem, so it exits 1 and leaves 2 for internal failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _data_dir() -> Path:
    return Path(os.environ.get("ECMF_DATA_DIR", "."))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    return str(v)


def _write_run_manifest(args: argparse.Namespace, inputs: list, outputs: list) -> None:
    primary = Path(outputs[0])
    command = args.command
    if getattr(args, "review_command", None):
        command = f"{command} {args.review_command}"
    manifest = {
        "command": command,
        "options": {
            k: _jsonable(v)
            for k, v in sorted(vars(args).items())
            if k not in ("func", "command", "review_command")
        },
        "inputs": {
            str(p): _sha256(Path(p)) for p in inputs if p is not None and Path(p).is_file()
        },
        "outputs": [str(p) for p in outputs],
    }
    path = primary.with_name(primary.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_json(path: Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_file(path, what: str) -> Path:
    """Missing user-named inputs are usage errors, not internal failures."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"{what} not found: {path}")
    return path


def _load_dataset(args) -> Dataset:
    _require_file(args.data, "feature manifest")
    if getattr(args, "labels", None):
        _require_file(args.labels, "label file")
    if getattr(args, "schema_file", None):
        schema = StreamSchema.from_json(json.loads(Path(args.schema_file).read_text(encoding="utf-8")))
    else:
        schema = infer_schema(args.data)
    ds = ingest(args.data, schema)
    if getattr(args, "labels", None):
        ds = ds.with_labels(load_labels(args.labels))
    return ds


def _model_config(args, schema: StreamSchema) -> ModelConfig:
    return ModelConfig(
        schema=schema,
        hidden_dim=args.hidden_dim,
        dropout_rate=args.dropout,
        num_heads=args.heads,
        num_attn_layers=args.attn_layers,
        enable_norm=not args.no_norm,
        enable_modal_token=not args.no_modal_token,
        enable_residual_mlp=not args.no_residual_mlp,
        seed=args.seed,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        max_epochs=args.max_epochs,
        batch_size=args.batch_size,
        grad_clip_norm=args.clip,
        patience=args.patience,
        seed=args.seed,
    )


def _split_train_val(dataset: Dataset, val_fraction: float, seed: int):
    """Deterministic stratified holdout: fold 0 of a round(1/fraction)-fold split."""
    labeled = list(dataset.labeled_samples())
    if val_fraction <= 0:
        return labeled, None
    if val_fraction >= 1:
        raise InvalidConfig(f"--val-fraction must be in [0, 1), got {val_fraction}")
    k = max(2, round(1.0 / val_fraction))
    split = make_folds(labeled, k, seed)
    by_id = {s.sample_id: s for s in labeled}
    val = [by_id[i] for i in split.ids_in_fold(0)]
    train = [by_id[i] for i in split.ids_not_in_fold(0)]
    return train, val


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    schema = default_schema(args.dim)
    ds = synth_generate(
        n_per_class=args.n_per_class,
        schema=schema,
        separation=args.separation,
        noise_sigma=args.noise_sigma,
        label_noise_rate=args.label_noise,
        seed=args.seed,
    )
    write_manifest(ds, args.out)
    outputs = [args.out]
    if args.clean_labels_out:
        save_labels(synth_clean_labels(ds), args.clean_labels_out)
        outputs.append(args.clean_labels_out)
    _write_run_manifest(args, inputs=[], outputs=outputs)
    corrupted = round(args.label_noise * len(ds))
    print(f"wrote {len(ds)} samples ({args.n_per_class} per class, "
          f"{len(schema)} streams x dim {args.dim}, {corrupted} labels corrupted) to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    ds = _load_dataset(args)
    labeled = ds.labeled_samples()
    counts = {lab.value: 0 for lab in LABELS}
    for s in labeled:
        counts[s.gold_label.value] += 1
    print(f"ok: {len(ds)} samples, {len(labeled)} labeled, "
          f"{len(ds.schema)} streams, modalities: "
          + ", ".join(m.value for m in ds.schema.modalities()))
    for lab in LABELS:
        print(f"  {lab.value:>10}: {counts[lab.value]}")
    if args.summary_out:
        _write_json(args.summary_out, {
            "samples": len(ds),
            "labeled": len(labeled),
            "streams": list(ds.schema.names),
            "class_counts": counts,
        })
        _write_run_manifest(args, inputs=[args.data, args.labels], outputs=[args.summary_out])
    return 0


def cmd_train(args) -> int:
    ds = _load_dataset(args)
    train_samples, val_samples = _split_train_val(ds, args.val_fraction, args.seed)
    trained, report = train_one(train_samples, val_samples,
                                _model_config(args, ds.schema), _train_config(args))
    save_checkpoint(args.checkpoint_out, trained.model, trained.norm_stats)
    _write_json(args.report_out, report.to_json())
    _write_run_manifest(args, inputs=[args.data, args.labels],
                        outputs=[args.checkpoint_out, args.report_out])
    print(f"trained {report.epochs_run} epochs on {len(train_samples)} samples"
          + (f", val {len(val_samples)}" if val_samples else ""))
    if report.best_val_waf is not None:
        print(f"best epoch {report.best_epoch}: val WAF {format_waf(report.best_val_waf)}")
    print(f"checkpoint: {args.checkpoint_out}")
    return 0


def cmd_cv(args) -> int:
    ds = _load_dataset(args)
    report = run_cv(ds, _model_config(args, ds.schema), _train_config(args), k=args.k)
    _write_json(args.report_out, report.to_json())
    _write_run_manifest(args, inputs=[args.data, args.labels], outputs=[args.report_out])
    for i, waf in enumerate(report.fold_wafs):
        print(f"fold {i}: best val WAF {format_waf(waf)}")
    print(f"mean WAF {format_waf(report.mean_waf)} (std {report.std_waf * 100:.2f}pp) over k={report.k}")
    print(f"report: {args.report_out}")
    return 0


def cmd_eval(args) -> int:
    _require_file(args.data, "feature manifest")
    _require_file(args.checkpoint, "checkpoint")
    if args.labels:
        _require_file(args.labels, "label file")
    model, stats = load_checkpoint(args.checkpoint)
    if args.schema_file:
        schema = StreamSchema.from_json(json.loads(Path(args.schema_file).read_text(encoding="utf-8")))
    else:
        schema = model.config.schema
    ds = ingest(args.data, schema)
    if args.labels:
        ds = ds.with_labels(load_labels(args.labels))
    report = evaluate(TrainedModel(model, stats), ds)
    print(f"samples: {int(report.support.sum())}")
    print(f"accuracy: {report.accuracy * 100:.2f}%")
    print(f"WAF: {format_waf(report.waf)}")
    for lab, f1, n in zip(LABELS, report.per_class_f1, report.support):
        print(f"  {lab.value:>10}: F1 {f1:.4f} (n={int(n)})")
    _write_json(args.report_out, report.to_json())
    _write_run_manifest(args, inputs=[args.data, args.checkpoint, args.labels],
                        outputs=[args.report_out])
    print(f"report: {args.report_out}")
    return 0


def _source_paths(args) -> list[Path]:
    paths: list[Path] = []
    for chunk in args.sources or []:
        paths.extend(Path(p.strip()) for p in str(chunk).split(",") if p.strip())
    return paths


def cmd_refine(args) -> int:
    ds = _load_dataset(args)
    paths = [_require_file(p, "label source") for p in _source_paths(args)]
    sources = [load_external_source(p) for p in paths]
    labels, records = refine(
        ds, sources,
        include_original=not args.exclude_original,
        include_unlabeled=args.include_unlabeled,
    )
    save_labels(labels, args.out)
    save_vote_records(records, args.queue_out)
    stats = review_stats(records)
    _write_json(args.stats_out, stats)
    _write_run_manifest(args, inputs=[args.data, args.labels, *paths],
                        outputs=[args.out, args.queue_out, args.stats_out])
    print(f"refined {stats['total']} samples with {len(sources)} sources: "
          f"{stats['auto']} auto, {stats['needs_review']} flagged for review, "
          f"{stats['changed_from_original']} changed from original")
    print(f"labels: {args.out}")
    print(f"queue: {args.queue_out}")
    return 0


def cmd_review_apply(args) -> int:
    _require_file(args.queue, "review queue")
    records = load_vote_records(args.queue)
    decisions = replay_log(args.log)
    updated = apply_decisions(records, decisions)
    save_vote_records(updated, args.queue_out)
    _write_run_manifest(args, inputs=[args.queue, args.log], outputs=[args.queue_out])
    still = sum(1 for r in updated if r.needs_review)
    print(f"applied {len(decisions)} review decisions; {still} samples still awaiting review")
    print(f"queue: {args.queue_out}")
    return 0


def cmd_review_export(args) -> int:
    _require_file(args.queue, "review queue")
    records = apply_decisions(load_vote_records(args.queue), replay_log(args.log))
    save_labels(export_labels(records), args.labels_out)
    _write_run_manifest(args, inputs=[args.queue, args.log], outputs=[args.labels_out])
    stats = review_stats(records)
    print(f"exported {stats['total']} labels ({stats['reviewed']} human-reviewed, "
          f"{stats['needs_review']} still provisional) to {args.labels_out}")
    return 0


def cmd_ensemble(args) -> int:
    ds = _load_dataset(args)
    train_samples, val_samples = _split_train_val(ds, args.val_fraction, args.seed)
    ablations = [] if args.ablations == "none" else \
        [a.strip() for a in args.ablations.split(",") if a.strip()]
    variants = make_variants(_model_config(args, ds.schema), _train_config(args),
                             n_seed_variants=args.n_seeds, ablations=ablations, seed=args.seed)
    trained = train_variants(variants, train_samples, val_samples)
    members = [tv.trained for tv in trained]

    if args.eval_data:
        eval_ds = ingest(args.eval_data, ds.schema)
        if args.labels:
            eval_ds = eval_ds.with_labels(load_labels(args.labels))
        eval_samples = list(eval_ds.labeled_samples())
    else:
        eval_samples = val_samples if val_samples else train_samples
    report, individual = ensemble_metrics(members, eval_samples, voting=args.voting)

    for tv, waf in zip(trained, individual):
        print(f"  {tv.spec.variant_id:>20}: WAF {format_waf(waf)}")
    print(f"ensemble ({args.voting} voting, {len(members)} members): WAF {format_waf(report.waf)}")
    _write_json(args.report_out, {
        "voting": args.voting,
        "members": [
            {"variant_id": tv.spec.variant_id, "waf": waf, "seed": tv.spec.model_config.seed}
            for tv, waf in zip(trained, individual)
        ],
        "mean_individual_waf": float(np.mean(individual)),
        "ensemble": report.to_json(),
    })
    _write_run_manifest(args, inputs=[args.data, args.labels, args.eval_data],
                        outputs=[args.report_out])
    print(f"report: {args.report_out}")
    return 0


def cmd_serve_review(args) -> int:
    import uvicorn

    from .service import create_app

    _require_file(args.queue, "review queue")
    app = create_app(args.queue, args.log, static_dir=args.static)
    print(f"serving review queue {args.queue} on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# --- parser ---------------------------------------------------------------------

def build_parser(config_defaults: dict | None = None) -> argparse.ArgumentParser:
    """`config_defaults` (from a --config file) replaces matching option
    defaults; options given explicitly on the command line still win."""
    d = _data_dir()
    parser = _Parser(prog="ecmf", description="multimodal emotion label pipeline")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    common_data = _Parser(add_help=False)
    common_data.add_argument("--data", "--features", dest="data", type=Path, required=True,
                             help="feature manifest (JSONL)")
    common_data.add_argument("--labels", type=Path, default=None,
                             help="label file overriding the manifest's gold labels")
    common_data.add_argument("--schema-file", type=Path, default=None,
                             help="stream schema JSON (default: inferred from the manifest)")

    config_arg = _Parser(add_help=False)
    config_arg.add_argument("--config", type=Path, default=None,
                            help="JSON file of hyperparameter defaults; explicit flags win")

    model_args = _Parser(add_help=False)
    model_args.add_argument("--hidden-dim", type=int, default=128)
    model_args.add_argument("--dropout", type=float, default=0.6)
    model_args.add_argument("--heads", type=int, default=2)
    model_args.add_argument("--attn-layers", type=int, default=2)
    model_args.add_argument("--no-modal-token", action="store_true", help="ablate the modal tokens")
    model_args.add_argument("--no-residual-mlp", action="store_true", help="ablate the encoder residual branch")
    model_args.add_argument("--no-norm", action="store_true", help="ablate feature standardization")

    train_args = _Parser(add_help=False)
    train_args.add_argument("--lr", type=float, default=5e-5)
    train_args.add_argument("--clip", type=float, default=1.0, help="global gradient-norm cap")
    train_args.add_argument("--max-epochs", type=int, default=200)
    train_args.add_argument("--batch-size", type=int, default=32)
    train_args.add_argument("--patience", type=int, default=30,
                            help="consecutive non-improving epochs tolerated before stopping")

    seed_arg = _Parser(add_help=False)
    seed_arg.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", parents=[seed_arg], help="generate a synthetic labeled dataset")
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--dim", type=int, default=64, help="feature dim of every stream")
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--label-noise", type=float, default=0.0, help="fraction of gold labels to corrupt")
    p.add_argument("--out", type=Path, default=d / "synth.jsonl")
    p.add_argument("--clean-labels-out", type=Path, default=None,
                   help="also write the pre-corruption labels here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common_data], help="validate a manifest and print a summary")
    p.add_argument("--summary-out", type=Path, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common_data, config_arg, model_args, train_args, seed_arg],
                       help="train one model")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--checkpoint-out", type=Path, default=d / "model.npz")
    p.add_argument("--report-out", type=Path, default=d / "train_report.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", parents=[common_data, config_arg, model_args, train_args, seed_arg],
                       help="stratified k-fold cross-validation")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--report-out", type=Path, default=d / "cv_report.json")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled data")
    p.add_argument("--data", "--features", dest="data", type=Path, required=True)
    p.add_argument("--labels", type=Path, default=None)
    p.add_argument("--schema-file", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--report-out", type=Path, default=d / "eval_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("refine", parents=[common_data],
                       help="vote sample labels against auxiliary sources")
    p.add_argument("--sources", action="append", required=True, metavar="PATHS",
                   help="comma-separated label source JSONL paths; flag may repeat")
    p.add_argument("--exclude-original", action="store_true",
                   help="keep the original annotation off the ballot (it still "
                        "anchors the review trigger)")
    p.add_argument("--include-unlabeled", action="store_true")
    p.add_argument("--out", type=Path, default=d / "refined_labels.jsonl",
                   help="refined label file")
    p.add_argument("--queue-out", type=Path, default=d / "review_queue.jsonl")
    p.add_argument("--stats-out", type=Path, default=d / "refine_stats.json")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("review", help="work with review queues and decision logs")
    rsub = p.add_subparsers(dest="review_command", required=True, metavar="action")
    ra = rsub.add_parser("apply", help="fold logged decisions into a queue file")
    ra.add_argument("--queue", type=Path, default=d / "review_queue.jsonl")
    ra.add_argument("--log", type=Path, default=d / "review_log.jsonl")
    ra.add_argument("--queue-out", type=Path, default=d / "review_queue_applied.jsonl")
    ra.set_defaults(func=cmd_review_apply)
    rx = rsub.add_parser("export", help="materialize final labels from queue + log")
    rx.add_argument("--queue", type=Path, default=d / "review_queue.jsonl")
    rx.add_argument("--log", type=Path, default=d / "review_log.jsonl")
    rx.add_argument("--labels-out", type=Path, default=d / "refined_labels.jsonl")
    rx.set_defaults(func=cmd_review_export)

    p = sub.add_parser("ensemble", parents=[common_data, config_arg, model_args, train_args, seed_arg],
                       help="train seed + ablation variants and vote")
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--ablations", default=",".join(ABLATION_FLAGS),
                   help=f"comma list from {{{','.join(ABLATION_FLAGS)}}} or 'none'")
    p.add_argument("--voting", choices=("hard", "soft"), default="hard")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--eval-data", type=Path, default=None,
                   help="separate labeled manifest to score on (default: the val split)")
    p.add_argument("--report-out", type=Path, default=d / "ensemble_report.json")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("serve-review", help="serve the review queue over HTTP")
    p.add_argument("--queue", type=Path, default=d / "review_queue.jsonl")
    p.add_argument("--log", type=Path, default=d / "review_log.jsonl")
    p.add_argument("--static", type=Path, default=None, help="directory with the web UI build")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve_review)

    if config_defaults:
        # Subcommands parse into a fresh namespace, so defaults must be set on
        # each subparser that actually owns the option.
        for sp in (*sub.choices.values(), *rsub.choices.values()):
            hits = {a.dest: config_defaults[a.dest]
                    for a in sp._actions if a.dest in config_defaults}
            if hits:
                sp.set_defaults(**hits)

    return parser


def _config_overrides(argv: list[str]) -> dict:
    """Defaults from a --config JSON file, applied before parsing so explicit
    flags still win."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise InvalidConfig(f"config file {path} must hold a JSON object")
    overrides = {}
    for key, value in obj.items():
        dest = key.replace("-", "_")
        if dest not in _CONFIG_KEYS:
            raise InvalidConfig(f"unknown config key {key!r} in {path}")
        overrides[dest] = value
    return overrides


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        parser = build_parser(_config_overrides(argv))
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RuntimeFailure as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
