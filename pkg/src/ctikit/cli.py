"""Command-line entry point.

Subcommands: ingest, split, kappa, augment, filter (suggest-threshold,
apply-threshold, export), review-serve, train, evaluate, ablate, report.
Exit codes: 0 success, 1 domain error, 2 usage error. All randomness is
governed by --seed; with mock backends identical invocations produce
byte-identical machine-readable outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import augment as augment_mod
from . import corpus, evalharness, filtering, pipeline
from .backends import GenerationParams, MockCompletionBackend, MockEmbeddingBackend, MockMaskedLMBackend
from .errors import ToolkitError
from .fewshot import Pattern, Slot, Verbalizer, cti_pattern, yes_no_verbalizer

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

DEFAULT_CONFIG = {
    "pattern": {"max_post_tokens": 64},
    "verbalizer": {"relevant": "yes", "irrelevant": "no"},
    "stages": [
        {"level": 0, "kind": "pretrained"},
        {"level": 1, "kind": "masked_modeling", "dataset": "split:full_train"},
        {"level": 2, "kind": "classification", "dataset": "split:full_train", "objective": "adapet"},
        {"level": 3, "kind": "fewshot", "dataset": "split:fewshot_train", "objective": "adapet"},
    ],
    "augmentation": None,
    "evaluation": {"seeds": [0, 1, 2, 3, 4], "test_split": "test"},
    "backend": {"n_features": 64, "extra_vocab": []},
    "mask_rate": 0.15,
}


def load_config(path: str | None, overrides: list[str]) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if path:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        for key, value in loaded.items():
            if key not in config:
                raise ToolkitError(f"unknown config key {key!r}")
            config[key] = value
    for item in overrides:
        if "=" not in item:
            raise ToolkitError(f"override {item!r} must look like dotted.key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = config
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ToolkitError(f"unknown config key {dotted!r}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ToolkitError(f"unknown config key {dotted!r}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return config


def _pattern_segment(raw):
    if isinstance(raw, str) and raw.startswith("<") and raw.endswith(">") and raw[1:-1] in Slot.__members__:
        return Slot[raw[1:-1]]
    return raw


def _pattern_from_config(config: dict) -> Pattern:
    pat = config.get("pattern") or {}
    if "segments" in pat:
        # Slots are spelled "<POST>", "<MASK>", "<SEP>"; everything else is a literal.
        segments = tuple(_pattern_segment(s) for s in pat["segments"])
        return Pattern(segments=segments, max_post_tokens=pat.get("max_post_tokens", 64))
    return cti_pattern(max_post_tokens=pat.get("max_post_tokens", 64))


def _verbalizer_from_config(config: dict) -> Verbalizer:
    mapping = config.get("verbalizer")
    if not mapping:
        return yes_no_verbalizer()
    return Verbalizer(dict(mapping))


def _stages_from_config(config: dict) -> list[pipeline.StageConfig]:
    stages = []
    for raw in config["stages"]:
        hp = pipeline.Hyperparams(**raw.get("hyperparams", {}))
        stages.append(
            pipeline.StageConfig(
                level=raw["level"],
                kind=raw["kind"],
                dataset=raw.get("dataset"),
                objective=raw.get("objective", "none"),
                hyperparams=hp,
            )
        )
    return stages


def _mock_trainable(config: dict, verbalizer: Verbalizer, seed: int) -> MockMaskedLMBackend:
    backend_cfg = config.get("backend") or {}
    vocab = sorted({verbalizer.token(lab) for lab in verbalizer.labels()})
    vocab += [t for t in backend_cfg.get("extra_vocab", []) if t not in vocab]
    vocab.append("<unk>")
    return MockMaskedLMBackend(vocab=tuple(vocab), n_features=backend_cfg.get("n_features", 64), seed=seed)


def _load_bundle(args) -> corpus.DatasetBundle:
    return corpus.read_bundle(args.bundle, getattr(args, "splits", None))


# ---------------------------------------------------------------------------
# Augmentation driver (shared by `augment`, `evaluate`, `ablate`)
# ---------------------------------------------------------------------------


def build_augmented_instances(config: dict, bundle: corpus.DatasetBundle, seed: int) -> list[corpus.LabeledInstance]:
    """Generate, rank, auto-threshold and export candidates for every class."""
    aug_cfg = config.get("augmentation")
    if not aug_cfg:
        return []
    source_split = aug_cfg.get("source_split", "fewshot_train")
    sources = bundle.split_instances(source_split)
    embedder = MockEmbeddingBackend(dim=aug_cfg.get("embedding_dim", 16), seed=seed)
    out: list[corpus.LabeledInstance] = []
    for class_label in corpus.LABELS:
        token = aug_cfg["priming_tokens"][class_label]
        class_sources = [i for i in sources if i.label == class_label]
        if not class_sources:
            continue
        job = augment_mod.AugmentationJob(
            id=f"aug-{class_label}-{seed}",
            class_label=class_label,
            priming_token=token,
            source_instances=tuple(class_sources),
            n_per_instance=aug_cfg.get("n_per_instance", 2),
            generation=GenerationParams(
                max_new_tokens=aug_cfg.get("max_new_tokens", 128),
                stop_sequences=("<|endoftext|>",),
                seed=seed,
            ),
            seed=seed,
        )
        backend = MockCompletionBackend([i.text for i in class_sources], seed=seed)
        candidates = augment_mod.generate_candidates(job, backend)
        originals = [(i.id, i.text) for i in class_sources]
        state = filtering.rank_candidates(
            job.id,
            candidates,
            embedder.embed([i.text for i in class_sources]),
            embedder,
            class_label=class_label,
            originals=originals,
        )
        if state.candidates:
            tau = filtering.suggest_threshold(state, aug_cfg.get("keep_fraction", 0.8))
            state = filtering.apply_threshold(state, tau, 0.0)
            out.extend(filtering.export_filtered(state))
    return out


# ---------------------------------------------------------------------------
# Evaluation driver (shared by `evaluate` and `ablate`)
# ---------------------------------------------------------------------------


def run_experiment(
    name: str,
    stages: list[pipeline.StageConfig],
    config: dict,
    bundle: corpus.DatasetBundle,
    augmented: list[corpus.LabeledInstance],
    seeds: list[int],
    out_dir: Path,
) -> dict:
    pattern = _pattern_from_config(config)
    verbalizer = _verbalizer_from_config(config)
    test_split = config["evaluation"].get("test_split", "test")
    golds = {i.id: i.label for i in bundle.split_instances(test_split)}

    per_seed = []
    run_ids = []
    for seed in seeds:
        backend = _mock_trainable(config, verbalizer, seed)
        run = pipeline.run_pipeline(
            stages,
            backend,
            bundle,
            pattern,
            verbalizer,
            augmented=augmented,
            global_seed=seed,
            mask_rate=config.get("mask_rate", 0.15),
            run_dir=out_dir / "runs",
        )
        if run.failed_stage is not None:
            raise ToolkitError(f"experiment {name}: stage {run.failed_stage} failed")
        preds = pipeline.predict_labels(backend, pattern, verbalizer, bundle.split_instances(test_split))
        per_seed.append(
            evalharness.RunMetrics(
                seed=seed,
                accuracy=evalharness.accuracy(preds, golds),
                f1=evalharness.binary_f1(preds, golds),
                predictions=preds,
            )
        )
        run_ids.append(run.run_id)

    aggregates = evalharness.aggregate_runs(per_seed)
    report = {
        "experiment": name,
        "seeds": seeds,
        "aggregates": {
            metric: {"min": cell.min, "mean": cell.mean, "std": cell.std, "max": cell.max}
            for metric, cell in aggregates.items()
        },
        "table": {metric: evalharness.format_cell(cell.scaled(100)) for metric, cell in aggregates.items()},
        "per_seed": [{"seed": m.seed, "accuracy": m.accuracy, "f1": m.f1} for m in per_seed],
        "runs": run_ids,
        "n_augmented": len(augmented),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "distributions.json").write_text(
        json.dumps(
            {
                "accuracy": [m.accuracy for m in per_seed],
                "f1": [m.f1 for m in per_seed],
                "seeds": seeds,
            },
            ensure_ascii=False,
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    cells = {metric: cell.scaled(100) for metric, cell in aggregates.items()}
    (out_dir / "report.txt").write_text(evalharness.render_table([(name, cells)]), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    bundle = corpus.ingest_path(args.infile)
    if args.merge_annotations:
        corpus.merge_annotations(bundle)
    if args.expand_links:
        resolver = corpus.HttpResolver(max_redirects=10, timeout=5.0)
        if args.cache:
            resolver = corpus.CachedResolver(resolver, args.cache)
        corpus.expand_bundle_links(bundle, resolver)
    if args.dry_run:
        print(f"dry run: {len(bundle)} instances validated")
        return 0
    corpus.write_bundle(bundle, args.out)
    print(f"wrote {len(bundle)} instances to {args.out}")
    return 0


def _parse_sizes(text: str) -> dict[str, int]:
    sizes = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        sizes[name.strip()] = int(value)
    return sizes


def cmd_split(args) -> int:
    bundle = corpus.read_bundle(args.bundle)
    if args.sizes:
        spec = corpus.SplitSpec(sizes=_parse_sizes(args.sizes), seed=args.seed, stratify=not args.no_stratify)
    else:
        spec = corpus.paper_split_spec(seed=args.seed)
    bundle = corpus.make_splits(bundle, spec)
    if args.dry_run:
        print("dry run: splits " + ", ".join(f"{k}={len(v)}" for k, v in sorted(bundle.splits.items())))
        return 0
    manifest = json.dumps({"splits": bundle.splits}, ensure_ascii=False, sort_keys=True, indent=2)
    Path(args.out).write_text(manifest + "\n", encoding="utf-8")
    print("wrote splits: " + ", ".join(f"{k}={len(v)}" for k, v in sorted(bundle.splits.items())))
    return 0


def _labels_from_file(path: str) -> list[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_kappa(args) -> int:
    if args.annotations:
        bundle = corpus.ingest_path(args.annotations)
        pairs = [
            (inst.annotations[args.coder_a], inst.annotations[args.coder_b])
            for inst in bundle.instances.values()
            if args.coder_a in inst.annotations and args.coder_b in inst.annotations
        ]
        if not pairs:
            raise ToolkitError(f"no instances annotated by both {args.coder_a!r} and {args.coder_b!r}")
        a = [p[0] for p in pairs]
        b = [p[1] for p in pairs]
    else:
        if not (args.a and args.b):
            raise ToolkitError("kappa needs either --a/--b label files or --annotations with coders")
        a = _labels_from_file(args.a)
        b = _labels_from_file(args.b)
    print(f"{corpus.cohen_kappa(a, b):.4f}")
    return 0


def cmd_augment(args) -> int:
    config = load_config(args.config, args.set or [])
    aug_cfg = config.get("augmentation")
    if not aug_cfg:
        raise ToolkitError("config has no augmentation section")
    bundle = _load_bundle(args)
    source_split = aug_cfg.get("source_split", "fewshot_train")
    sources = [i for i in bundle.split_instances(source_split) if i.label == args.class_label]
    if not sources:
        raise ToolkitError(f"no {args.class_label!r} instances in split {source_split!r}")

    job = augment_mod.AugmentationJob(
        id=f"aug-{args.class_label}-{args.seed}",
        class_label=args.class_label,
        priming_token=aug_cfg["priming_tokens"][args.class_label],
        source_instances=tuple(sources),
        n_per_instance=aug_cfg.get("n_per_instance", 2),
        generation=GenerationParams(
            max_new_tokens=aug_cfg.get("max_new_tokens", 128),
            stop_sequences=("<|endoftext|>",),
            seed=args.seed,
        ),
        seed=args.seed,
    )
    if args.backend == "mock":
        backend = MockCompletionBackend([i.text for i in sources], seed=args.seed)
    else:
        from .backends import make_backend

        backend = make_backend(args.backend)
    if args.dry_run:
        print(f"dry run: job {job.id} with {len(sources)} sources, quota {job.quota}")
        return 0

    prompts = [augment_mod.prompt_for_call(job, i, backend) for i in range(min(job.budget, 8))]
    candidates = augment_mod.generate_candidates(job, backend)
    embedder = MockEmbeddingBackend(dim=aug_cfg.get("embedding_dim", 16), seed=args.seed)
    originals = [(i.id, i.text) for i in sources]
    state = filtering.rank_candidates(
        job.id,
        candidates,
        embedder.embed([i.text for i in sources]),
        embedder,
        class_label=args.class_label,
        originals=originals,
    )
    state = filtering.attach_counterparts(state, embedder)

    out_dir = Path(args.out_dir)
    (out_dir / "jobs").mkdir(parents=True, exist_ok=True)
    filtering.save_state(state, out_dir / "jobs" / f"{job.id.replace('/', '_')}.json")
    augment_mod.write_candidates(state.candidates, out_dir / f"{job.id}-candidates.jsonl")
    augment_mod.write_job_manifest(job, prompts, len(state.candidates), out_dir / f"{job.id}-manifest.json")
    augment_mod.append_job_record(job, out_dir / "jobs.jsonl")
    print(f"job {job.id}: {len(state.candidates)} candidates (quota {job.quota})")
    return 0


def cmd_filter(args) -> int:
    state = filtering.load_state(args.job)
    if args.filter_cmd == "suggest-threshold":
        tau = filtering.suggest_threshold(state, args.keep_fraction)
        print(f"{tau:.6f}")
        return 0
    if args.filter_cmd == "apply-threshold":
        delta = args.delta if args.delta is not None else filtering.suggest_band(state, args.tau)
        state = filtering.apply_threshold(state, args.tau, delta)
        if args.dry_run:
            counts = state.counts()
            print(f"dry run: kept={counts['kept']} dropped={counts['dropped']} pending={counts['pending']}")
            return 0
        filtering.save_state(state, args.job)
        counts = state.counts()
        print(f"kept={counts['kept']} dropped={counts['dropped']} pending={counts['pending']} version={state.version}")
        return 0
    if args.filter_cmd == "export":
        instances = filtering.export_filtered(state, allow_pending=args.allow_pending)
        if args.dry_run:
            print(f"dry run: {len(instances)} instances would be exported")
            return 0
        Path(args.out).write_text(corpus.instance_lines(instances), encoding="utf-8")
        print(f"wrote {len(instances)} instances to {args.out}")
        return 0
    raise ToolkitError(f"unknown filter subcommand {args.filter_cmd!r}")


def cmd_review_serve(args) -> int:
    import os

    import uvicorn

    from .review_service import FilterStore, create_app

    data_dir = args.data_dir or os.environ.get("CTIKIT_DATA_DIR")
    if not data_dir:
        raise ToolkitError("review-serve needs --data-dir or CTIKIT_DATA_DIR")
    listen = args.listen or os.environ.get("CTIKIT_LISTEN", "127.0.0.1:8000")
    token = args.token or os.environ.get("CTIKIT_REVIEW_TOKEN")
    host, _, port = listen.partition(":")
    store = FilterStore(data_dir)
    ui_dir = args.ui_dir
    if ui_dir is None:
        default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = str(default_ui) if default_ui.is_dir() else None
    if args.dry_run:
        print(f"dry run: {len(store.job_ids())} job(s) loadable from {data_dir}")
        return 0
    app = create_app(store, ui_dir=ui_dir, token=token)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.set or [])
    bundle = _load_bundle(args)
    stages = _stages_from_config(config)
    pipeline.validate_plan(stages)
    pattern = _pattern_from_config(config)
    verbalizer = _verbalizer_from_config(config)
    augmented = []
    if args.augmented:
        augmented = list(corpus.ingest_path(args.augmented).instances.values())
    if args.dry_run:
        print(f"dry run: plan with {len(stages)} stages validated")
        return 0
    backend = _mock_trainable(config, verbalizer, args.seed)
    run = pipeline.run_pipeline(
        stages,
        backend,
        bundle,
        pattern,
        verbalizer,
        augmented=augmented,
        global_seed=args.seed,
        mask_rate=config.get("mask_rate", 0.15),
        run_dir=args.out_dir,
    )
    status = "failed" if run.failed_stage is not None else "ok"
    print(f"{run.run_id} [{status}] stages={len(run.stages)} final={run.final_checkpoint}")
    return 0 if run.failed_stage is None else 1


def cmd_evaluate(args) -> int:
    config = load_config(args.config, args.set or [])
    bundle = _load_bundle(args)
    stages = _stages_from_config(config)
    pipeline.validate_plan(stages)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(config["evaluation"]["seeds"])
    if args.dry_run:
        print(f"dry run: evaluate over seeds {seeds}")
        return 0
    augmented = build_augmented_instances(config, bundle, args.seed)
    report = run_experiment(args.name, stages, config, bundle, augmented, seeds, Path(args.out_dir))
    print(f"{args.name}: f1 {report['table']['f1']}  accuracy {report['table']['accuracy']}")
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config, args.set or [])
    bundle = _load_bundle(args)
    stages = _stages_from_config(config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(config["evaluation"]["seeds"])
    experiments = evalharness.ablation_matrix(stages, has_augmentation=bool(config.get("augmentation")))
    if args.dry_run:
        print("dry run: " + ", ".join(e.name for e in experiments))
        return 0
    augmented_cache: dict[bool, list] = {}
    failed = []
    for exp in experiments:
        if exp.use_augmentation not in augmented_cache:
            augmented_cache[exp.use_augmentation] = (
                build_augmented_instances(config, bundle, args.seed) if exp.use_augmentation else []
            )
        try:
            report = run_experiment(
                exp.name,
                list(exp.stages),
                config,
                bundle,
                augmented_cache[exp.use_augmentation],
                seeds,
                Path(args.out_dir) / exp.name,
            )
            print(f"{exp.name}: f1 {report['table']['f1']}")
        except Exception as exc:  # an arm failing must not hide the others
            log.error("experiment %s failed: %s", exp.name, exc)
            failed.append(exp.name)
    if failed:
        print(f"failed experiments: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    rows = []
    for report_path in sorted(Path(args.reports_dir).glob("**/report.json")):
        payload = json.loads(report_path.read_text(encoding="utf-8"))
        cells = {
            metric: evalharness.AggregateCell(**values).scaled(100)
            for metric, values in payload["aggregates"].items()
        }
        rows.append((payload["experiment"], cells))
    if not rows:
        raise ToolkitError(f"no report.json files under {args.reports_dir}")
    table = evalharness.render_table(rows)
    print(table, end="")
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub, config=False, bundle=False, splits=False):
    sub.add_argument("--seed", type=int, default=0, help="seed governing all randomness")
    sub.add_argument("--dry-run", action="store_true", help="validate inputs, write nothing")
    sub.add_argument("-v", "--verbose", action="store_true")
    if config:
        sub.add_argument("--config", help="experiment config file (JSON)")
        sub.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (dotted key)")
    if bundle:
        sub.add_argument("--bundle", required=True, help="instances file (JSONL)")
    if splits:
        sub.add_argument("--splits", help="split manifest file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctikit", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="validate and canonicalize a record stream")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merge-annotations", action="store_true")
    p.add_argument("--expand-links", action="store_true")
    p.add_argument("--cache", help="url resolution cache file")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("split", help="assign instances to train/dev/test/few-shot splits")
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", help="e.g. full_train=1800,full_dev=600,test=601,fewshot_train=32,fewshot_dev=32")
    p.add_argument("--no-stratify", action="store_true")
    _add_common(p, bundle=True)
    p.set_defaults(func=cmd_split)

    p = subs.add_parser("kappa", help="intercoder reliability (Cohen's kappa)")
    p.add_argument("--a", help="label file for coder A (one label per line)")
    p.add_argument("--b", help="label file for coder B")
    p.add_argument("--annotations", help="JSONL instances with annotations maps")
    p.add_argument("--coder-a", help="annotator id in --annotations mode")
    p.add_argument("--coder-b", help="annotator id in --annotations mode")
    _add_common(p)
    p.set_defaults(func=cmd_kappa)

    p = subs.add_parser("augment", help="generate, rank and stage candidates for one class")
    p.add_argument("--class-label", required=True, choices=list(corpus.LABELS))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--backend", default="mock", help="mock or http")
    _add_common(p, config=True, bundle=True, splits=True)
    p.set_defaults(func=cmd_augment)

    p = subs.add_parser("filter", help="threshold suggestion, application, and export")
    fsubs = p.add_subparsers(dest="filter_cmd", required=True)
    f = fsubs.add_parser("suggest-threshold")
    f.add_argument("--job", required=True, help="job state file")
    f.add_argument("--keep-fraction", type=float, default=0.8)
    _add_common(f)
    f.set_defaults(func=cmd_filter)
    f = fsubs.add_parser("apply-threshold")
    f.add_argument("--job", required=True)
    f.add_argument("--tau", type=float, required=True)
    f.add_argument("--delta", type=float)
    _add_common(f)
    f.set_defaults(func=cmd_filter)
    f = fsubs.add_parser("export")
    f.add_argument("--job", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--allow-pending", action="store_true")
    _add_common(f)
    f.set_defaults(func=cmd_filter)

    p = subs.add_parser("review-serve", help="serve the expert review API and UI")
    p.add_argument("--data-dir", help="directory holding jobs/*.json state files (or CTIKIT_DATA_DIR)")
    p.add_argument("--listen", help="host:port (default 127.0.0.1:8000, or CTIKIT_LISTEN)")
    p.add_argument("--ui-dir", help="static UI assets (defaults to frontend/dist when present)")
    p.add_argument("--token", help="shared bearer token (or CTIKIT_REVIEW_TOKEN); unset disables auth")
    _add_common(p)
    p.set_defaults(func=cmd_review_serve)

    p = subs.add_parser("train", help="run one fine-tuning plan")
    p.add_argument("--out-dir", required=True, help="runs/ directory")
    p.add_argument("--augmented", help="JSONL of augmented instances to add at the few-shot stage")
    _add_common(p, config=True, bundle=True, splits=True)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("evaluate", help="multi-seed evaluation of one plan")
    p.add_argument("--name", default="experiment")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", help="comma-separated run seeds (default from config)")
    _add_common(p, config=True, bundle=True, splits=True)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("ablate", help="run the four ablation arms")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", help="comma-separated run seeds (default from config)")
    _add_common(p, config=True, bundle=True, splits=True)
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("report", help="print a combined results table")
    p.add_argument("--reports-dir", required=True)
    p.add_argument("--out", help="also write the table to this file")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "verbose", False):
        logging.getLogger().setLevel(logging.INFO)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
