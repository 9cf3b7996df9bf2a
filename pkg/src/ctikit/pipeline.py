"""Multi-level fine-tuning plans and their execution.

A plan is an ordered list of stages at strictly increasing levels:
0 pretrained, 1 domain masked-modeling, 2 related-task classification,
3 target few-shot task. Ablations may skip middle levels. Execution goes
through the trainable-backend contract (loss_and_update + snapshot), and
checkpoint ids are content-addressed over (parent id, stage config, seed)
so lineage can be re-verified from the run record alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .backends import TrainableBackend, TrainingExample, stable_seed
from .corpus import DatasetBundle, LabeledInstance
from .errors import PlanError, ToolkitError
from .fewshot import (
    MASK_TOKEN,
    Pattern,
    Verbalizer,
    apply_pattern,
    label_conditioning_batch,
    label_index,
    predict_label,
    truncate_post,
)

log = logging.getLogger(__name__)

PRETRAINED = "pretrained"
MASKED_MODELING = "masked_modeling"
CLASSIFICATION = "classification"
FEWSHOT = "fewshot"
KINDS = (PRETRAINED, MASKED_MODELING, CLASSIFICATION, FEWSHOT)
KIND_FOR_LEVEL = {0: PRETRAINED, 1: MASKED_MODELING, 2: CLASSIFICATION, 3: FEWSHOT}

OBJ_NONE = "none"
OBJ_HEAD = "head"
OBJ_ADAPET = "adapet"


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 5
    batch_size: int = 48
    learning_rate: float = 1e-5
    warmup_steps: int = 100
    warmup_ratio: float = 0.06
    weight_decay: float = 0.001
    seed: int = 0


def default_hyperparams() -> Hyperparams:
    """The published training settings (5 epochs, batch 48, lr 1e-5,
    100 warmup steps at ratio 0.06, weight decay 0.001)."""
    return Hyperparams()


@dataclass(frozen=True)
class StageConfig:
    level: int
    kind: str
    dataset: str | None = None
    objective: str = OBJ_NONE
    hyperparams: Hyperparams = field(default_factory=default_hyperparams)

    def __post_init__(self):
        if not 0 <= self.level <= 3:
            raise PlanError(f"level must be in 0..3, got {self.level}")
        if self.kind not in KINDS:
            raise PlanError(f"unknown stage kind {self.kind!r}")
        if KIND_FOR_LEVEL[self.level] != self.kind:
            raise PlanError(f"level {self.level} stages must be {KIND_FOR_LEVEL[self.level]!r}, got {self.kind!r}")
        if self.kind == PRETRAINED:
            if self.objective != OBJ_NONE or self.dataset is not None:
                raise PlanError("pretrained stage takes no dataset and no objective")
        else:
            if self.dataset is None:
                raise PlanError(f"{self.kind} stage needs a dataset reference")
        if self.kind == FEWSHOT and self.objective not in (OBJ_HEAD, OBJ_ADAPET):
            raise PlanError("fewshot stage objective must be head or adapet")
        if self.kind == CLASSIFICATION and self.objective not in (OBJ_HEAD, OBJ_ADAPET):
            raise PlanError("classification stage objective must be head or adapet")
        if self.kind == MASKED_MODELING and self.objective not in (OBJ_NONE, "mlm"):
            raise PlanError("masked_modeling stage objective is implicit")


def validate_plan(stages: Sequence[StageConfig]) -> tuple[StageConfig, ...]:
    """Check level monotonicity and stage-0 presence; ablation plans that
    skip middle levels are fine."""
    if not stages:
        raise PlanError("plan needs at least one stage")
    levels = [s.level for s in stages]
    if levels[0] != 0:
        raise PlanError("plan must start with the level-0 pretrained stage")
    for a, b in zip(levels, levels[1:]):
        if b <= a:
            raise PlanError(f"stage levels must strictly increase, got {a} then {b}")
    return tuple(stages)


@dataclass(frozen=True)
class StageResult:
    config: StageConfig
    input_checkpoint: str | None
    output_checkpoint: str
    metrics: dict


@dataclass(frozen=True)
class PipelineRun:
    run_id: str
    global_seed: int
    stages: tuple[StageResult, ...]
    augmented_ids: tuple[str, ...] = ()
    failed_stage: int | None = None

    @property
    def final_checkpoint(self) -> str:
        return self.stages[-1].output_checkpoint


# ---------------------------------------------------------------------------
# Checkpoint lineage
# ---------------------------------------------------------------------------


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def stage_checkpoint_id(parent: str | None, config: StageConfig, seed: int) -> str:
    digest = hashlib.sha256(
        _canonical({"parent": parent, "config": asdict(config), "seed": seed}).encode("utf-8")
    ).hexdigest()
    return f"ckpt-{digest[:16]}"


def verify_lineage(run: PipelineRun) -> bool:
    """Recompute the content-addressed chain; True iff every link matches."""
    parent: str | None = None
    for stage in run.stages:
        if stage.input_checkpoint != parent:
            return False
        expected = stage_checkpoint_id(parent, stage.config, run.global_seed)
        if stage.output_checkpoint != expected:
            return False
        parent = stage.output_checkpoint
    return True


# ---------------------------------------------------------------------------
# Batch building
# ---------------------------------------------------------------------------


def mlm_examples(texts: Sequence[str], mask_rate: float, seed: int, max_tokens: int = 64) -> list[TrainingExample]:
    out = []
    for i, text in enumerate(texts):
        tokens = truncate_post(text, max_tokens).split()
        if not tokens:
            continue
        rng = random.Random(stable_seed("mlm", seed, i))
        k = max(1, round(mask_rate * len(tokens)))
        picked = sorted(rng.sample(range(len(tokens)), min(k, len(tokens))))
        targets = tuple(tokens[j] for j in picked)
        masked = [MASK_TOKEN if j in picked else tok for j, tok in enumerate(tokens)]
        out.append(TrainingExample(text=" ".join(masked), target_tokens=targets, mode="encourage"))
    return out


def head_examples(instances: Sequence[LabeledInstance]) -> list[TrainingExample]:
    out = []
    for inst in instances:
        if inst.label is None:
            raise ToolkitError(f"instance {inst.id!r} has no label")
        out.append(TrainingExample(text=inst.text, mode="head", label_index=label_index(inst.label)))
    return out


def adapet_examples(
    instances: Sequence[LabeledInstance],
    pattern: Pattern,
    verbalizer: Verbalizer,
    mask_rate: float,
    seed: int,
) -> list[TrainingExample]:
    """Per instance: one decoupled-label example plus one label-conditioning
    example per label (encourage for gold, penalize for the other)."""
    out = []
    for i, inst in enumerate(instances):
        if inst.label is None:
            raise ToolkitError(f"instance {inst.id!r} has no label")
        cloze = apply_pattern(pattern, inst.text, source_id=inst.id)
        out.append(
            TrainingExample(text=cloze.text, target_tokens=(verbalizer.token(inst.label),), mode="decoupled")
        )
        for lc in label_conditioning_batch(inst, pattern, verbalizer, mask_rate=mask_rate, seed=stable_seed("lc", seed, i)):
            out.append(TrainingExample(text=lc.text, target_tokens=lc.target_tokens, mode=lc.mode))
    return out


def _effective_warmup(hp: Hyperparams, total_steps: int) -> tuple[int, str]:
    by_ratio = math.ceil(hp.warmup_ratio * total_steps)
    if hp.warmup_steps <= by_ratio:
        return hp.warmup_steps, "warmup_steps"
    return by_ratio, "warmup_ratio"


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _resolve_texts(ref: str, bundle: DatasetBundle) -> list[str]:
    if ref.startswith("split:"):
        return [i.text for i in bundle.split_instances(ref[len("split:") :])]
    path = Path(ref)
    if not path.exists():
        raise ToolkitError(f"dataset reference {ref!r} is neither a split: ref nor an existing file")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _resolve_instances(ref: str, bundle: DatasetBundle) -> list[LabeledInstance]:
    if ref.startswith("split:"):
        return bundle.split_instances(ref[len("split:") :])
    from .corpus import ingest_path

    path = Path(ref)
    if not path.exists():
        raise ToolkitError(f"dataset reference {ref!r} is neither a split: ref nor an existing file")
    return list(ingest_path(path).instances.values())


def _check_no_leakage(bundle: DatasetBundle, augmented: Sequence[LabeledInstance]) -> None:
    aug_ids = {a.id for a in augmented}
    for split in ("full_dev", "fewshot_dev", "test"):
        ids = set(bundle.splits.get(split, ()))
        overlap = aug_ids & ids
        if overlap:
            raise ToolkitError(f"augmented instances leaked into {split}: {sorted(overlap)[:3]}")


def _train_stage(
    stage: StageConfig,
    backend: TrainableBackend,
    examples: list[TrainingExample],
    global_seed: int,
) -> dict:
    hp = stage.hyperparams
    if not examples:
        raise ToolkitError(f"stage level {stage.level} has no training examples")
    n_batches_per_epoch = math.ceil(len(examples) / hp.batch_size)
    total_steps = n_batches_per_epoch * hp.epochs
    warmup, warmup_source = _effective_warmup(hp, total_steps)
    log.info(
        "stage level %d: %d examples, %d steps, warmup %d (bound: %s)",
        stage.level,
        len(examples),
        total_steps,
        warmup,
        warmup_source,
    )
    objective = stage.objective if stage.objective != OBJ_NONE else "mlm"
    rng = random.Random(stable_seed("stage-order", global_seed, hp.seed, stage.level))
    step = 0
    epoch_losses = []
    for _epoch in range(hp.epochs):
        order = list(range(len(examples)))
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), hp.batch_size):
            batch = [examples[j] for j in order[start : start + hp.batch_size]]
            step += 1
            scale = min(1.0, step / warmup) if warmup > 0 else 1.0
            lr = hp.learning_rate * scale
            losses.append(backend.loss_and_update(batch, objective, lr))
        epoch_losses.append(sum(losses) / len(losses))
    return {
        "examples": len(examples),
        "steps": total_steps,
        "warmup": warmup,
        "warmup_bound": warmup_source,
        "epoch_losses": [round(x, 10) for x in epoch_losses],
        "final_loss": round(epoch_losses[-1], 10),
    }


def run_pipeline(
    plan: Sequence[StageConfig],
    backend: TrainableBackend,
    bundle: DatasetBundle,
    pattern: Pattern,
    verbalizer: Verbalizer,
    augmented: Sequence[LabeledInstance] | None = None,
    global_seed: int = 0,
    mask_rate: float = 0.15,
    run_dir: str | Path | None = None,
) -> PipelineRun:
    """Execute a validated plan. Augmented instances extend only the
    few-shot stage's training set; dev/test never see them. The run
    record is persisted before this returns (also on stage failure)."""
    stages = validate_plan(plan)
    augmented = list(augmented or [])
    if augmented:
        _check_no_leakage(bundle, augmented)
    # Fail fast on missing split references, before any training.
    for stage in stages:
        if stage.dataset is not None and stage.dataset.startswith("split:"):
            name = stage.dataset[len("split:") :]
            if name not in bundle.splits:
                raise ToolkitError(f"plan references missing split {name!r}")

    run_id = f"run-{hashlib.sha256(_canonical({'plan': [asdict(s) for s in stages], 'seed': global_seed, 'augmented': sorted(a.id for a in augmented)}).encode()).hexdigest()[:16]}"

    results: list[StageResult] = []
    parent: str | None = None
    failed_stage: int | None = None
    for idx, stage in enumerate(stages):
        ckpt = stage_checkpoint_id(parent, stage, global_seed)
        try:
            if stage.kind == PRETRAINED:
                metrics = {"examples": 0, "steps": 0}
            elif stage.kind == MASKED_MODELING:
                texts = _resolve_texts(stage.dataset, bundle)
                examples = mlm_examples(texts, mask_rate, stable_seed("mlm-stage", global_seed, stage.level))
                metrics = _train_stage(stage, backend, examples, global_seed)
            else:
                instances = _resolve_instances(stage.dataset, bundle)
                if stage.kind == FEWSHOT and augmented:
                    instances = instances + augmented
                if stage.objective == OBJ_HEAD:
                    examples = head_examples(instances)
                else:
                    examples = adapet_examples(
                        instances, pattern, verbalizer, mask_rate, stable_seed("adapet", global_seed, stage.level)
                    )
                metrics = _train_stage(stage, backend, examples, global_seed)
            backend.snapshot(ckpt)
        except ToolkitError:
            raise
        except Exception as exc:
            log.error("stage level %d failed: %s", stage.level, exc)
            results.append(StageResult(stage, parent, ckpt, {"error": str(exc)}))
            failed_stage = idx
            break
        results.append(StageResult(stage, parent, ckpt, metrics))
        parent = ckpt

    run = PipelineRun(
        run_id=run_id,
        global_seed=global_seed,
        stages=tuple(results),
        augmented_ids=tuple(sorted(a.id for a in augmented)),
        failed_stage=failed_stage,
    )
    if run_dir is not None:
        save_run(run, run_dir)
    return run


def predict_labels(
    backend: TrainableBackend,
    pattern: Pattern,
    verbalizer: Verbalizer,
    instances: Sequence[LabeledInstance],
) -> dict[str, str]:
    preds = {}
    for inst in instances:
        cloze = apply_pattern(pattern, inst.text, source_id=inst.id)
        preds[inst.id] = predict_label(backend.mask_distribution(cloze), verbalizer)
    return preds


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------


def run_to_dict(run: PipelineRun) -> dict:
    return {
        "run_id": run.run_id,
        "global_seed": run.global_seed,
        "augmented_ids": list(run.augmented_ids),
        "failed_stage": run.failed_stage,
        "stages": [
            {
                "config": asdict(s.config),
                "input_checkpoint": s.input_checkpoint,
                "output_checkpoint": s.output_checkpoint,
                "metrics": s.metrics,
            }
            for s in run.stages
        ],
    }


def run_from_dict(payload: dict) -> PipelineRun:
    stages = []
    for s in payload["stages"]:
        cfg = dict(s["config"])
        cfg["hyperparams"] = Hyperparams(**cfg["hyperparams"])
        stages.append(
            StageResult(
                config=StageConfig(**cfg),
                input_checkpoint=s["input_checkpoint"],
                output_checkpoint=s["output_checkpoint"],
                metrics=s["metrics"],
            )
        )
    return PipelineRun(
        run_id=payload["run_id"],
        global_seed=payload["global_seed"],
        stages=tuple(stages),
        augmented_ids=tuple(payload.get("augmented_ids", ())),
        failed_stage=payload.get("failed_stage"),
    )


def save_run(run: PipelineRun, runs_dir: str | Path) -> Path:
    out_dir = Path(runs_dir) / run.run_id
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "record.json"
    path.write_text(
        json.dumps(run_to_dict(run), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return path


def load_run(record_path: str | Path) -> PipelineRun:
    return run_from_dict(json.loads(Path(record_path).read_text(encoding="utf-8")))
