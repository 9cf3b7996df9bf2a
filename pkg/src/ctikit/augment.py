"""Class-conditioned prompt construction, generation, and completion parsing.

Three priming modes are supported: whole-class prompts with a priming token
("cybersecurity ->" / "other ->"), per-instance indexed wrappers
("<|startoftext|> |i| ... <|endoftext|>"), and long-text context prefixes
("<|startoftext|> " + the extracted context part).
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .backends import END_OF_TEXT, START_OF_TEXT, CompletionBackend, GenerationParams, stable_seed
from .corpus import LabeledInstance
from .errors import ToolkitError

log = logging.getLogger(__name__)

CLASS_PROMPT = "class_prompt"
INDEXED_SHORT = "indexed_short"
LONG_CONTEXT = "long_context"
MODES = (CLASS_PROMPT, INDEXED_SHORT, LONG_CONTEXT)

PENDING = "pending"
AUTO_KEEP = "auto_keep"
AUTO_DROP = "auto_drop"
EXPERT_KEEP = "expert_keep"
EXPERT_DROP = "expert_drop"
DECISIONS = (PENDING, AUTO_KEEP, AUTO_DROP, EXPERT_KEEP, EXPERT_DROP)

_INDEX_MARK_RE = re.compile(r"\|\d+\|")


def _texts(instances: Sequence) -> list[str]:
    return [i.text if isinstance(i, LabeledInstance) else str(i) for i in instances]


@dataclass(frozen=True)
class AugmentationJob:
    """Everything one generation job needs, from sources to parsing knobs."""

    id: str
    class_label: str
    priming_token: str
    source_instances: tuple[LabeledInstance, ...]
    n_per_instance: int
    mode: str = CLASS_PROMPT
    context_extractor: Callable[[str], str] | None = None
    generation: GenerationParams = field(default_factory=GenerationParams)
    separator: str = "\n"
    min_fragment_len: int = 10
    attempt_budget: int = 0  # 0 = derive from quota
    max_in_flight: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.priming_token:
            raise ToolkitError("priming_token must be non-empty")
        if self.n_per_instance < 1:
            raise ToolkitError("n_per_instance must be >= 1")
        if self.mode not in MODES:
            raise ToolkitError(f"unknown mode {self.mode!r}")
        if self.mode == LONG_CONTEXT and self.context_extractor is None:
            raise ToolkitError("long_context mode requires a context_extractor")
        if not self.source_instances:
            raise ToolkitError("job needs at least one source instance")
        for inst in self.source_instances:
            if inst.label != self.class_label:
                raise ToolkitError(
                    f"source {inst.id!r} carries label {inst.label!r}, job is for {self.class_label!r}"
                )

    @property
    def quota(self) -> int:
        return self.n_per_instance * len(self.source_instances)

    @property
    def budget(self) -> int:
        return self.attempt_budget or max(8, 2 * self.quota)


@dataclass(frozen=True)
class GeneratedCandidate:
    """One parsed completion segment, tracked through filtering decisions."""

    id: str
    text: str
    job_id: str
    parse_position: int
    distance: float | None = None
    decision: str = PENDING
    nearest: "CounterpartRef | None" = None

    def __post_init__(self):
        if not self.text.strip():
            raise ToolkitError("candidate text empty after trimming")
        if self.decision not in DECISIONS:
            raise ToolkitError(f"unknown decision {self.decision!r}")


@dataclass(frozen=True)
class CounterpartRef:
    original_id: str
    cosine_similarity: float
    levenshtein_distance: int


@dataclass(frozen=True)
class PrimedCorpus:
    mode: str
    entries: tuple[tuple[str, str], ...]  # (source id, primed text)


# ---------------------------------------------------------------------------
# Priming
# ---------------------------------------------------------------------------


def prime_class_corpus(instances: Sequence, priming_token: str, separator: str = "\n") -> str:
    """Concatenate all class instances, each prefixed by the priming token,
    and append the bare token at the end as the generation hook."""
    texts = _texts(instances)
    if not texts:
        raise ToolkitError("prime_class_corpus needs at least one instance")
    for t in texts:
        if not t.strip():
            raise ToolkitError("instance text empty after trimming")
    body = separator.join(f"{priming_token} {t}" for t in texts)
    return body + separator + priming_token


def prime_indexed_short(instances: Sequence) -> PrimedCorpus:
    """Wrap the i-th instance as "<|startoftext|> |i| text <|endoftext|>"."""
    texts = _texts(instances)
    if not texts:
        raise ToolkitError("prime_indexed_short needs at least one instance")
    entries = []
    for i, (inst, text) in enumerate(zip(instances, texts), start=1):
        if not text.strip():
            raise ToolkitError(f"instance {i}: text empty after trimming")
        source_id = inst.id if isinstance(inst, LabeledInstance) else str(i)
        entries.append((source_id, f"{START_OF_TEXT} |{i}| {text} {END_OF_TEXT}"))
    return PrimedCorpus(mode=INDEXED_SHORT, entries=tuple(entries))


def title_context(text: str) -> str:
    """Default long-text extractor: the span between the title/body markers."""
    match = re.search(r"xxtitle\s+(.*?)\s+xxbodytext", text, flags=re.DOTALL)
    if not match or not match.group(1).strip():
        raise ToolkitError("no context part found between xxtitle and xxbodytext markers")
    return match.group(1).strip()


def build_long_prompt(instance, context_extractor: Callable[[str], str] = title_context) -> str:
    text = instance.text if isinstance(instance, LabeledInstance) else str(instance)
    try:
        context = context_extractor(text)
    except ToolkitError:
        raise
    except Exception as exc:
        ident = instance.id if isinstance(instance, LabeledInstance) else "<raw text>"
        raise ToolkitError(f"context extractor failed for instance {ident}: {exc}") from exc
    if not context.strip():
        ident = instance.id if isinstance(instance, LabeledInstance) else "<raw text>"
        raise ToolkitError(f"context extractor returned nothing for instance {ident}")
    return f"{START_OF_TEXT} {context}"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_completion(completion: str, priming_token: str, min_fragment_len: int = 10) -> list[str]:
    """Split a completion on the priming token into candidate texts.

    Segments are trimmed; empty ones are dropped; a final segment shorter
    than min_fragment_len is treated as a truncated fragment and dropped.
    """
    segments = [s.strip() for s in completion.split(priming_token)]
    out = [s for s in segments if s]
    # Only the completion's actual tail can be a truncated fragment.
    if segments and segments[-1] and len(segments[-1]) < min_fragment_len:
        out = out[:-1]
    return out


def parse_indexed_completion(completion: str, min_fragment_len: int = 10) -> list[str]:
    """Parse completions produced against indexed/startoftext prompts."""
    segments = []
    for chunk in completion.split(END_OF_TEXT):
        chunk = chunk.replace(START_OF_TEXT, " ")
        chunk = _INDEX_MARK_RE.sub(" ", chunk)
        segments.append(chunk.strip())
    out = [s for s in segments if s]
    if segments and segments[-1] and len(segments[-1]) < min_fragment_len:
        out = out[:-1]
    return out


# ---------------------------------------------------------------------------
# Generation driver
# ---------------------------------------------------------------------------


def _class_prompt_for_call(job: AugmentationJob, call_index: int, max_context_chars: int | None) -> str:
    texts = [i.text for i in job.source_instances]
    prompt = prime_class_corpus(texts, job.priming_token, job.separator)
    if max_context_chars is None or len(prompt) <= max_context_chars:
        return prompt
    # Too long for the backend context: sample a seeded subset per call
    # instead of truncating any single instance.
    rng = random.Random(stable_seed("class-prompt-subset", job.seed, call_index))
    pool = list(texts)
    rng.shuffle(pool)
    picked: list[str] = []
    used = len(job.priming_token) + len(job.separator)
    for t in pool:
        cost = len(job.priming_token) + 1 + len(t) + len(job.separator)
        if picked and used + cost > max_context_chars:
            break
        picked.append(t)
        used += cost
    if not picked:
        picked = [pool[0]]
    return prime_class_corpus(picked, job.priming_token, job.separator)


def prompt_for_call(job: AugmentationJob, call_index: int, backend) -> str:
    max_chars = getattr(backend, "max_context_chars", None)
    if job.mode == CLASS_PROMPT:
        return _class_prompt_for_call(job, call_index, max_chars)
    source = job.source_instances[call_index % len(job.source_instances)]
    if job.mode == INDEXED_SHORT:
        i = (call_index % len(job.source_instances)) + 1
        return f"{START_OF_TEXT} |{i}|"
    return build_long_prompt(source, job.context_extractor or title_context)


def _one_call(job: AugmentationJob, call_index: int, backend: CompletionBackend) -> str | None:
    prompt = prompt_for_call(job, call_index, backend)
    params = replace(job.generation, seed=(job.generation.seed or 0) + call_index)
    try:
        return backend.generate(prompt, params)
    except Exception as exc:
        log.warning("job %s: generation call %d failed: %s", job.id, call_index, exc)
        return None


def generate_candidates(job: AugmentationJob, backend: CompletionBackend) -> list[GeneratedCandidate]:
    """Issue generation calls until the job quota is met or the attempt
    budget runs out; a shortfall is a warning, not a failure.

    Calls run in waves of up to max_in_flight; candidate assembly is a
    deterministic reduction over completions ordered by call index."""
    candidates: list[GeneratedCandidate] = []
    seq = 0
    calls_done = 0
    wave_size = max(1, job.max_in_flight)
    while calls_done < job.budget and len(candidates) < job.quota:
        wave = range(calls_done, min(calls_done + wave_size, job.budget))
        if wave_size > 1 and len(wave) > 1:
            with ThreadPoolExecutor(max_workers=wave_size) as pool:
                futures = {i: pool.submit(_one_call, job, i, backend) for i in wave}
                completions = [futures[i].result() for i in wave]
        else:
            completions = [_one_call(job, i, backend) for i in wave]
        calls_done = wave.stop
        for completion in completions:
            if completion is None:
                continue
            if job.mode == CLASS_PROMPT:
                texts = parse_completion(completion, job.priming_token, job.min_fragment_len)
            else:
                texts = parse_indexed_completion(completion, job.min_fragment_len)
            for position, text in enumerate(texts):
                candidates.append(
                    GeneratedCandidate(
                        # "-" separator: candidate ids must be usable as URL path segments
                        id=f"{job.id}-{seq:05d}",
                        text=text,
                        job_id=job.id,
                        parse_position=position,
                    )
                )
                seq += 1
    if len(candidates) < job.quota:
        log.warning(
            "job %s: attempt budget exhausted with %d/%d candidates",
            job.id,
            len(candidates),
            job.quota,
        )
    return candidates


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def job_to_record(job: AugmentationJob) -> dict:
    return {
        "id": job.id,
        "class_label": job.class_label,
        "priming_token": job.priming_token,
        "source_ids": [i.id for i in job.source_instances],
        "n_per_instance": job.n_per_instance,
        "mode": job.mode,
        "context_extractor": getattr(job.context_extractor, "__name__", None),
        "generation": {
            "max_new_tokens": job.generation.max_new_tokens,
            "temperature": job.generation.temperature,
            "stop_sequences": list(job.generation.stop_sequences),
            "seed": job.generation.seed,
        },
        "separator": job.separator,
        "min_fragment_len": job.min_fragment_len,
        "attempt_budget": job.attempt_budget,
        "seed": job.seed,
    }


def append_job_record(job: AugmentationJob, path: str | Path) -> None:
    """One job specification per line, append-only audit log."""
    line = json.dumps(job_to_record(job), ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line)


def candidate_to_record(c: GeneratedCandidate) -> dict:
    rec = {
        "id": c.id,
        "text": c.text,
        "job_id": c.job_id,
        "parse_position": c.parse_position,
        "distance": c.distance,
        "decision": c.decision,
    }
    if c.nearest is not None:
        rec["nearest"] = {
            "original_id": c.nearest.original_id,
            "cosine_similarity": c.nearest.cosine_similarity,
            "levenshtein_distance": c.nearest.levenshtein_distance,
        }
    else:
        rec["nearest"] = None
    return rec


def candidate_from_record(rec: dict) -> GeneratedCandidate:
    nearest = None
    if rec.get("nearest"):
        nearest = CounterpartRef(
            original_id=rec["nearest"]["original_id"],
            cosine_similarity=rec["nearest"]["cosine_similarity"],
            levenshtein_distance=rec["nearest"]["levenshtein_distance"],
        )
    return GeneratedCandidate(
        id=rec["id"],
        text=rec["text"],
        job_id=rec["job_id"],
        parse_position=rec["parse_position"],
        distance=rec.get("distance"),
        decision=rec.get("decision", PENDING),
        nearest=nearest,
    )


def write_candidates(candidates: Sequence[GeneratedCandidate], path: str | Path) -> None:
    lines = "".join(
        json.dumps(candidate_to_record(c), ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"
        for c in candidates
    )
    Path(path).write_text(lines, encoding="utf-8")


def write_job_manifest(job: AugmentationJob, prompts: Sequence[str], n_candidates: int, path: str | Path) -> None:
    """Audit record: which prompts (by hash) produced how many candidates."""
    manifest = {
        "job_id": job.id,
        "class_label": job.class_label,
        "priming_token": job.priming_token,
        "mode": job.mode,
        "n_per_instance": job.n_per_instance,
        "n_sources": len(job.source_instances),
        "seed": job.seed,
        "prompt_hashes": [hashlib.sha256(p.encode("utf-8")).hexdigest() for p in prompts],
        "n_candidates": n_candidates,
    }
    Path(path).write_text(json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8")
