"""Cloze-pattern construction, verbalizer mapping, and the training losses
used by the few-shot objective (decoupled label loss + label conditioning)
and by the plain classification-head baseline.

Loss functions come in probability-space and logit-space variants; the
logit-space ones ship analytic gradients that are finite-difference checked
in the test suite.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

import numpy as np

from .backends import MASK_TOKEN, MaskDistribution
from .corpus import LABELS, LabeledInstance
from .errors import ToolkitError

SEP_TOKEN = "[SEP]"


class Slot(enum.Enum):
    POST = "POST"
    MASK = "MASK"
    SEP = "SEP"


@dataclass(frozen=True)
class Pattern:
    """Cloze template: literal segments interleaved with POST/MASK/SEP slots.

    Rendering is plain concatenation, so literals carry their own spacing.
    """

    segments: tuple
    max_post_tokens: int = 64

    def __post_init__(self):
        if self.max_post_tokens < 1:
            raise ToolkitError("max_post_tokens must be positive")
        slots = [s for s in self.segments if isinstance(s, Slot)]
        if slots.count(Slot.POST) != 1:
            raise ToolkitError("pattern must contain exactly one POST slot")
        if slots.count(Slot.MASK) < 1:
            raise ToolkitError("pattern must contain at least one MASK slot")
        if Slot.SEP in slots and self.segments[-1] is not Slot.SEP:
            raise ToolkitError("SEP slot must be terminal")
        for seg in self.segments:
            if not isinstance(seg, (Slot, str)):
                raise ToolkitError(f"invalid pattern segment {seg!r}")


def cti_pattern(max_post_tokens: int = 64) -> Pattern:
    """The relevance question template used for the threat-intelligence task."""
    return Pattern(
        segments=(
            Slot.POST,
            " Question : Is this text helpful for cybersecurity experts? Answer : ",
            Slot.MASK,
            ". ",
            Slot.SEP,
        ),
        max_post_tokens=max_post_tokens,
    )


@dataclass(frozen=True)
class Verbalizer:
    """Maps each label to a single answer token."""

    mapping: dict[str, str]

    def __post_init__(self):
        tokens = list(self.mapping.values())
        if len(set(tokens)) != len(tokens):
            raise ToolkitError("verbalizer tokens must be pairwise distinct")
        for label in self.mapping:
            if label not in LABELS:
                raise ToolkitError(f"verbalizer maps unknown label {label!r}")

    def token(self, label: str) -> str:
        if label not in self.mapping:
            raise ToolkitError(f"verbalizer has no token for label {label!r}")
        return self.mapping[label]

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.mapping))


def yes_no_verbalizer() -> Verbalizer:
    return Verbalizer({"relevant": "yes", "irrelevant": "no"})


@dataclass(frozen=True)
class ClozeEncoding:
    """Rendered cloze text plus character offsets of each mask marker."""

    text: str
    mask_positions: tuple[int, ...]
    source_id: str | None = None


def truncate_post(post: str, max_tokens: int) -> str:
    # Head-truncation: keep the leading tokens, drop the tail. Posts short
    # enough pass through untouched (inner whitespace preserved).
    tokens = post.split()
    if len(tokens) <= max_tokens:
        return post
    return " ".join(tokens[:max_tokens])


def _render(pattern: Pattern, post: str, mask_replacement: str | None = None) -> tuple[str, tuple[int, ...]]:
    parts: list[str] = []
    positions: list[int] = []
    cursor = 0
    for seg in pattern.segments:
        if seg is Slot.POST:
            piece = post
        elif seg is Slot.MASK:
            piece = mask_replacement if mask_replacement is not None else MASK_TOKEN
            if mask_replacement is None:
                positions.append(cursor)
        elif seg is Slot.SEP:
            piece = SEP_TOKEN
        else:
            piece = seg
        parts.append(piece)
        cursor += len(piece)
    return "".join(parts), tuple(positions)


def apply_pattern(pattern: Pattern, post: str, source_id: str | None = None) -> ClozeEncoding:
    """Render the cloze for one post; reproducible from (pattern, post) alone."""
    if not post.strip():
        raise ToolkitError("post must be non-empty")
    post = truncate_post(post, pattern.max_post_tokens)
    text, positions = _render(pattern, post)
    return ClozeEncoding(text=text, mask_positions=positions, source_id=source_id)


def predict_label(dist: MaskDistribution, verbalizer: Verbalizer) -> str:
    """Label whose answer token is most probable at the mask.

    Exact ties break toward the lexicographically smallest label name so
    evaluation stays reproducible.
    """
    best_label = None
    best_prob = -1.0
    for label in verbalizer.labels():
        prob = dist.prob_of(0, verbalizer.token(label))
        if prob > best_prob:
            best_label, best_prob = label, prob
    assert best_label is not None
    return best_label


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _check_simplex(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ToolkitError("probability input must be a vector")
    if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-6:
        raise ToolkitError("input is not a probability simplex")
    return probs


def decoupled_label_loss(probs: np.ndarray, correct_index: int) -> float:
    """-log p(t+) - sum over t != t+ of log(1 - p(t)).

    Zero exactly when the distribution is one-hot on the correct token.
    """
    probs = _check_simplex(probs)
    if not 0 <= correct_index < probs.shape[0]:
        raise ToolkitError(f"correct_index {correct_index} out of range")
    with np.errstate(divide="ignore"):
        pos = -np.log(probs[correct_index])
        off = np.delete(1.0 - probs, correct_index)
        neg = -np.log(off).sum()
    return float(pos + neg)


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def decoupled_label_loss_from_logits(logits: np.ndarray, correct_index: int) -> float:
    return decoupled_label_loss(softmax(logits), correct_index)


def decoupled_label_loss_grad(logits: np.ndarray, correct_index: int) -> np.ndarray:
    """Analytic gradient of decoupled_label_loss_from_logits w.r.t. logits."""
    p = softmax(logits)
    t = correct_index
    if not 0 <= t < p.shape[0]:
        raise ToolkitError(f"correct_index {t} out of range")
    onehot = np.zeros_like(p)
    onehot[t] = 1.0
    r = p / np.clip(1.0 - p, 1e-300, None)
    r[t] = 0.0
    return p - onehot + r - p * r.sum()


def classification_head_loss(logits: np.ndarray, gold_index: int) -> float:
    """Softmax cross-entropy against the gold label index."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ToolkitError("logits must be finite")
    if not 0 <= gold_index < logits.shape[0]:
        raise ToolkitError(f"gold index {gold_index} out of range")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[gold_index])


def classification_head_loss_grad(logits: np.ndarray, gold_index: int) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    p = softmax(logits)
    p[gold_index] -= 1.0
    return p


def label_index(label: str) -> int:
    if label not in LABELS:
        raise ToolkitError(f"unknown label {label!r}")
    return LABELS.index(label)


# ---------------------------------------------------------------------------
# Label conditioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelConditioningExample:
    """Cloze with the candidate label filled in and some post tokens masked.

    mode is "encourage" when the candidate equals the gold label (the model
    should recover the masked tokens) and "penalize" otherwise.
    """

    text: str
    target_tokens: tuple[str, ...]
    mode: str
    candidate_label: str
    source_id: str | None = None
    masked_token_indices: tuple[int, ...] = field(default=())


def label_conditioning_example(
    instance: LabeledInstance,
    candidate_label: str,
    pattern: Pattern,
    verbalizer: Verbalizer,
    mask_rate: float = 0.15,
    seed: int = 0,
) -> LabelConditioningExample:
    if instance.label is None:
        raise ToolkitError(f"instance {instance.id!r} has no gold label")
    if not 0 < mask_rate < 1:
        raise ToolkitError("mask_rate must lie in (0, 1)")
    post = truncate_post(instance.text, pattern.max_post_tokens)
    tokens = post.split()
    rng = random.Random(seed)
    k = max(1, round(mask_rate * len(tokens)))
    picked = tuple(sorted(rng.sample(range(len(tokens)), min(k, len(tokens)))))
    targets = tuple(tokens[i] for i in picked)
    masked = [MASK_TOKEN if i in picked else tok for i, tok in enumerate(tokens)]
    text, _ = _render(pattern, " ".join(masked), mask_replacement=verbalizer.token(candidate_label))
    mode = "encourage" if candidate_label == instance.label else "penalize"
    return LabelConditioningExample(
        text=text,
        target_tokens=targets,
        mode=mode,
        candidate_label=candidate_label,
        source_id=instance.id,
        masked_token_indices=picked,
    )


def label_conditioning_batch(
    instance: LabeledInstance,
    pattern: Pattern,
    verbalizer: Verbalizer,
    mask_rate: float = 0.15,
    seed: int = 0,
) -> list[LabelConditioningExample]:
    """One example per label: exactly one encourage and one penalize for
    the binary task. All examples of one instance share mask positions."""
    return [
        label_conditioning_example(instance, label, pattern, verbalizer, mask_rate=mask_rate, seed=seed)
        for label in verbalizer.labels()
    ]


def cloze_lines(encodings) -> str:
    """Rendered cloze dump (one JSON object per line) for eyeballing what
    the model actually sees."""
    import json

    return "".join(
        json.dumps(
            {"source_id": c.source_id, "text": c.text, "mask_positions": list(c.mask_positions)},
            ensure_ascii=False,
            sort_keys=True,
            separators=(",", ":"),
        )
        + "\n"
        for c in encodings
    )
