"""Corpus handling: ingestion, preprocessing, annotation merging, splits.

Datasets travel as line-delimited JSON (UTF-8, one object per line, LF
endings). Split membership lives in a separate manifest file so the
instance file stays append-friendly.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .errors import IngestError, SplitError, TieError, ToolkitError

log = logging.getLogger(__name__)

RELEVANT = "relevant"
IRRELEVANT = "irrelevant"
LABELS = (IRRELEVANT, RELEVANT)

SPLIT_NAMES = ("full_train", "full_dev", "test", "fewshot_train", "fewshot_dev")

_URL_RE = re.compile(r"https?://\S+")


@dataclass(frozen=True)
class LabeledInstance:
    """One text item with optional gold label and per-annotator labels."""

    id: str
    text: str
    label: str | None = None
    annotations: dict[str, str] = field(default_factory=dict)
    provenance: str = "original"
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ToolkitError("instance id must be non-empty")
        if not self.text.strip():
            raise ToolkitError(f"instance {self.id!r}: text empty after whitespace normalization")
        if self.label is not None and self.label not in LABELS:
            raise ToolkitError(f"instance {self.id!r}: unknown label {self.label!r}")
        for coder, lab in self.annotations.items():
            if lab not in LABELS:
                raise ToolkitError(f"instance {self.id!r}: annotator {coder!r} has unknown label {lab!r}")
        if self.provenance not in ("original", "generated"):
            raise ToolkitError(f"instance {self.id!r}: unknown provenance {self.provenance!r}")
        if self.provenance == "generated":
            missing = {"generation_job", "source_class"} - set(self.meta)
            if missing:
                raise ToolkitError(
                    f"generated instance {self.id!r} missing meta keys: {sorted(missing)}"
                )


@dataclass
class DatasetBundle:
    """All instances of a dataset plus named, ordered split membership."""

    instances: dict[str, LabeledInstance] = field(default_factory=dict)
    splits: dict[str, list[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instances)

    def split_instances(self, name: str) -> list[LabeledInstance]:
        if name not in self.splits:
            raise ToolkitError(f"unknown split {name!r}")
        return [self.instances[i] for i in self.splits[name]]

    def validate(self) -> None:
        for name, ids in self.splits.items():
            for i in ids:
                if i not in self.instances:
                    raise ToolkitError(f"split {name!r} references unknown id {i!r}")
        full_train = set(self.splits.get("full_train", ()))
        full_dev = set(self.splits.get("full_dev", ()))
        test = set(self.splits.get("test", ()))
        if full_train & full_dev or full_train & test or full_dev & test:
            raise ToolkitError("full_train, full_dev and test must be pairwise disjoint")
        if not set(self.splits.get("fewshot_train", ())) <= full_train:
            raise ToolkitError("fewshot_train must be a subset of full_train")
        if not set(self.splits.get("fewshot_dev", ())) <= full_dev:
            raise ToolkitError("fewshot_dev must be a subset of full_dev")


@dataclass(frozen=True)
class SplitSpec:
    """Sizes per split plus the sampling controls."""

    sizes: dict[str, int]
    seed: int = 0
    stratify: bool = True

    def __post_init__(self):
        unknown = set(self.sizes) - set(SPLIT_NAMES)
        if unknown:
            raise SplitError(f"unknown split names: {sorted(unknown)}")
        for name, n in self.sizes.items():
            if n < 0:
                raise SplitError(f"split {name!r} has negative size {n}")


def paper_split_spec(seed: int = 0) -> SplitSpec:
    """The published split sizes: 1800/600/601 full and 32/32 few-shot."""
    return SplitSpec(
        sizes={
            "full_train": 1800,
            "full_dev": 600,
            "test": 601,
            "fewshot_train": 32,
            "fewshot_dev": 32,
        },
        seed=seed,
        stratify=True,
    )


# ---------------------------------------------------------------------------
# Serialization (canonical JSONL + split manifest)
# ---------------------------------------------------------------------------


def _instance_to_record(inst: LabeledInstance) -> dict:
    return {
        "id": inst.id,
        "text": inst.text,
        "label": inst.label,
        "annotations": dict(sorted(inst.annotations.items())),
        "provenance": inst.provenance,
        "meta": dict(sorted(inst.meta.items())),
    }


def _record_to_instance(rec: dict, lineno: int) -> LabeledInstance:
    if not isinstance(rec, dict):
        raise IngestError(f"line {lineno}: record is not an object")
    for key in ("id", "text"):
        if key not in rec or not isinstance(rec[key], str):
            raise IngestError(f"line {lineno}: missing or non-string field {key!r}")
    try:
        return LabeledInstance(
            id=rec["id"],
            text=rec["text"],
            label=rec.get("label"),
            annotations=dict(rec.get("annotations") or {}),
            provenance=rec.get("provenance", "original"),
            meta=dict(rec.get("meta") or {}),
        )
    except ToolkitError as exc:
        raise IngestError(f"line {lineno}: {exc}") from exc


def ingest(lines: Iterable[str]) -> DatasetBundle:
    """Parse a line-delimited record stream into a bundle with empty splits.

    Rejects malformed lines (with their line number) and duplicate ids.
    """
    bundle = DatasetBundle()
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            rec = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        inst = _record_to_instance(rec, lineno)
        if inst.id in bundle.instances:
            raise IngestError(f"line {lineno}: duplicate id {inst.id!r}")
        bundle.instances[inst.id] = inst
    return bundle


def ingest_path(path: str | Path) -> DatasetBundle:
    with open(path, encoding="utf-8") as fh:
        return ingest(fh)


def instance_lines(instances: Iterable[LabeledInstance]) -> str:
    return "".join(
        json.dumps(_instance_to_record(i), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        + "\n"
        for i in instances
    )


def write_bundle(bundle: DatasetBundle, instances_path: str | Path, splits_path: str | Path | None = None) -> None:
    """Write canonical JSONL instances and, if given, a split manifest."""
    Path(instances_path).write_text(instance_lines(bundle.instances.values()), encoding="utf-8")
    if splits_path is not None:
        manifest = json.dumps({"splits": bundle.splits}, ensure_ascii=False, sort_keys=True, indent=2)
        Path(splits_path).write_text(manifest + "\n", encoding="utf-8")


def read_bundle(instances_path: str | Path, splits_path: str | Path | None = None) -> DatasetBundle:
    bundle = ingest_path(instances_path)
    if splits_path is not None:
        manifest = json.loads(Path(splits_path).read_text(encoding="utf-8"))
        bundle.splits = {name: list(ids) for name, ids in manifest["splits"].items()}
        bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def preprocess_long_text(title: str, body: str) -> str:
    """Mark up a long-text document with title/body marker tokens."""
    return f"xxtitle {title} xxbodytext {body}"


class LinkResolver(Protocol):
    def resolve(self, url: str) -> str:
        """Return the final URL after following redirects; raise on failure."""
        ...


class StaticResolver:
    """Fixed url -> url mapping; unknown urls raise. For tests and replays."""

    def __init__(self, mapping: dict[str, str]):
        self.mapping = dict(mapping)

    def resolve(self, url: str) -> str:
        if url not in self.mapping:
            raise ToolkitError(f"no mapping for {url}")
        return self.mapping[url]


class HttpResolver:
    """Follows redirect chains over HTTP, capped in hops and wall time."""

    def __init__(self, max_redirects: int = 10, timeout: float = 5.0):
        self.max_redirects = max_redirects
        self.timeout = timeout

    def resolve(self, url: str) -> str:
        import requests

        session = requests.Session()
        session.max_redirects = self.max_redirects
        resp = session.head(url, allow_redirects=True, timeout=self.timeout)
        return resp.url


class CachedResolver:
    """Disk-backed cache keyed by original URL, so re-runs stay offline."""

    def __init__(self, inner: LinkResolver, cache_path: str | Path):
        self.inner = inner
        self.cache_path = Path(cache_path)
        self._cache: dict[str, str] = {}
        if self.cache_path.exists():
            self._cache = json.loads(self.cache_path.read_text(encoding="utf-8"))

    def resolve(self, url: str) -> str:
        if url not in self._cache:
            self._cache[url] = self.inner.resolve(url)
            self.flush()
        return self._cache[url]

    def flush(self) -> None:
        self.cache_path.write_text(
            json.dumps(self._cache, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


def expand_links(text: str, resolver: LinkResolver, max_workers: int = 4) -> tuple[str, dict[str, str]]:
    """Replace every URL token with its resolved final URL.

    Resolution failures never fail the instance: the original URL stays and
    a warning is logged. Returns the rewritten text plus the url mapping
    that was applied (for recording in instance meta).
    """
    urls = sorted(set(_URL_RE.findall(text)))
    if not urls:
        return text, {}
    mapping: dict[str, str] = {}

    def _resolve(u: str) -> tuple[str, str | None]:
        try:
            return u, resolver.resolve(u)
        except Exception as exc:
            log.warning("could not resolve %s: %s", u, exc)
            return u, None

    if max_workers > 1 and len(urls) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_resolve, urls))
    else:
        results = [_resolve(u) for u in urls]
    for url, resolved in results:
        if resolved is not None and resolved != url:
            mapping[url] = resolved

    def _sub(match: re.Match) -> str:
        return mapping.get(match.group(0), match.group(0))

    return _URL_RE.sub(_sub, text), mapping


def expand_bundle_links(bundle: DatasetBundle, resolver: LinkResolver, max_workers: int = 4) -> int:
    """Expand links in-place across a bundle; returns how many instances changed."""
    changed = 0
    for iid in sorted(bundle.instances):
        inst = bundle.instances[iid]
        new_text, mapping = expand_links(inst.text, resolver, max_workers=max_workers)
        if mapping:
            meta = dict(inst.meta)
            meta["expanded_urls"] = json.dumps(mapping, ensure_ascii=False, sort_keys=True)
            bundle.instances[iid] = replace(inst, text=new_text, meta=meta)
            changed += 1
    return changed


# ---------------------------------------------------------------------------
# Annotation merging and intercoder reliability
# ---------------------------------------------------------------------------


def majority_vote(annotations: dict[str, str]) -> str:
    """Label with the strictly greatest count; exact ties are surfaced as errors."""
    if not annotations:
        raise ToolkitError("majority_vote needs at least one annotation")
    counts: dict[str, int] = {}
    for lab in annotations.values():
        counts[lab] = counts.get(lab, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        raise TieError(f"tie between {ranked[0][0]!r} and {ranked[1][0]!r}")
    return ranked[0][0]


def cohen_kappa(labels_a: list[str], labels_b: list[str]) -> float:
    """Cohen's kappa: (p_o - p_e) / (1 - p_e) with chance agreement from
    the coders' marginal label frequencies."""
    if len(labels_a) != len(labels_b):
        raise ToolkitError(f"length mismatch: {len(labels_a)} vs {len(labels_b)}")
    n = len(labels_a)
    if n == 0:
        raise ToolkitError("cohen_kappa needs at least one pair")
    observed = sum(1 for x, y in zip(labels_a, labels_b) if x == y) / n
    alphabet = set(labels_a) | set(labels_b)
    expected = 0.0
    for lab in alphabet:
        expected += (labels_a.count(lab) / n) * (labels_b.count(lab) / n)
    if expected == 1.0:
        # Both marginals are the same point mass, so agreement is total.
        return 1.0
    return (observed - expected) / (1.0 - expected)


def merge_annotations(bundle: DatasetBundle) -> DatasetBundle:
    """Fill missing gold labels by majority vote over annotations."""
    for iid in sorted(bundle.instances):
        inst = bundle.instances[iid]
        if inst.label is None and inst.annotations:
            try:
                label = majority_vote(inst.annotations)
            except TieError as exc:
                raise TieError(f"instance {iid!r}: {exc}") from exc
            bundle.instances[iid] = replace(inst, label=label)
    return bundle


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def _stratified_take(
    pool: list[str],
    by_label: Callable[[str], str],
    n: int,
    rng,
    split_name: str,
) -> list[str]:
    groups: dict[str, list[str]] = {lab: [] for lab in LABELS}
    for iid in pool:
        groups[by_label(iid)].append(iid)
    base, rem = divmod(n, len(LABELS))
    take: list[str] = []
    for k, lab in enumerate(LABELS):
        want = base + (1 if k < rem else 0)
        if want > len(groups[lab]):
            raise SplitError(
                f"{split_name}: need {want} {lab!r} instances but pool has {len(groups[lab])}"
            )
        ids = sorted(groups[lab])
        rng.shuffle(ids)
        take.extend(ids[:want])
    rng.shuffle(take)
    return take


def make_splits(bundle: DatasetBundle, spec: SplitSpec) -> DatasetBundle:
    """Assign instances to splits; deterministic given the spec's seed.

    full_train/full_dev/test partition a shuffled id order; the few-shot
    splits are sampled inside their parent split, stratified per class
    when the spec asks for it.
    """
    import random

    unlabeled = sorted(i for i, inst in bundle.instances.items() if inst.label is None)
    if unlabeled:
        raise SplitError(f"{len(unlabeled)} instances lack resolved labels (first: {unlabeled[0]!r})")

    sizes = spec.sizes
    n_main = sizes.get("full_train", 0) + sizes.get("full_dev", 0) + sizes.get("test", 0)
    if n_main > len(bundle.instances):
        raise SplitError(f"main splits need {n_main} instances, bundle has {len(bundle.instances)}")
    if sizes.get("fewshot_train", 0) > sizes.get("full_train", 0):
        raise SplitError("fewshot_train larger than full_train")
    if sizes.get("fewshot_dev", 0) > sizes.get("full_dev", 0):
        raise SplitError("fewshot_dev larger than full_dev")

    rng = random.Random(spec.seed)
    order = sorted(bundle.instances)
    rng.shuffle(order)

    splits: dict[str, list[str]] = {}
    cursor = 0
    for name in ("full_train", "full_dev", "test"):
        n = sizes.get(name, 0)
        splits[name] = order[cursor : cursor + n]
        cursor += n

    def label_of(iid: str) -> str:
        return bundle.instances[iid].label  # type: ignore[return-value]

    for name, parent in (("fewshot_train", "full_train"), ("fewshot_dev", "full_dev")):
        n = sizes.get(name, 0)
        if n == 0:
            splits[name] = []
            continue
        pool = splits[parent]
        if spec.stratify:
            splits[name] = _stratified_take(pool, label_of, n, rng, name)
        else:
            ids = list(pool)
            rng.shuffle(ids)
            splits[name] = ids[:n]

    out = DatasetBundle(instances=bundle.instances, splits=splits)
    out.validate()
    return out
