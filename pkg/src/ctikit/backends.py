"""Model-capability interfaces: text completion, trainable masked-token
distributions, and text embedding — plus deterministic mock implementations.

The mocks are pure functions of (input, seed): all hashing goes through
blake2b so results are byte-identical across processes and platforms.
Real deployments plug in remote backends; the HTTP completion client reads
endpoint/token/model from the environment.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Protocol, Sequence

import numpy as np

from .errors import BackendUnavailableError, ToolkitError

if TYPE_CHECKING:
    from .fewshot import ClozeEncoding

log = logging.getLogger(__name__)

MASK_TOKEN = "<MASK>"
END_OF_TEXT = "<|endoftext|>"
START_OF_TEXT = "<|startoftext|>"

ENV_ENDPOINT = "CTIKIT_COMPLETION_ENDPOINT"
ENV_TOKEN = "CTIKIT_COMPLETION_TOKEN"
ENV_MODEL = "CTIKIT_COMPLETION_MODEL"


def stable_seed(*parts) -> int:
    """Platform-independent 63-bit seed derived from the given parts."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "big") >> 1


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 128
    temperature: float = 0.7
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ToolkitError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ToolkitError("temperature must be >= 0")


@dataclass
class MaskDistribution:
    """Per-mask probability vectors over the backend vocabulary."""

    probs: list[np.ndarray]
    token_index: dict[str, int]

    def __post_init__(self):
        for row in self.probs:
            if row.ndim != 1:
                raise ToolkitError("each mask distribution must be a vector")
            if np.any(row < 0) or abs(float(row.sum()) - 1.0) > 1e-6:
                raise ToolkitError("mask distribution is not a probability simplex")

    def prob_of(self, position: int, token: str) -> float:
        if token not in self.token_index:
            raise ToolkitError(f"token {token!r} not in backend vocabulary")
        return float(self.probs[position][self.token_index[token]])


@dataclass(frozen=True)
class TrainingExample:
    """One training item; `mode` tells the backend how to score it.

    modes: "decoupled" (raise the target token, push down the rest),
    "encourage"/"penalize" (label conditioning on masked context tokens),
    "head" (classification head, uses label_index).
    """

    text: str
    target_tokens: tuple[str, ...] = ()
    mode: str = "decoupled"
    label_index: int | None = None


class CompletionBackend(Protocol):
    def generate(self, prompt: str, params: GenerationParams, request_id: str | None = None) -> str: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class TrainableBackend(Protocol):
    def mask_distribution(self, cloze: "ClozeEncoding") -> MaskDistribution: ...

    def loss_and_update(self, batch: Sequence[TrainingExample], objective: str, learning_rate: float) -> float: ...

    def snapshot(self, checkpoint_id: str) -> str: ...

    def restore(self, checkpoint_id: str) -> None: ...


# ---------------------------------------------------------------------------
# Retries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.base_delay * (2 ** (attempt - 1)), self.max_delay)


class RetryingCompletionBackend:
    """Wraps a completion backend with exponential backoff.

    The same request id is reused across retries so a conforming backend can
    deduplicate side effects. The attempt log of the most recent call is kept
    on `last_attempts`.
    """

    def __init__(self, inner: CompletionBackend, policy: RetryPolicy = RetryPolicy(), sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.policy = policy
        self._sleep = sleep
        self._counter = 0
        self.last_attempts: list[dict] = []

    def generate(self, prompt: str, params: GenerationParams, request_id: str | None = None) -> str:
        if request_id is None:
            self._counter += 1
            request_id = f"req-{stable_seed(prompt, params, self._counter):016x}"
        self.last_attempts = []
        for attempt in range(1, self.policy.max_attempts + 1):
            try:
                completion = self.inner.generate(prompt, params, request_id=request_id)
                self.last_attempts.append({"attempt": attempt, "ok": True})
                return completion
            except Exception as exc:
                self.last_attempts.append({"attempt": attempt, "ok": False, "error": str(exc)})
                if attempt == self.policy.max_attempts:
                    raise BackendUnavailableError(
                        f"backend failed after {attempt} attempts: {exc}",
                        attempts=self.last_attempts,
                    ) from exc
                delay = self.policy.delay(attempt)
                log.warning("generation attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Remote completion over HTTP
# ---------------------------------------------------------------------------


class HttpCompletionBackend:
    """JSON-over-HTTP completion client.

    Endpoint, auth token and model name come from arguments or the
    CTIKIT_COMPLETION_* environment variables. The response body must carry
    the completion under "text" (or OpenAI-style "choices[0].text").
    """

    def __init__(
        self,
        endpoint: str | None = None,
        token: str | None = None,
        model: str | None = None,
        timeout: float = 60.0,
        post: Callable | None = None,
    ):
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT, "")
        self.token = token if token is not None else os.environ.get(ENV_TOKEN, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.timeout = timeout
        if post is None:
            import requests

            post = requests.post
        self._post = post
        if not self.endpoint:
            raise ToolkitError(f"no completion endpoint configured (set {ENV_ENDPOINT})")

    def generate(self, prompt: str, params: GenerationParams, request_id: str | None = None) -> str:
        body = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "stop": list(params.stop_sequences) or None,
        }
        if params.seed is not None:
            body["seed"] = params.seed
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        if request_id:
            headers["X-Request-Id"] = request_id
        resp = self._post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        if getattr(resp, "status_code", 200) >= 400:
            raise ToolkitError(f"completion endpoint returned {resp.status_code}")
        payload = resp.json()
        if "text" in payload:
            return payload["text"]
        try:
            return payload["choices"][0]["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ToolkitError("completion response carries no text") from exc


# ---------------------------------------------------------------------------
# Mock completion
# ---------------------------------------------------------------------------

_SYNONYMS = {
    "server": "system",
    "servers": "systems",
    "urgent": "critical",
    "hacked": "breached",
    "hackers": "attackers",
    "exploit": "attack",
    "exploits": "attacks",
    "patch": "fix",
    "update": "upgrade",
    "security": "defense",
    "vulnerability": "flaw",
    "vulnerabilities": "flaws",
    "report": "notice",
    "data": "records",
    "new": "fresh",
}

_SUFFIXES = (" #infosec", " #update", " via feed", " - details inside", "")


class MockCompletionBackend:
    """Deterministic stand-in for a large generative model.

    Emits perturbed copies of the texts registered at construction
    (synonym substitution, optional retweet prefix, suffix tokens),
    separated the same way the prompt separates its instances, and cut
    off by the token budget so truncated final fragments occur naturally.
    """

    def __init__(self, corpus: Sequence[str], seed: int = 0):
        if not corpus:
            raise ToolkitError("mock completion backend needs a non-empty corpus")
        self.corpus = [t for t in corpus]
        self.seed = seed
        self._by_request: dict[str, str] = {}
        self.max_context_chars = 100_000

    def _perturb(self, text: str, rng: random.Random) -> str:
        words = text.split(" ")
        kind = rng.random()
        if kind < 0.15:
            out = text  # occasional exact duplicate
        else:
            out_words = []
            for w in words:
                key = w.lower().strip(".,!")
                if key in _SYNONYMS and rng.random() < 0.7:
                    repl = _SYNONYMS[key]
                    out_words.append(repl.capitalize() if w[:1].isupper() else repl)
                else:
                    out_words.append(w)
            out = " ".join(out_words)
            if rng.random() < 0.3 and not out.startswith("RT "):
                out = "RT " + out
            out = out + rng.choice(_SUFFIXES)
        return out

    def generate(self, prompt: str, params: GenerationParams, request_id: str | None = None) -> str:
        if not prompt:
            raise ToolkitError("prompt must be non-empty")
        if request_id is not None and request_id in self._by_request:
            return self._by_request[request_id]
        rng = random.Random(stable_seed(self.seed, prompt, params.seed))

        if prompt.startswith(START_OF_TEXT):
            sep = " " + END_OF_TEXT + " " + START_OF_TEXT + " "
        else:
            # Class prompts end with the trailing priming token on its own line.
            token = prompt.rsplit("\n", 1)[-1]
            sep = "\n" + token + " "

        budget = params.max_new_tokens
        pieces: list[str] = []
        first = True
        while budget > 0:
            text = self._perturb(rng.choice(self.corpus), rng)
            words = text.split(" ")
            if len(words) + 2 > budget:
                kept = words[: max(0, budget - 2)]
                if kept:
                    pieces.append((" " if first else sep) + " ".join(kept))
                break
            pieces.append((" " if first else sep) + text)
            budget -= len(words) + 2
            first = False
        completion = "".join(pieces)

        for stop in params.stop_sequences:
            idx = completion.find(stop)
            if idx != -1:
                completion = completion[:idx]
        if request_id is not None:
            self._by_request[request_id] = completion
        return completion


class FlakyCompletionBackend:
    """Test double that fails the first `failures` calls per request id."""

    def __init__(self, inner: CompletionBackend, failures: int):
        self.inner = inner
        self.failures = failures
        self.calls: list[str | None] = []
        self._seen: dict[str | None, int] = {}

    def generate(self, prompt: str, params: GenerationParams, request_id: str | None = None) -> str:
        self.calls.append(request_id)
        n = self._seen.get(request_id, 0)
        self._seen[request_id] = n + 1
        if n < self.failures:
            raise ConnectionError(f"transient failure #{n + 1}")
        return self.inner.generate(prompt, params, request_id=request_id)


# ---------------------------------------------------------------------------
# Mock embedding
# ---------------------------------------------------------------------------


class MockEmbeddingBackend:
    """Seeded character-trigram hashing embedder, unit-normalized.

    Near-duplicate texts share most trigrams and therefore embed close to
    each other, which is all the centroid filter needs from a mock.
    """

    def __init__(self, dim: int = 16, seed: int = 0):
        if dim < 2:
            raise ToolkitError("embedding dim must be >= 2")
        self.dim = dim
        self.seed = seed

    def _embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = f"\x02{text}\x03"
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            h = hashlib.blake2b(f"{self.seed}|{gram}".encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(h, "big")
            idx = value % self.dim
            sign = 1.0 if (value >> 8) & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ToolkitError("embed needs at least one text")
        return np.stack([self._embed_one(t) for t in texts])


# ---------------------------------------------------------------------------
# Mock trainable masked-token model
# ---------------------------------------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class MockMaskedLMBackend:
    """Tiny trainable bag-of-features model over a fixed vocabulary.

    Features are hashed token counts; the mask distribution is a softmax
    of features @ W. `loss_and_update` runs one adaptive-moment step per
    batch, so staged training is real (loss moves) while staying cheap
    and fully deterministic.
    """

    def __init__(self, vocab: Sequence[str] = ("yes", "no", "<unk>"), n_features: int = 64, seed: int = 0):
        if "<unk>" not in vocab:
            vocab = tuple(vocab) + ("<unk>",)
        self.vocab = tuple(vocab)
        self.token_index = {tok: i for i, tok in enumerate(self.vocab)}
        self.n_features = n_features
        self.seed = seed
        rng = np.random.default_rng(stable_seed("mock-mlm-init", seed))
        self.W = rng.normal(0.0, 0.01, size=(n_features, len(self.vocab)))
        self.H = rng.normal(0.0, 0.01, size=(n_features, 2))
        self.weight_decay = 0.0
        self._adam_w = _AdamState(np.zeros_like(self.W), np.zeros_like(self.W))
        self._adam_h = _AdamState(np.zeros_like(self.H), np.zeros_like(self.H))
        self._checkpoints: dict[str, dict] = {}

    # -- features -----------------------------------------------------------

    def _features(self, text: str) -> np.ndarray:
        x = np.zeros(self.n_features, dtype=np.float64)
        for tok in text.split():
            if tok == MASK_TOKEN:
                continue
            h = hashlib.blake2b(f"{self.seed}|{tok}".encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(h, "big")
            x[value % self.n_features] += 1.0 if (value >> 8) & 1 else -1.0
        norm = np.linalg.norm(x)
        return x / norm if norm > 0 else x

    def _target_index(self, token: str) -> int:
        return self.token_index.get(token, self.token_index["<unk>"])

    # -- inference ----------------------------------------------------------

    def mask_distribution(self, cloze) -> MaskDistribution:
        positions = getattr(cloze, "mask_positions", ())
        text = getattr(cloze, "text", None)
        if text is None or len(positions) == 0:
            raise ToolkitError("cloze encoding carries no mask slot")
        x = self._features(text)
        probs = _softmax(x @ self.W)
        return MaskDistribution(probs=[probs.copy() for _ in positions], token_index=dict(self.token_index))

    # -- training -----------------------------------------------------------

    def _grad_for(self, example: TrainingExample) -> tuple[float, np.ndarray, np.ndarray | None]:
        x = self._features(example.text)
        grad_w = np.zeros_like(self.W)
        grad_h = None
        loss = 0.0
        if example.mode == "head":
            if example.label_index is None:
                raise ToolkitError("head example lacks label_index")
            logits = x @ self.H
            p = _softmax(logits)
            loss = -float(np.log(max(p[example.label_index], 1e-12)))
            dlogits = p.copy()
            dlogits[example.label_index] -= 1.0
            grad_h = np.outer(x, dlogits)
            return loss, grad_w, grad_h

        logits = x @ self.W
        p = _softmax(logits)
        for tok in example.target_tokens:
            t = self._target_index(tok)
            if example.mode in ("decoupled",):
                pt = max(p[t], 1e-12)
                off = np.clip(1.0 - p, 1e-12, None)
                loss += -float(np.log(pt)) - float(np.log(off).sum() - np.log(off[t]))
                r = p / np.clip(1.0 - p, 1e-12, None)
                r[t] = 0.0
                onehot = np.zeros_like(p)
                onehot[t] = 1.0
                dlogits = p - onehot + r - p * r.sum()
            elif example.mode == "encourage":
                pt = max(p[t], 1e-12)
                loss += -float(np.log(pt))
                dlogits = p.copy()
                dlogits[t] -= 1.0
            elif example.mode == "penalize":
                pt = min(p[t], 1.0 - 1e-12)
                loss += -float(np.log(1.0 - pt))
                r = pt / (1.0 - pt)
                onehot = np.zeros_like(p)
                onehot[t] = 1.0
                dlogits = r * (onehot - p)
            else:
                raise ToolkitError(f"unknown training mode {example.mode!r}")
            grad_w += np.outer(x, dlogits)
        return loss, grad_w, grad_h

    def _adam_step(self, param: np.ndarray, grad: np.ndarray, state: _AdamState, lr: float) -> None:
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        state.t += 1
        state.m = beta1 * state.m + (1 - beta1) * grad
        state.v = beta2 * state.v + (1 - beta2) * grad * grad
        m_hat = state.m / (1 - beta1**state.t)
        v_hat = state.v / (1 - beta2**state.t)
        param -= lr * (m_hat / (np.sqrt(v_hat) + eps) + self.weight_decay * param)

    def loss_and_update(self, batch: Sequence[TrainingExample], objective: str, learning_rate: float) -> float:
        if not batch:
            raise ToolkitError("empty training batch")
        total = 0.0
        grad_w = np.zeros_like(self.W)
        grad_h = np.zeros_like(self.H)
        any_h = False
        for ex in batch:
            loss, gw, gh = self._grad_for(ex)
            total += loss
            grad_w += gw
            if gh is not None:
                grad_h += gh
                any_h = True
        scale = 1.0 / len(batch)
        self._adam_step(self.W, grad_w * scale, self._adam_w, learning_rate)
        if any_h:
            self._adam_step(self.H, grad_h * scale, self._adam_h, learning_rate)
        return total * scale

    # -- checkpoints ----------------------------------------------------------

    def snapshot(self, checkpoint_id: str) -> str:
        self._checkpoints[checkpoint_id] = {
            "W": self.W.copy(),
            "H": self.H.copy(),
            "adam_w": _AdamState(self._adam_w.m.copy(), self._adam_w.v.copy(), self._adam_w.t),
            "adam_h": _AdamState(self._adam_h.m.copy(), self._adam_h.v.copy(), self._adam_h.t),
        }
        return checkpoint_id

    def restore(self, checkpoint_id: str) -> None:
        if checkpoint_id not in self._checkpoints:
            raise ToolkitError(f"unknown checkpoint {checkpoint_id!r}")
        snap = self._checkpoints[checkpoint_id]
        self.W = snap["W"].copy()
        self.H = snap["H"].copy()
        self._adam_w = _AdamState(snap["adam_w"].m.copy(), snap["adam_w"].v.copy(), snap["adam_w"].t)
        self._adam_h = _AdamState(snap["adam_h"].m.copy(), snap["adam_h"].v.copy(), snap["adam_h"].t)

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.W.tobytes())
        h.update(self.H.tobytes())
        return h.hexdigest()


def make_backend(name: str, **kwargs):
    """Backend factory used by the CLI (`--backend mock` or `--backend http`)."""
    if name == "mock":
        corpus = kwargs.get("corpus") or ["placeholder text"]
        return MockCompletionBackend(corpus, seed=kwargs.get("seed", 0))
    if name == "http":
        return RetryingCompletionBackend(HttpCompletionBackend())
    raise ToolkitError(f"unknown backend {name!r}")
