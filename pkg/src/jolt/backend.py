"""Language-model backends.

Two implementations of the same contract: :class:`MockLm`, an order-k
conditional-table model whose distributions are exactly enumerable (the
verification oracle), and :class:`HttpBackend`, a client for the JSON
wire protocol served by a model sidecar.

Both expose text-level scoring and generation:

* ``score_text(context, continuation, allowed=None)`` returns per-token
  natural-log probabilities of the continuation given the context.  When
  ``allowed`` (an iterable of strings) is given, each position's
  distribution is restricted to the tokens of those strings and
  renormalized; a continuation token outside the set scores ``-inf``.
* ``generate_text(context, ...)`` samples autoregressively with
  temperature scaling followed by nucleus truncation, stopping at
  ``max_new_tokens`` or at the first occurrence of any stop string (the
  returned text never contains a stop string).
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import requests

from .tokenizer import CharTokenizer, TokenSeq, numeric_token_mask, validate_single_digit

NEG_INF = float("-inf")


class BackendError(RuntimeError):
    """The backend failed or is unreachable."""


@dataclass(frozen=True)
class BackendInfo:
    vocab_size: int
    single_digit: bool
    model_name: str


@dataclass(frozen=True)
class ScoreRequest:
    """Score a continuation given a context, optionally under an allowed-token mask.

    ``allowed_mask`` is a boolean vector over the vocabulary, True where a
    token is admissible; it applies at every continuation position.
    """

    context: TokenSeq
    continuation: TokenSeq
    allowed_mask: np.ndarray | None = None


@dataclass(frozen=True)
class ScoreResponse:
    per_token_logprob: tuple[float, ...]

    @property
    def total(self) -> float:
        return sum(self.per_token_logprob)


@dataclass(frozen=True)
class GenRequest:
    context: TokenSeq
    top_p: float = 0.9
    temperature: float = 1.0
    max_new_tokens: int = 64
    stop_strings: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


def nucleus_filter(probs: np.ndarray, top_p: float, temperature: float) -> np.ndarray:
    """Temperature-scale then truncate to the smallest prefix of the
    probability-sorted vocabulary with cumulative mass >= top_p, renormalized."""
    if temperature != 1.0:
        w = probs ** (1.0 / temperature)
        w = w / w.sum()
    else:
        w = probs.astype(float)
    order = np.argsort(-w, kind="stable")
    cum = np.cumsum(w[order])
    cut = int(np.searchsorted(cum, top_p, side="left"))
    cut = min(cut, len(order) - 1)
    keep = order[: cut + 1]
    out = np.zeros_like(w)
    out[keep] = w[keep]
    return out / out.sum()


class MockLm:
    """Order-k lookup language model.

    ``conditionals`` maps a context-suffix key (the last ``order`` token
    strings; shorter near the sequence start) to a probability vector over
    the vocabulary, given either as a dense vector or a sparse
    ``{token: prob}`` mapping.  Unknown suffixes fall back to a uniform
    distribution over ``fallback`` tokens.  The model is immutable;
    sampling state is a per-call seeded generator.
    """

    def __init__(
        self,
        tokenizer: CharTokenizer,
        conditionals: Mapping[tuple[str, ...], Mapping[str, float] | Sequence[float] | np.ndarray],
        fallback: Iterable[str],
        order: int = 3,
        name: str = "mock",
    ):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.tokenizer = tokenizer
        self.vocab = tokenizer.vocab
        self.order = order
        self.name = name
        self._table: dict[tuple[str, ...], np.ndarray] = {}
        for key, dist in conditionals.items():
            key = tuple(key)
            if len(key) > order:
                raise ValueError(f"conditional key {key!r} longer than order {order}")
            for tok in key:
                self.vocab.id_of(tok)
            self._table[key] = self._to_vector(dist, key)
        fallback = tuple(fallback)
        if not fallback:
            raise ValueError("fallback token set must be nonempty")
        vec = np.zeros(len(self.vocab))
        for tok in fallback:
            vec[self.vocab.id_of(tok)] = 1.0 / len(fallback)
        self._fallback_vec = vec

    def _to_vector(self, dist, key) -> np.ndarray:
        if isinstance(dist, Mapping):
            vec = np.zeros(len(self.vocab))
            for tok, p in dist.items():
                vec[self.vocab.id_of(tok)] = float(p)
        else:
            vec = np.asarray(dist, dtype=float)
            if vec.shape != (len(self.vocab),):
                raise ValueError(f"conditional for {key!r} has wrong length")
        if (vec < 0).any():
            raise ValueError(f"conditional for {key!r} has negative entries")
        if abs(vec.sum() - 1.0) > 1e-12:
            raise ValueError(f"conditional for {key!r} sums to {vec.sum()!r}, not 1")
        return vec

    def info(self) -> BackendInfo:
        return BackendInfo(
            vocab_size=len(self.vocab),
            single_digit=validate_single_digit(self.vocab),
            model_name=self.name,
        )

    def distribution(self, context_tokens: Sequence[str]) -> np.ndarray:
        """Next-token probability vector for a context given as token strings."""
        key = tuple(context_tokens[-self.order :])
        vec = self._table.get(key)
        return self._fallback_vec if vec is None else vec

    def score(self, request: ScoreRequest) -> ScoreResponse:
        if len(request.continuation) == 0:
            raise ValueError("continuation must be nonempty")
        mask = request.allowed_mask
        if mask is not None and mask.shape != (len(self.vocab),):
            raise ValueError("allowed_mask length must equal vocab size")
        ctx = [self.vocab.tokens[i] for i in request.context]
        out: list[float] = []
        for tok_id in request.continuation:
            vec = self.distribution(ctx)
            if mask is None:
                p = vec[tok_id]
                out.append(math.log(p) if p > 0 else NEG_INF)
            elif not mask[tok_id]:
                out.append(NEG_INF)
            else:
                z = vec[mask].sum()
                p = vec[tok_id]
                out.append(math.log(p / z) if p > 0 and z > 0 else NEG_INF)
            ctx.append(self.vocab.tokens[tok_id])
        return ScoreResponse(per_token_logprob=tuple(out))

    def generate(self, request: GenRequest) -> str:
        rng = np.random.default_rng(request.seed)
        ctx = [self.vocab.tokens[i] for i in request.context]
        text = ""
        for _ in range(request.max_new_tokens):
            probs = nucleus_filter(self.distribution(ctx), request.top_p, request.temperature)
            idx = int(rng.choice(len(probs), p=probs))
            tok = self.vocab.tokens[idx]
            ctx.append(tok)
            text += tok
            hits = [text.find(s) for s in request.stop_strings if s in text]
            if hits:
                return text[: min(hits)]
        return text

    # Text-level contract shared with HttpBackend.

    def score_text(
        self, context: str, continuation: str, allowed: Iterable[str] | None = None
    ) -> list[float]:
        mask = None if allowed is None else ~numeric_token_mask(self.tokenizer, allowed)
        request = ScoreRequest(
            context=self.tokenizer.tokenize(context),
            continuation=self.tokenizer.tokenize(continuation),
            allowed_mask=mask,
        )
        return list(self.score(request).per_token_logprob)

    def generate_text(
        self,
        context: str,
        *,
        top_p: float = 0.9,
        temperature: float = 1.0,
        max_new_tokens: int = 64,
        stop: Sequence[str] = (),
        seed: int | None = None,
    ) -> str:
        request = GenRequest(
            context=self.tokenizer.tokenize(context),
            top_p=top_p,
            temperature=temperature,
            max_new_tokens=max_new_tokens,
            stop_strings=tuple(stop),
            seed=seed,
        )
        return self.generate(request)


def enumerate_continuations(
    mock: MockLm,
    context: str | Sequence[str],
    alphabet: Iterable[str],
    max_len: int,
) -> dict[str, float]:
    """Exact probability of every continuation token path over ``alphabet``.

    Walks all paths of length 1..max_len under the mock's raw conditionals
    (no renormalization) and returns decoded string -> path probability,
    summing paths that decode to the same string.  Brute-force oracle for
    the scoring machinery; any prefix-free subset has total mass <= 1.
    """
    alpha = list(dict.fromkeys(alphabet))
    for tok in alpha:
        mock.vocab.id_of(tok)
    if not alpha:
        return {}
    ctx0 = list(context) if not isinstance(context, str) else mock.tokenizer.token_strings(context)
    out: dict[str, float] = {}
    budget = 1_000_000
    visited = 0

    def walk(ctx: list[str], decoded: str, prob: float, depth: int) -> None:
        nonlocal visited
        if depth == max_len:
            return
        vec = mock.distribution(ctx)
        for tok in alpha:
            p = prob * vec[mock.vocab.id_of(tok)]
            if p == 0.0:
                continue
            visited += 1
            if visited > budget:
                raise ValueError(
                    f"enumeration over {len(alpha)} tokens to length {max_len} is intractable "
                    f"(> {budget} paths)"
                )
            s = decoded + tok
            out[s] = out.get(s, 0.0) + p
            walk(ctx + [tok], s, p, depth + 1)

    walk(ctx0, "", 1.0, 0)
    return out


class HttpBackend:
    """Client for the sidecar wire protocol (v1).

    Idempotent calls (tokenize, score, info) are retried with exponential
    backoff; generate is retried only when a seed makes it deterministic
    server-side.  In-flight requests are bounded by a semaphore.
    """

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.1,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._session = session or requests.Session()
        self._tok_cache: dict[str, tuple[int, ...]] = {}
        self._tok_lock = threading.Lock()

    def _request(self, method: str, path: str, payload: dict | None, retry: bool) -> dict:
        url = self.base_url + path
        attempts = self.max_retries if retry else 1
        last: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._sem:
                    resp = self._session.request(method, url, json=payload, timeout=self.timeout)
                if resp.status_code >= 500:
                    last = BackendError(f"{method} {path} -> {resp.status_code}: {resp.text[:200]}")
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"{method} {path} -> {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
        raise BackendError(f"{method} {path} failed after {attempts} attempts: {last}")

    def info(self) -> BackendInfo:
        data = self._request("GET", "/v1/info", None, retry=True)
        return BackendInfo(
            vocab_size=int(data["vocab_size"]),
            single_digit=bool(data["single_digit"]),
            model_name=str(data["model_name"]),
        )

    def tokenize(self, text: str) -> tuple[int, ...]:
        with self._tok_lock:
            cached = self._tok_cache.get(text)
        if cached is not None:
            return cached
        data = self._request("POST", "/v1/tokenize", {"text": text}, retry=True)
        ids = tuple(int(i) for i in data["token_ids"])
        with self._tok_lock:
            self._tok_cache[text] = ids
        return ids

    def score_text(
        self, context: str, continuation: str, allowed: Iterable[str] | None = None
    ) -> list[float]:
        if not continuation:
            raise ValueError("continuation must be nonempty")
        payload: dict = {"context_text": context, "continuation_text": continuation}
        if allowed is not None:
            ids: set[int] = set()
            for s in allowed:
                ids.update(self.tokenize(s))
            payload["allowed_token_ids"] = sorted(ids)
        data = self._request("POST", "/v1/score", payload, retry=True)
        # null entries encode the -inf sentinel (JSON has no -Infinity).
        return [NEG_INF if x is None else float(x) for x in data["per_token_logprob"]]

    def generate_text(
        self,
        context: str,
        *,
        top_p: float = 0.9,
        temperature: float = 1.0,
        max_new_tokens: int = 64,
        stop: Sequence[str] = (),
        seed: int | None = None,
    ) -> str:
        payload = {
            "context_text": context,
            "top_p": top_p,
            "temperature": temperature,
            "max_new_tokens": max_new_tokens,
            "stop": list(stop),
        }
        if seed is not None:
            payload["seed"] = seed
        data = self._request("POST", "/v1/generate", payload, retry=seed is not None)
        return str(data["text"])
