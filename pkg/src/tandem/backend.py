"""Model backends for the two tiers.

Two implementations share one interface: an OpenAI-compatible HTTP client
(chat completions with per-token log-probabilities) and a scripted,
fully deterministic mock for offline runs and tests. A ``BackendPool``
holds one backend per tier, enforces a per-tier in-flight cap, and owns
sentence embedding and pricing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx
import numpy as np

from .core import CostLedger, ModelTier
from .errors import CapabilityError, ConfigError, DecodeError, TransportError

logger = logging.getLogger(__name__)

# Template wrapped around a sentence before asking the backend for a one-token
# continuation; the hidden state of that token serves as the sentence embedding.
EMBED_TEMPLATE = 'This sentence: "{text}" means in one word: "'

DEFAULT_API_KEY_ENV = "TANDEM_API_KEY"
RETRY_ATTEMPTS = 3
RETRY_BASE_SECONDS = 1.0
DEFAULT_EMBED_DIM = 64


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    max_tokens: int = 512
    temperature: float = 0.0
    want_token_probs: bool = False

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_probs: tuple[float, ...]
    prompt_tokens: int
    completion_tokens: int
    elapsed_seconds: float


@dataclass(frozen=True)
class BackendProfile:
    """Where a tier lives and what its tokens cost, in US cents per token."""

    tier: ModelTier
    endpoint: str
    model_name: str
    price_per_prompt_token_cents: float = 0.0
    price_per_completion_token_cents: float = 0.0
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_inflight: int = 8

    def __post_init__(self):
        if self.price_per_prompt_token_cents < 0 or self.price_per_completion_token_cents < 0:
            raise ConfigError("token prices must be nonnegative")
        # On-device inference bills no API cost.
        if self.tier is ModelTier.DEVICE and (
            self.price_per_prompt_token_cents or self.price_per_completion_token_cents
        ):
            raise ConfigError("device-tier profiles must carry zero token prices")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding values must be finite")

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def price(response: ChatResponse, profile: BackendProfile) -> CostLedger:
    """Ledger for one completed call: linear token pricing plus wall time."""
    cents = (
        response.prompt_tokens * profile.price_per_prompt_token_cents
        + response.completion_tokens * profile.price_per_completion_token_cents
    )
    device = profile.tier is ModelTier.DEVICE
    return CostLedger(
        wall_seconds=response.elapsed_seconds,
        api_cents=cents,
        device_calls=1 if device else 0,
        cloud_calls=0 if device else 1,
        prompt_tokens=response.prompt_tokens,
        completion_tokens=response.completion_tokens,
    )


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...

    def embed(self, prompt: str) -> EmbeddingVector: ...


# ---------------------------------------------------------------------------
# Scripted mock backend


@dataclass(frozen=True)
class MockRule:
    """One scripted behavior: fire when ``match`` occurs in the user prompt."""

    match: str
    text: str
    token_probs: tuple[float, ...] | None = None
    elapsed_seconds: float = 0.0
    difficulty: float | None = None

    def __post_init__(self):
        if self.token_probs is not None:
            for p in self.token_probs:
                if not 0.0 < p <= 1.0:
                    raise ConfigError(f"token probability {p} outside (0, 1]")
        if self.elapsed_seconds < 0:
            raise ConfigError("elapsed_seconds must be nonnegative")


def _rule_from_dict(raw: Mapping, *, match: str) -> MockRule:
    probs = raw.get("token_probs")
    return MockRule(
        match=match,
        text=raw.get("text", ""),
        token_probs=tuple(probs) if probs is not None else None,
        elapsed_seconds=float(raw.get("elapsed_seconds", 0.0)),
        difficulty=raw.get("difficulty"),
    )


class MockBackend:
    """Deterministic scripted backend: a pure function of (script, request, seed).

    The script is an ordered rule list; the first rule whose ``match`` string
    occurs in the user prompt wins, and an unmatched prompt falls through to
    the scripted default. Embeddings are seeded per-text noise vectors whose
    component along a fixed unit direction equals the rule's scripted
    difficulty, so difficulty is linearly recoverable from mock embeddings.
    """

    def __init__(
        self,
        rules: Sequence[MockRule],
        default: MockRule,
        *,
        seed: int = 0,
        embed_dim: int = DEFAULT_EMBED_DIM,
    ):
        self._rules = tuple(rules)
        self._default = default
        self._seed = seed
        self._embed_dim = embed_dim
        direction = np.random.default_rng(seed).normal(size=embed_dim)
        self._direction = direction / np.linalg.norm(direction)

    @classmethod
    def from_script(cls, script: Mapping, *, seed: int = 0, embed_dim: int = DEFAULT_EMBED_DIM) -> "MockBackend":
        """Build from the JSON script shape: {"default": {...}, "rules": [...]}."""
        try:
            default = _rule_from_dict(script.get("default", {}), match="")
            rules = [_rule_from_dict(r, match=r["match"]) for r in script.get("rules", [])]
        except KeyError as exc:
            raise ConfigError(f"mock rule missing field {exc}") from exc
        return cls(rules, default, seed=seed, embed_dim=embed_dim)

    @classmethod
    def from_file(cls, path: str | Path, *, seed: int = 0, embed_dim: int = DEFAULT_EMBED_DIM) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            return cls.from_script(json.load(fh), seed=seed, embed_dim=embed_dim)

    def _match(self, prompt: str) -> MockRule:
        for rule in self._rules:
            if rule.match and rule.match in prompt:
                return rule
        return self._default

    def complete(self, request: ChatRequest) -> ChatResponse:
        rule = self._match(request.user)
        if request.want_token_probs and rule.token_probs is None:
            raise CapabilityError(
                f"mock rule matching {rule.match!r} declares no token_probs "
                "but token probabilities were requested"
            )
        probs = rule.token_probs if request.want_token_probs else ()
        completion_tokens = (
            len(rule.token_probs) if rule.token_probs is not None else len(rule.text.split())
        )
        prompt_tokens = len(request.system.split()) + len(request.user.split())
        return ChatResponse(
            text=rule.text,
            token_probs=tuple(probs or ()),
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            elapsed_seconds=rule.elapsed_seconds,
        )

    def embed(self, prompt: str) -> EmbeddingVector:
        rule = self._match(prompt)
        difficulty = rule.difficulty
        if difficulty is None:
            difficulty = self._default.difficulty if self._default.difficulty is not None else 0.5
        digest = hashlib.sha256(f"{self._seed}:{prompt}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        noise = rng.normal(size=self._embed_dim)
        # Project the noise off the difficulty direction, then place the text's
        # scripted difficulty exactly along it.
        noise -= (noise @ self._direction) * self._direction
        vec = noise + difficulty * self._direction
        return EmbeddingVector(tuple(float(v) for v in vec))


# ---------------------------------------------------------------------------
# OpenAI-compatible HTTP backend


class HttpBackend:
    """Chat-completions client against an OpenAI-compatible endpoint.

    Requests per-token logprobs and exponentiates them into probabilities at
    the boundary. Transport failures are retried up to RETRY_ATTEMPTS with
    exponential backoff; malformed responses are never retried.
    """

    def __init__(self, profile: BackendProfile, *, timeout: float = 120.0, client: httpx.Client | None = None):
        self._profile = profile
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self._profile.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _post(self, url: str, payload: dict) -> httpx.Response:
        last_exc: Exception | None = None
        for attempt in range(1, RETRY_ATTEMPTS + 1):
            try:
                return self._client.post(url, json=payload, headers=self._headers())
            except httpx.TransportError as exc:
                last_exc = exc
                logger.warning("transport error on attempt %d/%d: %s", attempt, RETRY_ATTEMPTS, exc)
                if attempt < RETRY_ATTEMPTS:
                    time.sleep(RETRY_BASE_SECONDS * 2 ** (attempt - 1))
        raise TransportError(str(last_exc), attempts=RETRY_ATTEMPTS) from last_exc

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": self._profile.model_name,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.want_token_probs:
            payload["logprobs"] = True
        url = f"{self._profile.endpoint.rstrip('/')}/chat/completions"
        start = time.perf_counter()
        response = self._post(url, payload)
        elapsed = time.perf_counter() - start
        if response.status_code != 200:
            raise DecodeError(f"endpoint returned HTTP {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
            choice = body["choices"][0]
            text = choice["message"]["content"]
            usage = body.get("usage", {})
            prompt_tokens = int(usage.get("prompt_tokens", 0))
            completion_tokens = int(usage.get("completion_tokens", 0))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise DecodeError(f"malformed chat-completions response: {exc}") from exc

        probs: tuple[float, ...] = ()
        if request.want_token_probs:
            logprob_entries = (choice.get("logprobs") or {}).get("content")
            if not logprob_entries:
                raise CapabilityError(
                    f"endpoint {self._profile.endpoint} returned no logprobs although requested"
                )
            try:
                probs = tuple(min(1.0, math.exp(float(e["logprob"]))) for e in logprob_entries)
            except (KeyError, TypeError, ValueError) as exc:
                raise DecodeError(f"malformed logprob entries: {exc}") from exc
            if not completion_tokens:
                completion_tokens = len(probs)
        return ChatResponse(
            text=text,
            token_probs=probs,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            elapsed_seconds=elapsed,
        )

    def embed(self, prompt: str) -> EmbeddingVector:
        url = f"{self._profile.endpoint.rstrip('/')}/embeddings"
        payload = {"model": self._profile.model_name, "input": prompt}
        response = self._post(url, payload)
        if response.status_code == 404:
            raise CapabilityError(f"endpoint {self._profile.endpoint} exposes no embedding surface")
        if response.status_code != 200:
            raise DecodeError(f"embedding endpoint returned HTTP {response.status_code}")
        try:
            values = response.json()["data"][0]["embedding"]
            return EmbeddingVector(tuple(float(v) for v in values))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise DecodeError(f"malformed embedding response: {exc}") from exc


# ---------------------------------------------------------------------------
# Pool


class BackendPool:
    """One backend per tier, plus pricing profiles and per-tier rate limits.

    Safe for concurrent use: the mock script is read-only and the in-flight
    cap is enforced here with a semaphore per tier, invisible to callers.
    """

    def __init__(self, backends: Mapping[ModelTier, Backend], profiles: Mapping[ModelTier, BackendProfile]):
        self._backends = dict(backends)
        self._profiles = dict(profiles)
        for tier, prof in self._profiles.items():
            if prof.tier is not tier:
                raise ConfigError(f"profile registered under {tier} declares tier {prof.tier}")
        self._limits = {
            tier: threading.Semaphore(self._profiles[tier].max_inflight)
            for tier in self._backends
            if tier in self._profiles
        }

    def profile(self, tier: ModelTier) -> BackendProfile:
        try:
            return self._profiles[tier]
        except KeyError:
            raise ConfigError(f"no profile registered for tier {tier.value}") from None

    def _backend(self, tier: ModelTier) -> Backend:
        try:
            return self._backends[tier]
        except KeyError:
            raise ConfigError(f"no backend registered for tier {tier.value}") from None

    def complete(self, tier: ModelTier, request: ChatRequest) -> ChatResponse:
        backend = self._backend(tier)
        with self._limits[tier]:
            return backend.complete(request)

    def complete_priced(self, tier: ModelTier, request: ChatRequest) -> tuple[ChatResponse, CostLedger]:
        response = self.complete(tier, request)
        return response, price(response, self.profile(tier))

    def embed_sentence(self, tier: ModelTier, text: str) -> EmbeddingVector:
        """Embed ``text`` via the one-word continuation template."""
        if not text:
            raise ValueError("cannot embed empty text")
        backend = self._backend(tier)
        prompt = EMBED_TEMPLATE.format(text=text)
        with self._limits[tier]:
            return backend.embed(prompt)


def load_profiles(path: str | Path) -> dict[ModelTier, BackendProfile]:
    """Read the per-tier profiles file: {"device": {...}, "cloud": {...}}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    profiles: dict[ModelTier, BackendProfile] = {}
    for tier in ModelTier:
        if tier.value not in raw:
            continue
        entry = raw[tier.value]
        try:
            profiles[tier] = BackendProfile(
                tier=tier,
                endpoint=entry["endpoint"],
                model_name=entry["model_name"],
                price_per_prompt_token_cents=float(entry.get("price_per_prompt_token_cents", 0.0)),
                price_per_completion_token_cents=float(entry.get("price_per_completion_token_cents", 0.0)),
                api_key_env=entry.get("api_key_env", DEFAULT_API_KEY_ENV),
                max_inflight=int(entry.get("max_inflight", 8)),
            )
        except KeyError as exc:
            raise ConfigError(f"profile for tier {tier.value!r} missing field {exc}") from exc
    if not profiles:
        raise ConfigError(f"no tier profiles found in {path}")
    return profiles


def build_pool_from_files(
    profiles_path: str | Path,
    scripts: Mapping[str, str | Path] | None = None,
    *,
    mock_seed: int = 0,
    embed_dim: int = DEFAULT_EMBED_DIM,
) -> BackendPool:
    """Wire a pool from a profiles file plus mock script files keyed by tier name."""
    profiles = load_profiles(profiles_path)
    scripts = dict(scripts or {})
    backends: dict[ModelTier, Backend] = {}
    for tier, prof in profiles.items():
        if prof.endpoint == "mock":
            if tier.value not in scripts:
                raise ConfigError(f"tier {tier.value} uses the mock endpoint but no script was given")
            backends[tier] = MockBackend.from_file(
                scripts[tier.value], seed=mock_seed, embed_dim=embed_dim
            )
        else:
            backends[tier] = HttpBackend(prof)
    return BackendPool(backends, profiles)
