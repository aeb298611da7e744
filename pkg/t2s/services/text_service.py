import asyncio
import hashlib
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np
from tenacity import AsyncRetrying, RetryError, retry_if_exception_type, stop_after_attempt, wait_exponential

from t2s.errors import ArgumentError, ConfigError, TransportError
from t2s.schemas import EmbeddingClientConfig
from t2s.utils.cache import ResponseCache, content_key
from t2s.utils.text import tokenize

logger = logging.getLogger(__name__)

MIN_D_TEXT = 8
BOS, EOS = "<s>", "</s>"
POSITION_WEIGHT = 0.5


@dataclass(frozen=True)
class ConditionEmbedding:
    vector: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        if self.vector.ndim != 1:
            raise ArgumentError(f"Condition vector must be 1-D, got shape {self.vector.shape}")
        if self.is_null != (not np.any(self.vector)):
            raise ArgumentError("is_null must be set exactly when the vector is all zeros")

    @property
    def d_text(self) -> int:
        return int(self.vector.shape[0])


def null_condition(d_text: int) -> ConditionEmbedding:
    return ConditionEmbedding(vector=np.zeros(d_text, dtype=np.float64), is_null=True)


def _hash64(feature: str, salt: str = "") -> int:
    digest = hashlib.blake2b(f"{salt}|{feature}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def encode_offline(caption: str, d_text: int) -> ConditionEmbedding:
    """
    Deterministic caption embedding: hashed unigrams and boundary-marked bigrams, each
    feature also mixed into a second bucket with a sinusoid of its position, L2-normalized.
    """
    if d_text < MIN_D_TEXT:
        raise ArgumentError(f"d_text must be >= {MIN_D_TEXT}, got {d_text}")
    if not caption or not caption.strip():
        raise ArgumentError("Cannot encode an empty caption; use null_condition for the unconditional branch")

    tokens = tokenize(caption) or [caption.strip().lower()]
    padded = [BOS, *tokens, EOS]
    features = [(f"u:{tok}", i) for i, tok in enumerate(tokens)]
    features += [(f"b:{a} {b}", i) for i, (a, b) in enumerate(zip(padded, padded[1:], strict=False))]

    vec = np.zeros(d_text, dtype=np.float64)
    for feature, position in features:
        h = _hash64(feature)
        bucket, sign = h % d_text, 1.0 if (h >> 32) & 1 else -1.0
        vec[bucket] += sign

        g = _hash64(feature, salt="pos")
        freq = 1.0 + (g >> 40) % 7
        vec[g % d_text] += POSITION_WEIGHT * math.sin(freq * (position + 1) * math.pi / (len(tokens) + 2))

    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        # every contribution cancelled out
        vec[_hash64(caption) % d_text] = 1.0
        norm = 1.0
    return ConditionEmbedding(vector=vec / norm, is_null=False)


class TextEncoder(Protocol):
    d_text: int
    name: str

    def encode(self, captions: Sequence[str]) -> np.ndarray: ...


class OfflineTextEncoder:
    name = "offline"

    def __init__(self, d_text: int = 64):
        if d_text < MIN_D_TEXT:
            raise ArgumentError(f"d_text must be >= {MIN_D_TEXT}, got {d_text}")
        self.d_text = d_text

    def encode(self, captions: Sequence[str]) -> np.ndarray:
        if not captions:
            return np.zeros((0, self.d_text))
        return np.stack([encode_offline(c, self.d_text).vector for c in captions])


class LookupTextEncoder:
    """Serves pre-fetched embeddings (e.g. from the remote client) by exact caption."""

    def __init__(self, table: Mapping[str, Sequence[float]], name: str = "remote"):
        if not table:
            raise ConfigError("LookupTextEncoder needs at least one embedding")
        self._table = {caption: np.asarray(v, dtype=np.float64) for caption, v in table.items()}
        dims = {v.shape[0] for v in self._table.values()}
        if len(dims) != 1:
            raise ConfigError(f"Embeddings have mixed dimensions: {sorted(dims)}")
        self.d_text = dims.pop()
        self.name = name

    def encode(self, captions: Sequence[str]) -> np.ndarray:
        missing = [c for c in captions if c not in self._table]
        if missing:
            raise ConfigError(f"No embedding for {len(missing)} caption(s), e.g. {missing[0]!r}")
        if not captions:
            return np.zeros((0, self.d_text))
        return np.stack([self._table[c] for c in captions])


class _RetryableStatus(Exception):
    def __init__(self, status_code: int, body: str):
        self.status_code = status_code
        super().__init__(f"HTTP {status_code}: {body[:200]}")


class EmbeddingClient:
    """
    Async client for an OpenAI-style `/embeddings` endpoint.

    Results are cached by (model, caption) hash in a JSONL sidecar; captions are
    deduplicated and sent in batches, output order follows input order.
    """

    def __init__(self, config: EmbeddingClientConfig, transport: httpx.AsyncBaseTransport | None = None):
        self.config = config
        self.transport = transport
        self.cache = ResponseCache(config.cache_path)
        self.requests_sent = 0

    def _key(self, caption: str) -> str:
        return content_key(self.config.model, caption)

    async def _post_once(self, client: httpx.AsyncClient, batch: list[str]) -> list[list[float]]:
        self.requests_sent += 1
        resp = await client.post(self.config.endpoint, json={"model": self.config.model, "input": batch})
        if resp.status_code >= 500 or resp.status_code == 429:
            raise _RetryableStatus(resp.status_code, resp.text)
        if resp.status_code >= 400:
            raise TransportError(f"Embedding request rejected with HTTP {resp.status_code}: {resp.text[:200]}")
        data = resp.json().get("data")
        if not isinstance(data, list) or len(data) != len(batch):
            raise TransportError(f"Embedding response has {len(data or [])} items for {len(batch)} inputs")
        return [item["embedding"] for item in data]

    async def _post(self, client: httpx.AsyncClient, batch: list[str]) -> list[list[float]]:
        try:
            async for attempt in AsyncRetrying(
                retry=retry_if_exception_type((_RetryableStatus, httpx.TransportError)),
                stop=stop_after_attempt(self.config.max_retries + 1),
                wait=wait_exponential(multiplier=self.config.backoff_seconds, max=10),
            ):
                with attempt:
                    return await self._post_once(client, batch)
        except RetryError as e:
            cause = e.last_attempt.exception()
            raise TransportError(
                f"Embedding request failed after {self.config.max_retries + 1} attempts: {cause}"
            ) from cause
        raise AssertionError("unreachable")

    async def embed(self, captions: Sequence[str]) -> np.ndarray:
        """Embeddings as an (n, d_text) array, in input order."""
        missing = list(dict.fromkeys(c for c in captions if self._key(c) not in self.cache))
        if missing:
            logger.info(f"Fetching {len(missing)} embeddings ({len(captions) - len(missing)} cached)")
            fetched = await self._fetch_missing(missing)
        else:
            fetched = {}
            logger.debug(f"All {len(captions)} embeddings served from cache")

        rows = []
        for caption in captions:
            vector = fetched[caption] if caption in fetched else self.cache.get(self._key(caption))
            if len(vector) != self.config.d_text:
                raise ConfigError(f"Embedding dimension {len(vector)} does not match d_text={self.config.d_text}")
            rows.append(vector)
        return np.asarray(rows, dtype=np.float64).reshape(len(captions), self.config.d_text)

    async def _fetch_missing(self, missing: list[str]) -> dict[str, list[float]]:
        headers = {"Authorization": f"Bearer {self.config.api_key}"} if self.config.api_key else {}
        semaphore = asyncio.Semaphore(self.config.max_concurrency)
        batches = [missing[i : i + self.config.batch_size] for i in range(0, len(missing), self.config.batch_size)]
        fetched: dict[str, list[float]] = {}

        async with httpx.AsyncClient(transport=self.transport, timeout=self.config.timeout, headers=headers) as client:

            async def run(batch: list[str]) -> None:
                async with semaphore:
                    vectors = await self._post(client, batch)
                for caption, vector in zip(batch, vectors, strict=True):
                    if len(vector) != self.config.d_text:
                        raise ConfigError(
                            f"Embedding dimension {len(vector)} does not match d_text={self.config.d_text}"
                        )
                    fetched[caption] = [float(v) for v in vector]
                    await self.cache.put(self._key(caption), fetched[caption])

            await asyncio.gather(*(run(b) for b in batches))
        return fetched

    async def fetch(self, captions: Sequence[str]) -> list[ConditionEmbedding]:
        matrix = await self.embed(captions)
        return [ConditionEmbedding(vector=row, is_null=not np.any(row)) for row in matrix]

    async def lookup_encoder(self, captions: Sequence[str]) -> LookupTextEncoder:
        unique = list(dict.fromkeys(captions))
        matrix = await self.embed(unique)
        return LookupTextEncoder(dict(zip(unique, matrix, strict=True)), name=f"remote:{self.config.model}")


async def fetch_embeddings(
    config: EmbeddingClientConfig,
    captions: Sequence[str],
    transport: httpx.AsyncBaseTransport | None = None,
) -> list[ConditionEmbedding]:
    return await EmbeddingClient(config, transport=transport).fetch(captions)
