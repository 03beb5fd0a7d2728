"""Clients for the external neural services: text/image embedding and caption
generation over a small JSON-HTTP wire contract, plus a deterministic mock.

Endpoints:
    POST /v1/embed_text   {"texts": [...]}          -> {"dim": N, "vectors": [[...], ...]}
    POST /v1/embed_image  {"image_b64": "..."}      -> {"dim": N, "vector": [...]}
    POST /v1/caption      {"prompt": "...", "max_words": M} -> {"text": "..."}

No call here retries; callers own retry policy. Bearer auth is read from a
named environment variable at call time; an absent variable means the call
goes out unauthenticated. Token values are scrubbed from every error message.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence
from urllib.parse import urlparse

import requests

__all__ = [
    "ProviderConfig",
    "ProviderError",
    "TransportError",
    "ProviderStatusError",
    "ProviderTimeoutError",
    "ResponseFormatError",
    "CaptionResult",
    "embed_texts",
    "embed_image",
    "generate_caption",
    "HttpProvider",
    "MockProvider",
]

ADVISORY_MIN_WORDS = 300
ADVISORY_MAX_WORDS = 350
_BODY_EXCERPT_CHARS = 200


class ProviderError(RuntimeError):
    """Base class for provider call failures."""


class TransportError(ProviderError):
    """Connection-level failure before an HTTP status was received."""


class ProviderStatusError(ProviderError):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


class ProviderTimeoutError(ProviderError):
    """The call exceeded the configured timeout; no partial result exists."""


class ResponseFormatError(ProviderError):
    """The server answered 2xx but the payload violates the wire contract."""


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str
    timeout_ms: int = 30000
    auth_token_env: str | None = None
    model_hint: str | None = None

    def __post_init__(self) -> None:
        parsed = urlparse(self.endpoint)
        if not parsed.scheme or not parsed.netloc:
            raise ValueError(f"endpoint does not parse as a URL: {self.endpoint!r}")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")


@dataclass(frozen=True)
class CaptionResult:
    """Provider text verbatim plus a word-count advisory.

    length_advisory is True when the whitespace word count falls outside
    [300, 350]; the text itself is never altered.
    """

    text: str
    word_count: int
    length_advisory: bool


def _token(config: ProviderConfig) -> str | None:
    if not config.auth_token_env:
        return None
    return os.environ.get(config.auth_token_env) or None


def _scrub(message: str, token: str | None) -> str:
    # secrets must never surface in error text, even via reflected bodies
    if token and token in message:
        message = message.replace(token, "[redacted]")
    return message


def _post(config: ProviderConfig, path: str, payload: dict) -> dict:
    url = config.endpoint.rstrip("/") + path
    token = _token(config)
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    try:
        response = requests.post(
            url, json=payload, headers=headers, timeout=config.timeout_ms / 1000.0
        )
    except requests.Timeout as exc:
        raise ProviderTimeoutError(
            _scrub(
                f"request to {url} timed out after {config.timeout_ms} ms", token
            )
        ) from exc
    except requests.RequestException as exc:
        raise TransportError(
            _scrub(f"connection to {url} failed: {exc}", token)
        ) from exc
    if not 200 <= response.status_code < 300:
        excerpt = response.text[:_BODY_EXCERPT_CHARS]
        raise ProviderStatusError(
            response.status_code,
            _scrub(
                f"{url} returned HTTP {response.status_code}: {excerpt}", token
            ),
        )
    try:
        body = response.json()
    except ValueError as exc:
        raise ResponseFormatError(
            _scrub(f"{url} returned a non-JSON body", token)
        ) from exc
    if not isinstance(body, dict):
        raise ResponseFormatError(_scrub(f"{url} returned a non-object body", token))
    return body


def _check_vector(vector: object, dim: int, where: str) -> list[float]:
    if not isinstance(vector, list) or len(vector) != dim:
        got = len(vector) if isinstance(vector, list) else type(vector).__name__
        raise ResponseFormatError(
            f"{where}: expected a vector of dimension {dim}, got {got}"
        )
    return [float(v) for v in vector]


def embed_texts(config: ProviderConfig, texts: Sequence[str]) -> list[list[float]]:
    """Embed a batch of texts; one vector per input, order preserved."""
    if not texts:
        raise ValueError("embed_texts requires a non-empty batch")
    for i, text in enumerate(texts):
        if not isinstance(text, str):
            raise ValueError(f"batch index {i}: not a string")
    payload: dict = {"texts": list(texts)}
    if config.model_hint:
        payload["model"] = config.model_hint
    body = _post(config, "/v1/embed_text", payload)
    dim = body.get("dim")
    vectors = body.get("vectors")
    if not isinstance(dim, int) or not isinstance(vectors, list):
        raise ResponseFormatError("embed_text response missing dim/vectors")
    if len(vectors) != len(texts):
        raise ResponseFormatError(
            f"embed_text returned {len(vectors)} vectors for a batch of "
            f"{len(texts)} (first missing batch index {min(len(vectors), len(texts) - 1)})"
        )
    return [
        _check_vector(vec, dim, f"embed_text batch index {i}")
        for i, vec in enumerate(vectors)
    ]


def embed_image(
    config: ProviderConfig, image_bytes: bytes, format_hint: str | None = None
) -> list[float]:
    """Embed one image given as raw bytes."""
    if not image_bytes:
        raise ValueError("embed_image requires non-empty image bytes")
    payload: dict = {"image_b64": base64.b64encode(image_bytes).decode("ascii")}
    if format_hint:
        payload["format_hint"] = format_hint
    if config.model_hint:
        payload["model"] = config.model_hint
    body = _post(config, "/v1/embed_image", payload)
    dim = body.get("dim")
    if not isinstance(dim, int) or "vector" not in body:
        raise ResponseFormatError("embed_image response missing dim/vector")
    return _check_vector(body["vector"], dim, "embed_image")


def _caption_result(text: str) -> CaptionResult:
    words = len(text.split())
    advisory = not ADVISORY_MIN_WORDS <= words <= ADVISORY_MAX_WORDS
    return CaptionResult(text=text, word_count=words, length_advisory=advisory)


def generate_caption(
    config: ProviderConfig, prompt: str, max_words: int = ADVISORY_MAX_WORDS
) -> CaptionResult:
    """Request a caption for the assembled prompt; text is returned verbatim."""
    if not prompt or not prompt.strip():
        raise ValueError("generate_caption requires a non-empty prompt")
    body = _post(
        config, "/v1/caption", {"prompt": prompt, "max_words": max_words}
    )
    text = body.get("text")
    if not isinstance(text, str):
        raise ResponseFormatError("caption response missing text field")
    return _caption_result(text)


class Provider(Protocol):
    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]: ...

    def embed_image(
        self, image_bytes: bytes, format_hint: str | None = None
    ) -> list[float]: ...

    def generate_caption(
        self, prompt: str, max_words: int = ADVISORY_MAX_WORDS
    ) -> CaptionResult: ...


class HttpProvider:
    """Bound-config convenience wrapper over the module-level operations.

    Shareable across threads; every call is independent and blocking.
    """

    def __init__(self, config: ProviderConfig):
        self.config = config

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        return embed_texts(self.config, texts)

    def embed_image(
        self, image_bytes: bytes, format_hint: str | None = None
    ) -> list[float]:
        return embed_image(self.config, image_bytes, format_hint)

    def generate_caption(
        self, prompt: str, max_words: int = ADVISORY_MAX_WORDS
    ) -> CaptionResult:
        return generate_caption(self.config, prompt, max_words)


def _sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fallback_vector(key: bytes, dim: int) -> list[float]:
    """Deterministic unit vector derived from the input hash.

    Components come from counter-extended SHA-256 blocks mapped into
    [-1, 1); the result is L2-normalized. Bit-stable across runs and
    platforms because it never touches process RNG state.
    """
    values: list[float] = []
    counter = 0
    while len(values) < dim:
        block = hashlib.sha256(key + counter.to_bytes(4, "big")).digest()
        for (word,) in struct.iter_unpack(">I", block):
            values.append(word / 2147483648.0 - 1.0)
            if len(values) == dim:
                break
        counter += 1
    norm = math.sqrt(math.fsum(v * v for v in values))
    if norm == 0.0:  # unreachable in practice, defensive
        values = [1.0] + [0.0] * (dim - 1)
        norm = 1.0
    return [v / norm for v in values]


class MockProvider:
    """Bit-deterministic stand-in keyed by SHA-256 of the input.

    Planted vectors/captions come from a JSON file; anything unplanted gets
    a hash-derived unit vector (embeddings) or a stable stub (captions), so
    runs never depend on network or RNG state.
    """

    def __init__(
        self,
        dim: int,
        text_vectors: dict[str, list[float]] | None = None,
        image_vectors: dict[str, list[float]] | None = None,
        captions: dict[str, str] | None = None,
        default_caption: str | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.text_vectors = dict(text_vectors or {})
        self.image_vectors = dict(image_vectors or {})
        self.captions = dict(captions or {})
        self.default_caption = default_caption
        for name, table in (("text", self.text_vectors), ("image", self.image_vectors)):
            for key, vec in table.items():
                if len(vec) != dim:
                    raise ValueError(
                        f"{name} vector for {key[:12]} has dimension "
                        f"{len(vec)}, declared dimension is {dim}"
                    )

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            dim=raw["dim"],
            text_vectors=raw.get("text_vectors"),
            image_vectors=raw.get("image_vectors"),
            captions=raw.get("captions"),
            default_caption=raw.get("default_caption"),
        )

    @staticmethod
    def text_key(text: str) -> str:
        return _sha256_hex(text.encode("utf-8"))

    @staticmethod
    def image_key(image_bytes: bytes) -> str:
        return _sha256_hex(image_bytes)

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed_texts requires a non-empty batch")
        out: list[list[float]] = []
        for text in texts:
            key = self.text_key(text)
            planted = self.text_vectors.get(key)
            if planted is not None:
                out.append(list(planted))
            else:
                out.append(_fallback_vector(b"text:" + key.encode(), self.dim))
        return out

    def embed_image(
        self, image_bytes: bytes, format_hint: str | None = None
    ) -> list[float]:
        if not image_bytes:
            raise ValueError("embed_image requires non-empty image bytes")
        key = self.image_key(image_bytes)
        planted = self.image_vectors.get(key)
        if planted is not None:
            return list(planted)
        return _fallback_vector(b"image:" + key.encode(), self.dim)

    def generate_caption(
        self, prompt: str, max_words: int = ADVISORY_MAX_WORDS
    ) -> CaptionResult:
        if not prompt or not prompt.strip():
            raise ValueError("generate_caption requires a non-empty prompt")
        key = self.text_key(prompt)
        text = self.captions.get(key)
        if text is None:
            text = self.default_caption
        if text is None:
            text = f"Mock caption {key[:12]}."
        return _caption_result(text)
