"""Chat-completions-with-images HTTP client shared by the captioner and the judge.

Request body follows the widely implemented schema::

    {"model": ..., "messages": [{"role": "user", "content": [
        {"type": "text", "text": PROMPT},
        {"type": "image_url", "image_url": {"url": "data:image/png;base64,..."}}, ...]}]}

The bearer token is read from an environment variable (``TALC_API_TOKEN`` by
default), never from config files.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, TransportError
from .videoio import encode_png, to_uint8

log = logging.getLogger(__name__)

TOKEN_ENV = "TALC_API_TOKEN"
TRANSIENT_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str
    model: str = "default"
    token_env: str = TOKEN_ENV
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    temperature: float = 0.0

    def __post_init__(self):
        if not self.endpoint:
            raise ConfigError("no endpoint configured for the remote model")
        if self.max_retries < 0 or self.backoff < 0:
            raise ConfigError("max_retries and backoff must be >= 0")


def image_data_url(frame: np.ndarray) -> str:
    """(3, H, W) frame in [-1, 1] -> PNG data URL."""
    png = encode_png(to_uint8(np.asarray(frame)))
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


def build_request_body(prompt: str, frames: Sequence[np.ndarray], cfg: ClientConfig) -> dict:
    content = [{"type": "text", "text": prompt}]
    content += [{"type": "image_url", "image_url": {"url": image_data_url(f)}} for f in frames]
    return {"model": cfg.model, "temperature": cfg.temperature,
            "messages": [{"role": "user", "content": content}]}


def extract_text(payload: dict, raw: str) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ParseError("response has no choices[0].message.content", raw) from None
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise ParseError("message content is not text", raw)
    return content


def chat(prompt: str, frames: Sequence[np.ndarray], cfg: ClientConfig,
         sleep: Callable[[float], None] = time.sleep) -> str:
    """One chat request with images; returns the reply text.

    Transient failures (connection errors, 408/429/5xx) are retried up to
    ``cfg.max_retries`` times with delays ``backoff * 2**k``.
    """
    token = os.environ.get(cfg.token_env, "")
    body = json.dumps(build_request_body(prompt, frames, cfg)).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    attempt = 0
    while True:
        req = urllib.request.Request(cfg.endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
                raw = resp.read().decode("utf-8", errors="replace")
            break
        except urllib.error.HTTPError as exc:
            if exc.code not in TRANSIENT_STATUS:
                detail = "authentication failed" if exc.code in (401, 403) else "request rejected"
                raise TransportError(f"{cfg.endpoint}: HTTP {exc.code} ({detail})") from exc
            err = f"HTTP {exc.code}"
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            err = str(getattr(exc, "reason", exc))
        if attempt >= cfg.max_retries:
            raise TransportError(f"{cfg.endpoint}: giving up after {attempt + 1} attempts ({err})")
        delay = cfg.backoff * 2 ** attempt
        log.warning("transient failure from %s (%s); retrying in %.1fs", cfg.endpoint, err, delay)
        sleep(delay)
        attempt += 1
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError:
        raise ParseError("response is not JSON", raw) from None
    return extract_text(payload, raw)
