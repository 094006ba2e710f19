"""Caption clients: an LLM API path and an offline template fallback.

Both produce one style description and one content description per
image id. The template client is pure string formatting over manifest
labels, so the pipeline runs with no network at all; the API client
speaks an OpenAI-style chat endpoint with vision input, retries with
exponential backoff, and degrades to the template per id when the API
keeps failing.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

log = logging.getLogger("sdec_extractor")

API_KEY_ENV = "SDEC_CAPTION_API_KEY"
PROMPT_VERSION = "captions_v1"


@dataclass(frozen=True)
class Description:
    id: str
    style_text: str
    content_text: str


def load_prompt(version: str = PROMPT_VERSION) -> str:
    return (
        resources.files("sdec_extractor")
        .joinpath(f"prompts/{version}.txt")
        .read_text(encoding="utf-8")
    )


class TemplateFallbackClient:
    """Deterministic descriptions built from manifest labels; no network."""

    def __init__(self, labels: Mapping[str, tuple[str, str]]):
        self._labels = labels

    def describe(self, ids: Sequence[str]) -> list[Description]:
        out = []
        for id_ in ids:
            artist, style = self._labels[id_]
            out.append(
                Description(
                    id=id_,
                    style_text=f"a painting in the style of {style}",
                    content_text=f"a depiction of the subject painted by {artist}",
                )
            )
        return out


class LlmApiClient:
    """OpenAI-style chat-with-vision captioner with per-id fallback.

    ``transport`` is injectable so tests can mock the wire; ``sleeper``
    is injectable so backoff costs nothing under test.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        fallback: TemplateFallbackClient,
        image_root: Path,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        max_retries: int = 3,
        sleeper: Callable[[float], None] = time.sleep,
        timeout: float = 30.0,
    ):
        self._base_url = base_url.rstrip("/")
        self._model = model
        self._fallback = fallback
        self._image_root = image_root
        self._key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = httpx.Client(transport=transport, timeout=timeout)
        self._retries = max_retries
        self._sleep = sleeper
        self._prompt = load_prompt()

    def _payload(self, image_path: Path) -> dict:
        encoded = base64.b64encode(image_path.read_bytes()).decode("ascii")
        suffix = image_path.suffix.lstrip(".").lower() or "png"
        return {
            "model": self._model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": self._prompt},
                        {
                            "type": "image_url",
                            "image_url": {"url": f"data:image/{suffix};base64,{encoded}"},
                        },
                    ],
                }
            ],
        }

    def _describe_one(self, id_: str) -> Description:
        payload = self._payload(self._image_root / id_)
        last_error: Exception | None = None
        for attempt in range(self._retries):
            try:
                response = self._client.post(
                    f"{self._base_url}/chat/completions",
                    json=payload,
                    headers={"Authorization": f"Bearer {self._key}"},
                )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                parsed = json.loads(content)
                style = str(parsed["style_text"]).strip()
                subject = str(parsed["content_text"]).strip()
                if not style or not subject:
                    raise ValueError("empty description fields")
                return Description(id=id_, style_text=style, content_text=subject)
            except (httpx.HTTPError, KeyError, ValueError, json.JSONDecodeError) as e:
                last_error = e
                if attempt < self._retries - 1:
                    self._sleep(0.5 * 2**attempt)
        log.warning("caption API failed for %s (%s); using template fallback", id_, last_error)
        return self._fallback.describe([id_])[0]

    def describe(self, ids: Sequence[str]) -> list[Description]:
        return [self._describe_one(i) for i in ids]

    def close(self) -> None:
        self._client.close()
