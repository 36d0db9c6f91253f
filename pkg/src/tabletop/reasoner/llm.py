"""Reasoner backed by a chat-completions style JSON HTTP endpoint.

Credentials come only from the environment:

* ``TABLETOP_LLM_URL``: full URL of the chat-completions endpoint
* ``TABLETOP_LLM_API_KEY``: bearer token
* ``TABLETOP_LLM_MODEL``: model name sent in the request
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Callable, Mapping

from ..errors import AuthError, ProviderError
from ..layout import LayoutScene, scene_to_dict
from .base import ObjectDraft, SceneDiff, StageProposal, StageRequest

log = logging.getLogger(__name__)

ENV_URL = "TABLETOP_LLM_URL"
ENV_KEY = "TABLETOP_LLM_API_KEY"
ENV_MODEL = "TABLETOP_LLM_MODEL"

OBJECT_SCHEMA = ('{"objects": [{"description": str, "size": [sx, sy, sz], '
                 '"position": [x, y, z], "yaw": float}]}')
TEMPLATES = {"t": "stage_task.txt", "B": "stage_important.txt", "b": "stage_secondary.txt"}

# transport(url, headers, body) -> (status, text); raises OSError on network failure
Transport = Callable[[str, Mapping[str, str], bytes, float], tuple[int, str]]


def urllib_transport(url: str, headers: Mapping[str, str], body: bytes, timeout: float) -> tuple[int, str]:
    req = urllib.request.Request(url, data=body, headers=dict(headers), method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read().decode("utf-8", "replace")
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read().decode("utf-8", "replace")


def load_template(name: str) -> Template:
    text = resources.files("tabletop.reasoner").joinpath("prompts", name).read_text()
    lines = [ln for ln in text.splitlines() if not ln.startswith("# prompt-version")]
    return Template("\n".join(lines).strip() + "\n")


def extract_json(text: str):
    """Parse the outermost JSON object or array embedded in ``text``."""
    starts = [i for i in (text.find("{"), text.find("[")) if i >= 0]
    if not starts:
        raise ValueError("no JSON object in reply")
    start = min(starts)
    close = "}" if text[start] == "{" else "]"
    end = text.rfind(close)
    if end < start:
        raise ValueError("unterminated JSON in reply")
    return json.loads(text[start:end + 1])


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    api_key: str
    model: str = "default"
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 1.0
    max_in_flight: int = 4
    temperature: float = 0.0

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **overrides) -> "EndpointConfig":
        env = os.environ if env is None else env
        url, key = env.get(ENV_URL), env.get(ENV_KEY)
        if not url or not key:
            raise AuthError(f"set {ENV_URL} and {ENV_KEY} to use the LLM reasoner")
        return cls(url, key, env.get(ENV_MODEL, "default"), **overrides)


class LLMReasoner:
    def __init__(self, config: EndpointConfig, transport: Transport = urllib_transport,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.transport = transport
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    # -- transport -------------------------------------------------------

    def _post(self, messages: list[dict]) -> str:
        cfg = self.config
        body = json.dumps({"model": cfg.model, "messages": messages, "temperature": cfg.temperature}).encode()
        headers = {"Content-Type": "application/json", "Authorization": f"Bearer {cfg.api_key}"}
        last = None
        for attempt in range(cfg.attempts):
            if attempt:
                self.sleep(cfg.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    status, text = self.transport(cfg.url, headers, body, cfg.timeout)
            except OSError as exc:
                last = ProviderError(f"transport error: {exc}", raw=None)
                log.warning("LLM request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if status in (401, 403):
                raise AuthError(f"endpoint rejected the credentials (HTTP {status})", raw=text)
            if status == 429 or status >= 500:
                last = ProviderError(f"HTTP {status}", raw=text)
                log.warning("LLM endpoint returned HTTP %d (attempt %d)", status, attempt + 1)
                continue
            if status != 200:
                raise ProviderError(f"HTTP {status}", raw=text)
            try:
                return json.loads(text)["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"unexpected response envelope: {exc}", raw=text) from exc
        raise last

    def _ask_json(self, prompt: str):
        messages = [{"role": "user", "content": prompt}]
        reply = self._post(messages)
        try:
            return extract_json(reply), reply
        except ValueError as exc:
            repair = load_template("repair.txt").substitute(error=str(exc))
            messages += [{"role": "assistant", "content": reply}, {"role": "user", "content": repair}]
            second = self._post(messages)
            try:
                return extract_json(second), second
            except ValueError as exc2:
                raise ProviderError(f"reply is not valid JSON after repair: {exc2}", raw=[reply, second]) from exc2

    # -- reasoner interface ---------------------------------------------

    def render(self, req: StageRequest) -> str:
        ctx = json.dumps(scene_to_dict(req.context)["objects"], indent=1)
        return load_template(TEMPLATES[req.stage]).substitute(
            top=req.table.top_height, width=req.table.width, depth=req.table.depth,
            instruction=req.instruction, context=ctx, schema=OBJECT_SCHEMA)

    def propose(self, req: StageRequest) -> StageProposal:
        doc, raw = self._ask_json(self.render(req))
        items = doc.get("objects", []) if isinstance(doc, dict) else doc
        if not isinstance(items, list):
            raise ProviderError("reply has no object list", raw=raw)
        return StageProposal(tuple(ObjectDraft.from_dict(d) for d in items if isinstance(d, dict)), raw=raw)

    def propose_edit(self, scene: LayoutScene, text: str) -> SceneDiff:
        prompt = load_template("edit.txt").substitute(
            context=json.dumps(scene_to_dict(scene)["objects"], indent=1), instruction=text, schema=OBJECT_SCHEMA)
        doc, raw = self._ask_json(prompt)
        if not isinstance(doc, dict):
            raise ProviderError("edit reply must be a JSON object", raw=raw)
        try:
            return SceneDiff(tuple(ObjectDraft.from_dict(d) for d in doc.get("add", [])),
                             tuple(int(i) for i in doc.get("remove", [])),
                             {int(k): str(v) for k, v in doc.get("redescribe", {}).items()}, raw=raw)
        except (TypeError, ValueError) as exc:
            raise ProviderError(f"malformed edit reply: {exc}", raw=raw) from exc
