"""Text rendering: a deterministic template filler and an LLM-backed renderer.

The deterministic renderer writes each concept value as ``[Label: value]``.
That marker grammar is what the gold concept predictor, the oracle model and
the bag-of-markers embedder read back, so it has to stay unambiguous: labels
never contain ``:`` or brackets, and personas never contain brackets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .dgp import PERSONA_SLOT, SLOT_RE, DgpBundle, GroundingAsset
from .errors import (
    ConfigError,
    EmptyCompletion,
    EndpointUnreachable,
    MalformedResponse,
    MarkerParseError,
    MissingSlot,
    NonZeroTemperature,
    RemoteServiceError,
)
from .scm import ConceptAssignment, ScmGraph, canonical_json

log = logging.getLogger(__name__)

MARKER_RE = re.compile(r"\[([^\[\]:]+): ([^\[\]]+)\]")
DETERMINISTIC_ID = "deterministic-v1"


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def marker(label: str, value: str) -> str:
    return f"[{label}: {value}]"


@dataclass(frozen=True)
class RenderedText:
    text: str
    renderer_id: str
    prompt_hash: str
    cache_hit: bool = False


def request_key(
    bundle: DgpBundle, assignment: ConceptAssignment | Mapping[str, int], persona_id: str, template_id: str,
    renderer_id: str,
) -> str:
    values = assignment.values if isinstance(assignment, ConceptAssignment) else assignment
    payload = {
        "dataset": bundle.name,
        "assignment": {k: int(v) for k, v in values.items()},
        "persona_id": persona_id,
        "template_id": template_id,
        "prompt_version": bundle.prompt_version,
        "renderer_id": renderer_id,
    }
    return sha256_hex(canonical_json(payload))


def _fill(template: GroundingAsset, fill: Mapping[str, str], graph: ScmGraph) -> str:
    slots = template.slots()
    for name in graph.names:
        n = slots.count(name)
        if n != 1:
            raise MissingSlot(f"template {template.id}: concept {name} has {n} slots, expected exactly 1")
    return SLOT_RE.sub(lambda m: fill.get(m.group(1), m.group(0)), template.body)


def render_deterministic(
    bundle: DgpBundle, assignment: ConceptAssignment | Mapping[str, int], persona: GroundingAsset,
    template: GroundingAsset,
) -> RenderedText:
    values = assignment.values if isinstance(assignment, ConceptAssignment) else assignment
    g = bundle.graph
    fill = {c.name: marker(c.label, c.verbalize(values[c.name])) for c in g.concepts}
    fill[PERSONA_SLOT] = persona.body
    text = _fill(template, fill, g)
    return RenderedText(text, DETERMINISTIC_ID, request_key(bundle, values, persona.id, template.id, DETERMINISTIC_ID))


def parse_markers(graph: ScmGraph, text: str, require_all: bool = True) -> dict[str, int]:
    """Recover concept codes from ``[Label: value]`` markers."""
    by_label = {c.label: c for c in graph.concepts}
    out: dict[str, int] = {}
    for label, value in MARKER_RE.findall(text):
        c = by_label.get(label)
        if c is None:
            raise MarkerParseError(f"unknown concept label {label!r}")
        try:
            code = c.values.index(value)
        except ValueError:
            raise MarkerParseError(f"{label}: unknown value {value!r}") from None
        if c.name in out:
            raise MarkerParseError(f"{label} appears more than once")
        out[c.name] = code
    if require_all:
        missing = [n for n in graph.names if n not in out]
        if missing:
            raise MarkerParseError(f"no marker for concepts {missing}")
    return out


class DeterministicRenderer:
    renderer_id = DETERMINISTIC_ID

    def __init__(self, bundle: DgpBundle):
        self.bundle = bundle

    def render(self, assignment, persona: GroundingAsset, template: GroundingAsset) -> RenderedText:
        return render_deterministic(self.bundle, assignment, persona, template)


# --- chat-completion client


class ChatClient:
    """Minimal OpenAI-compatible ``/chat/completions`` client with retries.

    Only zero-temperature decoding is accepted: counterfactual texts are only
    valid when generation is a fixed function of the prompt.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = 0.0,
        api_key_env: str = "SCMBENCH_API_KEY",
        max_retries: int = 4,
        backoff: float = 0.5,
        max_backoff: float = 8.0,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if temperature != 0:
            raise NonZeroTemperature(f"temperature must be 0, got {temperature}")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = 0.0
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_backoff = max_backoff
        self.sleep = sleep
        headers = {}
        token = os.environ.get(api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._http = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    @property
    def client_id(self) -> str:
        return f"chat:{self.model}"

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        body = {"model": self.model, "messages": list(messages), "temperature": self.temperature}
        data = post_json(self._http, f"{self.base_url}/chat/completions", body, self.max_retries, self.backoff,
                         self.max_backoff, self.sleep)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse(f"unexpected completion payload: {str(data)[:200]}") from None
        if not isinstance(content, str) or not content.strip():
            raise EmptyCompletion("endpoint returned an empty completion")
        return content


def post_json(
    http: httpx.Client, url: str, body, max_retries: int, backoff: float, max_backoff: float,
    sleep: Callable[[float], None],
):
    """POST with bounded exponential backoff on transport errors, 429 and 5xx."""
    last = "no attempt"
    for attempt in range(max_retries + 1):
        if attempt:
            sleep(min(max_backoff, backoff * 2 ** (attempt - 1)))
        try:
            resp = http.post(url, json=body)
        except httpx.TransportError as e:
            last = f"{type(e).__name__}: {e}"
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last = f"HTTP {resp.status_code}"
            continue
        if resp.status_code >= 400:
            raise RemoteServiceError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except json.JSONDecodeError:
            raise MalformedResponse(f"{url}: response is not JSON") from None
    raise EndpointUnreachable(f"{url}: giving up after {max_retries + 1} attempts ({last})")


# --- disk cache


class DiskCache:
    """Content-addressed text cache: ``<root>/<namespace>/<key>.txt``.

    Writes are atomic (temp file + rename). ``get_or_compute`` holds a per-key
    lock, so concurrent callers asking for one key trigger one computation.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._guard = threading.Lock()
        self._locks: dict[tuple[str, str], threading.Lock] = {}

    def path(self, namespace: str, key: str) -> Path:
        return self.root / namespace / f"{key}.txt"

    def get(self, namespace: str, key: str) -> str | None:
        p = self.path(namespace, key)
        if p.is_file():
            return p.read_text(encoding="utf-8")
        return None

    def put(self, namespace: str, key: str, text: str) -> None:
        p = self.path(namespace, key)
        atomic_write(p, text)

    def _lock(self, namespace: str, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault((namespace, key), threading.Lock())

    def get_or_compute(self, namespace: str, key: str, compute: Callable[[], str]) -> tuple[str, bool]:
        hit = self.get(namespace, key)
        if hit is not None:
            return hit, True
        with self._lock(namespace, key):
            hit = self.get(namespace, key)
            if hit is not None:
                return hit, True
            text = compute()
            self.put(namespace, key, text)
            return text, False

    def write_manifest(self, namespace: str, info: Mapping) -> None:
        p = self.root / namespace / "manifest.json"
        with self._guard:
            current = json.loads(p.read_text()) if p.is_file() else {}
            if current != dict(info):
                current.update(info)
                atomic_write(p, json.dumps(current, indent=2, sort_keys=True))


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- LLM renderer


def _details(bundle: DgpBundle, values: Mapping[str, int]) -> str:
    return "; ".join(f"{c.label}: {c.verbalize(values[c.name])}" for c in bundle.graph.concepts)


def _symptoms(bundle: DgpBundle, values: Mapping[str, int]) -> str:
    g = bundle.graph
    items = [
        f"{c.label} ({c.verbalize(values[c.name])})"
        for c in g.concepts
        if c.name != g.outcome and values[c.name] > 0
    ]
    return "[" + ", ".join(items) + "]"


def _template_cues(bundle: DgpBundle, template: GroundingAsset) -> str:
    labels = {c.name: f"<{c.label}>" for c in bundle.graph.concepts}
    labels[PERSONA_SLOT] = "<persona>"
    return SLOT_RE.sub(lambda m: labels.get(m.group(1), m.group(0)), template.body)


def generation_messages(
    bundle: DgpBundle, assignment: ConceptAssignment | Mapping[str, int], persona: GroundingAsset,
    template: GroundingAsset,
) -> list[dict[str, str]]:
    """System + user messages for the dataset's generation prompt."""
    values = assignment.values if isinstance(assignment, ConceptAssignment) else assignment
    if bundle.name == "violence":
        plain = {c.name: c.verbalize(values[c.name]) for c in bundle.graph.concepts}
        plain[PERSONA_SLOT] = ""
        slots = {
            "nurse_details": _details(bundle, values),
            "nurses_persona": persona.body,
            "dialogue_draft": _fill(template, plain, bundle.graph),
        }
    elif bundle.name == "disease":
        slots = {
            "reddit_template": _template_cues(bundle, template),
            "verbal_symptoms_list": _symptoms(bundle, values),
            "persona_info": persona.body,
        }
    else:
        slots = {
            "cv_template": _template_cues(bundle, template),
            "candidate_info": _details(bundle, values),
            "persona_details": persona.body,
        }
    return [
        {"role": "system", "content": bundle.prompts["generation_system"].strip()},
        {"role": "user", "content": bundle.prompts["generation_user"].format_map(slots).strip()},
    ]


class LlmRenderer:
    """Renders through a chat endpoint; every response is persisted before use.

    The cache is consulted before any request, so a warm cache works with the
    endpoint down and a stored pair member is never regenerated.
    """

    def __init__(self, bundle: DgpBundle, client: ChatClient, cache: DiskCache):
        self.bundle = bundle
        self.client = client
        self.cache = cache
        self.renderer_id = f"llm:{client.model}"
        cache.write_manifest(bundle.name, {"renderer_id": self.renderer_id, "prompt_version": bundle.prompt_version})

    def render(self, assignment, persona: GroundingAsset, template: GroundingAsset) -> RenderedText:
        key = request_key(self.bundle, assignment, persona.id, template.id, self.renderer_id)
        text, hit = self.cache.get_or_compute(
            self.bundle.name, key,
            lambda: self.client.complete(generation_messages(self.bundle, assignment, persona, template)),
        )
        return RenderedText(text, self.renderer_id, key, hit)


def make_renderer(kind: str, bundle: DgpBundle, client: ChatClient | None = None, cache: DiskCache | None = None):
    if kind == "deterministic":
        return DeterministicRenderer(bundle)
    if kind == "llm":
        if client is None or cache is None:
            raise ConfigError("the llm renderer needs a chat client and a cache directory")
        return LlmRenderer(bundle, client, cache)
    raise ConfigError(f"unknown renderer {kind!r}")
