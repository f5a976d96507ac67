"""Built-in data-generating processes: graph, verbalizer, grounding pools, prompts."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import EmptyPool, MalformedAssetFile, UnknownDataset
from .scm import ScmGraph, draw_index, load_graph

BUILTIN = ("violence", "disease", "cv")
ASSET_ROOT = Path(__file__).parent / "assets"
SLOT_RE = re.compile(r"\{(\w+)\}")
PERSONA_SLOT = "persona"
PROMPT_NAMES = (
    "generation_system",
    "generation_user",
    "cf_only_change",
    "cf_fix_confounders",
    "cf_fix_all",
    "cf_mediators_confounders",
)


@dataclass(frozen=True)
class GroundingAsset:
    id: str
    kind: str  # "persona" | "template"
    body: str
    dataset: str

    def slots(self) -> list[str]:
        return SLOT_RE.findall(self.body)


@dataclass(frozen=True)
class DgpBundle:
    name: str
    graph: ScmGraph
    persona_pool: tuple[GroundingAsset, ...]
    template_pool: tuple[GroundingAsset, ...]
    prompts: Mapping[str, str] = field(default_factory=dict)
    prompt_version: str = "1"

    @property
    def verbalizer(self) -> dict[tuple[str, int], str]:
        return {(c.name, k): c.verbalize(k) for c in self.graph.concepts for k in c.codes}

    def verbalize(self, concept: str, code: int) -> str:
        return self.graph.concept(concept).verbalize(code)

    def persona(self, asset_id: str) -> GroundingAsset:
        return _lookup(self.persona_pool, asset_id)

    def template(self, asset_id: str) -> GroundingAsset:
        return _lookup(self.template_pool, asset_id)

    @property
    def persona_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.persona_pool)

    @property
    def template_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.template_pool)


def _lookup(pool, asset_id):
    for a in pool:
        if a.id == asset_id:
            return a
    raise MalformedAssetFile(f"no grounding asset with id {asset_id!r}")


def _read_pool(directory: Path, kind: str, dataset: str) -> list[GroundingAsset]:
    if not directory.is_dir():
        return []
    pool = []
    for path in sorted(directory.glob("*.txt")):
        try:
            body = path.read_text(encoding="utf-8").strip()
        except UnicodeDecodeError as e:
            raise MalformedAssetFile(f"{path}: not UTF-8 ({e})") from None
        if not body:
            raise MalformedAssetFile(f"{path}: empty {kind}")
        pool.append(GroundingAsset(path.stem, kind, body, dataset))
    return pool


def _check_pool(pool: list[GroundingAsset], graph: ScmGraph) -> None:
    allowed = set(graph.names) | {PERSONA_SLOT}
    for a in pool:
        if a.kind == "persona":
            if "[" in a.body or "]" in a.body or SLOT_RE.search(a.body):
                raise MalformedAssetFile(f"persona {a.id}: brackets and slots are reserved for templates")
        else:
            unknown = set(a.slots()) - allowed
            if unknown:
                raise MalformedAssetFile(f"template {a.id}: unknown slots {sorted(unknown)}")


def _read_prompts(directory: Path) -> dict[str, str]:
    prompts = {}
    if directory.is_dir():
        for path in sorted(directory.glob("*.txt")):
            prompts[path.stem] = path.read_text(encoding="utf-8")
    return prompts


def load_builtin(name: str, asset_root: str | Path | None = None) -> DgpBundle:
    """Load one of the bundled datasets.

    ``asset_root`` points at a directory laid out like the bundled one
    (``<root>/<name>/graph.json``, ``personas/``, ``templates/``, ``prompts/``).
    Pools or prompts missing there fall back to the bundled synthetic ones.
    """
    if name not in BUILTIN:
        raise UnknownDataset(f"unknown dataset {name!r}; choose from {', '.join(BUILTIN)}")
    bundled = ASSET_ROOT / name
    root = Path(asset_root) / name if asset_root is not None else bundled
    graph_path = root / "graph.json"
    if not graph_path.is_file():
        raise MalformedAssetFile(f"{graph_path} not found")
    try:
        graph = load_graph(graph_path)
    except json.JSONDecodeError as e:
        raise MalformedAssetFile(f"{graph_path}: invalid JSON ({e})") from None

    personas = _read_pool(root / "personas", "persona", name) or _read_pool(bundled / "personas", "persona", name)
    templates = _read_pool(root / "templates", "template", name) or _read_pool(
        bundled / "templates", "template", name
    )
    _check_pool(personas, graph)
    _check_pool(templates, graph)

    prompts = _read_prompts(bundled / "prompts")
    prompts.update(_read_prompts(root / "prompts"))
    missing = [p for p in PROMPT_NAMES if p not in prompts]
    if missing:
        raise MalformedAssetFile(f"{name}: missing prompt files {missing}")

    return DgpBundle(
        name=name,
        graph=graph,
        persona_pool=tuple(personas),
        template_pool=tuple(templates),
        prompts=prompts,
        prompt_version=str(graph.spec.get("prompt_version", "1")),
    )


def sample_grounding(bundle: DgpBundle, rng: np.random.Generator) -> tuple[GroundingAsset, GroundingAsset]:
    """Uniform, independent persona and template draws."""
    if not bundle.persona_pool or not bundle.template_pool:
        raise EmptyPool(f"{bundle.name}: persona and template pools must be non-empty")
    persona = bundle.persona_pool[draw_index(rng, len(bundle.persona_pool))]
    template = bundle.template_pool[draw_index(rng, len(bundle.template_pool))]
    return persona, template
