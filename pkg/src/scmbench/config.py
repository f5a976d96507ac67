"""Run configuration shared by the CLI stages."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dgp import BUILTIN
from .errors import ConfigError
from .explainers import MATCH_METHODS, STRATEGIES
from .metrics import TRUE_EFFECT_MODES
from .pipeline import SPLITS
from .render import atomic_write

METHODS = MATCH_METHODS + ("cfgen",)
RENDERERS = ("deterministic", "llm")
EDITORS = ("scm", "llm")


def parse_sizes(text: str) -> dict[str, int]:
    """``"a,b,c,d"`` -> sizes of model_train, model_test, method_train, interventional."""
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != len(SPLITS):
        raise ConfigError(f"--sizes needs {len(SPLITS)} comma-separated counts ({','.join(SPLITS)}), got {text!r}")
    try:
        sizes = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--sizes must be integers, got {text!r}") from None
    if any(s < 0 for s in sizes):
        raise ConfigError(f"--sizes must be non-negative, got {text!r}")
    return dict(zip(SPLITS, sizes))


def parse_list(text: str | None) -> list[str]:
    return [p.strip() for p in (text or "").split(",") if p.strip()]


@dataclass
class RunConfig:
    out: str
    dataset: str | None = None
    sizes: dict = field(default_factory=lambda: dict(zip(SPLITS, (2000, 500, 500, 300))))
    seed: int = 0
    cf_seed: int | None = None
    n_changes: int = 3
    endpoints: bool = True
    renderer: str = "deterministic"
    asset_root: str | None = None
    llm_url: str | None = None
    llm_model: str | None = None
    cache_dir: str | None = None
    model: str = "oracle"
    embedder: str = "markers"
    concept_predictor: str = "gold"
    methods: list = field(default_factory=list)
    k: int = 3
    method_seed: int = 0
    strategy: str = "mediators_confounders"
    editor: str = "scm"
    samples: int = 1_000_000
    te_mode: str = "individual"
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if self.dataset is not None and self.dataset not in BUILTIN:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {BUILTIN}")
        if set(self.sizes) != set(SPLITS) or any(int(v) < 0 for v in self.sizes.values()):
            raise ConfigError(f"sizes must cover {SPLITS} with non-negative counts")
        if self.renderer not in RENDERERS:
            raise ConfigError(f"unknown renderer {self.renderer!r}; choose from {RENDERERS}")
        if self.renderer == "llm" and not (self.llm_url and self.llm_model and self.cache_dir):
            raise ConfigError("the llm renderer needs --llm-url, --llm-model and --cache-dir")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {METHODS}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.editor not in EDITORS:
            raise ConfigError(f"unknown editor {self.editor!r}; choose from {EDITORS}")
        if "cfgen" in self.methods and self.editor == "llm" and not (self.llm_url and self.llm_model):
            raise ConfigError("cfgen with the llm editor needs --llm-url and --llm-model")
        if self.te_mode not in TRUE_EFFECT_MODES:
            raise ConfigError(f"unknown true-effect mode {self.te_mode!r}")
        for name in ("k", "n_changes", "samples", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        # the run directory is implied by where the file lives
        body = {k: v for k, v in self.to_json().items() if k != "out"}
        atomic_write(Path(path), json.dumps(body, indent=2, sort_keys=True) + "\n")
