"""JSON run configuration: strict parsing (unknown keys rejected), path
validation up front, and resolved-snapshot serialization."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .models import DEPTHS, HEADS, ModelSpec
from .trainer import TrainConfig


@dataclass
class DataConfig:
    """Where samples come from: a synthetic recipe or an on-disk dataset."""
    kind: str = "synthetic"            # "synthetic" | "directory"
    path: str | None = None            # for kind == "directory"
    size: int = 64
    n_classes: int = 4
    n_images: int = 16
    channels: int = 3
    shapes_per_class: int = 3
    seed: int = 0
    max_extent: dict = field(default_factory=dict)
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.kind not in ("synthetic", "directory"):
            raise ValueError(f"data.kind must be 'synthetic' or 'directory', got {self.kind!r}")
        if self.kind == "directory" and not self.path:
            raise ValueError("data.kind 'directory' requires data.path")


@dataclass
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig | None = None
    out_dir: str = "runs/out"


_SECTION_TYPES = {"model": ModelSpec, "train": TrainConfig,
                  "data": DataConfig, "augment": AugmentConfig}

_TUPLE_FIELDS = {"betas", "scale_range", "split"}

# Runtime-only fields that never come from the config file.
_NOT_IN_FILE = {"train": {"augment"}}


def _build_section(cls, payload: dict, section: str):
    if not isinstance(payload, dict):
        raise ValueError(f"config section '{section}' must be an object")
    allowed = set(cls.__dataclass_fields__) - _NOT_IN_FILE.get(section, set())
    unknown = set(payload) - allowed
    if unknown:
        raise ValueError(f"unknown keys in config section '{section}': "
                         f"{sorted(unknown)} (allowed: {sorted(allowed)})")
    kwargs = {}
    for key, value in payload.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        if key == "max_extent" and isinstance(value, dict):
            value = {int(k): int(v) for k, v in value.items()}
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(document: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON document, rejecting unknown keys."""
    if not isinstance(document, dict):
        raise ValueError("config root must be a JSON object")
    known = {"model", "train", "data", "augment", "out_dir"}
    unknown = set(document) - known
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)} "
                         f"(allowed: {sorted(known)})")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        if name in document and document[name] is not None:
            sections[name] = _build_section(cls, document[name], name)
        elif name == "augment":
            sections[name] = None
        else:
            sections[name] = cls()
    out_dir = document.get("out_dir", "runs/out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ValueError("out_dir must be a non-empty string")
    return RunConfig(out_dir=out_dir, **sections)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    with open(p) as fh:
        try:
            document = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config is not valid JSON: {exc}") from exc
    cfg = parse_config(document)
    if cfg.data.kind == "directory":
        root = Path(cfg.data.path)
        if not root.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {root}")
        if not (root / "manifest.json").is_file():
            raise FileNotFoundError(f"dataset manifest not found: {root / 'manifest.json'}")
    return cfg


def apply_overrides(cfg: RunConfig, *, seed=None, epochs=None, model=None,
                    head=None, loss=None, out_dir=None) -> RunConfig:
    """Flat CLI flags win over file values; returns a rebuilt RunConfig."""
    model_kw = asdict(cfg.model)
    train_kw = asdict(cfg.train)
    train_kw["betas"] = tuple(train_kw["betas"])
    train_kw["augment"] = cfg.train.augment    # keep the object, not a dict
    if seed is not None:
        train_kw["seed"] = seed
    if epochs is not None:
        train_kw["max_epochs"] = epochs
    if loss is not None:
        train_kw["loss_id"] = loss
    if model is not None:
        if model not in DEPTHS:
            raise ValueError(f"unknown model depth {model!r}; choose from {DEPTHS}")
        model_kw["depth"] = model
    if head is not None:
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}; choose from {HEADS}")
        model_kw["head"] = head
    aug = cfg.augment
    return RunConfig(model=ModelSpec(**model_kw), train=TrainConfig(**train_kw),
                     data=cfg.data, augment=aug,
                     out_dir=out_dir if out_dir is not None else cfg.out_dir)


def snapshot(cfg: RunConfig) -> dict:
    """JSON-serializable resolved view of a RunConfig.

    The result is itself a valid config document, so a run can be repeated
    from the snapshot it wrote.  train.augment is runtime-only state (the
    top-level augment section is its source of truth) and stays out.
    """
    doc = {
        "model": asdict(cfg.model),
        "train": asdict(cfg.train),
        "data": asdict(cfg.data),
        "augment": asdict(cfg.augment) if cfg.augment is not None else None,
        "out_dir": cfg.out_dir,
    }
    doc["train"].pop("augment", None)
    doc["data"]["max_extent"] = {str(k): v for k, v in cfg.data.max_extent.items()}
    return doc


def write_snapshot(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(snapshot(cfg), fh, indent=2, sort_keys=True)
