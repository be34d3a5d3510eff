"""Model assembly: the full parameter set, its trainable/frozen partition,
parameter accounting, and flat-file checkpoints."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .backbone import BackboneConfig, BackboneState, build_backbone
from .branches import (
    Adapter,
    EpiProjector,
    GATING_MODES,
    MobProjector,
    TOKENIZER_MODES,
    init_adapter,
    init_epi_projector,
    init_mob_projector,
)
from .prompts import PromptParams, init_prompts
from .serialize import CheckpointError, load_tensors, save_tensors
from .tensor import Parameter

ADJACENCY_MODES = ("predicted", "window_average", "last")


class EmptyModelError(ValueError):
    """Parameter accounting on a model with no parameters at all."""


@dataclass(frozen=True)
class ModelConfig:
    n_regions: int
    w: int = 3
    width: int = 64
    mob_hidden: int = 0  # 0 -> use width
    tokenizer_mode: str = "graph"
    gating_mode: str = "gated"
    adjacency_mode: str = "predicted"
    mobility_enabled: bool = True
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_regions < 1 or self.w < 1 or self.width < 1:
            raise ValueError("n_regions, w, and width must all be positive")
        if self.tokenizer_mode not in TOKENIZER_MODES:
            raise ValueError(f"unknown tokenizer mode {self.tokenizer_mode!r}")
        if self.gating_mode not in GATING_MODES:
            raise ValueError(f"unknown gating mode {self.gating_mode!r}")
        if self.adjacency_mode not in ADJACENCY_MODES:
            raise ValueError(f"unknown adjacency mode {self.adjacency_mode!r}")


@dataclass
class ModelState:
    config: ModelConfig
    epi_proj: EpiProjector
    mob_proj: MobProjector
    epi_adapter: Adapter
    mob_adapter: Adapter
    prompts: PromptParams
    backbone: BackboneState

    def parameters(self) -> list[Parameter]:
        out = (
            self.epi_proj.parameters()
            + self.mob_proj.parameters()
            + self.epi_adapter.parameters()
            + self.mob_adapter.parameters()
            + self.prompts.parameters()
            + self.backbone.parameters()
        )
        return out

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def build_model(cfg: ModelConfig, backbone_cfg: BackboneConfig, backbone_weights=None) -> ModelState:
    """Construct all branch parameters (seeded) around a built backbone."""
    if "transformer" in backbone_cfg.mode or backbone_cfg.mode in ("mlp", "rnn"):
        if backbone_cfg.width != cfg.width:
            raise ValueError(
                f"model width {cfg.width} does not match backbone width {backbone_cfg.width}"
            )
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    hidden = cfg.mob_hidden or cfg.width
    return ModelState(
        config=cfg,
        epi_proj=init_epi_projector(rng, F=cfg.w, D=cfg.width),
        mob_proj=init_mob_projector(rng, N=cfg.n_regions, hidden=hidden, D=cfg.width),
        epi_adapter=init_adapter(rng, D=cfg.width, out=cfg.w, name="epi_adapter"),
        mob_adapter=init_adapter(rng, D=cfg.width, out=cfg.n_regions, name="mob_adapter"),
        prompts=init_prompts(cfg.w),
        backbone=build_backbone(backbone_cfg, weights_path=backbone_weights),
    )


@dataclass(frozen=True)
class ParamCount:
    trainable: int
    total: int

    @property
    def ratio(self) -> float:
        return self.trainable / self.total


def count_params(model: ModelState) -> ParamCount:
    trainable = sum(p.data.size for p in model.parameters() if not p.frozen)
    total = sum(p.data.size for p in model.parameters())
    if total == 0:
        raise EmptyModelError("model has no parameters; ratio undefined")
    return ParamCount(trainable=trainable, total=total)


def backbone_hash(model: ModelState) -> str:
    """Order-stable byte hash of every backbone parameter."""
    import hashlib

    h = hashlib.sha256()
    for p in model.backbone.parameters():
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(model: ModelState, path) -> None:
    named = {p.name: p.data for p in model.parameters()}
    meta = {
        "kind": "model-checkpoint",
        "model_config": asdict(model.config),
        "backbone_config": asdict(model.backbone.config),
    }
    save_tensors(named, path, meta=meta)


def load_checkpoint(path) -> ModelState:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "model-checkpoint":
        raise CheckpointError(f"{path} is not a model checkpoint")
    cfg = ModelConfig(**meta["model_config"])
    backbone_cfg = BackboneConfig(**meta["backbone_config"])
    model = build_model(cfg, backbone_cfg)
    for p in model.parameters():
        if p.name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {p.name!r}")
        arr = tensors[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"tensor {p.name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr
        p.zero_grad()
    return model
