"""Metrics, statistical baselines, ablation variants, and report emission.

RMSE and MAE are computed per region over the horizon and then averaged with
an unweighted arithmetic mean across regions.  Published reference numbers
for the four public COVID datasets ship as a static JSON file and are only
ever displayed next to fresh results, clearly labeled, never asserted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .data import EpidemicDataset, SplitSpec, split_dataset
from .forecaster import forecast
from .model import ModelConfig, build_model
from .trainer import TrainConfig, train

BASELINES = ("AVG", "AVG_WINDOW", "LAST_DAY", "LIN_REG")


# -- metrics -----------------------------------------------------------------------


def rmse(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("empty horizon")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mae(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("empty horizon")
    return float(np.mean(np.abs(y - y_hat)))


@dataclass
class MetricReport:
    dataset: str
    horizon: int
    model: str
    per_region_rmse: list[float]
    per_region_mae: list[float]
    region_avg_rmse: float
    region_avg_mae: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def metric_report(
    truth: np.ndarray, pred: np.ndarray, dataset: str, horizon: int, model: str, config: dict | None = None
) -> MetricReport:
    """Per-region metrics over an (h, N) truth/prediction pair, region-averaged."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"truth {truth.shape} vs prediction {pred.shape}")
    n = truth.shape[1]
    r = [rmse(truth[:, i], pred[:, i]) for i in range(n)]
    m = [mae(truth[:, i], pred[:, i]) for i in range(n)]
    return MetricReport(
        dataset=dataset,
        horizon=horizon,
        model=model,
        per_region_rmse=r,
        per_region_mae=m,
        region_avg_rmse=float(np.mean(r)),
        region_avg_mae=float(np.mean(m)),
        config=config or {},
    )


# -- statistical baselines ------------------------------------------------------------


def baseline_predict(kind: str, ds: EpidemicDataset, context_end: int, h: int) -> np.ndarray:
    """Per-region h-day predictions from raw counts observed before context_end."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")
    if h < 1:
        raise ValueError(f"horizon must be >= 1, got {h}")
    min_ctx = 2 if kind == "LIN_REG" else 1
    if context_end < min_ctx:
        raise ValueError(f"{kind} needs at least {min_ctx} context days, got {context_end}")
    hist = ds.counts[:context_end].astype(np.float64)  # (t, N)
    N = hist.shape[1]
    if kind == "AVG":
        level = hist.mean(axis=0)
        return np.tile(level, (h, 1))
    if kind == "AVG_WINDOW":
        level = hist[-min(h, context_end) :].mean(axis=0)
        return np.tile(level, (h, 1))
    if kind == "LAST_DAY":
        return np.tile(hist[-1], (h, 1))
    # LIN_REG: ordinary least squares line per region, extrapolated
    t = np.arange(context_end, dtype=np.float64)
    out = np.zeros((h, N))
    future = np.arange(context_end, context_end + h, dtype=np.float64)
    for i in range(N):
        slope, intercept = np.polyfit(t, hist[:, i], 1)
        out[:, i] = slope * future + intercept
    return out


# -- ablation variants -------------------------------------------------------------------


@dataclass(frozen=True)
class VariantSpec:
    description: str
    tokenizer_mode: str = "graph"
    gating_mode: str = "gated"
    backbone_mode: str | None = None  # None -> keep configured backbone
    adjacency_mode: str = "predicted"
    mobility_enabled: bool = True


ABLATION_VARIANTS: dict[str, VariantSpec] = {
    "full": VariantSpec("complete model"),
    "Graph2MLP": VariantSpec(
        "cases-only feedforward tokenizer; mobility branch disabled",
        tokenizer_mode="mlp",
        mobility_enabled=False,
    ),
    "Time2Aver": VariantSpec("slice embeddings averaged instead of gated", gating_mode="average"),
    "Time2Last": VariantSpec("only the final slice embedding is kept", gating_mode="last"),
    "wo_LLM": VariantSpec("tokens bypass the backbone (identity)", backbone_mode="identity"),
    "LLM2MLP": VariantSpec("trainable position-wise feedforward backbone", backbone_mode="mlp"),
    "LLM2RNN": VariantSpec("trainable gated recurrent backbone", backbone_mode="rnn"),
    "LLM2Trans": VariantSpec("trainable transformer backbone", backbone_mode="trainable-transformer"),
    "Adj2Aver": VariantSpec(
        "inference reuses window-averaged historical adjacency", adjacency_mode="window_average"
    ),
    "Adj2Last": VariantSpec(
        "inference reuses the previous step's adjacency", adjacency_mode="last"
    ),
}


def apply_variant(
    variant: str, model_cfg: ModelConfig, backbone_cfg: BackboneConfig
) -> tuple[ModelConfig, BackboneConfig]:
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; choose from {sorted(ABLATION_VARIANTS)}")
    spec = ABLATION_VARIANTS[variant]
    model_cfg = replace(
        model_cfg,
        tokenizer_mode=spec.tokenizer_mode,
        gating_mode=spec.gating_mode,
        adjacency_mode=spec.adjacency_mode,
        mobility_enabled=spec.mobility_enabled,
    )
    if spec.backbone_mode is not None:
        backbone_cfg = replace(backbone_cfg, mode=spec.backbone_mode)
    return model_cfg, backbone_cfg


def run_ablation(
    variant: str,
    ds: EpidemicDataset,
    split: SplitSpec,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    backbone_cfg: BackboneConfig,
    steps: int = 1,
    dataset_name: str = "synthetic",
) -> MetricReport:
    """Train the variant, forecast the test range, and score it."""
    model_cfg, backbone_cfg = apply_variant(variant, model_cfg, backbone_cfg)
    splits = split_dataset(ds, split)
    model = build_model(model_cfg, backbone_cfg)
    model, _report = train(model, ds, splits.train, splits.val, train_cfg)
    horizon = steps * model_cfg.w
    context_end = splits.test.start
    result = forecast(model, ds, context_end, steps)
    truth = ds.counts[context_end : context_end + horizon].astype(np.float64)
    return metric_report(
        truth,
        result.cases[: truth.shape[0]],
        dataset=dataset_name,
        horizon=horizon,
        model=variant,
        config={"variant": asdict(ABLATION_VARIANTS[variant]), "steps": steps},
    )


# -- reference numbers and report emission --------------------------------------------------


REFERENCE_BACKBONE = "GPT2"


def load_reference_results() -> dict:
    with resources.files("epicast").joinpath("reference_results.json").open() as fh:
        return json.load(fh)


def reference_for(dataset: str, horizon: int, backbone: str = REFERENCE_BACKBONE) -> dict | None:
    refs = load_reference_results()["results"]
    try:
        return refs[dataset][str(horizon)][backbone]
    except KeyError:
        return None


def emit_report(reports: list[MetricReport], out_dir) -> tuple[Path, Path]:
    """Write the side-by-side CSV and a full JSON document; returns both paths."""
    if not reports:
        raise ValueError("emit_report needs at least one MetricReport")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refdoc = load_reference_results()
    csv_path = out_dir / "metrics.csv"
    json_path = out_dir / "metrics.json"
    rows = []
    for rep in reports:
        ref = reference_for(rep.dataset, rep.horizon)
        rows.append(
            {
                "dataset": rep.dataset,
                "horizon": rep.horizon,
                "model": rep.model,
                "region_avg_rmse": rep.region_avg_rmse,
                "region_avg_mae": rep.region_avg_mae,
                "ref_rmse": "" if ref is None else ref["rmse"],
                "ref_mae": "" if ref is None else ref["mae"],
            }
        )
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["dataset", "horizon", "model", "region_avg_rmse", "region_avg_mae", "ref_rmse", "ref_mae"],
        )
        writer.writeheader()
        writer.writerows(rows)
    doc = {
        "reference_label": refdoc["label"],
        "reference_backbone": REFERENCE_BACKBONE,
        "rows": rows,
        "reports": [rep.to_dict() for rep in reports],
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return csv_path, json_path
