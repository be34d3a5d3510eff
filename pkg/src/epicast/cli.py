"""Config-driven command line: synth, train, forecast, evaluate, ablate, report.

A run is described by one flat key=value text file (see CONFIG_SCHEMA for the
full key list); every command writes the fully resolved config into its
output directory so a run can be reproduced from its artifacts alone.  All
commands are deterministic given the same config and seed.

Exit codes: 0 ok, 2 config error, 3 data error, 4 checkpoint error,
5 diverged, 1 anything else.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig, BackboneConfigError
from .data import (
    DataError,
    EpidemicDataset,
    SirParams,
    SplitSpec,
    build_dataset,
    load_cases,
    load_mobility,
    split_dataset,
    synth_sir_tables,
    write_cases_csv,
    write_mobility_csv,
)
from .evalharness import (
    ABLATION_VARIANTS,
    BASELINES,
    MetricReport,
    baseline_predict,
    emit_report,
    metric_report,
    run_ablation,
)
from .forecaster import ForecastDivergedError, forecast
from .model import ModelConfig, build_model, count_params, load_checkpoint, save_checkpoint
from .serialize import CheckpointError
from .trainer import TrainConfig, TrainingDivergedError, train


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# key -> (parser, default); None default means "unset"
CONFIG_SCHEMA: dict = {
    "dataset.name": (str, "synthetic"),
    "data.cases": (str, None),
    "data.mobility": (str, None),
    "synth.regions": (int, 10),
    "synth.days": (int, 60),
    "synth.beta": (float, 0.4),
    "synth.gamma_rec": (float, 0.2),
    "synth.seed_region": (int, 0),
    "synth.population": (int, 5000),
    "w": (int, 3),
    "horizon": (int, 3),
    "epsilon": (float, 0.0),
    "scale": (_parse_bool, False),
    "split.test": (int, 3),
    "split.val": (int, 3),
    "backbone.mode": (str, "frozen-transformer"),
    "backbone.depth": (int, 2),
    "backbone.width": (int, 64),
    "backbone.heads": (int, 4),
    "backbone.max_positions": (int, 64),
    "backbone.seed": (int, None),
    "backbone.weights": (str, None),
    "model.mob_hidden": (int, 0),
    "train.lambda": (float, 1.0),
    "train.lr": (float, 1e-3),
    "train.max_epochs": (int, 200),
    "train.patience": (int, 10),
    "train.loss_form": (str, "mean-squared"),
    "seed": (int, 0),
    "checkpoint": (str, None),
    "forecast.context_end": (int, None),
    "ablate.variants": (str, ",".join(ABLATION_VARIANTS)),
    "report.inputs": (str, None),
    "out": (str, None),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def steps(self) -> int:
        return self.values["horizon"] // self.values["w"]

    def resolved(self) -> dict:
        return dict(sorted(self.values.items(), key=lambda kv: kv[0]))


def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def resolve_config(raw: dict, seed_override=None, out_override=None) -> RunConfig:
    unknown = set(raw) - set(CONFIG_SCHEMA)
    if unknown:
        raise ConfigError(f"invalid config keys: {sorted(unknown)}")
    values: dict = {}
    for key, (parse, default) in CONFIG_SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r}") from exc
        else:
            values[key] = default
    if seed_override is not None:
        values["seed"] = int(seed_override)
    if out_override is not None:
        values["out"] = str(out_override)
    if values["backbone.seed"] is None:
        values["backbone.seed"] = values["seed"]

    w, horizon = values["w"], values["horizon"]
    if w < 1 or horizon < 1:
        raise ConfigError(f"w and horizon must be positive, got w={w} horizon={horizon}")
    if horizon % w != 0:
        raise ConfigError(f"horizon {horizon} must be a multiple of the token window w={w}")
    if (values["data.cases"] is None) != (values["data.mobility"] is None):
        raise ConfigError("data.cases and data.mobility must be given together")
    for key in ("data.cases", "data.mobility", "backbone.weights"):
        if values[key] is not None and not Path(values[key]).exists():
            raise ConfigError(f"{key} points at a missing file: {values[key]}")
    return RunConfig(values=values)


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg["out"]
    if out is None:
        stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        out = f"runs/{stamp}-seed{cfg['seed']}"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: RunConfig, out: Path, command: str) -> None:
    doc = {"command": command, "config": cfg.resolved()}
    with open(out / f"config_{command}.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _load_dataset(cfg: RunConfig) -> EpidemicDataset:
    if cfg["data.cases"] is not None:
        cases = load_cases(cfg["data.cases"])
        mobility = load_mobility(cfg["data.mobility"], dates=cases.dates)
        return build_dataset(cases, mobility, w=cfg["w"], epsilon=cfg["epsilon"], scale=cfg["scale"])
    params = SirParams(
        beta=cfg["synth.beta"],
        gamma_rec=cfg["synth.gamma_rec"],
        seed_region=cfg["synth.seed_region"],
        population=cfg["synth.population"],
    )
    cases, mobility = synth_sir_tables(cfg["synth.regions"], cfg["synth.days"], params, rng_seed=cfg["seed"])
    return build_dataset(cases, mobility, w=cfg["w"], epsilon=cfg["epsilon"], scale=cfg["scale"])


def _configs(cfg: RunConfig, ds: EpidemicDataset) -> tuple[ModelConfig, BackboneConfig, TrainConfig]:
    model_cfg = ModelConfig(
        n_regions=ds.N,
        w=cfg["w"],
        width=cfg["backbone.width"],
        mob_hidden=cfg["model.mob_hidden"],
        epsilon=cfg["epsilon"],
        seed=cfg["seed"],
    )
    backbone_cfg = BackboneConfig(
        mode=cfg["backbone.mode"],
        depth=cfg["backbone.depth"],
        width=cfg["backbone.width"],
        heads=cfg["backbone.heads"],
        seed=cfg["backbone.seed"],
        max_positions=cfg["backbone.max_positions"],
    )
    train_cfg = TrainConfig(
        mob_weight=cfg["train.lambda"],
        lr=cfg["train.lr"],
        max_epochs=cfg["train.max_epochs"],
        patience=cfg["train.patience"],
        seed=cfg["seed"],
        loss_form=cfg["train.loss_form"],
    )
    return model_cfg, backbone_cfg, train_cfg


def _checkpoint_path(cfg: RunConfig, out: Path) -> Path:
    if cfg["checkpoint"] is not None:
        return Path(cfg["checkpoint"])
    return out / "checkpoint.bin"


# -- commands -------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    _echo_config(cfg, out, "synth")
    params = SirParams(
        beta=cfg["synth.beta"],
        gamma_rec=cfg["synth.gamma_rec"],
        seed_region=cfg["synth.seed_region"],
        population=cfg["synth.population"],
    )
    cases, mobility = synth_sir_tables(cfg["synth.regions"], cfg["synth.days"], params, rng_seed=cfg["seed"])
    write_cases_csv(cases, out / "cases.csv")
    write_mobility_csv(mobility, out / "mobility.csv")
    print(f"synth: wrote {out/'cases.csv'} and {out/'mobility.csv'} "
          f"({cases.n_regions} regions x {cases.n_days} days)")
    return out


def cmd_train(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    _echo_config(cfg, out, "train")
    ds = _load_dataset(cfg)
    splits = split_dataset(ds, SplitSpec(test_len=cfg["split.test"], val_len=cfg["split.val"]))
    model_cfg, backbone_cfg, train_cfg = _configs(cfg, ds)
    model = build_model(model_cfg, backbone_cfg, backbone_weights=cfg["backbone.weights"])
    model, report = train(model, ds, splits.train, splits.val, train_cfg)
    ckpt = _checkpoint_path(cfg, out)
    save_checkpoint(model, ckpt)
    with open(out / "train_report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
    with open(out / "prompts.json", "w") as fh:
        json.dump(report.prompt_summary, fh, indent=1, sort_keys=True)
    counts = count_params(model)
    print(
        f"train: stopped at epoch {report.stopped_epoch} (best val {report.best_val:.6g} "
        f"at epoch {report.best_epoch}); trainable {counts.trainable}/{counts.total} "
        f"({100 * counts.ratio:.2f}%); checkpoint -> {ckpt}"
    )
    return out


def cmd_forecast(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    _echo_config(cfg, out, "forecast")
    ckpt = _checkpoint_path(cfg, out)
    model = load_checkpoint(ckpt)
    ds = _load_dataset(cfg)
    context_end = cfg["forecast.context_end"]
    if context_end is None:
        context_end = ds.T - cfg["split.test"]
    result = forecast(model, ds, context_end, cfg.steps)
    result.write_csv(out / "forecast.csv")
    result.write_mobility_json(out / "forecast_mobility.json")
    print(
        f"forecast: {result.horizon} days ({result.steps} step(s)) from day {context_end} "
        f"-> {out/'forecast.csv'}"
    )
    return out


def cmd_evaluate(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    _echo_config(cfg, out, "evaluate")
    ckpt = _checkpoint_path(cfg, out)
    model = load_checkpoint(ckpt)
    ds = _load_dataset(cfg)
    horizon = cfg["horizon"]
    context_end = ds.T - cfg["split.test"]
    if context_end + horizon > ds.T:
        raise ConfigError(
            f"horizon {horizon} does not fit in the test range of {cfg['split.test']} days"
        )
    truth = ds.counts[context_end : context_end + horizon].astype(float)
    name = cfg["dataset.name"]
    reports = []
    result = forecast(model, ds, context_end, cfg.steps)
    reports.append(metric_report(truth, result.cases, name, horizon, "model", cfg.resolved()))
    for kind in BASELINES:
        pred = baseline_predict(kind, ds, context_end, horizon)
        reports.append(metric_report(truth, pred, name, horizon, kind))
    csv_path, json_path = emit_report(reports, out)
    for rep in reports:
        print(
            f"evaluate [{rep.model:>10s}] rmse={rep.region_avg_rmse:.4f} mae={rep.region_avg_mae:.4f}"
        )
    print(f"evaluate: wrote {csv_path} and {json_path}")
    return out


def cmd_ablate(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    _echo_config(cfg, out, "ablate")
    ds = _load_dataset(cfg)
    model_cfg, backbone_cfg, train_cfg = _configs(cfg, ds)
    split = SplitSpec(test_len=cfg["split.test"], val_len=cfg["split.val"])
    variants = [v.strip() for v in cfg["ablate.variants"].split(",") if v.strip()]
    reports = []
    for variant in variants:
        rep = run_ablation(
            variant,
            ds,
            split,
            train_cfg,
            model_cfg,
            backbone_cfg,
            steps=cfg.steps,
            dataset_name=cfg["dataset.name"],
        )
        reports.append(rep)
        print(f"ablate [{variant:>10s}] rmse={rep.region_avg_rmse:.4f} mae={rep.region_avg_mae:.4f}")
    csv_path, json_path = emit_report(reports, out)
    print(f"ablate: wrote {csv_path} and {json_path}")
    return out


def cmd_report(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    _echo_config(cfg, out, "report")
    if cfg["report.inputs"] is None:
        raise ConfigError("report.inputs must list metrics.json files (comma separated)")
    reports: list[MetricReport] = []
    for part in cfg["report.inputs"].split(","):
        path = Path(part.strip())
        if not path.exists():
            raise ConfigError(f"report input not found: {path}")
        with open(path) as fh:
            doc = json.load(fh)
        for entry in doc.get("reports", []):
            reports.append(MetricReport(**entry))
    csv_path, json_path = emit_report(reports, out)
    print(f"report: combined {len(reports)} reports -> {csv_path}")
    return out


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="epicast",
        description="Spatio-temporal epidemic forecasting over case counts and mobility graphs.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=str, default=None, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=str, default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        raw = parse_config_file(args.config) if args.config else {}
        cfg = resolve_config(raw, seed_override=args.seed, out_override=args.out)
        COMMANDS[args.command](cfg)
        return 0
    except (ConfigError, BackboneConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4
    except (TrainingDivergedError, ForecastDivergedError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 5
    except Exception as exc:  # pragma: no cover - last resort
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
