"""Command line pipeline: simulate -> moments -> fit -> diagnose -> report.

Every stage reads and writes plain files in ``--out``; defaults for input
paths point at the canonical file names there, so stages compose::

    exposure-erf synth --out run
    exposure-erf all --out run
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from .config import RunConfig, config_from_dict, load_config, save_config
from .data_io import load_health_series, load_monitor_panel, spatial_average, write_health_series, write_monitor_panel
from .diagnostics import diagnose
from .mcmc import build_model_spec, read_draws, run_config, write_draws
from .micro_sim import load_profile, read_exposure_panel, simulate_panel, write_exposure_panel
from .moments import moments_table, write_moments
from .risk import (
    ReportBundle,
    attenuation_fit,
    emit_plot_data,
    relative_risk,
    source_summary,
    write_risk,
    write_tables,
)
from .synth import generate, load_scenario, save_truth

log = logging.getLogger("exposure_erf")

VERBS = ("simulate", "moments", "fit", "diagnose", "report", "synth", "all")
MONITOR = "monitor.csv"
HEALTH = "health.csv"
PANEL = "exposure_panel.csv"
MOMENTS = "moments.csv"
CONFIG = "config.json"


class StageError(RuntimeError):
    pass


# --------------------------------------------------------------------------- helpers


def _versions() -> dict:
    try:
        pkg = metadata.version("exposure-erf")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "exposure_erf": pkg,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Stage:
    """Writes into a scratch directory and moves results into ``out`` on success.

    On failure the scratch directory is removed, so ``out`` never holds a
    partial stage output.
    """

    def __init__(self, out: Path, verb: str):
        self.out = out
        self.verb = verb
        self.tmp: Path | None = None

    def __enter__(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.verb}-", dir=self.out))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for item in sorted(self.tmp.rglob("*")):
                    if item.is_dir():
                        continue
                    dest = self.out / item.relative_to(self.tmp)
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    os.replace(item, dest)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _write_manifest(out: Path, verb: str, config: RunConfig, inputs: dict, outputs: list[Path], argv) -> Path:
    manifest = dict(
        verb=verb,
        argv=list(argv),
        seed=config.seed,
        config=config.to_dict(),
        config_digest=config.digest(),
        versions=_versions(),
        inputs={k: {"path": str(p), "sha256": _sha256(Path(p))} for k, p in inputs.items() if p and Path(p).exists()},
        outputs={str(p.relative_to(out)): _sha256(p) for p in outputs if p.exists()},
    )
    path = out / f"manifest_{verb}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_config(args) -> RunConfig:
    out = Path(args.out)
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        if not isinstance(raw, dict):
            raise StageError(f"{args.config}: expected a flat key/value object")
        config = config_from_dict(raw)
    elif (out / CONFIG).exists():
        config = load_config(out / CONFIG)
    else:
        config = RunConfig()
    models = args.model or []
    return config.replace(
        model=models[0] if models else None,
        lag=args.lag,
        chains=args.chains,
        seed=args.seed,
        source=args.source,
        epsilon=args.epsilon,
        burn_in=args.burn_in,
        iterations=args.iterations,
        thin=args.thin,
    )


def _path(args, name: str, default: str) -> Path:
    value = getattr(args, name, None)
    return Path(value) if value else Path(args.out) / default


def _fit_dir(out: Path, model: str) -> Path:
    return out / f"fit_{model}"


# --------------------------------------------------------------------------- stages


def stage_synth(args, config: RunConfig):
    out = Path(args.out)
    scenario, raw = load_scenario(args.config)
    if args.seed is not None:
        from dataclasses import replace

        scenario = replace(scenario, seed=args.seed)
    data = generate(scenario)
    run = config_from_dict(raw).replace(
        model=(args.model or [None])[0], chains=args.chains, lag=args.lag, epsilon=args.epsilon
    )
    with Stage(out, "synth") as tmp:
        write_monitor_panel(data.monitor, tmp / MONITOR)
        write_health_series(data.health, tmp / HEALTH)
        write_exposure_panel(data.exposure, tmp / PANEL)
        save_truth(data.truth, tmp / "truth.json")
        save_config(run, tmp / CONFIG)
        written = [out / n for n in (MONITOR, HEALTH, PANEL, "truth.json", CONFIG)]
    return run, {}, written


def stage_simulate(args, config: RunConfig):
    out = Path(args.out)
    monitor_path, health_path = _path(args, "monitor", MONITOR), _path(args, "health", HEALTH)
    monitor = load_monitor_panel(monitor_path)
    health = load_health_series(health_path)
    temp = health.subset(monitor.dates) if set(monitor.dates) <= set(health.dates) else None
    if temp is None:
        raise StageError("health series must cover every monitor date (temperature drives air exchange)")
    profile = load_profile(args.profile)
    panel = simulate_panel(monitor, temp.temp_mean, profile, config.replicates, config.source, config.seed)
    with Stage(out, "simulate") as tmp:
        write_exposure_panel(panel, tmp / PANEL)
        save_config(config, tmp / CONFIG)
    return config, {"monitor": monitor_path, "health": health_path, "profile": args.profile}, [out / PANEL, out / CONFIG]


def stage_moments(args, config: RunConfig):
    out = Path(args.out)
    panel_path = _path(args, "exposure", PANEL)
    panel = read_exposure_panel(panel_path)
    table = moments_table(panel.exposure, panel.dates, config.lambda3)
    with Stage(out, "moments") as tmp:
        write_moments(table, tmp / MOMENTS)
    return config, {"exposure": panel_path}, [out / MOMENTS]


def _load_inputs(args, model: str):
    monitor_path = _path(args, "monitor", MONITOR)
    panel_path = _path(args, "exposure", PANEL)
    health_path = _path(args, "health", HEALTH)
    health = load_health_series(health_path)
    monitor = load_monitor_panel(monitor_path) if model == "i" or monitor_path.exists() else None
    panel = read_exposure_panel(panel_path) if model != "i" else None
    inputs = {"health": health_path, "monitor": monitor_path, "exposure": panel_path if model != "i" else None}
    return health, monitor, panel, inputs


def stage_fit(args, config: RunConfig):
    out = Path(args.out)
    written, inputs = [], {}
    for model in args.model or [config.model]:
        cfg = config.replace(model=model)
        health, monitor, panel, inputs = _load_inputs(args, model)
        spec = build_model_spec(cfg, health, monitor, panel)
        log.info("fitting model %s on %d days", model, len(spec.y))
        draws = run_config(spec, cfg, n_jobs=args.jobs)
        risk = relative_risk(draws, cfg.increment)
        target = _fit_dir(out, model)
        with Stage(target, "fit") as tmp:
            write_draws(draws, tmp)
            save_config(cfg, tmp / CONFIG)
            pd.DataFrame([risk.row()]).to_csv(tmp / "risk_row.csv", index=False, float_format="%.6g")
            names = [p.name for p in tmp.iterdir()]
        written += [target / n for n in names]
    return config, inputs, written


def stage_diagnose(args, config: RunConfig):
    out = Path(args.out)
    written, inputs = [], {}
    for model in args.model or _fitted_models(out) or [config.model]:
        target = _fit_dir(out, model)
        if not (target / "draws_meta.json").exists():
            raise StageError(f"no draws for model {model} in {target}; run 'fit' first")
        cfg = load_config(target / CONFIG)
        health, monitor, panel, inputs = _load_inputs(args, model)
        spec = build_model_spec(cfg, health, monitor, panel)
        draws = read_draws(target)
        report = diagnose(draws, spec, cfg.acf_max_lag)
        with Stage(target, "diagnose") as tmp:
            report.write(tmp)
            names = [p.name for p in tmp.iterdir()]
        written += [target / n for n in names]
    return config, inputs, written


def _fitted_models(out: Path) -> list[str]:
    found = []
    for model in ("i", "ii", "iii", "iv"):
        if (_fit_dir(out, model) / "draws_meta.json").exists():
            found.append(model)
    return found


def _skewed_day(panel, dates) -> pd.Timestamp:
    x = panel.exposure
    c = x - x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = np.where(sd > 0, np.mean(c**3, axis=1) / sd**3, -np.inf)
    allowed = panel.dates.isin(dates)
    skew = np.where(allowed, skew, -np.inf)
    return panel.dates[int(np.argmax(skew))]


def stage_report(args, config: RunConfig):
    out = Path(args.out)
    models = args.model or _fitted_models(out)
    if not models:
        raise StageError(f"no fitted models found in {out}; run 'fit' first")
    draws = {m: read_draws(_fit_dir(out, m)) for m in models}
    risks = []
    for inc in (config.increment, 50.0):
        risks += [relative_risk(d, inc) for d in draws.values()]
    monitor_path, panel_path = _path(args, "monitor", MONITOR), _path(args, "exposure", PANEL)
    panel = read_exposure_panel(panel_path) if panel_path.exists() else None
    monitor = load_monitor_panel(monitor_path) if monitor_path.exists() else None
    tables = emit_plot_data("exceedance", draws={r: d for r, d in draws.items()}, increments=(config.increment, 50.0))
    att = sources = None
    extra = {}
    if panel is not None:
        tables.update(emit_plot_data("boxplot", panel=panel))
        sources = source_summary(panel)
        if monitor is not None:
            ambient = spatial_average(monitor)
            tables.update(emit_plot_data("scatter", ambient=ambient, panel=panel))
            att = attenuation_fit(ambient, panel.daily_means())
        latent = {m: d for m, d in draws.items() if d.lambda_dates is not None and m in ("iii", "iv")}
        lam_dates = next(iter(latent.values())).lambda_dates if latent else panel.dates
        day = pd.Timestamp(args.day) if args.day else _skewed_day(panel, lam_dates)
        tables.update(
            emit_plot_data("figure3", panel=panel, day=day, draws_iii=latent.get("iii"), draws_iv=latent.get("iv"))
        )
        extra["figure3_day"] = day.strftime("%Y-%m-%d")
    truth_path = out / "truth.json"
    if truth_path.exists():
        truth = json.loads(truth_path.read_text())
        extra["truth_rr"] = truth["rr10"]
        extra["truth_covered"] = {
            r.label: r.covers(float(np.exp(truth["gamma"] * r.increment))) for r in risks
        }
    bundle = ReportBundle(risks=risks, attenuation=att, sources=sources, extra=extra)
    with Stage(out, "report") as tmp:
        write_risk(risks, tmp)
        write_tables(tables, tmp / "plots")
        (tmp / "report.json").write_text(json.dumps(bundle.summary(), indent=2) + "\n")
        names = [p.relative_to(tmp) for p in tmp.rglob("*") if p.is_file()]
    return config, {"monitor": monitor_path, "exposure": panel_path}, [out / n for n in names]


def stage_all(args, config: RunConfig):
    out = Path(args.out)
    written = []
    inputs = {}
    steps = []
    if args.exposure is None and (out / PANEL).exists():
        log.info("reusing %s", out / PANEL)
    elif args.exposure is None:
        steps.append(stage_simulate)
    steps += [stage_moments, stage_fit, stage_diagnose, stage_report]
    for step in steps:
        config, got, files = step(args, config)
        inputs.update({k: v for k, v in got.items() if v})
        written += files
    return config, inputs, written


STAGES = {
    "synth": stage_synth,
    "simulate": stage_simulate,
    "moments": stage_moments,
    "fit": stage_fit,
    "diagnose": stage_diagnose,
    "report": stage_report,
    "all": stage_all,
}


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="exposure-erf", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="run configuration JSON (a scenario file for 'synth')")
    p.add_argument("--model", action="append", choices=("i", "ii", "iii", "iv"), help="repeat to fit several models")
    p.add_argument("--lag", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--source", choices=("all", "outdoor", "indoor"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--monitor", help=f"monitor panel CSV (default: OUT/{MONITOR})")
    p.add_argument("--health", help=f"health series CSV (default: OUT/{HEALTH})")
    p.add_argument("--exposure", help=f"exposure panel CSV (default: OUT/{PANEL})")
    p.add_argument("--profile", help="simulator profile JSON (default: bundled)")
    p.add_argument("--day", help="day for the predictive-density tables (default: most skewed)")
    p.add_argument("--jobs", type=int, default=1, help="processes for chain-level parallelism")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        config = _resolve_config(args) if args.verb != "synth" else RunConfig()
        config, inputs, written = STAGES[args.verb](args, config)
        _write_manifest(out, args.verb, config, inputs, written, argv)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured exit
        err = {"verb": args.verb, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
