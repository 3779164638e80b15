"""Batch front end.

Subcommands
-----------
simulate
    Generate a synthetic ad sample, totals tables and ground truth from
    a design file and write them as CSVs.
estimate
    Load ads and totals, run the configured estimators and write the
    point-estimate tables (no uncertainty).
bootstrap
    The same plus the two-source bootstrap: CV tables, AUC
    distributions and, on request, the raw replicate draws.
report
    Rebuild the formatted tables from the raw files of an earlier run.

Configuration lives in an INI file (section ``[run]``) with flag
overrides for the common knobs.  All report files are written with
deterministic ordering and formatting, so runs with the same seed are
byte-identical whatever the worker count.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import sys
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import (
    BootstrapConfig,
    BootstrapDistribution,
    base_estimates,
    run_bootstrap,
)
from .data import (
    impute_gower_1nn,
    load_ads,
    load_totals_by_wave,
    save_ads,
    save_totals,
)
from .design import collapse_categories, parse_collapse_map
from .errors import ConfigError, SkillcalError
from .estimators import DEFAULT_ESTIMATORS, ESTIMATORS, GlmSettings
from .simulator import generate, load_design

_MODEL_ESTIMATORS = tuple(
    name for name in ESTIMATORS if ESTIMATORS[name].model is not None
)


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class RunConfig:
    """Effective settings of one estimation run."""

    ads: str
    totals: str
    output: str
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    skills: tuple[str, ...] | None = None
    waves: tuple[int, ...] | None = None
    replicates: int = 500
    seed: int = 0
    workers: int = 1
    freeze_lambda: bool = False
    dump_draws: bool = False
    collapse: str = ""
    collapse_threshold: int = 20

    def validate(self, bootstrap: bool) -> "RunConfig":
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(
                    f"unknown estimator {name!r} (choose from "
                    f"{', '.join(sorted(ESTIMATORS))})"
                )
        if not self.estimators:
            raise ConfigError("estimator list is empty")
        for path, what in ((self.ads, "ads"), (self.totals, "totals")):
            if not path:
                raise ConfigError(f"no {what} path configured")
            if not Path(path).exists():
                raise ConfigError(f"{what} file {path!r} does not exist")
        if bootstrap and self.replicates < 2:
            raise ConfigError("bootstrap needs at least 2 replicates")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.collapse:
            parse_collapse_map(self.collapse)
        return self

    def manifest_dict(self) -> dict:
        """Everything that determines the results; execution-only knobs
        (worker count, output directory) are deliberately left out so
        reports stay byte-identical across them."""
        return {
            "ads": self.ads,
            "totals": self.totals,
            "estimators": list(self.estimators),
            "skills": list(self.skills) if self.skills else None,
            "waves": list(self.waves) if self.waves else None,
            "replicates": self.replicates,
            "seed": self.seed,
            "freeze_lambda": self.freeze_lambda,
            "dump_draws": self.dump_draws,
            "collapse": self.collapse,
            "collapse_threshold": self.collapse_threshold,
        }


def _split(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split() if t)


def load_run_config(path: str | None, overrides: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(ads="", totals="", output="out")
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path!r} does not exist")
        parser = configparser.ConfigParser()
        parser.read(path)
        if "run" not in parser:
            raise ConfigError(f"config file {path!r} has no [run] section")
        run = parser["run"]
        cfg.ads = run.get("ads", cfg.ads)
        cfg.totals = run.get("totals", cfg.totals)
        cfg.output = run.get("output", cfg.output)
        if "estimators" in run:
            cfg.estimators = _split(run["estimators"])
        if "skills" in run:
            cfg.skills = _split(run["skills"]) or None
        if "waves" in run:
            cfg.waves = tuple(int(w) for w in _split(run["waves"])) or None
        cfg.replicates = run.getint("replicates", cfg.replicates)
        cfg.seed = run.getint("seed", cfg.seed)
        cfg.workers = run.getint("workers", cfg.workers)
        cfg.freeze_lambda = run.getboolean("freeze_lambda", cfg.freeze_lambda)
        cfg.dump_draws = run.getboolean("dump_draws", cfg.dump_draws)
        cfg.collapse = run.get("collapse", cfg.collapse)
        cfg.collapse_threshold = run.getint(
            "collapse_threshold", cfg.collapse_threshold
        )
    for name in ("seed", "replicates", "workers", "output"):
        value = getattr(overrides, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(overrides, "freeze_lambda", False):
        cfg.freeze_lambda = True
    if getattr(overrides, "dump_draws", False):
        cfg.dump_draws = True
    return cfg


def _load_inputs(cfg: RunConfig):
    """Ads and totals ready for estimation: wave-filtered, collapsed,
    imputed.  Returns (sample, totals_by_wave, info-dict)."""
    sample = load_ads(cfg.ads)
    totals = load_totals_by_wave(cfg.totals)
    info: dict = {"n_ads_loaded": sample.n}
    if cfg.waves:
        keep = [w for w in sorted(sample.waves) if w in cfg.waves]
        if not keep:
            raise ConfigError(f"no records in requested waves {cfg.waves}")
        idx = np.concatenate([sample.wave_indices(w) for w in keep])
        sample = sample.take(np.sort(idx))
        totals = {w: t for w, t in totals.items() if w in cfg.waves}
    applied = ()
    if cfg.collapse:
        rules = parse_collapse_map(cfg.collapse)
        sample, totals, applied = collapse_categories(
            sample, totals, rules, threshold=cfg.collapse_threshold
        )
    info["collapse_applied"] = [
        f"{r.covariate}: {r.source} -> {r.target}" for r in applied
    ]
    info["imputed"] = bool(sample.has_missing)
    if sample.has_missing:
        sample = impute_gower_1nn(sample)
    info["n_ads"] = sample.n
    return sample, totals, info


# ---------------------------------------------------------------------------
# formatting


def _pct(fraction: float) -> str:
    """Percent with 1 decimal, ties rounded up (away from zero)."""
    quant = Decimal(repr(float(fraction) * 100.0)).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP
    )
    return str(quant)


def _dec(value: float, places: str) -> str:
    if not np.isfinite(value):
        return ""
    return str(Decimal(repr(float(value))).quantize(Decimal(places), ROUND_HALF_UP))


def _raw(value: float) -> str:
    return repr(float(value))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_wide(path: Path, skills, columns, value) -> None:
    """Skill-by-estimator table; ``value(skill, column) -> str``."""
    rows = [[s, *(value(s, c) for c in columns)] for s in skills]
    _write_csv(path, ["skill", *columns], rows)


# ---------------------------------------------------------------------------
# report emission


def _emit_points(out: Path, skills, estimators, waves, base, pooled) -> None:
    _write_wide(
        out / "point_estimates.csv", skills, estimators,
        lambda s, e: _pct(pooled[(s, e)]),
    )
    _write_csv(
        out / "point_estimates_by_wave.csv",
        ["skill", "estimator", "wave", "estimate_pct"],
        [
            [s, e, w, _pct(base[(s, e, w)].value)]
            for s in skills for e in estimators for w in waves
        ],
    )
    _write_csv(
        out / "weight_diagnostics.csv",
        ["skill", "estimator", "wave", "weight_min", "weight_max",
         "negative_weights", "degenerate_model", "out_of_range"],
        [
            [s, e, w, _raw(pe.weight_min), _raw(pe.weight_max),
             pe.negative_weights, int(pe.degenerate_model), int(pe.out_of_range)]
            for s in skills for e in estimators for w in waves
            for pe in [base[(s, e, w)]]
        ],
    )
    raw_rows = [
        [s, e, "pooled", _raw(pooled[(s, e)])] for s in skills for e in estimators
    ] + [
        [s, e, w, _raw(base[(s, e, w)].value)]
        for s in skills for e in estimators for w in waves
    ]
    _write_csv(out / "raw_points.csv", ["skill", "estimator", "wave", "value"], raw_rows)


def _emit_auc(out: Path, skills, estimators, auc_base) -> None:
    cols = [e for e in estimators if e in _MODEL_ESTIMATORS]
    if not cols:
        return
    _write_wide(
        out / "auc.csv", skills, cols,
        lambda s, e: _dec(auc_base.get((s, e), float("nan")), "0.001"),
    )
    _write_csv(
        out / "raw_auc.csv",
        ["skill", "estimator", "auc"],
        [[s, e, _raw(auc_base[(s, e)])] for s in skills for e in cols
         if (s, e) in auc_base],
    )


def _emit_cv(out: Path, skills, estimators, waves, dists) -> None:
    """CV tables from per-(skill, estimator, wave) distributions."""

    def mean_cv(s, e):
        cvs = [dists[(s, e, w)].cv_pct for w in waves if (s, e, w) in dists]
        return _dec(float(np.mean(cvs)) if cvs else float("nan"), "0.01")

    _write_wide(out / "cv_table.csv", skills, estimators, mean_cv)
    _write_csv(
        out / "cv_by_wave.csv",
        ["skill", "estimator", "wave", "cv_pct", "se", "boot_mean"],
        [
            [s, e, w, _dec(d.cv_pct, "0.01"), _raw(d.se), _raw(d.mean)]
            for s in skills for e in estimators for w in waves
            for d in [dists[(s, e, w)]] if (s, e, w) in dists
        ],
    )


def _emit_draws(out: Path, skills, estimators, waves, ids, dists) -> None:
    rows = []
    for pos, rep in enumerate(ids):
        for w in waves:
            for s in skills:
                for e in estimators:
                    d = dists.get((s, e, w))
                    if d is not None:
                        rows.append([int(rep), w, s, e, _raw(d.draws[pos])])
    _write_csv(out / "draws.csv", ["replicate", "wave", "skill", "estimator", "value"], rows)


def _emit_manifest(out: Path, cfg: RunConfig, command: str, info: dict,
                   extra: dict) -> None:
    effective = cfg.manifest_dict()
    digest = hashlib.sha256(
        json.dumps(effective, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    manifest = {
        "command": command,
        "config_sha256": digest,
        "package_version": __version__,
        **effective,
        **info,
        **extra,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def _bootstrap_config(cfg: RunConfig) -> BootstrapConfig:
    return BootstrapConfig(
        replicates=cfg.replicates,
        seed=cfg.seed,
        workers=cfg.workers,
        freeze_lambda=cfg.freeze_lambda,
        estimators=cfg.estimators,
        skills=cfg.skills,
        glm=GlmSettings(seed=cfg.seed),
    )


def cmd_simulate(args) -> int:
    design = load_design(args.design)
    if args.noisy_totals:
        design = dataclasses.replace(design, noisy_totals=True)
    run = generate(design, seed=args.seed)
    out = Path(args.output or "out")
    out.mkdir(parents=True, exist_ok=True)
    save_ads(run.sample, out / "ads.csv")
    save_totals(run.totals.values(), out / "totals.csv")
    _write_csv(
        out / "truth.csv",
        ["wave", "skill", "prevalence"],
        [
            [w, s, _raw(run.truth.by_wave[(w, s)])]
            for w in sorted(design.waves) for s in design.skills
        ],
    )
    print(f"wrote ads.csv, totals.csv, truth.csv to {out}")
    return 0


def cmd_estimate(args) -> int:
    cfg = load_run_config(args.config, args).validate(bootstrap=False)
    sample, totals, info = _load_inputs(cfg)
    bcfg = _bootstrap_config(cfg)
    base, pooled, auc_base = base_estimates(bcfg, sample, totals)
    skills = cfg.skills or sample.skill_names
    waves = tuple(sorted(totals))
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _emit_points(out, skills, cfg.estimators, waves, base, pooled)
    _emit_auc(out, skills, cfg.estimators, auc_base)
    _emit_manifest(out, cfg, "estimate", info, {"dropped_replicates": 0})
    print(f"point estimates for {len(skills)} skills x {len(cfg.estimators)} "
          f"estimators written to {out}")
    return 0


def cmd_bootstrap(args) -> int:
    cfg = load_run_config(args.config, args).validate(bootstrap=True)
    sample, totals, info = _load_inputs(cfg)
    result = run_bootstrap(_bootstrap_config(cfg), sample, totals)
    skills, ests, waves = result.skills, result.estimators, result.waves
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _emit_points(out, skills, ests, waves, result.base, result.pooled)
    _emit_auc(out, skills, ests, result.auc_base)
    _emit_cv(out, skills, ests, waves, result.distributions)
    if cfg.dump_draws:
        _emit_draws(out, skills, ests, waves, result.replicate_ids,
                    result.distributions)
    _emit_manifest(out, cfg, "bootstrap", info, {
        "dropped_replicates": result.dropped,
        "replicate_failures": list(result.failures[:5]),
        "truncated_total_draws": result.truncated_draws,
    })
    print(f"bootstrap B={cfg.replicates} done, {result.dropped} dropped; "
          f"tables written to {out}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.output or "out")
    points = out / "raw_points.csv"
    if not points.exists():
        raise ConfigError(f"{points} not found; run estimate or bootstrap first")
    pooled: dict = {}
    base_vals: dict = {}
    skills: list[str] = []
    ests: list[str] = []
    waves: list[int] = []
    with open(points, newline="") as fh:
        for row in csv.DictReader(fh):
            s, e = row["skill"], row["estimator"]
            if s not in skills:
                skills.append(s)
            if e not in ests:
                ests.append(e)
            if row["wave"] == "pooled":
                pooled[(s, e)] = float(row["value"])
            else:
                w = int(row["wave"])
                if w not in waves:
                    waves.append(w)
                base_vals[(s, e, w)] = float(row["value"])
    waves.sort()
    _write_wide(out / "point_estimates.csv", skills, ests,
                lambda s, e: _pct(pooled[(s, e)]))
    _write_csv(
        out / "point_estimates_by_wave.csv",
        ["skill", "estimator", "wave", "estimate_pct"],
        [[s, e, w, _pct(base_vals[(s, e, w)])]
         for s in skills for e in ests for w in waves
         if (s, e, w) in base_vals],
    )
    made = ["point_estimates.csv", "point_estimates_by_wave.csv"]

    raw_auc = out / "raw_auc.csv"
    if raw_auc.exists():
        auc_base = {}
        with open(raw_auc, newline="") as fh:
            for row in csv.DictReader(fh):
                auc_base[(row["skill"], row["estimator"])] = float(row["auc"])
        _emit_auc(out, skills, tuple(ests), auc_base)
        made.append("auc.csv")

    draws_path = out / "draws.csv"
    if draws_path.exists():
        series: dict = {}
        with open(draws_path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["skill"], row["estimator"], int(row["wave"]))
                series.setdefault(key, []).append(float(row["value"]))
        dists = {
            k: BootstrapDistribution(np.array(v)) for k, v in series.items()
        }
        _emit_cv(out, skills, ests, waves, dists)
        made.append("cv_table.csv")
    print(f"rebuilt {', '.join(made)} in {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillcal",
        description="Calibrated skill-prevalence estimation from job-ad samples",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate synthetic data from a design")
    sim.add_argument("--design", required=True, help="design INI file")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--output", help="output directory (default: out)")
    sim.add_argument("--noisy-totals", action="store_true",
                     help="perturb the published totals once at generation")
    sim.set_defaults(func=cmd_simulate)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--replicates", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--freeze-lambda", action="store_true", default=False,
                        help="reuse the base run's selected penalties")
    common.add_argument("--dump-draws", action="store_true", default=False,
                        help="write every replicate value to draws.csv")
    common.add_argument("--output", default=None, help="output directory")

    est = sub.add_parser("estimate", parents=[common],
                         help="point estimates only")
    est.set_defaults(func=cmd_estimate)
    boot = sub.add_parser("bootstrap", parents=[common],
                          help="point estimates plus bootstrap uncertainty")
    boot.set_defaults(func=cmd_bootstrap)

    rep = sub.add_parser("report", help="rebuild tables from raw files")
    rep.add_argument("--output", default=None, help="directory of an earlier run")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except SkillcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
