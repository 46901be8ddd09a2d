"""Command-line entry point: ``simulate``, ``analyze`` and ``oracle``.

Configuration is an INI file. ``[simulate]`` holds sweep-wide defaults, each
``[scenario.<name>]`` section one scenario (keys fall back to ``[simulate]``),
and ``[analyze]`` the column roles and tuning for real data. Every flag can
also be set through an environment variable ``SURRODEBIAS_<FLAG>``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .debias import bootstrap_many
from .errors import EstimationError
from .first_stage import choose_dimension
from .glm import get_family
from .simulation import METHODS, REPORTED_COORDS, ScenarioConfig, aggregate, cached_oracle, run_scenario
from .tables import load_analysis_csv, write_csv, write_dataclasses, write_records

log = logging.getLogger("surrogate_debias")

ENV_PREFIX = "SURRODEBIAS_"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
MAX_REJECT_FRACTION = 0.5

_SCENARIO_KEYS = {
    "outcome": str, "missing_rate": float, "n": int, "p": int, "delta": float,
    "n_replicates": int, "b_reps": int, "k_folds": int, "test_n": int, "oracle_n": int, "noise": str,
}
_SIMULATE_KEYS = set(_SCENARIO_KEYS) | {"methods", "cache_dir"}
_ANALYZE_KEYS = {"outcome", "surrogate", "covariates", "family", "k_folds", "b_reps", "seed", "d"}


class ConfigError(Exception):
    def __init__(self, message: str, section: str | None = None, key: str | None = None,
                 line: int | None = None):
        super().__init__(message)
        self.section, self.key, self.line = section, key, line

    def as_dict(self) -> dict:
        return {"error": "ConfigError", "message": str(self), "section": self.section,
                "key": self.key, "line": self.line}


@dataclass
class RunManifest:
    command: str
    config_path: str
    output_dir: str
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def echo(self, extra: dict | None = None) -> Path:
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        blob = {"version": __version__, "command": self.command, "config_path": self.config_path,
                "seed": self.seed, "overrides": self.overrides}
        cfg = Path(self.config_path)
        if cfg.is_file():
            blob["config_text"] = cfg.read_text()
        if extra:
            blob.update(extra)
        path = out / "manifest.json"
        path.write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")
        return path


def _line_of(path: str, section: str, key: str | None) -> int | None:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError:
        return None
    current = None
    for no, raw in enumerate(lines, start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return no
        elif current == section and key is not None and s.split("=", 1)[0].split(":", 1)[0].strip() == key:
            return no
    return None


def read_config(path: str) -> configparser.ConfigParser:
    if not Path(path).is_file():
        raise ConfigError(f"config file {path!r} not found")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}", line=getattr(exc, "lineno", None)) from None
    return cp


def _convert(path, section, key, raw, kind):
    try:
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}",
                          section, key, _line_of(path, section, key)) from None


def _check_keys(path, cp, section, allowed):
    for key in cp[section]:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]", section, key, _line_of(path, section, key))


def scenarios_from_config(path: str, cp: configparser.ConfigParser, seed: int,
                          full_scale: bool = False) -> tuple[list[ScenarioConfig], list[str], str | None]:
    base = {}
    methods = list(METHODS)
    cache_dir = None
    if cp.has_section("simulate"):
        _check_keys(path, cp, "simulate", _SIMULATE_KEYS)
        for key, raw in cp["simulate"].items():
            if key == "methods":
                methods = [m.strip() for m in raw.split(",") if m.strip()]
                bad = [m for m in methods if m not in METHODS]
                if bad:
                    raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}", "simulate",
                                      "methods", _line_of(path, "simulate", "methods"))
            elif key == "cache_dir":
                cache_dir = raw.strip()
            else:
                base[key] = _convert(path, "simulate", key, raw, _SCENARIO_KEYS[key])
    names = [s for s in cp.sections() if s.startswith("scenario.")]
    if not names:
        raise ConfigError("no [scenario.<name>] sections: the scenario grid is empty")
    out = []
    for idx, sec in enumerate(names):
        _check_keys(path, cp, sec, _SCENARIO_KEYS)
        kw = dict(base)
        for key, raw in cp[sec].items():
            kw[key] = _convert(path, sec, key, raw, _SCENARIO_KEYS[key])
        if full_scale:
            kw.update(n_replicates=500, b_reps=500)
        kw["master_seed"] = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
        try:
            out.append(ScenarioConfig(**kw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{sec}] {exc}", sec, None, _line_of(path, sec, None)) from None
    return out, methods, cache_dir


def cmd_simulate(manifest: RunManifest, threads: int = 1, full_scale: bool = False) -> int:
    out = Path(manifest.output_dir)
    cp = read_config(manifest.config_path)
    configs, methods, cache_dir = scenarios_from_config(manifest.config_path, cp, manifest.seed, full_scale)
    cache = Path(cache_dir) if cache_dir else out / "oracle_cache"
    manifest.echo({"methods": methods, "full_scale": full_scale, "threads": threads,
                   "noise_convention": sorted({c.noise for c in configs})})
    all_rows = []
    long_rows = []
    for cfg in configs:
        log.info("scenario %s: %d replicates, B=%d", cfg.name, cfg.n_replicates, cfg.b_reps)
        beta_star, _, _ = cached_oracle(cfg, cache_dir=cache)
        res = run_scenario(cfg, methods, threads=threads, beta_star=beta_star)
        write_dataclasses(out / f"results_{cfg.name}.csv", res.rows)
        all_rows.extend(res.rows)
        for r in res.rows:
            if r.coord == REPORTED_COORDS[0]:
                long_rows.append([cfg.name, cfg.outcome, cfg.missing_rate, cfg.n, r.method, r.replicate,
                                  r.deviance, r.error])
    aggs = aggregate(all_rows)
    write_records(out / "aggregate.csv", aggs)
    write_csv(out / "coverage_table.csv", ["scenario", "method"] + [f"beta{j + 1}" for j in REPORTED_COORDS],
              ([a["scenario"], a["method"]] + [a[f"coverage_beta{j + 1}"] for j in REPORTED_COORDS]
               for a in aggs))
    write_csv(out / "deviance_long.csv",
              ["scenario", "outcome", "missing_rate", "n", "method", "replicate", "deviance", "error"], long_rows)
    return EXIT_OK


def _parse_target(target: str, names: list[str]) -> list[int]:
    if target == "all":
        return list(range(len(names)))
    out = []
    for tok in target.split(","):
        tok = tok.strip()
        if tok in names:
            out.append(names.index(tok))
        else:
            try:
                j = int(tok)
            except ValueError:
                raise ConfigError(f"--target {tok!r} is neither a coordinate index nor a covariate name") from None
            if not 0 <= j < len(names):
                raise ConfigError(f"--target {j} out of range for {len(names)} covariates")
            out.append(j)
    return out


def cmd_analyze(manifest: RunManifest, data_path: str, target: str = "all") -> int:
    out = Path(manifest.output_dir)
    path = manifest.config_path
    cp = read_config(path)
    if not cp.has_section("analyze"):
        raise ConfigError("config has no [analyze] section")
    _check_keys(path, cp, "analyze", _ANALYZE_KEYS)
    sec = cp["analyze"]
    if "outcome" not in sec:
        raise ConfigError("[analyze] needs an 'outcome' column", "analyze", "outcome", _line_of(path, "analyze", None))
    surrogate = sec.get("surrogate", "").strip() or None
    covs = sec.get("covariates", "").strip()
    covariates = [c.strip() for c in covs.split(",") if c.strip()] or None
    try:
        family = get_family(sec.get("family", "gaussian").strip())
    except ValueError as exc:
        raise ConfigError(str(exc), "analyze", "family", _line_of(path, "analyze", "family")) from None
    k_folds = _convert(path, "analyze", "k_folds", sec.get("k_folds", "5"), int)
    b_reps = _convert(path, "analyze", "b_reps", sec.get("b_reps", "200"), int)
    seed = _convert(path, "analyze", "seed", sec.get("seed", str(manifest.seed)), int)
    d = _convert(path, "analyze", "d", sec["d"], int) if sec.get("d", "").strip() else None
    try:
        loaded = load_analysis_csv(data_path, sec["outcome"].strip(), surrogate, covariates)
    except (KeyError, OSError) as exc:
        raise ConfigError(f"cannot load {data_path!r}: {exc}") from None
    manifest.echo({"data_path": str(data_path), "target": target})
    if loaded.rejects:
        write_csv(out / "rejects.csv", ["line", "reason", "row"],
                  ([ln, why, ",".join(row)] for ln, why, row in loaded.rejects))
    if loaded.reject_fraction > MAX_REJECT_FRACTION:
        raise EstimationError(f"{len(loaded.rejects)} of {loaded.n_rows} rows rejected; aborting")
    data = loaded.data
    if family.kind == "binomial" and not np.isin(data.y[data.observed], (0.0, 1.0)).all():
        raise EstimationError("binomial family needs a 0/1 outcome")
    targets = _parse_target(target, loaded.covariates)
    if d is None:
        d = choose_dimension(data)
    ests = bootstrap_many(data, family, targets, k_folds, b_reps, seed, d)
    write_csv(out / "report.csv", ["coord", "name", "estimate", "beta_init", "se", "ci_low", "ci_high"],
              ([e.target_index, loaded.covariates[e.target_index], e.beta_tilde,
                e.beta_init[e.target_index], e.se, e.ci_low, e.ci_high] for e in ests))
    diag = [
        ("n_rows", loaded.n_rows), ("n_used", data.n), ("n_rejected", len(loaded.rejects)),
        ("n_observed", int(data.r.sum())), ("missing_rate", float(1.0 - data.r.mean())),
        ("selected_d", d), ("c_n", ests[0].c_n),
        ("trim_fraction", float(np.mean([e.trim_fraction for e in ests]))),
        ("negative_weight_fraction", float(np.mean([e.negative_weight_fraction for e in ests]))),
        ("bootstrap_redraws", ests[0].redraws), ("surrogate", surrogate or ""),
    ]
    write_csv(out / "diagnostics.csv", ["key", "value"], diag)
    return EXIT_OK


def cmd_oracle(manifest: RunManifest) -> int:
    out = Path(manifest.output_dir)
    cp = read_config(manifest.config_path)
    configs, _, cache_dir = scenarios_from_config(manifest.config_path, cp, manifest.seed)
    cache = Path(cache_dir) if cache_dir else out
    manifest.echo()
    rows = []
    for cfg in configs:
        beta, se, hit = cached_oracle(cfg, cache_dir=cache)
        log.info("oracle %s: %s", cfg.name, "cache hit" if hit else "computed")
        rows.extend([cfg.name, j, beta[j], se[j]] for j in range(cfg.p))
    write_csv(out / "oracle.csv", ["scenario", "coord", "beta_star", "mc_se"], rows)
    return EXIT_OK


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper(), default)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="surrogate-debias", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the simulation grid")
    sim.add_argument("--config", default=_env("config"), required=_env("config") is None)
    sim.add_argument("--out", default=_env("out"), required=_env("out") is None)
    sim.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    sim.add_argument("--threads", type=int, default=int(_env("threads", 1)))
    sim.add_argument("--paper-scale", dest="full_scale", action="store_true",
                     default=_env("paper_scale", "0").lower() in ("1", "true", "yes"))

    ana = sub.add_parser("analyze", help="estimate coefficients on a CSV file")
    ana.add_argument("--data", default=_env("data"), required=_env("data") is None)
    ana.add_argument("--config", default=_env("config"), required=_env("config") is None)
    ana.add_argument("--out", default=_env("out"), required=_env("out") is None)
    ana.add_argument("--target", default=_env("target", "all"))
    ana.add_argument("--seed", type=int, default=int(_env("seed", 0)))

    orc = sub.add_parser("oracle", help="compute and cache pseudo-true coefficients")
    orc.add_argument("--config", default=_env("config"), required=_env("config") is None)
    orc.add_argument("--out", default=_env("out"), required=_env("out") is None)
    orc.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    return ap


def _write_error(out_dir, payload: dict) -> None:
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = RunManifest(args.command, args.config, args.out, args.seed,
                           {k: v for k, v in vars(args).items()
                            if k not in ("command", "config", "out", "seed", "verbose")})
    try:
        if args.command == "simulate":
            return cmd_simulate(manifest, args.threads, args.full_scale)
        if args.command == "analyze":
            return cmd_analyze(manifest, args.data, args.target)
        return cmd_oracle(manifest)
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        print(f"surrogate-debias: config error{where}: {exc}", file=sys.stderr)
        _write_error(args.out, exc.as_dict())
        return EXIT_USAGE
    except (EstimationError, ValueError) as exc:
        print(f"surrogate-debias: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write_error(args.out, {"error": type(exc).__name__, "message": str(exc)})
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
