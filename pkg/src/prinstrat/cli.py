"""Command-line interface.

Usage::

    prinstrat simulate --design sim1 --n 10000 --seed 1 --out data.csv --truth truth.json
    prinstrat fit run.yaml --out fit_dir
    prinstrat summary fit_dir
    prinstrat outcome fit_dir [--times 10 | --times 1,2,5]
    prinstrat contrast fit_dir --contrast Z[,S]
    prinstrat mr run.yaml

Run configuration (YAML)::

    data: flu.csv                       # relative to the config file
    S.formula: encouragement + vaccination ~ age + copd
    Y.formula: hospital ~ age + copd
    Y.family: binomial(link = "logit")
    strata: {n: "00*", c: "01", a: "11*"}
    ER: {}                              # optional explicit flags
    prior_intercept: normal(0, 1)       # any prior_<class>
    survival.time.points: 10            # integer m or a list of times
    sampler: {chains: 4, warmup: 1000, iter: 2000, seed: 1, target_accept: 0.8,
              max_treedepth: 10, cores: 1, refresh: 0, init_tries: 1}
    out: fit_dir

Exit codes: 0 success, 2 configuration error, 3 data error, 4 sampler
failure, 5 diagnostics warnings with ``--strict``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
import yaml

from . import __version__
from . import posterior as post
from .exceptions import (
    ConfigError,
    DataError,
    FormulaError,
    PrinstratError,
    SamplerError,
    StrataError,
    UnstableEstimateError,
)
from .formula import read_csv
from .model import PsModel, build_model
from .mrweight import STRATA, fit_scores, tau_weighting, wald_cace
from .priors import PRIOR_CLASSES, PriorSpec
from .sampler import STAT_NAMES, DrawMatrix, SamplerConfig, diagnose, sample
from .simgen import DESIGNS, SimDesign, generate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SAMPLER, EXIT_DIAGNOSTICS = 0, 2, 3, 4, 5

_SAMPLER_KEYS = ("chains", "warmup", "iter", "seed", "target_accept", "max_treedepth", "cores", "refresh",
                 "init_radius", "init_tries")
_TOP_KEYS = {"data", "S.formula", "Y.formula", "Y.family", "strata", "ER", "survival.time.points",
             "sampler", "out", "seed"} | {f"prior_{c}" for c in PRIOR_CLASSES}
_AXES = {"z": "z", "Z": "z", "s": "stratum", "S": "stratum", "stratum": "stratum",
         "t": "time", "T": "time", "time": "time"}


# --------------------------------------------------------------------- config


@dataclass
class RunConfig:
    data: str
    s_formula: str
    y_formula: str
    family: object = "gaussian"
    strata: dict = field(default_factory=lambda: {"n": "00*", "c": "01", "a": "11*"})
    er: object = None
    priors: dict = field(default_factory=dict)
    time_points: object = 10
    sampler: dict = field(default_factory=dict)
    out: str | None = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("the configuration must be a mapping")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration key(s) {sorted(unknown)}; "
                              f"allowed: {sorted(_TOP_KEYS)}")
        for key in ("data", "S.formula", "Y.formula"):
            if key not in raw:
                raise ConfigError(f"configuration is missing {key!r}")
        sampler = dict(raw.get("sampler") or {})
        bad = set(sampler) - set(_SAMPLER_KEYS)
        if bad:
            raise ConfigError(f"unknown sampler key(s) {sorted(bad)}; allowed: {list(_SAMPLER_KEYS)}")
        if "seed" in raw:
            if "seed" in sampler and sampler["seed"] != raw["seed"]:
                raise ConfigError("'seed' and 'sampler.seed' disagree")
            sampler["seed"] = raw["seed"]
        strata = raw.get("strata") or {"n": "00*", "c": "01", "a": "11*"}
        if not isinstance(strata, dict):
            raise ConfigError("'strata' must map stratum names to labels")
        priors = {c: raw[f"prior_{c}"] for c in PRIOR_CLASSES if raw.get(f"prior_{c}") is not None}
        return cls(
            data=str(raw["data"]),
            s_formula=str(raw["S.formula"]),
            y_formula=str(raw["Y.formula"]),
            family=raw.get("Y.family", "gaussian"),
            strata={str(k): str(v) for k, v in strata.items()},
            er=raw.get("ER"),
            priors=priors,
            time_points=raw.get("survival.time.points", 10),
            sampler=sampler,
            out=raw.get("out"),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"configuration file {path} not found")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        return cls.from_dict(raw, str(path.parent))

    @property
    def data_path(self) -> Path:
        p = Path(self.data)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def sampler_config(self) -> SamplerConfig:
        try:
            return SamplerConfig(**{k: v for k, v in self.sampler.items()})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def prior_spec(self) -> PriorSpec:
        return PriorSpec(self.priors)

    def to_dict(self, data: str | None = None) -> dict:
        d = {
            "data": data if data is not None else self.data,
            "S.formula": self.s_formula,
            "Y.formula": self.y_formula,
            "Y.family": self.family,
            "strata": self.strata,
            "survival.time.points": self.time_points,
            "sampler": dict(self.sampler),
        }
        if self.er is not None:
            d["ER"] = self.er
        for c, p in sorted(self.priors.items()):
            d[f"prior_{c}"] = p
        return d


def _sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _sha256_file(path) -> str:
    return _sha256_bytes(Path(path).read_bytes())


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()


def _versions() -> dict:
    return {"prinstrat": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "python": platform.python_version()}


def run_hash(cfg: RunConfig, data_sha: str) -> str:
    """Identity of a run: config (minus output-only settings), data and versions."""
    c = cfg.to_dict(data="<data>")
    c["sampler"] = {k: v for k, v in c["sampler"].items() if k != "refresh"}
    c["strata"] = [list(kv) for kv in c["strata"].items()]  # order sets the reference
    return _sha256_bytes(_canonical({"config": c, "data_sha256": data_sha, "versions": _versions()}))


# --------------------------------------------------------------------- bundle


def _load_data(path) -> pd.DataFrame:
    if not Path(path).exists():
        raise DataError(f"data file {path} not found")
    return read_csv(path)


def build_from_config(cfg: RunConfig, data: pd.DataFrame) -> PsModel:
    return build_model(cfg.s_formula, cfg.y_formula, cfg.family, data, cfg.strata, cfg.er,
                       cfg.prior_spec())


def write_bundle(out: Path, cfg: RunConfig, data_path: Path, draws: DrawMatrix, manifest_hash: str,
                 data_sha: str, csv: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(data_path, out / "data.csv")
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(data="data.csv"), sort_keys=False))
    np.save(out / "draws.npy", draws.draws)
    np.save(out / "stats.npy", np.stack([draws.stats[k] for k in STAT_NAMES], axis=-1))
    np.save(out / "adaptation.npy", np.column_stack([draws.step_size, draws.inv_metric]))
    (out / "params.json").write_text(json.dumps({"names": draws.names, "stats": list(STAT_NAMES)}, indent=1) + "\n")
    diag = diagnose(draws).to_dict() if draws.n_draws >= 4 else {}
    diag["manifest_hash"] = manifest_hash
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=1, sort_keys=True) + "\n")
    if csv:
        df = draws.to_frame()
        with open(out / "draws.csv", "w") as fh:
            fh.write(f"# manifest_hash={manifest_hash}\n")
            df.to_csv(fh, index=False, float_format="%.17g")
    files = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    manifest = {
        "manifest_hash": manifest_hash,
        "seed": int(cfg.sampler_config().seed),
        "data_sha256": data_sha,
        "versions": _versions(),
        "files": {f: _sha256_file(out / f) for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return diag


@dataclass
class Bundle:
    path: Path
    config: RunConfig
    model: PsModel
    draws: DrawMatrix
    manifest: dict

    @property
    def manifest_hash(self) -> str:
        return self.manifest["manifest_hash"]


def load_bundle(path) -> Bundle:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise ConfigError(f"{path} is not a fit bundle (manifest.json missing)")
    manifest = json.loads((path / "manifest.json").read_text())
    cfg = RunConfig.load(path / "config.yaml")
    data = _load_data(cfg.data_path)
    model = build_from_config(cfg, data)
    meta = json.loads((path / "params.json").read_text())
    arr = np.load(path / "draws.npy")
    st = np.load(path / "stats.npy")
    adapt = np.load(path / "adaptation.npy")
    stats = {k: st[..., i] for i, k in enumerate(meta["stats"])}
    draws = DrawMatrix(arr, list(meta["names"]), stats, adapt[:, 0], adapt[:, 1:], cfg.sampler_config())
    if draws.names != model.param_names:
        raise ConfigError("bundle draws do not match the model rebuilt from its configuration")
    return Bundle(path, cfg, model, draws, manifest)


# ------------------------------------------------------------------- commands


def _emit(table: post.SummaryTable, out, manifest_hash: str, title: str | None = None):
    if title:
        print(title)
    print(table)
    if out:
        table.to_csv(out, header_lines=[f"manifest_hash={manifest_hash}"])


def cmd_simulate(args) -> int:
    overrides = {}
    if args.probs:
        overrides["probs"] = [float(v) for v in args.probs.split(",")]
    design = SimDesign(args.design, n=args.n, seed=args.seed if args.seed is not None else 1,
                       overrides=overrides)
    data, truth = generate(design)
    if args.out:
        data.to_csv(args.out, index=False, float_format="%.17g")
    else:
        data.to_csv(sys.stdout, index=False, float_format="%.17g")
    if args.truth:
        truth.to_json(args.truth)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.sampler["seed"] = args.seed
    if args.refresh is not None:
        cfg.sampler["refresh"] = args.refresh
    out = Path(args.out or cfg.out or "fit")
    scfg = cfg.sampler_config()
    data = _load_data(cfg.data_path)
    model = build_from_config(cfg, data)
    data_sha = _sha256_file(cfg.data_path)
    mhash = run_hash(cfg, data_sha)
    draws = sample(model, scfg)
    diag = write_bundle(out, cfg, cfg.data_path, draws, mhash, data_sha, csv=args.csv)
    print(f"wrote {out} ({draws.n_chains} chains x {draws.n_draws} draws, {draws.width} parameters)")
    flagged = diag.get("rhat_flag") or diag.get("divergence_flag")
    if flagged:
        msgs = []
        if diag.get("rhat_flag"):
            msgs.append(f"max R-hat {diag['max_rhat']:.3f} exceeds 1.05")
        if diag.get("divergence_flag"):
            msgs.append(f"{diag['n_divergent']} divergent transitions")
        print("warning: " + "; ".join(msgs), file=sys.stderr)
        if args.strict:
            return EXIT_DIAGNOSTICS
    return EXIT_OK


def cmd_summary(args) -> int:
    b = load_bundle(args.bundle)
    table = post.summarize(post.strata_proportions(b.draws, b.model))
    _emit(table, args.out, b.manifest_hash)
    return EXIT_OK


def _parse_times(text):
    if text is None:
        return None
    parts = [p for p in str(text).split(",") if p.strip()]
    if len(parts) == 1 and parts[0].strip().isdigit():
        return int(parts[0])
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"cannot read time points {text!r}") from None


def _outcome_cube(b: Bundle, times):
    if b.model.family_spec.is_survival:
        tp = times if times is not None else b.config.time_points
        return post.survival_outcome(b.draws, b.model, tp)
    if times is not None:
        raise ConfigError("--times applies to survival outcomes only")
    return post.outcome_means(b.draws, b.model)


def _write_long(cube: post.EstimandCube, path, manifest_hash: str):
    with open(path, "w") as fh:
        fh.write(f"# manifest_hash={manifest_hash}\n")
        cube.to_long().to_csv(fh, index=False, float_format="%.10g")


def cmd_outcome(args) -> int:
    b = load_bundle(args.bundle)
    cube = _outcome_cube(b, _parse_times(args.times))
    _emit(post.summarize(cube), args.out, b.manifest_hash)
    if args.long:
        _write_long(cube, args.long, b.manifest_hash)
    return EXIT_OK


def cmd_contrast(args) -> int:
    b = load_bundle(args.bundle)
    axes = []
    for a in args.contrast.split(","):
        a = a.strip()
        if a not in _AXES:
            raise ConfigError(f"unknown contrast axis {a!r}; use Z, S or T")
        axes.append(_AXES[a])
    cube = _outcome_cube(b, _parse_times(args.times))
    missing = [a for a in axes if a not in cube.axes]
    if missing:
        raise ConfigError(f"contrast axis {missing[0]!r} is not present (axes: {cube.axes})")
    try:
        res = post.contrast(cube, axes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _emit(post.summarize(res), args.out, b.manifest_hash)
    if args.long:
        _write_long(res, args.long, b.manifest_hash)
    return EXIT_OK


def cmd_mr(args) -> int:
    if args.config:
        cfg = RunConfig.load(args.config)
        data_path = cfg.data_path
        formula = cfg.s_formula
        outcome = args.outcome or cfg.y_formula.split("~")[0].split("+")[0].strip()
    else:
        if not (args.data and args.formula):
            raise ConfigError("mr needs a config file or both --data and --formula")
        data_path, formula, outcome = Path(args.data), args.formula, args.outcome or "Y"
    data = _load_data(data_path)
    fits = fit_scores(data, formula)
    seed = args.seed if args.seed is not None else 0
    rows = [tau_weighting(data, fits, s, outcome=outcome, assumption=args.assumption,
                          n_boot=args.n_boot, seed=seed).as_row() for s in STRATA]
    table = pd.DataFrame(rows)
    table["wald_cace"] = wald_cace(data, fits.treatment, fits.intermediate, outcome)
    ident = _sha256_bytes(_canonical({"data_sha256": _sha256_file(data_path), "formula": formula,
                                      "outcome": outcome, "assumption": args.assumption,
                                      "n_boot": args.n_boot, "seed": seed, "versions": _versions()}))
    print(table.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(f"# manifest_hash={ident}\n")
            table.to_csv(fh, index=False, float_format="%.10g")
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prinstrat", description="Bayesian principal stratification")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a benchmark dataset")
    s.add_argument("--design", required=True, choices=DESIGNS)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--probs", default=None, help="comma-separated stratum probabilities")
    s.add_argument("--out", default=None, help="CSV path (default: stdout)")
    s.add_argument("--truth", default=None, help="JSON path for the true estimands")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="sample the posterior and write a fit bundle")
    f.add_argument("config")
    f.add_argument("--out", default=None)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--refresh", type=int, default=None)
    f.add_argument("--csv", action="store_true", help="also write draws.csv")
    f.add_argument("--strict", action="store_true", help="exit 5 on R-hat or divergence warnings")
    f.set_defaults(func=cmd_fit)

    for name, func, help_ in (("summary", cmd_summary, "stratum proportions"),
                              ("outcome", cmd_outcome, "potential-outcome means or survival curves"),
                              ("contrast", cmd_contrast, "nested contrasts of outcomes")):
        c = sub.add_parser(name, help=help_)
        c.add_argument("bundle")
        c.add_argument("--out", default=None, help="CSV path for the summary table")
        c.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
        c.add_argument("--refresh", type=int, default=None, help=argparse.SUPPRESS)
        if name != "summary":
            c.add_argument("--times", default=None, help="survival grid: integer m or t1,t2,...")
            c.add_argument("--long", default=None, help="long-format CSV of every draw")
        if name == "contrast":
            c.add_argument("--contrast", default="Z", help="axes to difference in order, e.g. Z or Z,S")
        c.set_defaults(func=func)

    m = sub.add_parser("mr", help="principal-score weighting estimates")
    m.add_argument("config", nargs="?", default=None)
    m.add_argument("--data", default=None)
    m.add_argument("--formula", default=None, help="'Z + D ~ X1 + X2'")
    m.add_argument("--outcome", default=None)
    m.add_argument("--assumption", default="ER", choices=("ER", "PI"))
    m.add_argument("--n-boot", type=int, default=500)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--refresh", type=int, default=None, help=argparse.SUPPRESS)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_mr)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormulaError, StrataError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, UnstableEstimateError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except PrinstratError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
