"""Command-line entry point: ``borrowbench analyze | describe | datasets``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import resolve_methods, resolve_sigma_ref, run_methods
from .conjugate import BetaParams, NormalParams
from .data import BUILTIN_DATASETS, Endpoint, builtin_dataset, load_study_set, serialize
from .errors import BorrowError, IoFailure, NumericalError, UnknownDataset, UnknownMethod
from .inference import ChainSpec
from .methods import CONFIG_TYPES, check_method, default_config
from .report import FORMATS, Report, build_report, emit

log = logging.getLogger("borrowbench")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
RHAT_WARN = 1.01
DEFAULT_FORMATS = ("json", "csv")
RUN_INFO = "run_info.json"

DESCRIPTIONS = {
    "current_only": {
        "mechanism": "No borrowing: conjugate analysis of the current control arm alone (reference analysis).",
        "conflict": "None.",
        "summary": "No source-level summary; EHSS is not reported.",
    },
    "map": {
        "mechanism": "Meta-analytic predictive prior: a hierarchical model across historical controls gives "
                     "a predictive distribution for the current control, approximated by a conjugate mixture.",
        "conflict": "Between-study heterogeneity tau (half-normal prior).",
        "summary": "No source-level summary; borrowing is summarised by EHSS only.",
    },
    "robust_map": {
        "mechanism": "MAP prior mixed with a vague robust component of weight w_R.",
        "conflict": "Robust component weight w_R and between-study heterogeneity tau.",
        "summary": "No source-level summary; borrowing is summarised by EHSS only.",
    },
    "dpm_map": {
        "mechanism": "MAP prior whose between-study heterogeneity is a Dirichlet process mixture over "
                     "heterogeneity levels rather than a single tau.",
        "conflict": "Mixture over heterogeneity components.",
        "summary": "No source-level summary; borrowing is summarised by EHSS only.",
    },
    "dmpp": {
        "mechanism": "Dependent modified power prior: each historical likelihood is raised to a power "
                     "gamma_k in [0, 1], the powers sharing a beta hyperprior.",
        "conflict": "Source-specific power parameters gamma_k.",
        "summary": "Posterior mean gamma_k on a 0-1 scale: the fraction of source k's information used.",
    },
    "uip": {
        "mechanism": "Unit-information prior: sources enter through weights w_k on unit-information "
                     "summaries, scaled by a total prior sample size M.",
        "conflict": "Dirichlet source weights w_k and the total prior size M.",
        "summary": "M * w_k: contribution of source k to the constructed prior, in patient units "
                   "(not a 0-1 scale; excluded from the heatmap).",
    },
    "pbm_hs": {
        "mechanism": "Bias model: each historical control equals the current control plus a bias "
                     "beta_k with a horseshoe shrinkage prior.",
        "conflict": "Source-specific bias beta_k with local (lambda_k) and global (tau) horseshoe scales.",
        "summary": "Posterior bias summaries and Pr(|beta_k| > threshold) are conflict/compatibility "
                   "summaries, not borrowing amounts.",
    },
    "mem": {
        "mechanism": "Multisource exchangeability models: Bayesian model averaging over exchangeability "
                     "patterns, each pattern pooling the current control with a subset of sources.",
        "conflict": "Exchangeability indicators for each source.",
        "summary": "Posterior exchangeability probability p_EX,k on a 0-1 scale.",
    },
    "dpm": {
        "mechanism": "Dirichlet process mixture over control-arm parameters: arms that cluster with the "
                     "current control share its parameter.",
        "conflict": "Cluster assignments and the DP concentration M_DP.",
        "summary": "Shared-clustering borrowing index SBI_k: posterior probability that source k shares "
                   "the current control's cluster (0-1 scale).",
    },
    "ddpm": {
        "mechanism": "Dependent Dirichlet process mixture: historical and current controls share atoms "
                     "but have dependent mixture weights.",
        "conflict": "Cluster assignments, group-specific weights and the dependence parameter.",
        "summary": "Shared-clustering borrowing index SBI_k (0-1 scale).",
    },
}


@dataclass
class RunConfig:
    dataset: Optional[str] = None  # builtin name or CSV path
    endpoint: Optional[str] = None
    methods: list[str] = field(default_factory=lambda: ["all"])
    overrides: dict[str, dict[str, Any]] = field(default_factory=dict)
    chain: dict[str, int] = field(default_factory=dict)
    seed: int = 1
    sigma_ref: Optional[float] = None
    output_dir: str = "borrowbench_out"
    formats: list[str] = field(default_factory=lambda: list(DEFAULT_FORMATS))
    mixture_components: int = 3
    em_restarts: int = 20


_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"overrides"}


def _split_list(value: Any) -> list[str]:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def load_config(path: str) -> RunConfig:
    """JSON object with run settings plus one flat override block per method,
    e.g. ``{"dataset": "as_binary", "map": {"tau_prior_scale": 1.0}}``."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    cfg = RunConfig()
    for key, value in raw.items():
        if key in CONFIG_TYPES:
            if not isinstance(value, dict):
                raise ValueError(f"override block for {key!r} must be an object")
            cfg.overrides[key] = value
        elif key in _RUN_KEYS:
            setattr(cfg, key, value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg.methods = _split_list(cfg.methods)
    cfg.formats = _split_list(cfg.formats)
    return cfg


def _coerce(value: Any) -> Any:
    """Prior parameter dicts become BetaParams / NormalParams."""
    if isinstance(value, dict):
        if set(value) == {"a", "b"}:
            return BetaParams(float(value["a"]), float(value["b"]))
        if set(value) == {"m", "v"}:
            return NormalParams(float(value["m"]), float(value["v"]))
        raise ValueError(f"cannot interpret {value!r} as a prior (use {{a, b}} or {{m, v}})")
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def method_config(name: str, overrides: Optional[dict[str, Any]]) -> Any:
    cls = CONFIG_TYPES[check_method(name)]
    if cls is None:
        if overrides:
            raise ValueError(f"{name} takes no settings")
        return None
    if not overrides:
        return default_config(name)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise ValueError(f"unknown setting(s) for {name}: {', '.join(unknown)}")
    return cls(**{k: _coerce(v) for k, v in overrides.items()})


def _load_data(cfg: RunConfig):
    if cfg.dataset is None:
        raise ValueError("no dataset given (use --builtin, --data or 'dataset' in the config)")
    if cfg.dataset in BUILTIN_DATASETS:
        data = builtin_dataset(cfg.dataset)
        if cfg.endpoint is not None and Endpoint(cfg.endpoint) is not data.endpoint:
            raise ValueError(f"{cfg.dataset} has a {data.endpoint.value} endpoint")
        return data
    if cfg.endpoint is None:
        raise ValueError("--endpoint is required with a CSV data file")
    try:
        text = Path(cfg.dataset).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read data file {cfg.dataset}: {exc}") from exc
    return load_study_set(text, cfg.endpoint)


def _fmt(x: Optional[float], spec: str) -> str:
    return "n/a" if x is None or not np.isfinite(x) else format(x, spec)


@dataclass
class Analysis:
    runs: list
    report: Report
    formats: list[str]


def _validate(cfg: RunConfig):
    data = _load_data(cfg)
    methods = resolve_methods(cfg.methods)
    formats = list(dict.fromkeys(cfg.formats))
    bad = [f for f in formats if f not in FORMATS]
    if bad or not formats:
        raise ValueError(f"unknown output format(s): {', '.join(bad) or '(none)'}")
    unused = sorted(set(cfg.overrides) - set(methods))
    if unused:
        log.warning("settings given for methods that are not run: %s", ", ".join(unused))
    configs = {m: method_config(m, cfg.overrides.get(m)) for m in methods}
    spec = ChainSpec(seed=int(cfg.seed), **cfg.chain)
    sigma_ref = resolve_sigma_ref(data, cfg.sigma_ref)
    return data, methods, formats, configs, spec, sigma_ref


def analyze(cfg: RunConfig) -> Analysis:
    """Validate ``cfg``, fit every method and assemble the report (no files
    are written). Raises BorrowError / ValueError on bad input."""
    data, methods, formats, configs, spec, sigma_ref = _validate(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        runs = run_methods(data, methods, spec, configs, sigma_ref, cfg.mixture_components, cfg.em_restarts)
    for w in sorted({(w.category.__name__, str(w.message)) for w in caught}):
        log.warning("%s: %s", *w)
    effective = {
        "dataset": cfg.dataset,
        "endpoint": data.endpoint.value,
        "methods": methods,
        "method_settings": {m: (dataclasses.asdict(c) if c is not None else {}) for m, c in configs.items()},
        "chain": dataclasses.asdict(spec),
        "seed": spec.seed,
        "sigma_ref": sigma_ref,
        "mixture_components": cfg.mixture_components,
        "em_restarts": cfg.em_restarts,
        "formats": formats,
    }
    name = cfg.dataset if cfg.dataset in BUILTIN_DATASETS else Path(cfg.dataset).name
    return Analysis(runs, build_report(runs, data, effective, spec.seed, name), formats)


def summary_lines(analysis: Analysis) -> tuple[list[str], list[str]]:
    """One line per method, plus the methods whose max R-hat reaches the warning level."""
    lines, high = [], []
    by_method = {r.method: r for r in analysis.runs}
    for row in analysis.report.rows:
        rh = by_method[row.method].result.max_rhat()
        lines.append(f"{row.method:<13s} effect {row.effect_mean:+.4f} [{row.ci_low:+.4f}, {row.ci_high:+.4f}]  "
                     f"EHSS {_fmt(row.ehss, '.1f')}  max R-hat {_fmt(rh, '.4f')}")
        if np.isfinite(rh) and rh >= RHAT_WARN:
            high.append(f"{row.method} ({rh:.4f})")
    return lines, high


def run(cfg: RunConfig, out=None, err=None) -> int:
    """Run an analysis and write its outputs; returns the process exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    started = time.time()
    try:
        analysis = analyze(cfg)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=err)
        return EXIT_NUMERICAL
    except (BorrowError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_VALIDATION
    try:
        emit(analysis.report, analysis.formats, cfg.output_dir)
        # wall-clock details live here so results.json stays reproducible
        info = {"started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
                "elapsed_seconds": round(time.time() - started, 3), "version": __version__,
                "python": platform.python_version(), "numpy": np.__version__}
        (Path(cfg.output_dir) / RUN_INFO).write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    except (IoFailure, OSError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_VALIDATION
    lines, high = summary_lines(analysis)
    for line in lines:
        print(line, file=out)
    if high:
        print(f"warning: R-hat >= {RHAT_WARN} for {', '.join(high)}", file=err)
    return EXIT_OK


def describe(method: str) -> str:
    d = DESCRIPTIONS[check_method(method)]
    return (f"{method}\n  borrowing mechanism: {d['mechanism']}\n  conflict-related component: {d['conflict']}\n"
            f"  source-level summary: {d['summary']}\n")


def _datasets_text(name: Optional[str]) -> str:
    if name is not None:
        return serialize(builtin_dataset(name))
    lines = []
    for n in BUILTIN_DATASETS:
        d = builtin_dataset(n)
        lines.append(f"{n:<16s} {d.endpoint.value:<11s} {d.K} historical sources, "
                     f"n_CC={d.n_cc}, n_CT={d.current_treatment.n}")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="borrowbench", description="Bayesian borrowing from historical controls.")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", help="fit methods and write reports")
    a.add_argument("--config", help="JSON run configuration")
    a.add_argument("--builtin", help="bundled dataset name")
    a.add_argument("--data", help="CSV data file")
    a.add_argument("--endpoint", choices=[e.value for e in Endpoint])
    a.add_argument("--methods", help="comma-separated method list or 'all'")
    a.add_argument("--seed", type=int)
    a.add_argument("--sigma-ref", type=float, dest="sigma_ref")
    a.add_argument("--out", help="output directory")
    a.add_argument("--format", dest="formats", help="comma-separated subset of json,csv,svg")
    d = sub.add_parser("describe", help="describe a method's borrowing mechanism")
    d.add_argument("method")
    s = sub.add_parser("datasets", help="list bundled datasets, or print one as CSV")
    s.add_argument("name", nargs="?")
    return p


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.builtin and args.data:
        raise ValueError("use only one of --builtin and --data")
    if args.builtin or args.data:
        cfg.dataset = args.builtin or args.data
    if args.endpoint:
        cfg.endpoint = args.endpoint
    if args.methods:
        cfg.methods = _split_list(args.methods)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.sigma_ref is not None:
        cfg.sigma_ref = args.sigma_ref
    if args.out:
        cfg.output_dir = args.out
    if args.formats:
        cfg.formats = _split_list(args.formats)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "describe":
            sys.stdout.write(describe(args.method))
            return EXIT_OK
        if args.command == "datasets":
            sys.stdout.write(_datasets_text(args.name))
            return EXIT_OK
        cfg = config_from_args(args)
    except (UnknownMethod, UnknownDataset) as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BorrowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
