"""Batch front end: ``closedgeo {gamma-scan,find,verify,spectrum}``.

Each run reads one JSON config, fills in defaults and writes fixed-name files
into the output directory together with MANIFEST.json holding the
materialized config. Outputs carry no timestamps so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import spectrum as loop_spectrum
from .metric import BUILTIN_FORMS, PerturbationForm, builtin_form
from .reduction import (CircleParam, SearchConfig, decay_table, expansion_audit,
                        find_gamma_critical_points, gamma_slices, great_circle, random_param)
from .solver import MultiplicityConfig, RefineOptions, multiplicity_experiment


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class ExperimentConfig:
    N: int = 2
    perturbation: object = "odd_decay_aniso"
    eps: float = 0.02
    eps_list: list = field(default_factory=lambda: [0.04, 0.02, 0.01, 0.005])
    M: int = 256
    M_q: int = 128
    starts: int = 64
    seed: int = 0
    R_max: float = 20.0
    grad_tol: float = 1e-9
    kernel_tol: float = 1e-7
    dedup_tol: float | None = None
    scan_r: list = field(default_factory=lambda: [-10.0, 10.0])
    scan_points: int = 81
    scan_pq: int = 32
    verify_samples: int = 10
    decay_r: list = field(default_factory=lambda: [5.0, 10.0, 20.0])
    spectrum_r: float = 0.0
    output: str = "run"

    def form(self) -> PerturbationForm:
        p = self.perturbation
        if isinstance(p, str):
            return builtin_form(p, self.N)
        if "builtin" in p:
            return builtin_form(p["builtin"], self.N)
        return PerturbationForm.from_dict(p, self.N)

    def to_dict(self) -> dict:
        return {
            "manifold": {"N": self.N},
            "perturbation": self.perturbation,
            "eps": self.eps,
            "eps_list": self.eps_list,
            "discretization": {"M": self.M, "M_q": self.M_q},
            "search": {"starts": self.starts, "seed": self.seed, "R_max": self.R_max},
            "tolerances": {"grad_tol": self.grad_tol, "kernel_tol": self.kernel_tol,
                           "dedup_tol": self.dedup_tol},
            "scan": {"r": self.scan_r, "points": self.scan_points, "pq_samples": self.scan_pq},
            "verify": {"samples": self.verify_samples, "decay_r": self.decay_r},
            "spectrum": {"r": self.spectrum_r},
            "output": self.output,
        }

    def multiplicity(self, threads: int = 1) -> MultiplicityConfig:
        search = SearchConfig(starts=self.starts, seed=self.seed, R_max=self.R_max, M_q=self.M_q)
        refine = RefineOptions(tol=self.grad_tol, kernel_rel_tol=self.kernel_tol)
        return MultiplicityConfig(M=self.M, search=search, refine=refine,
                                  dedup_tol=self.dedup_tol, threads=threads)


_SECTIONS = {
    ("manifold", "N"): "N",
    ("discretization", "M"): "M",
    ("discretization", "M_q"): "M_q",
    ("search", "starts"): "starts",
    ("search", "seed"): "seed",
    ("search", "R_max"): "R_max",
    ("tolerances", "grad_tol"): "grad_tol",
    ("tolerances", "kernel_tol"): "kernel_tol",
    ("tolerances", "dedup_tol"): "dedup_tol",
    ("scan", "r"): "scan_r",
    ("scan", "points"): "scan_points",
    ("scan", "pq_samples"): "scan_pq",
    ("verify", "samples"): "verify_samples",
    ("verify", "decay_r"): "decay_r",
    ("spectrum", "r"): "spectrum_r",
}
_TOP = ("perturbation", "eps", "eps_list", "output")


def _number(path, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return kind(v)


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; unknown keys are errors."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a JSON object")
    cfg = ExperimentConfig()
    for key, val in doc.items():
        if key in _TOP:
            continue
        if not isinstance(val, dict) or not any(s == key for s, _ in _SECTIONS):
            raise ConfigError(f"{key}: unknown field")
        for sub, v in val.items():
            attr = _SECTIONS.get((key, sub))
            if attr is None:
                raise ConfigError(f"{key}.{sub}: unknown field")
            setattr(cfg, attr, v)
    for key in _TOP:
        if key in doc:
            setattr(cfg, key, doc[key])

    cfg.N = _number("manifold.N", cfg.N, int)
    if cfg.N < 1:
        raise ConfigError("manifold.N: must be >= 1")
    cfg.M = _number("discretization.M", cfg.M, int)
    if cfg.M < 8:
        raise ConfigError("discretization.M: must be >= 8")
    cfg.M_q = _number("discretization.M_q", cfg.M_q, int)
    if cfg.M_q < 8:
        raise ConfigError("discretization.M_q: must be >= 8")
    cfg.starts = _number("search.starts", cfg.starts, int)
    if cfg.starts < 1:
        raise ConfigError("search.starts: must be >= 1")
    cfg.seed = _number("search.seed", cfg.seed, int)
    if cfg.seed < 0:
        raise ConfigError("search.seed: must be >= 0")
    cfg.R_max = _number("search.R_max", cfg.R_max)
    if cfg.R_max <= 0:
        raise ConfigError("search.R_max: must be > 0")
    for path, attr in (("tolerances.grad_tol", "grad_tol"), ("tolerances.kernel_tol", "kernel_tol")):
        v = _number(path, getattr(cfg, attr))
        if v <= 0:
            raise ConfigError(f"{path}: must be > 0")
        setattr(cfg, attr, v)
    if cfg.dedup_tol is not None:
        cfg.dedup_tol = _number("tolerances.dedup_tol", cfg.dedup_tol)
        if cfg.dedup_tol <= 0:
            raise ConfigError("tolerances.dedup_tol: must be > 0")
    cfg.eps = _number("eps", cfg.eps)
    if not isinstance(cfg.eps_list, list) or not cfg.eps_list:
        raise ConfigError("eps_list: expected a non-empty list")
    cfg.eps_list = [_number(f"eps_list[{i}]", e) for i, e in enumerate(cfg.eps_list)]
    if not isinstance(cfg.scan_r, list) or len(cfg.scan_r) != 2:
        raise ConfigError("scan.r: expected [r_min, r_max]")
    cfg.scan_r = [_number("scan.r[0]", cfg.scan_r[0]), _number("scan.r[1]", cfg.scan_r[1])]
    cfg.scan_points = _number("scan.points", cfg.scan_points, int)
    cfg.scan_pq = _number("scan.pq_samples", cfg.scan_pq, int)
    if cfg.scan_points < 2 or cfg.scan_pq < 1:
        raise ConfigError("scan.points: need >= 2 points and >= 1 (p, q) sample")
    cfg.verify_samples = _number("verify.samples", cfg.verify_samples, int)
    if cfg.verify_samples < 1:
        raise ConfigError("verify.samples: must be >= 1")
    cfg.decay_r = [_number(f"verify.decay_r[{i}]", r) for i, r in enumerate(cfg.decay_r)]
    cfg.spectrum_r = _number("spectrum.r", cfg.spectrum_r)
    if not isinstance(cfg.output, str):
        raise ConfigError("output: expected a path string")

    p = cfg.perturbation
    if isinstance(p, str) and p not in BUILTIN_FORMS:
        raise ConfigError(f"perturbation: unknown builtin {p!r}; choose from {', '.join(BUILTIN_FORMS)}")
    try:
        cfg.form()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"perturbation: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n")


class Run:
    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, threads: int):
        self.command, self.cfg, self.out, self.threads = command, cfg, out, threads
        self.files: list = []
        self.summary: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.files.append(name)

    def json(self, name, doc):
        write_json(self.out / name, doc)
        self.files.append(name)

    def manifest(self, error: str | None = None):
        write_json(self.out / "MANIFEST.json", {
            "command": self.command, "version": __version__, "config": self.cfg.to_dict(),
            "threads": self.threads, "complete": error is None, "error": error,
            "files": self.files, "summary": self.summary,
        })


# ---------------------------------------------------------------------------
# commands


def cmd_gamma_scan(run: Run) -> None:
    cfg = run.cfg
    form = cfg.form()
    grid = np.linspace(cfg.scan_r[0], cfg.scan_r[1], cfg.scan_points)
    rows = gamma_slices(form, grid, n_pq=cfg.scan_pq, seed=cfg.seed, M_q=cfg.M_q)
    run.csv("gamma.csv", ["r", "gamma_min", "gamma_max"], rows)
    search = cfg.multiplicity().search
    search.threads = run.threads
    report = find_gamma_critical_points(form, search)
    run.json("critical_points.json", report.to_dict())
    run.summary = {"gamma_identically_zero": report.gamma_identically_zero,
                   "critical_points": len(report.critical_points),
                   "nondegenerate": report.predicted_count}


def cmd_find(run: Run) -> None:
    cfg = run.cfg
    rep = multiplicity_experiment(cfg.form(), cfg.eps, cfg.multiplicity(run.threads))
    run.json("critical_points.json", rep.reduction.to_dict())
    run.json("certificates.json", {"certificates": [c.to_dict() for c in rep.certificates],
                                   "evidence": rep.evidence})
    run.json("orbits.json", {"orbits": [o.to_dict() for o in rep.orbits]})
    run.summary = rep.summary()
    if rep.orbits:
        run.summary["min_pairwise_align_distance"] = (
            None if len(rep.orbits) < 2 else rep.min_pairwise_distance)


def cmd_verify(run: Run) -> None:
    cfg = run.cfg
    form = cfg.form()
    rng = np.random.default_rng(cfg.seed)
    params = [random_param(cfg.N, rng) for _ in range(cfg.verify_samples)]
    eps_list = sorted(cfg.eps_list, reverse=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # zero form: slope undefined
        rows, slope = expansion_audit(form, params, eps_list, cfg.M)
    run.csv("verify.csv", ["eps", "max_residual", "fitted_slope"], [(e, v, slope) for e, v in rows])
    eps = max(abs(e) for e in eps_list)
    decay = decay_table(form, params[0], cfg.decay_r, eps, cfg.M)
    run.csv("decay.csv", ["r", "phi_minus_b", "w_norm"], decay)
    run.summary = {"fitted_slope": slope, "max_residual": max(v for _, v in rows),
                   "decay_eps": eps}


def cmd_spectrum(run: Run) -> None:
    cfg = run.cfg
    form = cfg.form()
    z = great_circle(CircleParam.standard(cfg.N, cfg.spectrum_r), cfg.M)
    s = loop_spectrum(z, form, cfg.eps, cfg.kernel_tol)
    run.csv("spectrum.csv", ["index", "eigenvalue"], [(i, v) for i, v in enumerate(s.eigenvalues)])
    run.summary = s.to_dict()


COMMANDS = {"gamma-scan": cmd_gamma_scan, "find": cmd_find, "verify": cmd_verify,
            "spectrum": cmd_spectrum}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="closedgeo", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
    ap.add_argument("--out", type=Path, help="output directory (overrides config 'output')")
    ap.add_argument("--seed", type=int, help="overrides search.seed")
    ap.add_argument("--threads", type=int, default=1)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads: must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        ap.error("--seed: must be an unsigned 64-bit integer")
    try:
        doc = json.loads(args.config.read_text()) if args.config else {}
    except (OSError, json.JSONDecodeError) as exc:
        ap.error(f"--config: {exc}")
    if args.seed is not None:
        doc.setdefault("search", {})["seed"] = args.seed
    if args.out is not None:
        doc["output"] = str(args.out)
    try:
        cfg = parse_config(doc)
    except ConfigError as exc:
        ap.error(str(exc))
    run = Run(args.command, cfg, Path(cfg.output), args.threads)
    try:
        COMMANDS[args.command](run)
    except Exception as exc:  # partial outputs stay on disk
        run.manifest(f"{type(exc).__name__}: {exc}")
        print(f"closedgeo {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    run.manifest()
    print(json.dumps(run.summary, sort_keys=True, default=_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
