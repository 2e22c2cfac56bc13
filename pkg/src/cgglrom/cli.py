"""Command-line pipeline: ``reference``, ``train``, ``solve`` and ``report``.

All behaviour comes from a YAML run configuration; the output directory can be
overridden with ``CGGLROM_OUTPUT_DIR``. Exit codes: 0 ok, 2 configuration or
validation, 3 I/O, 4 solver, 5 quadrature training.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import io
from .cggl import build_trial_space, reconstruct
from .dwr_adapt import adaptive_solve
from .eqp import DEFAULT_TOL, train_eqp
from .errors import (
    CgglError,
    ConfigurationError,
    InfeasibleError,
    InvalidArgumentError,
    OutOfDomainError,
    PreconditionError,
    SolverError,
    UnsupportedConfigurationError,
)
from .fem import node_coordinates
from .mesh import Domain, build_patch_grid
from .metrics import Truth, solve_truth
from .problem import Parameter
from .rom import ReferenceDiscretization, compute_snapshot, pod

log = logging.getLogger("cgglrom")

OUTPUT_ENV = "CGGLROM_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER, EXIT_EQP = 0, 2, 3, 4, 5

# keys that determine the trained artifacts; the manifest hash covers exactly these
_TRAIN_KEYS = ("domain", "reference_resolution", "patches", "base_res", "p", "k", "train", "delta_dv", "delta_rp", "eqp")


def _pairs(v, name, cast=float):
    v = list(v)
    if len(v) != 2:
        raise ConfigurationError(f"{name} must have two entries")
    return [cast(x) for x in v]


def _mu_list(v, name):
    out = []
    for row in v or []:
        row = [float(x) for x in row]
        if len(row) != 4:
            raise ConfigurationError(f"{name}: each parameter needs 4 values (a, sigma, c1, c2), got {row}")
        out.append(row)
    return out


@dataclass
class RunConfig:
    """Validated run configuration. Unknown keys are rejected."""

    domain: list = field(default_factory=lambda: [[0.0, 0.0], [8.0, 8.0]])
    reference_resolution: int = 72
    patches: list = field(default_factory=lambda: [4, 4])
    base_res: list = field(default_factory=lambda: [6, 6])
    p: int = 2
    k: int = 3
    train: list = field(default_factory=list)
    test: object = field(default_factory=list)
    delta_dv: float = DEFAULT_TOL
    delta_rp: float = DEFAULT_TOL
    tol: float | None = None
    max_iter: int = 12
    eqp: bool = True
    output_dir: str = "output"
    seed: int = 0
    max_level: object = "auto"
    metrics: bool = True
    export_fields: bool = False
    timing: str = "wall"

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**d).validated()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validated(self) -> "RunConfig":
        try:
            lo, hi = self.domain
            self.domain = [_pairs(lo, "domain.lo"), _pairs(hi, "domain.hi")]
            dom = self.domain_obj
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad domain: {exc}") from exc
        self.patches = _pairs(self.patches, "patches", int)
        self.base_res = _pairs(self.base_res, "base_res", int)
        for name in ("reference_resolution", "p", "max_iter", "seed"):
            setattr(self, name, int(getattr(self, name)))
        if self.reference_resolution < 1 or self.p < 1 or min(self.patches + self.base_res) < 1:
            raise ConfigurationError("resolutions, patch counts and degree must be positive")
        if self.max_iter < 0:
            raise ConfigurationError("max_iter must be nonnegative")
        for name in ("delta_dv", "delta_rp") + (("tol",) if self.tol is not None else ()):
            v = float(getattr(self, name))
            if not v > 0:
                raise ConfigurationError(f"{name} must be positive")
            setattr(self, name, v)
        if self.timing not in ("wall", "off"):
            raise ConfigurationError("timing must be 'wall' or 'off'")
        if not (self.max_level in ("auto", None) or (isinstance(self.max_level, int) and self.max_level >= 0)):
            raise ConfigurationError("max_level must be 'auto', null or a nonnegative integer")
        for name in ("eqp", "metrics", "export_fields"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigurationError(f"{name} must be true or false")
        self.train = _mu_list(self.train, "train")
        if not isinstance(self.test, dict):
            self.test = _mu_list(self.test, "test")
        self.k = int(self.k)
        if self.k < 0 or (self.k > len(self.train) and self.train):
            raise ConfigurationError(f"k={self.k} must lie in [0, {len(self.train)}] (number of training parameters)")
        try:
            for mu in self.train + self.test_parameters():
                Parameter(*mu).validate(dom)
        except (InvalidArgumentError, OutOfDomainError) as exc:
            raise ConfigurationError(str(exc)) from exc
        return self

    @property
    def domain_obj(self) -> Domain:
        return Domain(tuple(self.domain[0]), tuple(self.domain[1]))

    def test_parameters(self) -> list[list[float]]:
        """Explicit list, or ``{sample: n, bounds: [[lo, hi] x 4]}`` drawn with ``seed``."""
        if not isinstance(self.test, dict):
            return self.test
        extra = sorted(set(self.test) - {"sample", "bounds"})
        if extra:
            raise ConfigurationError(f"unknown test keys: {', '.join(extra)}")
        try:
            n = int(self.test["sample"])
            bounds = np.array(self.test["bounds"], dtype=float).reshape(4, 2)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad test sampling spec: {exc}") from exc
        rng = np.random.default_rng(self.seed)
        return rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, 4)).tolist()

    def train_hash(self) -> str:
        d = self.to_dict()
        return io.config_hash({key: d[key] for key in _TRAIN_KEYS})


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"configuration file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    cfg = RunConfig.from_dict(data)
    if os.environ.get(OUTPUT_ENV):
        cfg.output_dir = os.environ[OUTPUT_ENV]
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# ---- shared pieces ----

def _reference(cfg: RunConfig) -> ReferenceDiscretization:
    return ReferenceDiscretization.uniform(cfg.domain_obj, cfg.reference_resolution, cfg.p)


def _grid(cfg: RunConfig):
    return build_patch_grid(cfg.domain_obj, cfg.patches[0], cfg.patches[1], tuple(cfg.base_res))


def _truth_dir(cfg):
    return Path(cfg.output_dir) / "truth"


def _timed(cfg, t):
    return t if cfg.timing == "wall" else float("nan")


# ---- subcommands ----

def cmd_reference(cfg: RunConfig) -> int:
    tests = cfg.test_parameters()
    if not tests:
        log.info("empty test set; nothing to do")
        return EXIT_OK
    ref = _reference(cfg)
    out = _truth_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    index, timings = [], []
    for n, mu in enumerate(tests):
        truth = solve_truth(mu, ref)
        name = f"mu_{n:03d}.txt"
        io.write_field(out / name, truth.solution)
        index.append({"file": name, "mu": mu, "J": truth.J})
        timings.append({"file": name, "wall_time": _timed(cfg, truth.wall_time)})
        log.info("truth %s: J=%r", mu, truth.J)
    io.write_json(out / "index.json", {"reference_resolution": cfg.reference_resolution, "p": cfg.p, "entries": index})
    io.write_json(out / "timings.json", {"timing": cfg.timing, "entries": timings})
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    if cfg.k < 1:
        raise ConfigurationError("training needs k >= 1")
    if not cfg.train:
        raise ConfigurationError("empty training set")
    ref = _reference(cfg)
    snaps = [compute_snapshot(mu, ref) for mu in cfg.train]
    basis = pod(snaps, cfg.k)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_basis(out / "basis.csv", basis)
    files = ["basis.csv"]
    if cfg.eqp:
        weights = train_eqp(_grid(cfg), cfg.p, basis, cfg.train, cfg.delta_dv, cfg.delta_rp)
        io.write_weights(out / "weights.csv", weights)
        files.append("weights.csv")
        log.info("quadrature: %s nonzeros per patch", [weights[p].n_nonzero for p in sorted(weights)])
    io.write_json(out / "manifest.json", {"config_hash": cfg.train_hash(), "files": files, "k": cfg.k,
                                          "config": {key: cfg.to_dict()[key] for key in _TRAIN_KEYS}})
    return EXIT_OK


def _load_artifacts(cfg: RunConfig):
    out = Path(cfg.output_dir)
    manifest = io.read_json(out / "manifest.json")
    if manifest.get("config_hash") != cfg.train_hash():
        raise ConfigurationError(f"{out / 'manifest.json'}: artifacts were trained with a different configuration")
    basis = io.read_basis(out / "basis.csv", cfg.domain_obj)
    weights = io.read_weights(out / "weights.csv") if cfg.eqp else None
    return basis, weights


def _load_truths(cfg: RunConfig) -> dict[tuple, Truth]:
    d = _truth_dir(cfg)
    index = io.read_json(d / "index.json")
    if index["reference_resolution"] != cfg.reference_resolution or index["p"] != cfg.p:
        raise ConfigurationError(f"{d / 'index.json'}: truth computed on a different reference mesh")
    times = {e["file"]: e["wall_time"] for e in io.read_json(d / "timings.json")["entries"]}
    out = {}
    for e in index["entries"]:
        fn = io.read_field(d / e["file"], cfg.domain_obj)
        mu = Parameter(*e["mu"])
        out[tuple(mu)] = Truth(mu, fn, float(e["J"]), float(times.get(e["file"], float("nan"))))
    return out


def cmd_solve(cfg: RunConfig, mus=None) -> int:
    tests = cfg.test_parameters() if mus is None else mus
    basis, weights = _load_artifacts(cfg)
    truths = {}
    if cfg.metrics and tests:
        truths = _load_truths(cfg)
        missing = [mu for mu in tests if tuple(Parameter(*mu)) not in truths]
        if missing:
            raise ConfigurationError(f"no truth solution in {_truth_dir(cfg) / 'index.json'} for {missing[0]}")
    grid = _grid(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n, mu in enumerate(tests):
        mu = Parameter(*mu)
        truth = truths.get(tuple(mu))
        space = build_trial_space(grid, cfg.p, basis)
        U, final, hist = adaptive_solve(space, mu, weights, cfg.max_iter, cfg.tol, truth=truth, max_level=cfg.max_level)
        t_ref = truth.wall_time if truth is not None else float("nan")
        for rec in hist.records:
            cost = rec.wall_time / t_ref if cfg.timing == "wall" else float("nan")
            rows.append({"mu_a": mu.a, "mu_sigma": mu.sigma, "mu_c1": mu.c1, "mu_c2": mu.c2, "iter": rec.iteration,
                         "N_l": rec.n_local, "k": basis.k, "e_sln": rec.e_sln, "e_qoi": rec.e_qoi,
                         "e_est": rec.e_est, "E": rec.E, "J": rec.J, "cost_norm": cost})
        if cfg.export_fields:
            _export_fields(cfg, out / "fields", n, final, U, hist)
    if tests:
        io.write_metrics(out / "solve.csv", rows)
    return EXIT_OK


def _export_fields(cfg, d: Path, n: int, space, U, hist):
    d.mkdir(parents=True, exist_ok=True)
    xs, ys = node_coordinates(_reference(cfg).mesh, cfg.p)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    io.write_point_values(d / f"mu_{n:03d}_solution.txt", pts, reconstruct(space, U, pts)[0])
    eta = hist.estimates[-1].eta_patch
    (d / f"mu_{n:03d}_eta.csv").write_text(
        "patch_id,eta\n" + "".join(f"{pid},{io.fmt(v)}\n" for pid, v in enumerate(eta)))


REPORT_COLUMNS = ("e_sln", "e_qoi", "e_est", "N_l", "cost_norm")


def summarize(rows) -> list[dict]:
    """Arithmetic mean over parameters of each column, per ``(k, iter)``."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r["k"], r["iter"])].append(r)
    out = []
    for (k, it) in sorted(groups):
        g = groups[(k, it)]
        rec = {"k": k, "iter": it, "n_mu": len(g)}
        for c in REPORT_COLUMNS:
            rec["mean_" + c] = float(np.mean([r[c] for r in g]))
        out.append(rec)
    return out


def cmd_report(cfg: RunConfig, paths=None) -> int:
    paths = [Path(p) for p in paths] if paths else [Path(cfg.output_dir) / "solve.csv"]
    rows = [r for p in paths for r in io.read_metrics(p)]
    summary = summarize(rows)
    cols = ["k", "iter", "n_mu"] + ["mean_" + c for c in REPORT_COLUMNS]
    text = ",".join(cols) + "\n" + "".join(",".join(io.fmt(s[c]) for c in cols) + "\n" for s in summary)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---- entry point ----

def _parse_mu(s: str) -> list[float]:
    vals = [float(v) for v in s.split(",")]
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected a,sigma,c1,c2")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgglrom", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("reference", "truth solves for the test set"), ("train", "POD basis and quadrature weights"),
                        ("solve", "adaptive solves and metrics CSV"), ("report", "mean metrics per iteration")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML run configuration")
        if name == "solve":
            p.add_argument("--mu", type=_parse_mu, action="append", help="solve at a,sigma,c1,c2 instead of the test set")
        if name == "report":
            p.add_argument("csv", nargs="*", help="metrics CSVs to merge (default: <output_dir>/solve.csv)")
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, InfeasibleError):
        return EXIT_EQP
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    if isinstance(exc, (ConfigurationError, InvalidArgumentError, OutOfDomainError, PreconditionError,
                        UnsupportedConfigurationError, CgglError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "reference":
            return cmd_reference(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "solve":
            if args.mu:
                RunConfig.from_dict({**cfg.to_dict(), "test": args.mu})
            return cmd_solve(cfg, args.mu)
        return cmd_report(cfg, args.csv)
    except (CgglError, OSError) as exc:
        code = exit_code(exc)
        print(f"cgglrom {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
