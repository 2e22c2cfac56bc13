"""Plain-text persistence of truth fields, bases, quadrature weights and metric tables.

Every writer formats floats with ``repr`` (shortest round-trip) and sorts
keys, so identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .eqp import EqpWeights
from .errors import ConfigurationError
from .fem import FeFunction, node_coordinates
from .mesh import Domain, StructuredMesh
from .rom import GlobalBasis

METRICS_HEADER = (
    "mu_a", "mu_sigma", "mu_c1", "mu_c2", "iter", "N_l", "k",
    "e_sln", "e_qoi", "e_est", "E", "J", "cost_norm",
)


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        raise TypeError("booleans are not numeric fields")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: Path):
    return json.loads(_require(path).read_text())


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _require(path: Path) -> Path:
    if not path.exists():
        raise ConfigurationError(f"missing artifact: {path}")
    return path


# ---- nodal fields ----

def write_field(path: Path, fn: FeFunction) -> None:
    """``x1 x2 value`` per node, x fastest."""
    xs, ys = node_coordinates(fn.mesh, fn.p)
    lines = [f"# mesh {fn.mesh.nx} {fn.mesh.ny} p {fn.p}", "x1 x2 value"]
    C = fn.coefficients
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            lines.append(f"{fmt(x)} {fmt(y)} {fmt(C[i, j])}")
    path.write_text("\n".join(lines) + "\n")


def write_point_values(path: Path, pts, values) -> None:
    lines = ["x1 x2 value"] + [f"{fmt(x)} {fmt(y)} {fmt(v)}" for (x, y), v in zip(np.asarray(pts), values)]
    path.write_text("\n".join(lines) + "\n")


def read_field(path: Path, domain: Domain) -> FeFunction:
    text = _require(path).read_text().splitlines()
    _, nx, ny, _, p = text[0][1:].split()
    nx, ny, p = int(nx), int(ny), int(p)
    vals = np.array([float(line.split()[2]) for line in text[2:]])
    C = vals.reshape(p * ny + 1, p * nx + 1).T
    return FeFunction(StructuredMesh(domain, nx, ny), p, np.ascontiguousarray(C))


# ---- global basis ----

def write_basis(path: Path, basis: GlobalBasis) -> None:
    """One mode per row after a short header; singular values on the header line."""
    m = basis.mesh
    n_nodes = basis.modes[0].size if basis.k else 0
    head = [
        f"# k {basis.k} nodes {n_nodes} p {basis.p} mesh {m.nx} {m.ny}",
        "# singular_values " + " ".join(fmt(s) for s in basis.singular_values),
    ]
    rows = [",".join(fmt(v) for v in mode.ravel()) for mode in basis.modes]
    path.write_text("\n".join(head + rows) + "\n")


def read_basis(path: Path, domain: Domain) -> GlobalBasis:
    lines = _require(path).read_text().splitlines()
    tok = lines[0][1:].split()
    k, n_nodes, p, nx, ny = int(tok[1]), int(tok[3]), int(tok[5]), int(tok[7]), int(tok[8])
    sv = np.array([float(s) for s in lines[1].split()[2:]])
    modes = np.array([[float(v) for v in row.split(",")] for row in lines[2 : 2 + k]]).reshape(k, p * nx + 1, p * ny + 1)
    if modes[0].size != n_nodes:
        raise ConfigurationError(f"{path}: node count mismatch")
    return GlobalBasis(StructuredMesh(domain, nx, ny), p, modes, sv)


# ---- quadrature weights ----

def write_weights(path: Path, weights: dict[int, EqpWeights]) -> None:
    """``patch_id,n_cells,cell,rho`` for each nonzero weight."""
    lines = ["patch_id,n_cells,cell,rho"]
    for pid in sorted(weights):
        w = weights[pid]
        lines += [f"{pid},{w.rho.size},{int(c)},{fmt(w.rho[c])}" for c in w.nonzero]
    path.write_text("\n".join(lines) + "\n")


def read_weights(path: Path) -> dict[int, EqpWeights]:
    with _require(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out: dict[int, np.ndarray] = {}
    for r in rows:
        pid = int(r["patch_id"])
        rho = out.setdefault(pid, np.zeros(int(r["n_cells"])))
        rho[int(r["cell"])] = float(r["rho"])
    return {pid: EqpWeights(pid, rho) for pid, rho in out.items()}


# ---- metric tables ----

def write_metrics(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row[c]) for c in METRICS_HEADER) + "\n")


def read_metrics(path: Path) -> list[dict]:
    with _require(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ConfigurationError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: (int(v) if k in ("iter", "N_l", "k") else float(v)) for k, v in r.items()} for r in reader]
