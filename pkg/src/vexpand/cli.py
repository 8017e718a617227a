"""Command-line front end.

    vexpand <command> [--config FILE] [--set KEY=JSON ...] [--mu X] [--n-max N]
                      [--output DIR] [--seed S] [--threads N]

Commands: weight, rate, spectrum, density, cesaro, certify-example, oracle-check.
Each run writes ``report.json`` (plus CSV artifacts for spectral commands)
into the output directory and prints the report path.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 certification or check failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import cotangent, oracles, spectral
from .dynamics import CircleExpand, _SkewProduct, describe_map, make_map
from .errors import ConfigError, VexpandError

SCHEMA = "vexpand.report/1"
COMMANDS = ("weight", "rate", "spectrum", "density", "cesaro", "certify-example", "oracle-check")

DEFAULTS = {
    "map": None,
    "mu": 1.0,
    "n_max": 1,
    "node_budget": 10**7,
    "grid": {"spatial": 64, "directions": 64, "refine": False, "certified": False, "polish": 0},
    "spectral": {"K": [8, 16], "N": None, "count": 16},
    "oracle": {
        "checks": ["bessel", "pointwise", "histogram"],
        "samples": 100000,
        "n_points": 10000, "n_iter": 1100, "burn_in": 100, "bins": 64,
        "bessel": {"m": 4, "a": 4.0, "K": 6},
        "pointwise_K": 16,
        "identity_samples": 100,
    },
    "certify": {"m": None, "q_samples": 512, "directions": 1024},
    "cesaro": {"u": "cos", "m": 100, "K": 32},
    "seed": 42,
    "threads": None,
    "output": "vexpand-out",
}

TOLERANCES = {
    "bessel": 1e-8,
    "pointwise": 1e-8,
    "histogram": 0.02,
    "dense_sup": 1e-3,
    "scale_invariance": 1e-12,
    "factorization": 1e-12,
    "mu_zero": 1e-12,
    "submultiplicativity": 1e-9,
    "mass_row": 1e-10,
    "shift_structure": 1e-12,
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and key != "map":
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _require(cond, field_name, msg):
    if not cond:
        raise ConfigError(f"{field_name}: {msg}")


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        cfg = cls(_merge(DEFAULTS, raw))
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def validate(self):
        d = self.data
        _require(isinstance(d["mu"], (int, float)) and math.isfinite(d["mu"]), "mu", "must be a finite number")
        _require(isinstance(d["n_max"], int) and 1 <= d["n_max"] <= 64, "n_max", "must be an integer in [1, 64]")
        _require(isinstance(d["node_budget"], int) and d["node_budget"] >= 1, "node_budget", "must be a positive integer")
        g = d["grid"]
        for key in ("spatial", "directions"):
            _require(isinstance(g[key], int) and 1 <= g[key] <= 1 << 16, f"grid.{key}",
                     "must be an integer in [1, 65536]")
        _require(isinstance(g["polish"], int) and g["polish"] >= 0, "grid.polish", "must be a nonnegative integer")
        s = d["spectral"]
        _require(isinstance(s["K"], list) and s["K"] and all(isinstance(k, int) and 1 <= k <= 512 for k in s["K"]),
                 "spectral.K", "must be a nonempty list of integers in [1, 512]")
        _require(s["N"] is None or (isinstance(s["N"], int) and s["N"] >= 8), "spectral.N", "must be null or an integer >= 8")
        _require(isinstance(s["count"], int) and s["count"] >= 1, "spectral.count", "must be a positive integer")
        o = d["oracle"]
        known = {"bessel", "pointwise", "histogram", "identities", "structure", "dense_sup"}
        _require(isinstance(o["checks"], list) and set(o["checks"]) <= known, "oracle.checks",
                 f"must be a list drawn from {sorted(known)}")
        for key in ("samples", "n_points", "n_iter", "bins", "pointwise_K", "identity_samples"):
            _require(isinstance(o[key], int) and o[key] >= 1, f"oracle.{key}", "must be a positive integer")
        _require(isinstance(o["burn_in"], int) and 0 <= o["burn_in"] < o["n_iter"], "oracle.burn_in",
                 "must be an integer in [0, n_iter)")
        _require(isinstance(d["seed"], int) and d["seed"] >= 0, "seed", "must be a nonnegative integer")
        _require(d["threads"] is None or (isinstance(d["threads"], int) and d["threads"] >= 1), "threads",
                 "must be null or a positive integer")
        if d["map"] is not None:
            _require(isinstance(d["map"], dict), "map", "must be an object with a 'family' key")
            try:
                make_map(d["map"])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"map: {exc}") from None

    def build_map(self):
        _require(self.data["map"] is not None, "map", "is required for this command")
        return make_map(self.data["map"])

    def grid_spec(self):
        g = self.data["grid"]
        return cotangent.GridSpec(g["spatial"], g["directions"])


# --- serialization ---

def _format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = "%.17g" % x
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_format_float(v) if isinstance(v, float) else v for v in row])


def _density_csv(path: Path, u: spectral.TrigPoly, n: int = 256):
    n = n if u.dim == 1 else 64
    vals = u.grid_values(n).real
    coords = np.arange(n) / n
    header = ["x"] if u.dim == 1 else ["x", "y"]
    rows = (tuple(float(coords[i]) for i in idx) + (float(vals[idx]),) for idx in np.ndindex(*vals.shape))
    _write_csv(path, header + ["value"], rows)


# --- commands ---

def cmd_weight(cfg: ExperimentConfig, out: Path) -> tuple[dict, int]:
    f = cfg.build_map()
    g = cfg["grid"]
    estimates = []
    for n in range(1, cfg["n_max"] + 1):
        est = cotangent.B_mu(f, cfg["mu"], n, cfg.grid_spec(), refine=g["refine"], certified=g["certified"],
                             polish=g["polish"], threads=cfg["threads"])
        estimates.append(est.as_dict())
    return {"estimates": estimates}, 0


def cmd_rate(cfg, out):
    f = cfg.build_map()
    # surface TreeOverflow before any grid work
    from .dynamics import iterate
    iterate(f, cfg["n_max"], cfg["node_budget"])
    rate = cotangent.virtual_expansion_rate(f, cfg["mu"], cfg["n_max"], cfg.grid_spec(), threads=cfg["threads"],
                                            polish=cfg["grid"]["polish"])
    return {"rate": rate.as_dict()}, 0


def _spectral_K(cfg, minimum):
    K = sorted(cfg["spectral"]["K"])
    if len(K) < minimum:
        raise ConfigError(f"spectral.K: needs at least {minimum} cutoffs, got {K}")
    return K


def cmd_spectrum(cfg, out):
    f = cfg.build_map()
    K_list = _spectral_K(cfg, 2)
    s = cfg["spectral"]
    tms = [spectral.assemble_transfer_matrix(f, K, s["N"], threads=cfg["threads"]) for K in K_list]
    spectra = [spectral.leading_spectrum(tm, cfg["mu"]).values for tm in tms]
    rep = spectral.essential_radius_report(f, cfg["mu"], K_list, cfg["n_max"], cfg.grid_spec(),
                                           spectra=spectra, threads=cfg["threads"])
    _write_csv(out / "spectrum.csv", ["re", "im", "modulus", "stable_flag"], rep.csv_rows())
    result = {"essential_radius": rep.as_dict(max_listed=s["count"]),
              "leading_eigenvalue": {"re": float(rep.eigenvalues[0].real), "im": float(rep.eigenvalues[0].imag)}}
    artifacts = {"spectrum": "spectrum.csv"}
    try:
        dens = spectral.invariant_density(tms[-1])
    except VexpandError as exc:
        result["density"] = {"error": f"{type(exc).__name__}: {exc}"}
    else:
        _density_csv(out / "density.csv", dens)
        result["density"] = spectral.density_diagnostics(dens)
        artifacts["density"] = "density.csv"
    result["artifacts"] = artifacts
    return result, 0


def cmd_density(cfg, out):
    f = cfg.build_map()
    K = _spectral_K(cfg, 1)[-1]
    tm = spectral.assemble_transfer_matrix(f, K, cfg["spectral"]["N"], threads=cfg["threads"])
    dens, lam = spectral.invariant_density(tm, with_eigenvalue=True)
    _density_csv(out / "density.csv", dens)
    result = {"K": K, "eigenvalue": {"re": lam.real, "im": lam.imag},
              "density": spectral.density_diagnostics(dens), "artifacts": {"density": "density.csv"}}
    return result, 0


def _cesaro_input(name, K, dim):
    if name == "cos":
        return spectral.TrigPoly.from_modes(K, dim, {(1,) + (0,) * (dim - 1): 0.5, (-1,) + (0,) * (dim - 1): 0.5})
    if name == "smoothed_indicator" and dim == 1:
        return spectral.smoothed_indicator(K)
    if name == "constant":
        return spectral.TrigPoly.constant(K, dim)
    raise ConfigError(f"cesaro.u: unsupported input {name!r} for dimension {dim}")


def cmd_cesaro(cfg, out):
    f = cfg.build_map()
    c = cfg["cesaro"]
    tm = spectral.assemble_transfer_matrix(f, c["K"], cfg["spectral"]["N"], threads=cfg["threads"])
    u = _cesaro_input(c["u"], c["K"], f.dim)
    avg = spectral.cesaro_average(tm, u, c["m"])
    result = {"m": c["m"], "K": c["K"], "u": c["u"],
              "h0_norm": spectral.h_mu_norm(avg, 0.0), "l2_norm": avg.l2_norm(),
              "mean": float(avg.mean.real)}
    try:
        dens = spectral.invariant_density(tm)
    except VexpandError:
        pass
    else:
        result["distance_to_projection_h0"] = spectral.h_mu_norm(avg - dens * u.mean, 0.0)
    _density_csv(out / "density.csv", avg)
    result["artifacts"] = {"density": "density.csv"}
    return result, 0


def cmd_certify_example(cfg, out):
    c = cfg["certify"]
    if c["m"] is None:
        raise ConfigError("certify.m: is required")
    _require(isinstance(c["m"], int) and c["m"] >= 2, "certify.m", "must be an integer >= 2")
    rep = cotangent.appendix_certify(c["m"], cfg["mu"], cotangent.GridSpec(c["q_samples"], c["directions"]),
                                     strict=False)
    code = 0 if rep.verdict else 3
    if not rep.verdict:
        print(f"CertFailed: {rep.first_failure}", file=sys.stderr)
    return {"certificate": rep.as_dict()}, code


def _identity_checks(cfg, rng):
    from .dynamics import LinearMap, SkewCosine, compose
    out = {}
    n = cfg["oracle"]["identity_samples"]
    families = {"linear": LinearMap([[2, 0], [0, 3]]), "doubling": CircleExpand(2),
                "perturbed": CircleExpand(3, 0.1), "skew": SkewCosine(8, 8)}
    scale = fact = mu0 = 0.0
    for name, f in families.items():
        for _ in range(n):
            q = rng.random(f.dim)
            xi = rng.normal(size=f.dim)
            cov = cotangent.Covector(q, xi)
            b = cotangent.b_mu(f, cfg["mu"], cov)
            beta = rng.uniform(0.1, 10) * rng.choice([-1, 1])
            scale = max(scale, abs(cotangent.b_mu(f, cfg["mu"], cotangent.Covector(q, beta * xi)) - b))
            fg = cotangent.factorized_b(f, f, cfg["mu"], cov)
            fact = max(fact, abs(fg - cotangent.b_mu(compose(f, f), cfg["mu"], cov)))
            if name != "perturbed":
                mu0 = max(mu0, abs(cotangent.b_mu(f, 0.0, cov) - 1.0))
    out["scale_invariance"] = scale
    out["factorization"] = fact
    out["mu_zero"] = mu0
    sm = cotangent.submultiplicativity_check(SkewCosine(4, 4), cfg["mu"], 1, 1, cotangent.GridSpec(16, 32))
    out["submultiplicativity"] = max(0.0, sm["lhs"] - sm["rhs"])
    return out


def cmd_oracle_check(cfg, out):
    o = cfg["oracle"]
    rng = np.random.Generator(np.random.Philox(cfg["seed"]))
    deltas = {}
    f = cfg.build_map() if cfg["map"] is not None else CircleExpand(2, 0.05)
    if "bessel" in o["checks"]:
        b = o["bessel"]
        from .dynamics import SkewCosine
        tm = spectral.assemble_transfer_matrix(SkewCosine(b["m"], b["a"]), b["K"])
        deltas["bessel"] = float(np.abs(tm.entries - oracles.bessel_matrix_oracle(b["m"], b["a"], b["K"])).max())
    if "pointwise" in o["checks"]:
        K = o["pointwise_K"]
        tm = spectral.assemble_transfer_matrix(f, K, cfg["spectral"]["N"])
        # skew images spread over |k_x| ~ 2 pi a |k_y| / m, so keep |k| <= 1 there
        half = 1 if isinstance(f, _SkewProduct) else max(1, K // 2)
        coeffs = np.zeros((2 * K + 1,) * f.dim, dtype=complex)
        sl = tuple(slice(K - half, K + half + 1) for _ in range(f.dim))
        block = rng.normal(size=coeffs[sl].shape) + 1j * rng.normal(size=coeffs[sl].shape)
        coeffs[sl] = block
        coeffs = 0.5 * (coeffs + np.conj(coeffs[(slice(None, None, -1),) * f.dim]))
        pts = rng.random((64, f.dim))
        deltas["pointwise"] = oracles.pointwise_matrix_delta(f, tm, spectral.TrigPoly(coeffs), pts)
    if "histogram" in o["checks"]:
        K = max(cfg["spectral"]["K"])
        tm = spectral.assemble_transfer_matrix(f, K, cfg["spectral"]["N"])
        dens = spectral.invariant_density(tm)
        hist = oracles.birkhoff_histogram(f, o["n_points"], o["n_iter"], o["burn_in"], o["bins"], cfg["seed"])
        deltas["histogram"] = oracles.l1_distance(hist, dens.bin_averages(o["bins"]))
        header = ["x", "value"] if f.dim == 1 else ["x", "y", "value"]
        _write_csv(out / "histogram.csv", header, hist.csv_rows())
    if "dense_sup" in o["checks"]:
        # polished grid estimate: resonance peaks can be narrower than a cell
        est = cotangent.B_mu(f, cfg["mu"], 1, cfg.grid_spec(), polish=max(32, cfg["grid"]["polish"]))
        dense = oracles.dense_sup_crosscheck(f, cfg["mu"], 1, o["samples"], cfg["seed"])
        deltas["dense_sup"] = max(0.0, dense - est.value)
    if "identities" in o["checks"]:
        deltas.update(_identity_checks(cfg, rng))
    if "structure" in o["checks"]:
        K = 8
        tm = spectral.assemble_transfer_matrix(f, K)
        zero = tm.index(np.zeros(f.dim, dtype=int))
        row = tm.entries[zero].copy()
        row[zero] -= 1.0
        deltas["mass_row"] = float(np.abs(row).max())
        exact = spectral.shift_matrix(f, K)
        if exact is not None:
            deltas["shift_structure"] = float(np.abs(tm.entries - exact).max())
    failed = sorted(k for k, v in deltas.items() if not v <= TOLERANCES[k])
    result = {"deltas": deltas, "tolerances": {k: TOLERANCES[k] for k in deltas}, "failed": failed}
    return result, (2 if failed else 0)


HANDLERS = {
    "weight": cmd_weight, "rate": cmd_rate, "spectrum": cmd_spectrum, "density": cmd_density,
    "cesaro": cmd_cesaro, "certify-example": cmd_certify_example, "oracle-check": cmd_oracle_check,
}


def build_parser():
    p = argparse.ArgumentParser(prog="vexpand", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON experiment configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override a top-level key with a JSON value (repeatable)")
    p.add_argument("--mu", type=float)
    p.add_argument("--n-max", type=int, dest="n_max")
    p.add_argument("--m", type=int, help="shorthand for certify.m")
    p.add_argument("--output", type=str)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    return p


def load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=JSON, got {item!r}")
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    for key in ("mu", "n_max", "output", "seed", "threads"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    if args.m is not None:
        raw.setdefault("certify", {})
        raw["certify"] = dict(raw["certify"], m=args.m)
    return ExperimentConfig.from_dict(raw)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    if cfg["threads"] is None:
        cfg.data["threads"] = os.cpu_count() or 1
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        result, code = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except VexpandError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        result, code = {"error": {"type": type(exc).__name__, "message": str(exc)}}, 2
    echo = dict(cfg.data)
    echo.pop("threads")
    report = {
        "schema": SCHEMA,
        "tool_version": __version__,
        "command": args.command,
        "config": echo,
        "map": describe_map(make_map(cfg["map"])) if cfg["map"] is not None else None,
        "result": result,
        "exit_code": code,
        "timing": {"seconds": time.perf_counter() - start},
    }
    path = out / "report.json"
    path.write_text(dumps(report) + "\n")
    print(path)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
