"""Command-line entry point.

Every subcommand reads a JSON configuration (validated against the shipped
schema), resolves defaults, and writes its results plus the resolved
configuration into the output directory.  Every file carries the hash of
the resolved configuration.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import macroscale as ms
from .io import config_hash, validate_config, write_csv, write_json
from .mgf import mgf, mgf_constant
from .model import ModelParams
from .ness import (appendixA_check, factorial_moment_table, marginal_distribution,
                   mixture_probability)
from .simulator import run as simulate
from .verify import CHECKS, run_checks

DEFAULTS = {
    "seed": 0,
    "format": "csv",
    "out": "out",
    "simulate": {"events": 100000, "replicas": 1, "burn_in": 0.2, "hist_max": 200, "batches": 50},
    "ness": {"moment_cap": 4, "marginal_cap": 30, "states": [], "appendix_orders": [],
             "quadrature": {}},
    "mgf": {"fields": [], "constant_fields": [-0.5], "methods": ["sum", "integral", "mixture"],
            "quadrature": {}},
    "pressure": {"fields": [-1.0, -0.5, 0.0, 0.3], "trend_N": [4, 8, 16, 32],
                 "optimizer": {"M": 400, "starts": 8}},
    "ldf": {"profile": {"kind": "typical"}, "optimizer": {"M": 400, "starts": 8}},
    "additivity": {"quantity": "pressure", "splits": [0.5], "profile": {"kind": "constant", "value": -1.0},
                   "optimizer": {"M": 200}},
    "verify": {"checks": []},
}


class ConfigError(Exception):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict, args) -> dict:
    """Validate ``raw`` and fill in defaults and command-line overrides."""
    try:
        validate_config(raw)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.format is not None:
        cfg["format"] = args.format
    m = cfg["model"]
    if m["rho_l"] > m["rho_r"] and not args.allow_reflect:
        raise ConfigError("rho_l exceeds rho_r; pass --allow-reflect to mirror the chain")
    return cfg


def _params(cfg) -> ModelParams:
    m = cfg["model"]
    return ModelParams.oriented(m["s"], m["N"], m["rho_l"], m["rho_r"])


def _profile(spec: dict, params: ModelParams, kind: str):
    """Callable on ``[0, 1]`` in the oriented frame."""
    k = spec["kind"]
    if k == "constant":
        v = float(spec.get("value", 0.0))
        f = lambda x: np.full_like(np.asarray(x, dtype=float), v)  # noqa: E731
    elif k == "samples":
        vals = np.asarray(spec["values"], dtype=float)
        grid = np.linspace(0.0, 1.0, vals.size)
        f = lambda x: np.interp(np.asarray(x, dtype=float), grid, vals)  # noqa: E731
    elif k == "sine":
        mean, amp, freq = spec.get("mean", 0.0), spec.get("amplitude", 0.0), spec.get("frequency", 1.0)
        f = lambda x: mean + amp * np.sin(2.0 * np.pi * freq * np.asarray(x, dtype=float))  # noqa: E731
    elif k == "step":
        at, left, right = spec.get("at", 0.5), spec.get("left", 0.0), spec.get("right", 0.0)
        f = lambda x: np.where(np.asarray(x, dtype=float) < at, left, right)  # noqa: E731
    elif k == "typical":
        if kind != "density":
            raise ConfigError("the 'typical' profile is a density profile")
        # already in the oriented frame
        return ms.typical_profile(params.s, params.rho_l, params.rho_r).func
    else:  # pragma: no cover - schema rejects other kinds
        raise ConfigError(f"unknown profile kind {k}")
    if params.reflected:
        return lambda x: f(1.0 - np.asarray(x, dtype=float))
    return f


def _site_order(params, values):
    values = list(values)
    return values[::-1] if params.reflected else values


class _Writer:
    def __init__(self, cfg):
        self.full = cfg
        # the output location does not influence any number; leaving it out
        # keeps result files byte-identical across output directories
        self.cfg = {k: v for k, v in cfg.items() if k != "out"}
        self.hash = config_hash(self.cfg)
        self.out = Path(cfg["out"])
        self.fmt = cfg["format"]
        self.files = []

    def table(self, name, header, rows):
        if self.fmt == "csv":
            self.files.append(write_csv(self.out / f"{name}.csv", header, rows, self.hash))
        else:
            payload = {"columns": list(header), "rows": [list(r) for r in rows]}
            self.files.append(write_json(self.out / f"{name}.json", payload, self.cfg, self.hash))

    def summary(self, name, payload):
        self.files.append(write_json(self.out / f"{name}.json", payload, self.cfg, self.hash))

    def finish(self):
        self.files.append(write_json(self.out / "resolved_config.json", {}, self.full, self.hash))
        return self.files


def cmd_simulate(cfg) -> int:
    params = _params(cfg)
    sc = cfg["simulate"]
    stats = simulate(params, sc["events"], replicas=sc["replicas"], seed=cfg["seed"],
                     burn_in=sc["burn_in"], hist_max=sc["hist_max"], batches=sc["batches"])
    w = _Writer(cfg)
    rows = stats.to_rows()
    if params.reflected:
        rows = [(params.N + 1 - r[0],) + tuple(r[1:]) for r in rows]
        rows.sort(key=lambda r: (r[0], r[3]))
    w.table("simulate_stats", ["site", "mean", "var", "hist_bin", "hist_mass"], rows)
    summ = stats.summary()
    for key in ("mean", "standard_error", "var"):
        summ[key] = _site_order(params, summ[key])
    if params.reflected:
        summ["current"] = [-v for v in summ["current"][::-1]]
    summ["exact_mean"] = _site_order(params, params.mean_profile())
    summ["reflected"] = params.reflected
    w.summary("simulate_summary", summ)
    w.finish()
    return 0


def cmd_ness(cfg) -> int:
    params = _params(cfg)
    nc = cfg["ness"]
    w = _Writer(cfg)
    cap = nc["moment_cap"]
    G = factorial_moment_table(params, cap)
    rows = []
    for xi in np.ndindex(*G.shape):
        rows.append(tuple(_site_order(params, xi)) + (G[xi],))
    w.table("ness_moments", [f"xi_{i + 1}" for i in range(params.N)] + ["G"], rows)
    mean = _site_order(params, params.mean_profile())
    w.table("ness_mean_profile", ["site", "mean"], [(i + 1, m) for i, m in enumerate(mean)])
    mrows = []
    for i in range(1, params.N + 1):
        site = params.N + 1 - i if params.reflected else i
        for n, p in enumerate(marginal_distribution(params, i, nc["marginal_cap"])):
            mrows.append((site, n, p))
    mrows.sort()
    w.table("ness_marginals", ["site", "n", "probability"], mrows)
    if nc["states"]:
        srows = []
        for state in nc["states"]:
            if len(state) != params.N:
                raise ConfigError("every state must have N entries")
            oriented = _site_order(params, state)
            res = mixture_probability(params, oriented, nc["quadrature"] or None)
            srows.append(tuple(state) + (res.value, res.error))
        w.table("ness_states", [f"eta_{i + 1}" for i in range(params.N)] + ["mu", "error"], srows)
    orders = nc["appendix_orders"] or [[1] * params.N, [2] + [0] * (params.N - 1)]
    reports = [appendixA_check(params, _site_order(params, xi)).to_dict() for xi in orders]
    w.summary("ness_equivalence", {"reports": reports,
                                   "max_gap": max(r["max_gap"] for r in reports)})
    w.finish()
    return 0


def cmd_mgf(cfg) -> int:
    params = _params(cfg)
    mc = cfg["mgf"]
    w = _Writer(cfg)
    rows = []
    for h in mc["fields"]:
        if len(h) != params.N:
            raise ConfigError("every field must have N entries")
        hv = _site_order(params, h)
        for m in mc["methods"]:
            if m in ("recurrence", "finite"):
                continue
            rows.append((json.dumps(list(h)), m, mgf(params, hv, method=m, quad_spec=mc["quadrature"] or None)))
    for h in mc["constant_fields"]:
        for m in mc["methods"]:
            if m == "finite" and not params.integer_two_s:
                continue
            try:
                val = mgf_constant(params, h, method=m) if m in ("recurrence", "finite") else \
                    mgf(params, [h] * params.N, method=m)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            rows.append((json.dumps([h] * params.N), m, val))
    w.table("mgf_values", ["field", "method", "psi"], rows)
    w.finish()
    return 0


def cmd_pressure(cfg) -> int:
    params = _params(cfg)
    pc = cfg["pressure"]
    opt = pc["optimizer"]
    M, starts = opt.get("M", 400), opt.get("starts", 8)
    s, rl, rr = params.s, params.rho_l, params.rho_r
    w = _Writer(cfg)
    rows, prof = [], []
    for h in pc["fields"]:
        res = ms.pressure_variational(s, rl, rr, h, M=M, starts=starts, seed=cfg["seed"])
        closed = ms.pressure_constant_closed_form(s, rl, rr, 0.0, 1.0, h)
        rows.append((h, res.value, closed, abs(res.value - closed), res.grad_norm,
                     len(res.local_optima)))
        xs = res.theta.x
        for x, th in zip(xs, res.theta.values):
            prof.append((h, 1.0 - x if params.reflected else x, th))
    w.table("pressure_values", ["h", "variational", "closed_form", "gap", "grad_norm", "local_optima"],
            rows)
    prof.sort()
    w.table("pressure_profiles", ["h", "x", "theta"], prof)
    if "field_profile" in pc:
        hf = _profile(pc["field_profile"], params, "field")
        res = ms.pressure_variational(s, rl, rr, hf, M=M, starts=starts, seed=cfg["seed"])
        w.summary("pressure_field_profile", {"value": res.value, "grad_norm": res.grad_norm,
                                             "converged": res.converged,
                                             "local_optima": [o["value"] for o in res.local_optima]})
    trend = []
    for h in pc["fields"]:
        if h == 0.0:
            continue
        for r in ms.finite_pressure_trend(s, rl, rr, h, pc["trend_N"]):
            trend.append((h, r["N"], r["finite"], r["limit"], r["gap"]))
    w.table("pressure_trend", ["h", "N", "finite", "limit", "gap"], trend)
    w.finish()
    return 0


def cmd_ldf(cfg) -> int:
    params = _params(cfg)
    lc = cfg["ldf"]
    opt = lc["optimizer"]
    rho = _profile(lc["profile"], params, "density")
    res = ms.rate_function(params.s, params.rho_l, params.rho_r, rho, M=opt.get("M", 400),
                           starts=opt.get("starts", 8), seed=cfg["seed"])
    w = _Writer(cfg)
    xs = res.theta.x
    rows = [((1.0 - x) if params.reflected else x, th, float(rho(np.array([x]))[0]))
            for x, th in zip(xs, res.theta.values)]
    rows.sort()
    w.table("ldf_profile", ["x", "theta", "rho"], rows)
    w.summary("ldf_value", {"value": res.value, "grad_norm": res.grad_norm,
                            "converged": res.converged,
                            "local_optima": [o["value"] for o in res.local_optima]})
    w.finish()
    return 0


def cmd_additivity(cfg) -> int:
    params = _params(cfg)
    ac = cfg["additivity"]
    M = ac["optimizer"].get("M", 200)
    splits = [1.0 - x for x in ac["splits"]][::-1] if params.reflected else ac["splits"]
    spec = ac["profile"]
    if ac["quantity"] == "pressure":
        inp = float(spec["value"]) if spec["kind"] == "constant" else _profile(spec, params, "field")
        rep = ms.additivity_check_pressure(params.s, params.rho_l, params.rho_r, inp, splits, M=M)
    else:
        inp = _profile(spec, params, "density")
        rep = ms.additivity_check_rate(params.s, params.rho_l, params.rho_r, inp, splits, M=M)
    w = _Writer(cfg)
    d = rep.to_dict()
    d["quantity"] = ac["quantity"]
    d["optimizers"] = d.pop("intermediates")
    w.summary("additivity_report", d)
    w.finish()
    return 0


def cmd_verify(cfg) -> int:
    names = cfg["verify"]["checks"] or None
    try:
        results = run_checks(names)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    w = _Writer(cfg)
    for r in results:
        print(r.line())
    w.summary("verify_report", {"passed": all(r.passed for r in results),
                                "checks": [r.to_dict() for r in results]})
    w.finish()
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "ness": cmd_ness,
    "mgf": cmd_mgf,
    "pressure": cmd_pressure,
    "ldf": cmd_ldf,
    "additivity": cmd_additivity,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harmonic-ness",
                                description="Steady state, simulation and fluctuations of the "
                                            "open harmonic process.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--format", choices=["csv", "json"], help="table format")
        sp.add_argument("--allow-reflect", action="store_true",
                        help="accept rho_l > rho_r by mirroring the chain")
        if name == "verify":
            sp.add_argument("--check", action="append", choices=sorted(CHECKS),
                            help="run only the named check (repeatable)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        if args.config is not None:
            raw = json.loads(Path(args.config).read_text())
        elif args.command == "verify":
            raw = {"model": {"s": 0.5, "N": 3, "rho_l": 0.2, "rho_r": 0.8}}
        else:
            raise ConfigError("--config is required")
        if args.command == "verify" and getattr(args, "check", None):
            raw = _merge(raw, {"verify": {"checks": args.check}})
        cfg = resolve_config(raw, args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](cfg)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
