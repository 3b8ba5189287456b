"""Command-line front end: ``mfgibbs {certify, fixed-point, scan, oracle, closed-form}``.

Settings come from flags and optionally from one JSON config file
(``--config``); flags win. Output is deterministic: JSON is written with
sorted keys and shortest round-trip floats, CSV files end with a
``# config_hash=<sha256>`` comment line.

Exit codes: 0 ok, 2 invalid configuration, 3 BAD points found, 4 search
incompleteness flagged, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys

import numpy as np

from .cflm import multistart
from .errors import MFGibbsError, NoConsistentMeasure, NonUniqueMinimizer
from .gibbs import bad_point_scan, certify
from .interaction import quadratic_interaction
from .kernels import arc_partition, read_partition_csv
from .models import (
    coarse_grain_preset,
    ising_pspin,
    ising_rho_k,
    rotator,
    rotator_L,
    rotator_rho_k,
)
from .oracle import convergence_study, grid_minimize_psi_tau
from .spinspace import Measure, make_circle, tau_measure

SCHEMA_VERSION = 1

EXIT_OK, EXIT_CONFIG, EXIT_BAD, EXIT_INCOMPLETE, EXIT_NUMERIC = 0, 2, 3, 4, 5

DEFAULTS = {
    "model": "ising",
    "kernel": None,
    "beta": 0.5,
    "p": 2,
    "q": 2,
    "t": math.log(2.0) / 2.0,
    "partition": None,
    "arcs": 16,
    "n_nodes": 128,
    "n_polar": 16,
    "n_azimuth": 32,
    "nu_prime": "tau=0",
    "starts": 32,
    "tol": 1e-12,
    "seed": 0,
    "tau_grid": 101,
    "tilt_max": 2.0,
    "tau": 0.5,
    "N_list": "100,200,400,800,1600",
    "name": None,
    "m": 0.0,
    "grid_n": 2001,
    "sampled": False,
    "output": None,
    "dump_f": None,
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(sp):
    sp.add_argument("--config", help="JSON file of settings; flags override it")
    sp.add_argument("--model", choices=["ising", "rotator", "coarse"])
    sp.add_argument("--kernel", choices=["spin-flip", "heat", "coarse"])
    sp.add_argument("--beta", type=float)
    sp.add_argument("--p", type=int)
    sp.add_argument("--q", type=int)
    sp.add_argument("--t", type=float)
    sp.add_argument("--partition", help="CSV node_index,label")
    sp.add_argument("--arcs", type=int, help="equal-arc partition when no file is given")
    sp.add_argument("--n-nodes", dest="n_nodes", type=int)
    sp.add_argument("--n-polar", dest="n_polar", type=int)
    sp.add_argument("--n-azimuth", dest="n_azimuth", type=int)
    sp.add_argument("--sampled", action="store_const", const=True,
                    help="estimate interaction constants instead of using closed forms")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output", "-o")


def _search_flags(sp):
    sp.add_argument("--starts", type=int)
    sp.add_argument("--tol", type=float)


def build_parser():
    parser = _Parser(prog="mfgibbs", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("certify", help="contraction certificate as JSON")
    _common(sp)

    sp = sub.add_parser("fixed-point", help="consistent-measure clusters at one nu'")
    _common(sp)
    _search_flags(sp)
    sp.add_argument("--nu-prime", dest="nu_prime",
                    help="file (CSV with a weight column, or JSON list), tau=<x> or tilt=<x>")
    sp.add_argument("--dump-f", dest="dump_f", help="CSV dump of the best cluster's density")

    sp = sub.add_parser("scan", help="bad-configuration scan over a family of nu'")
    _common(sp)
    _search_flags(sp)
    sp.add_argument("--tau-grid", dest="tau_grid", type=int, help="number of grid points")
    sp.add_argument("--tilt-max", dest="tilt_max", type=float)

    sp = sub.add_parser("oracle", help="finite-N convergence study (Ising)")
    _common(sp)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--N-list", dest="N_list")

    sp = sub.add_parser("closed-form", help="evaluate a named closed form")
    _common(sp)
    sp.add_argument("--name", help="h_t, psi_tau, mf_rhs, L, rho_k, C, grid_min")
    sp.add_argument("--m", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--grid-n", dest="grid_n", type=int)
    return parser


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    return cfg


OUTPUT_KEYS = ("output", "dump_f")


def config_hash(cfg):
    """SHA-256 of the resolved settings, excluding where outputs are written."""
    core = {k: v for k, v in cfg.items() if k not in OUTPUT_KEYS}
    blob = json.dumps(core, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def workers():
    env = os.environ.get("MFG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"MFG_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


# -- assembly -------------------------------------------------------------------------


def build_preset(cfg):
    model = cfg["model"]
    kernel = cfg["kernel"]
    expected = {"ising": "spin-flip", "rotator": "heat", "coarse": "coarse"}[model]
    if kernel is not None and kernel != expected:
        raise ConfigError(f"model {model!r} uses the {expected!r} kernel, not {kernel!r}")
    if model == "ising":
        return ising_pspin(cfg["beta"], cfg["p"], cfg["t"])
    if model == "rotator":
        return rotator(cfg["q"], cfg["beta"], cfg["t"], cfg["n_nodes"], cfg["n_polar"],
                       cfg["n_azimuth"])
    space = make_circle(cfg["n_nodes"])
    part = (read_partition_csv(cfg["partition"]) if cfg["partition"]
            else arc_partition(space, cfg["arcs"]))
    inter = quadratic_interaction(cfg["beta"], 2, name="rotator-q2")
    return coarse_grain_preset(space, part, inter, seed=cfg["seed"])


def build_model(cfg, preset=None):
    preset = preset or build_preset(cfg)
    return preset.model(use_exact=not cfg["sampled"], seed=cfg["seed"])


def _tilted(space, s):
    x = space.nodes[:, 0]
    w = space.weights * np.exp(s * (x - x.max()))
    return Measure(space, w)


def parse_nu_prime(spec, space):
    spec = str(spec)
    if spec.startswith("tau="):
        if space.label != "ising":
            raise ConfigError("tau= conditioning only applies to the ising model")
        return tau_measure(space, float(spec[4:]))
    if spec.startswith("tilt="):
        return _tilted(space, float(spec[5:]))
    try:
        with open(spec, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read nu' file {spec}: {exc}") from exc
    if spec.endswith(".json"):
        weights = json.loads(text)
    else:
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        header, body = rows[0], rows[1:]
        col = header.index("weight") if "weight" in header else len(header) - 1
        weights = [float(r[col]) for r in body]
    return Measure(space, weights)


# -- formatting -------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(payload, cfg):
    body = {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(cfg), **payload}
    return json.dumps(_clean(body), sort_keys=True, indent=2) + "\n"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def dump_csv(header, rows, cfg):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([_cell(v) for v in r])
    buf.write(f"# config_hash={config_hash(cfg)}\n")
    return buf.getvalue()


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------------------


def cmd_certify(cfg):
    model = build_model(cfg)
    cert = certify(model)
    return dump_json({"certificate": cert.to_dict()}, cfg), EXIT_OK


def _search(cfg):
    return {"n_starts": cfg["starts"], "seed": cfg["seed"], "tol": cfg["tol"]}


def cmd_fixed_point(cfg):
    model = build_model(cfg)
    nu = parse_nu_prime(cfg["nu_prime"], model.kernel.space_sp)
    res = multistart(model, nu, **_search(cfg))
    if not res.clusters:
        raise NoConsistentMeasure("no fixed-point run converged")
    uncertified = model.lipschitz >= 1.0
    lower_confidence = uncertified and len(res.clusters) == 1
    payload = {
        "clusters": [c.to_dict(model) for c in res.clusters],
        "phi_k": res.clusters[0].psi,
        "flags": {
            "lower_confidence": lower_confidence,
            "search_incomplete_possible": uncertified,
            "failed_runs": res.failed,
            "psi_minimal_count": len(res.psi_minimal()),
        },
    }
    if cfg["dump_f"]:
        f = res.clusters[0].state.cond_density
        rows = [[j, i, float(f[j, i])] for j in range(f.shape[0]) for i in range(f.shape[1])]
        _emit(dump_csv(["eta_index", "sigma_index", "density"], rows, cfg), cfg["dump_f"])
    code = EXIT_INCOMPLETE if lower_confidence else EXIT_OK
    return dump_json(payload, cfg), code


def cmd_scan(cfg):
    model = build_model(cfg)
    space = model.kernel.space_sp
    n = int(cfg["tau_grid"])
    if n < 2:
        raise ConfigError("scan needs at least 2 grid points")
    if cfg["model"] == "ising":
        params = np.linspace(-1.0, 1.0, n)
        params[np.abs(params) < 1e-15] = 0.0
        grid = [tau_measure(space, float(x)) for x in params]
        pname = "tau"
    else:
        params = np.linspace(-cfg["tilt_max"], cfg["tilt_max"], n)
        grid = [_tilted(space, float(x)) for x in params]
        pname = "tilt"
    result = bad_point_scan(model, grid, {"n_starts": cfg["starts"], "seed": cfg["seed"],
                                          "tol": cfg["tol"]}, workers=workers())
    labels = space.node_labels or tuple(str(j) for j in range(space.size))
    header = ["point_index", pname, "cluster_count", "psi_gap", "bad_flag",
              *[f"gamma1_prime_density_{lab}" for lab in labels],
              "jump_to_next", "suspect", "lower_confidence"]
    rows = []
    for r, x in zip(result.rows, params):
        dens = (r.gamma.weights / space.weights).tolist() if r.gamma is not None \
            else [float("nan")] * space.size
        rows.append([r.index, float(x), r.cluster_count, r.psi_gap, r.bad, *dens,
                     r.jump_to_next, r.suspect, r.lower_confidence])
    if result.bad_indices:
        code = EXIT_BAD
    elif result.search_incomplete:
        code = EXIT_INCOMPLETE
    else:
        code = EXIT_OK
    return dump_csv(header, rows, cfg), code


def cmd_oracle(cfg):
    if cfg["model"] != "ising":
        raise ConfigError("the finite-N oracle exists for the ising model only")
    try:
        n_list = [int(x) for x in str(cfg["N_list"]).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --N-list {cfg['N_list']!r}") from exc
    study = convergence_study(cfg["beta"], cfg["p"], cfg["t"], cfg["tau"], n_list,
                              {"n_starts": cfg["starts"], "seed": cfg["seed"]},
                              workers=workers())
    rows = [[r.N, r.tau_realized, r.exact, r.limit, r.error, r.ratio] for r in study.rows]
    return dump_csv(["N", "tau_realized", "exact", "limit", "error", "ratio"], rows, cfg), EXIT_OK


def _closed_form_value(cfg):
    name = cfg["name"]
    if not name:
        raise ConfigError("closed-form needs --name")
    beta, t = cfg["beta"], cfg["t"]
    if cfg["model"] == "ising":
        preset = ising_pspin(beta, cfg["p"], t)
        cf = preset.closed_forms
        if name == "h_t":
            return cf["h_t"]()
        if name in ("psi_tau", "mf_rhs", "stationarity_residual"):
            return float(cf[name](cfg["m"], cfg["tau"]))
        if name == "L":
            return cf["L"]()
        if name == "rho_k":
            return ising_rho_k(t)
        if name == "C":
            return preset.exact_constants.c_of_F_g
        if name == "grid_min":
            gm = grid_minimize_psi_tau(beta, cfg["p"], t, cfg["tau"], cfg["grid_n"])
            return {"minimizers": gm.minimizers, "psi_values": gm.psi_values,
                    "degenerate": gm.degenerate}
    elif cfg["model"] == "rotator":
        q = cfg["q"]
        if name == "L":
            return rotator_L(q, beta, t)
        if name == "rho_k":
            return rotator_rho_k(q, t)
        if name == "rho_alpha":
            return math.sqrt(2.0)
        if name == "C":
            return 4.0 * q * beta * math.exp(beta)
    else:
        preset = build_preset(cfg)
        if name == "L":
            return preset.closed_forms["L"]()
    raise ConfigError(f"no closed form {name!r} for model {cfg['model']!r}")


def cmd_closed_form(cfg):
    value = _closed_form_value(cfg)
    return dump_json({"name": cfg["name"], "model": cfg["model"], "value": value}, cfg), EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "fixed-point": cmd_fixed_point,
    "scan": cmd_scan,
    "oracle": cmd_oracle,
    "closed-form": cmd_closed_form,
}


def _fail(exc, code):
    err = {"schema_version": SCHEMA_VERSION, "error": type(exc).__name__,
           "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        text, code = COMMANDS[cfg["command"]](cfg)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except NonUniqueMinimizer as exc:
        return _fail(exc, EXIT_BAD)
    except MFGibbsError as exc:
        code = EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_NUMERIC
        return _fail(exc, code)
    except (FloatingPointError, ArithmeticError) as exc:
        return _fail(exc, EXIT_NUMERIC)
    _emit(text, cfg["output"])
    return code


if __name__ == "__main__":
    sys.exit(main())
