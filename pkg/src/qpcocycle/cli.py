"""Command line entry point: ``qpcocycle <command> --config cfg.json --out dir``.

Commands: top, spectrum, sweep, contraction, analytic, reduce.  Exit codes:
0 ok, 1 estimator failure, 2 configuration error, 3 no contraction found,
4 domain violation, 5 invariance failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import analytic as an
from . import contraction as ct
from . import lyapunov as ly
from . import reduction as rd
from .cocycle import CocycleSystem, as_probability
from .errors import (
    CocycleError,
    ConfigError,
    DomainError,
    InvarianceError,
    NoContractionFound,
)
from .fixtures import fixture
from .sampling import set_workers

EXIT_OK, EXIT_ESTIMATOR, EXIT_CONFIG, EXIT_CONTRACTION, EXIT_DOMAIN, EXIT_INVARIANCE = 0, 1, 2, 3, 4, 5
COMMANDS = ("top", "spectrum", "sweep", "contraction", "analytic", "reduce")

DEFAULTS = {
    "n": ly.DEFAULT_N,
    "samples": ly.DEFAULT_SAMPLES,
    "gap_tol": ly.GAP_TOL,
    "exterior_cap": ly.EXTERIOR_CAP,
}
CONTRACTION_DEFAULTS = {"n_max": 32, "alpha": None, "pair_grid_size": None,
                        "mc_samples": ct.DEFAULT_MC, "refine": True, "table_factor": 3}
ANALYTIC_DEFAULTS = {"gamma": None, "tol": an.DEFAULT_TOL, "z": None, "delta": None, "radius": None,
                     "K": 4, "nodes": 32, "grid_size": 5, "Q": an.DEFAULT_Q,
                     "samples": an.DEFAULT_SAMPLES, "estimator": "auto", "reduce": False,
                     "certificate": {"alpha": 0.5}}


def load_schema() -> dict:
    return json.loads(resources.files("qpcocycle").joinpath("config.schema.json").read_text())


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def validate_config(cfg) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def build_system(cfg):
    """System, default weights and declared sections from the ``system`` block."""
    sdoc = cfg["system"]
    if "fixture" in sdoc:
        fx = fixture(sdoc["fixture"], **sdoc.get("params", {}))
        return fx.system, fx.p, fx.sections
    return CocycleSystem.from_dict(sdoc), None, []


def _weights(cfg, default):
    if "p" in cfg:
        return as_probability(cfg["p"])
    if default is None:
        raise ConfigError("config needs 'p' for explicit systems")
    return default


class Writer:
    """Collects output files; every file carries the config hash, seed and version."""

    def __init__(self, out: Path, meta: dict):
        self.out = out
        self.meta = meta
        self.files: dict[str, str] = {}

    def _header(self):
        return [f"# {k}={self.meta[k]}" for k in ("config_hash", "seed", "version", "command")]

    def csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write("\n".join(self._header()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        self._put(name, buf.getvalue())

    def json(self, name, obj):
        doc = {"meta": self.meta, **obj}
        self._put(name, json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def _put(self, name, text):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self):
        self.json("manifest.json", {"files": dict(sorted(self.files.items()))})


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple, np.ndarray)):
        return " ".join(_fmt(y) for y in np.ravel(x))
    return x


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"cannot serialize {type(x).__name__}")


# ---------------------------------------------------------------- commands


def cmd_top(cfg, sysm, p, sections, w: Writer):
    block = cfg.get("top", {})
    p_list = [as_probability(q) for q in block.get("p_list", [p])]
    n_list = block.get("n_list", [cfg["n"]])
    rows = []
    for q in p_list:
        for n in n_list:
            est = ly.top_exponent_mc(sysm, q, n, cfg["samples"], cfg["seed"])
            rows.append(["mc-norm", 1, est.value, est.stderr, n, est.samples, cfg["seed"], q])
    w.csv("top.csv", ["method", "k", "value", "stderr", "n", "samples", "seed", "p"], rows)


def cmd_spectrum(cfg, sysm, p, sections, w: Writer):
    args = (sysm, p, cfg["n"], cfg["samples"], cfg["seed"], cfg["gap_tol"])
    qr = ly.spectrum_qr(*args)
    ex = ly.spectrum_exterior(*args, size_cap=cfg["exterior_cap"])
    rows = []
    for res in (qr, ex):
        for k, (v, s) in enumerate(zip(res.exponents, res.stderr), 1):
            rows.append([res.method, k, v, s, res.n, res.samples, cfg["seed"], res.kappa])
    for k in range(sysm.d):
        gap = abs(qr.exponents[k] - ex.exponents[k])
        tol = 2 * float(np.hypot(qr.stderr[k], ex.stderr[k]))
        if gap > tol:
            rows.append(["warning", k + 1, gap, tol, cfg["n"], cfg["samples"], cfg["seed"], ""])
    w.csv("spectrum.csv", ["method", "k", "value", "stderr", "n", "samples", "seed", "kappa"], rows)


def _sweep_path(cfg, p):
    block = cfg.get("sweep", {})
    if "path" in block:
        return [as_probability(q) for q in block["path"]]
    if "start" in block and "end" in block:
        a, b = np.asarray(block["start"], float), np.asarray(block["end"], float)
        k = block.get("points", 9)
        ts = np.linspace(0, 1, k) if k > 1 else np.zeros(1)
        return [as_probability((1 - s) * a + s * b) for s in ts]
    return [p]


def cmd_sweep(cfg, sysm, p, sections, w: Writer):
    rows = []
    for r in ly.continuity_sweep(sysm, _sweep_path(cfg, p), cfg["n"], cfg["samples"], cfg["seed"]):
        rows.append([r.p, r.estimate.value, r.estimate.stderr, "" if r.delta is None else r.delta,
                     cfg["n"], cfg["samples"], cfg["seed"]])
    w.csv("sweep.csv", ["p", "value", "stderr", "delta", "n", "samples", "seed"], rows)


def _certificate(sysm, p, params, seed):
    return ct.build_certificate(sysm, p, seed=seed, **params)


def cmd_contraction(cfg, sysm, p, sections, w: Writer):
    params = cfg["contraction"]
    cert = _certificate(sysm, p, params, cfg["seed"])
    w.json("certificate.json", {"certificate": cert.to_dict(), "envelope_holds": cert.envelope_holds()})
    w.csv("kn_table.csv", ["n", "alpha", "K_n", "envelope"],
          [[n, a, K, cert.envelope(n)] for n, a, K in cert.Kn_table])


def cmd_analytic(cfg, sysm, p, sections, w: Writer):
    a = cfg["analytic"]
    cert = None
    block = sysm
    if a["reduce"]:
        block = an.terminal_block(sysm, p, seed=cfg["seed"], sections=sections)
    if block.d > 1:
        cert = _certificate(block, p, {**CONTRACTION_DEFAULTS, **a["certificate"]}, cfg["seed"])
    zs = [np.asarray(p, complex)] if a["z"] is None else [
        np.array([complex(re, im) for re, im in z]) for z in a["z"]]
    # reject out-of-domain weights before the ensemble is built
    gamma = a["gamma"]
    if gamma is None:
        gamma = an.default_gamma(cert) if cert is not None else 0.5
    dom = an.DomainGamma(p, gamma) if cert is None else an.DomainGamma.from_certificate(p, cert, gamma)
    for z in zs:
        an.as_weights(z)
        dom.require(z)
    model = an.AnalyticModel(block, p, a["gamma"], cert, a["tol"], Q=a["Q"], estimator=a["estimator"],
                             samples=a["samples"], seed=cfg["seed"])
    evals = [model(z).to_dict() for z in zs]
    w.json("analytic.json", {"evaluations": evals, "gamma": model.gamma, "n": model.n,
                             "block_dimension": block.d,
                             "certificate": cert.to_dict() if cert else None})
    delta = np.zeros(sysm.N)
    if a["delta"] is None:
        delta[0], delta[-1] = 1.0, -1.0
    else:
        delta = np.asarray(a["delta"], float)
    if sysm.N < 2:
        return
    rmax = model.domain.slice_radius(delta)
    r = 0.5 * rmax if a["radius"] is None else a["radius"]
    tc = an.taylor_coeffs(block, p, model.gamma, delta, r, a["K"], nodes=a["nodes"], model=model)
    w.csv("taylor.csv", ["k", "re", "im", "budget", "radius", "n"],
          [[k, c.real, c.imag, b, tc.radius, tc.n] for k, (c, b) in enumerate(zip(tc.coeffs, tc.budget))])
    hr = an.verify_holomorphy(block, p, model.gamma, delta, an.disk_grid(0.5 * r, a["grid_size"]),
                              model=model)
    w.csv("holomorphy.csv", ["w_re", "w_im", "residual", "dF_re", "dF_im"],
          [[pt.real, pt.imag, res, d.real, d.imag]
           for pt, res, d in zip(hr.points, hr.residuals, hr.derivative)])


def cmd_reduce(cfg, sysm, p, sections, w: Writer):
    block = cfg.get("reduce", {})
    secs = [rd.Section.from_dict(s) for s in block.get("sections", [])]
    if not secs and block.get("use_fixture_sections", True):
        secs = list(sections)
    tol = block.get("tol")
    for V in secs:
        defect = rd.check_invariant(sysm, V)
        if defect > (V.default_tol() if tol is None else tol):
            raise InvarianceError(f"declared section is not invariant (defect {defect:.3e})", defect)
    chain = rd.reduce_chain(sysm, p, secs, cfg["n"], cfg["samples"], cfg["seed"], tol)
    reports = []
    for V in secs:
        kr = rd.kifer_max_check(sysm, p, V, cfg["n"], cfg["samples"], cfg["seed"], tol)
        reports.append({"k": V.k, "ambient": kr.ambient.value, "restricted": kr.restricted.value,
                        "quotient": kr.quotient.value, "tolerance": kr.tolerance, "passed": kr.passed,
                        "branch": kr.branch})
    w.json("reduction.json", {"chain": chain.to_dict(), "max_formula": reports})


HANDLERS = {"top": cmd_top, "spectrum": cmd_spectrum, "sweep": cmd_sweep,
            "contraction": cmd_contraction, "analytic": cmd_analytic, "reduce": cmd_reduce}


# ---------------------------------------------------------------- driver


def resolve(cfg: dict) -> dict:
    """Config with all defaults filled in (echoed into the output metadata)."""
    out = {**DEFAULTS, **copy.deepcopy(cfg)}
    out["contraction"] = {**CONTRACTION_DEFAULTS, **out.get("contraction", {})}
    out["analytic"] = {**ANALYTIC_DEFAULTS, **out.get("analytic", {})}
    return out


def run(command, cfg: dict, out: Path, workers=None) -> dict:
    """Run one command; raises library errors, returns the run record."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    validate_config(cfg)
    start = time.perf_counter()
    set_workers(workers or cfg.get("workers", 1))
    full = resolve(cfg)
    sysm, p0, sections = build_system(cfg)
    p = _weights(cfg, p0)
    if len(p) != sysm.N:
        raise ConfigError("p has the wrong length for this system")
    chash = config_hash(cfg)
    meta = {"config_hash": chash, "seed": cfg["seed"], "version": __version__, "command": command,
            "resolved": {k: full[k] for k in sorted(full) if k != "system"}}
    w = Writer(out, meta)
    HANDLERS[command](full, sysm, p, sections, w)
    w.manifest()
    return {"config_hash": chash, "version": __version__, "command": command,
            "wall_time": time.perf_counter() - start, "outputs": w.files}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qpcocycle", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="worker cap (results unaffected)")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    args = parser.parse_args(argv)

    def fail(code, kind, exc, **extra):
        print(json.dumps({"error": kind, "message": str(exc), **extra}))
        return code

    try:
        cfg = json.loads(Path(args.config).read_text())
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        if args.seed is not None:
            cfg["seed"] = args.seed
        record = run(args.command, cfg, Path(args.out), args.workers)
    except (OSError, json.JSONDecodeError) as exc:
        return fail(EXIT_CONFIG, "config", exc)
    except ConfigError as exc:
        return fail(EXIT_CONFIG, "config", exc)
    except NoContractionFound as exc:
        return fail(EXIT_CONTRACTION, "no-contraction-found", exc)
    except DomainError as exc:
        return fail(EXIT_DOMAIN, "domain", exc)
    except InvarianceError as exc:
        return fail(EXIT_INVARIANCE, "invariance", exc, defect=exc.defect)
    except CocycleError as exc:
        return fail(EXIT_ESTIMATOR, "estimator", exc)
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
