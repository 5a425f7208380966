"""``fraccap`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import os
import platform
import re
import sys
import warnings

import numpy as np

from ._validation import IdentityViolation, NoBracketError, NotConvergedWarning
from .config import ConfigError, RunConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IDENTITY = 0, 2, 3, 4
COMMANDS = ("energy", "perimeter", "extend", "phi", "young", "young-table", "minimize", "blowup",
            "verify-identities")


class _NotConverged(Exception):
    pass


# --------------------------------------------------------------------------- inputs


def _parse_list(text):
    if text is None or isinstance(text, list):
        return text
    if ":" in text:
        a, b, k = text.split(":")
        return np.linspace(float(a), float(b), int(k)).tolist()
    return [float(x) for x in text.split(",") if x.strip()]


def _shape(window, res):
    w = np.asarray(window, dtype=float)
    return tuple(max(1, int(round(res * (hi - lo)))) for lo, hi in w)


def _load_set(path, cfg: RunConfig):
    """A GridSet from ``.bin`` or a region description from ``.json``.

    Returns ``(GridSet, region or None)``; a region is kept so that its part
    outside the window can be integrated analytically.
    """
    from .geometry import GridSet, rasterize, region_from_dict

    if path is None:
        raise ConfigError("an input set is required for this command")
    if not os.path.exists(path):
        raise ConfigError(f"input file not found: {path}")
    if not path.endswith(".json"):
        try:
            return GridSet.load(path), None
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path} is not a GridSet file: {exc}") from exc
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    grid = cfg.section("grid")
    window = doc.get("window", grid["window"]) if "region" in doc else grid["window"]
    spec = doc["region"] if "region" in doc else doc
    try:
        region = region_from_dict(spec, n=len(window))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad region in {path}: {exc}") from exc
    res = doc.get("res", grid["res"]) if "region" in doc else grid["res"]
    return rasterize(region, window, _shape(window, res)), region


# --------------------------------------------------------------------------- outputs


def _versions():
    import scipy
    import sklearn

    from . import __version__

    return {"fraccap": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _manifest(command, cfg: RunConfig, outputs):
    for out in outputs:
        _write(out + ".manifest.json", _json({
            "command": command, "config": cfg.data, "config_sha256": cfg.digest(),
            "seed": cfg.seed, "versions": _versions(), "outputs": sorted(outputs)}))


def _emit(result, cfg: RunConfig, command, text=None):
    """Write ``text`` (or the JSON of ``result``) to ``outputs.out`` or stdout."""
    out = cfg.section("outputs")["out"]
    body = text if text is not None else _json(result)
    if out:
        _write(out, body)
        return [out]
    sys.stdout.write(body)
    return []


def _svg(gs, path):
    """Cells of a planar GridSet as an SVG of unit squares (x right, x_2 up)."""
    nx, ny = gs.lattice.shape
    rects = [f'<rect x="{i}" y="{ny - 1 - j}" width="1" height="1"/>'
             for i, j in np.argwhere(gs.occupancy)]
    _write(path, (f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {nx} {ny}" '
                  f'shape-rendering="crispEdges"><g fill="#1f5fa8">' + "".join(rects)
                  + "</g></svg>\n"))


# --------------------------------------------------------------------------- commands


def _check_converged(br):
    if not br.converged:
        raise _NotConverged("quadrature error above rel_tol: " + json.dumps(br.to_dict(),
                                                                            default=_jsonable))


def cmd_energy(cfg):
    from .energies import capillarity_energy

    inp = cfg.section("inputs")
    E, _ = _load_set(inp["set"], cfg)
    omega, _ = _load_set(inp["container"] or inp["omega"], cfg)
    br = capillarity_energy(E, omega, cfg.kernel, cfg.quadrature)
    outs = _emit(br.to_dict(), cfg, "energy")
    return outs, br


def cmd_perimeter(cfg):
    from .energies import fractional_perimeter, per_s_sigma

    inp = cfg.section("inputs")
    F, _ = _load_set(inp["set"], cfg)
    R = cfg.section("options")["R"]
    if R is not None:
        br = per_s_sigma(F, float(R), cfg.kernel, cfg.quadrature)
    else:
        omega, _ = _load_set(inp["omega"] or inp["container"], cfg)
        br = fractional_perimeter(F, omega, cfg.kernel, cfg.quadrature)
    return _emit(br.to_dict(), cfg, "perimeter"), br


def _exterior(cfg, region):
    from .geometry import load_region

    path = cfg.section("inputs")["exterior"]
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"input file not found: {path}")
        return load_region(path)
    return region


def cmd_extend(cfg):
    from .extension import extend

    E, region = _load_set(cfg.section("inputs")["set"], cfg)
    opt = cfg.section("options")
    T = opt["T"] if opt["T"] is not None else 0.5 * float(np.max(E.lattice.hi - E.lattice.lo))
    levels = opt["levels"]
    U = extend(E, float(T), None if levels is None else int(levels), cfg.kernel, cfg.quadrature,
               exterior=_exterior(cfg, region) if E.n == 2 else None)
    lines = ["t,min,max,mean"]
    for k, t in enumerate(U.t):
        v = U.values[k]
        lines.append(f"{t:.17g},{v.min():.17g},{v.max():.17g},{v.mean():.17g}")
    return _emit(None, cfg, "extend", "\n".join(lines) + "\n"), None


def cmd_phi(cfg):
    from .extension import phi_profile

    E, region = _load_set(cfg.section("inputs")["set"], cfg)
    radii = _parse_list(cfg.section("options")["radii"])
    if not radii:
        raise ConfigError("phi needs --radii")
    prof = phi_profile(E, sorted(radii), cfg.kernel, cfg.quadrature,
                       exterior=_exterior(cfg, region))
    return _emit(None, cfg, "phi", prof.to_csv()), None


def cmd_young(cfg):
    from .younglaw import contact_angle

    k = cfg.kernel
    sol = contact_angle(k.sigma, k.s, float(cfg.section("options")["tol"]))
    return _emit(sol.to_dict(), cfg, "young"), None


def cmd_young_table(cfg):
    from .younglaw import young_table

    opt = cfg.section("options")
    tab = young_table(_parse_list(opt["sigmas"]), _parse_list(opt["s_values"]), float(opt["tol"]))
    return _emit(None, cfg, "young-table", tab.to_csv()), None


def cmd_minimize(cfg):
    from .minimizer import AnnealConfig, minimize

    C, _ = _load_set(cfg.section("inputs")["container"], cfg)
    a = cfg.section("anneal")
    vol = int(round(float(a["volume"]) * C.count))
    anneal = AnnealConfig(vol, a["initial_temperature"], float(a["cooling_ratio"]), int(a["sweeps"]),
                          a["moves_per_sweep"], int(a["quench_sweeps"]), cfg.seed)
    res = minimize(C, cfg.kernel, anneal, cfg.quadrature)
    outs = []
    o = cfg.section("outputs")
    summary = {"energy": res.energy, "volume_cells": vol, "initial_temperature":
               res.initial_temperature, "sweeps_run": len(res.trace) - 1}
    if o["out"]:
        res.droplet.save(o["out"])
        outs.append(o["out"])
    else:
        sys.stdout.write(_json(summary))
    if o["trace"]:
        _write(o["trace"], res.trace_csv())
        outs.append(o["trace"])
    if o.get("svg"):
        _svg(res.droplet, o["svg"])
        outs.append(o["svg"])
    return outs, None


def cmd_blowup(cfg):
    from .minimizer import blowup

    E, _ = _load_set(cfg.section("inputs")["set"], cfg)
    opt = cfg.section("options")
    radii = _parse_list(opt["radii"]) or [0.4, 0.2, 0.1, 0.05]
    cp = opt["contact_point"]
    if isinstance(cp, str):
        cp = [float(x) for x in cp.split(",")]
    rep = blowup(E, cp, radii, cfg.kernel, cfg.quadrature, samples=int(opt["samples"]),
                 phi=bool(opt["phi"]))
    return _emit(rep.to_dict(), cfg, "blowup"), None


def cmd_verify_identities(cfg):
    from .energies import verify_identities

    opt = cfg.section("options")
    res = int(cfg.section("grid")["res"])
    checks = verify_identities(trials=int(opt["trials"]), seed=cfg.seed, resolution=res,
                               params=cfg.kernel, cfg=cfg.quadrature)
    failures = [c.to_dict() for c in checks if not c.passed()]
    report = {"checks": len(checks), "failures": len(failures), "passed": not failures,
              "max_rel_error": max((c.rel_error for c in checks), default=0.0),
              "failed": failures}
    outs = _emit(report, cfg, "verify-identities")
    if failures:
        raise IdentityViolation(f"{len(failures)} identity checks failed")
    return outs, None


HANDLERS = {
    "energy": cmd_energy, "perimeter": cmd_perimeter, "extend": cmd_extend, "phi": cmd_phi,
    "young": cmd_young, "young-table": cmd_young_table, "minimize": cmd_minimize,
    "blowup": cmd_blowup, "verify-identities": cmd_verify_identities,
}


# --------------------------------------------------------------------------- argument parsing

_FLAGS = [
    # flag, config key, type, help
    ("--s", "kernel.s", float, "fractional order in (0, 1)"),
    ("--sigma", "kernel.sigma", float, "relative adhesion coefficient in (-1, 1)"),
    ("--n", "kernel.n", int, "dimension"),
    ("--rel-tol", "quadrature.rel_tol", float, "quadrature relative tolerance"),
    ("--res", "grid.res", int, "cells per unit length when rasterising regions"),
    ("--set", "inputs.set", str, "input set (.bin GridSet or .json region)"),
    ("--container", "inputs.container", str, "container set (.bin or .json)"),
    ("--omega", "inputs.omega", str, "window set for perimeters (.bin or .json)"),
    ("--exterior", "inputs.exterior", str, "region JSON describing the set outside the window"),
    ("--out", "outputs.out", str, "primary output path"),
    ("--trace", "outputs.trace", str, "energy trace CSV (minimize)"),
    ("--svg", "outputs.svg", str, "SVG picture of the minimised droplet"),
    ("--volume", "anneal.volume", float, "droplet volume as a fraction of the container"),
    ("--sweeps", "anneal.sweeps", int, "annealing sweeps"),
    ("--cooling-ratio", "anneal.cooling_ratio", float, "geometric cooling ratio"),
    ("--moves-per-sweep", "anneal.moves_per_sweep", int, "proposals per sweep"),
    ("--R", "options.R", float, "ball radius for per_s_sigma"),
    ("--T", "options.T", float, "extension height"),
    ("--levels", "options.levels", int, "extension ladder levels"),
    ("--radii", "options.radii", str, "radius list a,b,c or range a:b:count"),
    ("--contact-point", "options.contact_point", str, "x1,x2 of the contact point"),
    ("--sigmas", "options.sigmas", str, "adhesion list for young-table"),
    ("--s-values", "options.s_values", str, "order list for young-table"),
    ("--tol", "options.tol", float, "root tolerance"),
    ("--trials", "options.trials", int, "random sets per identity"),
    ("--samples", "options.samples", int, "blow-up sampling grid size"),
    ("--no-phi", "options.phi", None, "skip the Phi profile in blowup"),
    ("--seed", "seed", int, "random seed"),
]


def build_parser():
    p = argparse.ArgumentParser(prog="fraccap", description="Fractional capillarity toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    for flag, key, typ, hlp in _FLAGS:
        dest = key.replace(".", "__")
        if typ is None:
            p.add_argument(flag, dest=dest, action="store_const", const=False, default=None,
                           help=hlp)
        else:
            p.add_argument(flag, dest=dest, type=typ, default=None, help=hlp)
    return p


def _overrides(ns):
    out = {}
    for _, key, _, _ in _FLAGS:
        val = getattr(ns, key.replace(".", "__"))
        if val is not None:
            out[key] = val
    return out


def _limit_threads():
    n = os.environ.get("FRACCAP_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def run(command, cfg: RunConfig):
    """Run one command; returns the exit status."""
    limiter = _limit_threads()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NotConvergedWarning)
            outs, br = HANDLERS[command](cfg)
        if outs:
            _manifest(command, cfg, outs)
        if br is not None:
            _check_converged(br)
        if any(issubclass(w.category, NotConvergedWarning) for w in caught):
            raise _NotConverged("; ".join(str(w.message) for w in caught))
        return EXIT_OK
    except IdentityViolation as exc:
        print(f"fraccap: identity violation: {exc}", file=sys.stderr)
        return EXIT_IDENTITY
    except (_NotConverged, NoBracketError) as exc:
        print(f"fraccap: numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"fraccap: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if limiter is not None:
            limiter.unregister()


def _join_negative_values(argv):
    """``--sigmas -0.8:0.8:9`` -> ``--sigmas=-0.8:0.8:9``; argparse only accepts
    plain negative numbers as separate values."""
    valued = {flag for flag, _, typ, _ in _FLAGS if typ is not None} | {"--config"}
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in valued and i + 1 < len(argv) and re.match(r"-[\d.]", argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    ns = build_parser().parse_args(_join_negative_values(argv))
    try:
        cfg = RunConfig.from_sources(ns.config, _overrides(ns))
    except ConfigError as exc:
        print(f"fraccap: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(ns.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
