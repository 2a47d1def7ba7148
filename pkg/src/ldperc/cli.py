"""Command-line front end: subcommand dispatch, config files, manifests.

Every subcommand accepts ``--config FILE`` (JSON, same keys as the
flags; explicit flags win) and writes CSV results plus a replayable
JSON manifest next to them.  Exit codes: 0 success, 1 error, 2 soft
statistical check out of band.
"""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
import time
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__
from .dynamics import ClockRates, event_log_to_csv, run_ldp, switch_count_check, trajectory_to_csv
from .experiments import (
    fit_power_law,
    frozen_check,
    frozen_to_csv,
    mixing_curve,
    mixing_to_csv,
    regime_classify,
)
from .field import DYADIC_BRW, EXACT_LOG, Kernel, sample_field
from .gmc import default_rho, gmc_measure, lebesgue_measure, measure_to_csv, moderate_set, truncate_measure
from .lattice import Rect, RectQuad, build_lattice
from .perc import calibrate_alpha4
from .spectral import TruthTable, spectral_distribution, spectrum_to_csv, truth_table_from_quads, walsh_transform

_HINT = "hint: run `ldperc COMMAND --help` for flags, or check the config file keys"


def _floats(v) -> list:
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip() != ""]


def _rect(v) -> Rect:
    a = _floats(v)
    if len(a) != 4:
        raise ValueError(f"domain needs x0,y0,x1,y1 — got {v!r}")
    return Rect(*a)


def _quad(v) -> RectQuad:
    parts = [p.strip() for p in str(v).split(",")]
    if len(parts) != 5 or parts[4] not in ("h", "v"):
        raise ValueError(f"quad needs x0,y0,x1,y1,h|v — got {v!r}")
    return RectQuad(Rect(*(float(p) for p in parts[:4])), parts[4])


def _kernel(name) -> Kernel:
    if name not in (DYADIC_BRW, EXACT_LOG):
        raise ValueError(f"kernel must be {DYADIC_BRW} or {EXACT_LOG} — got {name!r}")
    return Kernel(kind=name)


def _default_radii(eta: float) -> list:
    radii = [
        2.0**-k
        for k in range(1, 8)
        if 2.0**-k >= 8.0 * eta - 1e-12 and 2.0**-k / eta + 4.0 <= 1.0 / eta + 1e-9
    ]
    if not radii:
        raise ValueError(f"eta={eta:g} leaves no admissible calibration radii")
    return sorted(radii)


def _get_cal(eta, cal_samples, cal_seed, cache_dir):
    return calibrate_alpha4(
        eta, _default_radii(eta), cal_samples, cal_seed,
        cache_dir_override=cache_dir or None,
    )


def _resolve(ctx, config_path, types: dict, required=()) -> dict:
    """Config-file values under explicit flags, coerced per the table."""
    raw = {}
    if config_path:
        with open(config_path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        for k, v in data.items():
            kk = k.replace("-", "_")
            if kk == "command":
                if v != ctx.command.name:
                    raise ValueError(
                        f"config is for command {v!r}, not {ctx.command.name!r}"
                    )
                continue
            if kk not in types:
                raise ValueError(f"unknown config key {k!r} for {ctx.command.name}")
            raw[kk] = v
    out = {}
    src_cli = click.core.ParameterSource.COMMANDLINE
    for key, typ in types.items():
        if ctx.get_parameter_source(key) == src_cli:
            val = ctx.params[key]
        elif key in raw:
            val = raw[key]
        else:
            val = ctx.params[key]
        if val is not None and typ is not None:
            try:
                val = typ(val)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"bad value for {key!r}: {exc}") from exc
        out[key] = val
    for key in required:
        if out.get(key) is None or out.get(key) == ():
            raise ValueError(f"missing required parameter --{key.replace('_', '-')}")
    return out


def _emit(write_fn, out_path):
    """Route a path-taking writer to a file (atomically) or stdout."""
    if out_path:
        tmp = f"{out_path}.tmp"
        write_fn(tmp)
        os.replace(tmp, out_path)
        return
    fd, tmp = tempfile.mkstemp(suffix=".csv")
    os.close(fd)
    try:
        write_fn(tmp)
        with open(tmp, newline="") as fh:
            click.echo(fh.read(), nl=False)
    finally:
        os.unlink(tmp)


def _manifest(command, params, out_path, t0, extra=None):
    if not out_path:
        return
    base, _ = os.path.splitext(str(out_path))
    path = base + ".manifest.json"
    safe = {
        k: (repr(v) if isinstance(v, float) and not math.isfinite(v) else v)
        for k, v in params.items()
    }
    doc = {
        "command": command,
        "parameters": safe,
        "package_version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": round(time.monotonic() - t0, 3),
        "outputs": [str(out_path)],
    }
    if extra:
        doc.update(extra)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, path)


def _common(fn):
    fn = click.option("--config", type=click.Path(exists=True), default=None,
                      help="JSON config; explicit flags override it.")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="Output CSV path (default: stdout).")(fn)
    fn = click.option("--threads", type=int, default=os.cpu_count() or 1,
                      show_default="machine parallelism",
                      help="Worker budget recorded in the manifest.")(fn)
    return fn


@click.group()
def cli():
    """Dynamical-percolation laboratory with chaos-driven clock rates."""


@cli.command()
@click.option("--eta", type=float, default=None, help="Mesh (required).")
@click.option("--radii", type=str, default=None, show_default="admissible dyadics")
@click.option("--samples", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cache-dir", type=click.Path(), default=None,
              help="Overrides LDP_CACHE_DIR / the default cache.")
@_common
@click.pass_context
def calibrate(ctx, **_):
    """Monte-Carlo four-arm probability table for a mesh."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "eta": float, "radii": None, "samples": int, "seed": int,
        "cache_dir": str, "out": None, "threads": int,
    }, required=("eta",))
    radii = _floats(p["radii"]) if p["radii"] else _default_radii(p["eta"])
    cal = calibrate_alpha4(p["eta"], radii, p["samples"], p["seed"],
                           cache_dir_override=p["cache_dir"] or None)

    def write(path):
        import csv as _csv
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["r", "alpha4", "se", "n", "flag"])
            for j in range(cal.radii.size):
                w.writerow([repr(float(cal.radii[j])), repr(float(cal.alpha4[j])),
                            repr(float(cal.se[j])), int(cal.n[j]), cal.flags[j] or ""])

    _emit(write, p["out"])
    _manifest("calibrate", p, p["out"], t0)
    return 0


@cli.command()
@click.option("--eta", type=float, default=None, help="Mesh (required).")
@click.option("--domain", type=str, default="0,0,1,1", show_default=True)
@click.option("--kernel", type=str, default=DYADIC_BRW, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_common
@click.pass_context
def field(ctx, **_):
    """Sample a log-correlated field; CSV of site values."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "eta": float, "domain": None, "kernel": None, "seed": int,
        "out": None, "threads": int,
    }, required=("eta",))
    lat = build_lattice(p["eta"], _rect(p["domain"]))
    fld = sample_field(lat, _kernel(p["kernel"]), p["seed"])

    def write(path):
        import csv as _csv
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["site_index", "x", "y", "value", "variance"])
            for i in range(lat.n_sites):
                w.writerow([i, repr(float(lat.sites[i, 0])), repr(float(lat.sites[i, 1])),
                            repr(float(fld.values[i])), repr(float(fld.variance[i]))])

    _emit(write, p["out"])
    _manifest("field", p, p["out"], t0)
    return 0


@cli.command()
@click.option("--eta", type=float, default=None, help="Mesh (required).")
@click.option("--domain", type=str, default="0,0,1,1", show_default=True)
@click.option("--gamma", type=float, default=None, help="Chaos parameter (required).")
@click.option("--kernel", type=str, default=DYADIC_BRW, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cutoff", type=float, default=float("inf"),
              show_default="inf", help="Moderate-set cutoff C.")
@click.option("--cal-samples", type=int, default=2000, show_default=True)
@click.option("--cal-seed", type=int, default=1234, show_default=True)
@click.option("--cache-dir", type=click.Path(), default=None)
@_common
@click.pass_context
def gmc(ctx, **_):
    """Chaos measure of a sampled field; CSV of cell masses."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "eta": float, "domain": None, "gamma": float, "kernel": None,
        "seed": int, "cutoff": float, "cal_samples": int, "cal_seed": int,
        "cache_dir": str, "out": None, "threads": int,
    }, required=("eta", "gamma"))
    if not 0.0 <= p["gamma"] < 2.0:
        raise ValueError(f"gamma out of [0,2): {p['gamma']}")
    lat = build_lattice(p["eta"], _rect(p["domain"]))
    fld = sample_field(lat, _kernel(p["kernel"]), p["seed"])
    mu = gmc_measure(fld, p["gamma"], lebesgue_measure(lat))
    if np.isfinite(p["cutoff"]):
        cal = _get_cal(p["eta"], p["cal_samples"], p["cal_seed"], p["cache_dir"])
        mu = truncate_measure(
            mu, moderate_set(mu, p["cutoff"], default_rho(p["gamma"]), cal)
        )
    _emit(lambda path: measure_to_csv(mu, path), p["out"])
    _manifest("gmc", p, p["out"], t0)
    return 0


@cli.command()
@click.option("--eta", type=float, default=None, help="Mesh (required).")
@click.option("--domain", type=str, default=None,
              show_default="quads padded by 2*eta")
@click.option("--gamma", type=float, default=None, help="Chaos parameter (required).")
@click.option("--cutoff", type=float, default=float("inf"), show_default="inf")
@click.option("--horizon", type=float, default=None, help="Time horizon T (required).")
@click.option("--quad", "quads", type=str, multiple=True,
              help="x0,y0,x1,y1,h|v — repeatable (required).")
@click.option("--sample-times", type=str, default=None, show_default="0,T")
@click.option("--kernel", type=str, default=DYADIC_BRW, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cal-samples", type=int, default=3000, show_default=True)
@click.option("--cal-seed", type=int, default=1234, show_default=True)
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--events-out", type=click.Path(), default=None,
              help="Also write the accepted-event log.")
@_common
@click.pass_context
def simulate(ctx, **_):
    """Run the chaos-clocked dynamics, sampling quad crossings."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "eta": float, "domain": None, "gamma": float, "cutoff": float,
        "horizon": float, "quads": None, "sample_times": None, "kernel": None,
        "seed": int, "cal_samples": int, "cal_seed": int, "cache_dir": str,
        "events_out": str, "out": None, "threads": int,
    }, required=("eta", "gamma", "horizon", "quads"))
    quads = [_quad(q) for q in (
        p["quads"] if isinstance(p["quads"], (list, tuple)) else [p["quads"]]
    )]
    st = _floats(p["sample_times"]) if p["sample_times"] else [0.0, p["horizon"]]
    if p["domain"]:
        dom = _rect(p["domain"])
    else:
        pad = 2.0 * p["eta"]
        dom = Rect(
            min(q.rect.x0 for q in quads) - pad, min(q.rect.y0 for q in quads) - pad,
            max(q.rect.x1 for q in quads) + pad, max(q.rect.y1 for q in quads) + pad,
        )
    lat = build_lattice(p["eta"], dom)
    fld = sample_field(lat, _kernel(p["kernel"]), p["seed"])
    cal = _get_cal(p["eta"], p["cal_samples"], p["cal_seed"], p["cache_dir"])
    traj = run_ldp(lat, fld, p["gamma"], p["cutoff"], p["horizon"], quads, st,
                   p["seed"], cal)
    _emit(lambda path: trajectory_to_csv(traj, path), p["out"])
    if p["events_out"]:
        tmp = f"{p['events_out']}.tmp"
        event_log_to_csv(traj, tmp)
        os.replace(tmp, p["events_out"])
    _manifest("simulate", p, p["out"], t0,
              extra={"n_events": int(traj.event_times.size)})
    return 0


@cli.command()
@click.option("--function", type=str, default="maj3", show_default=True,
              help="maj3, dictator, or quad (needs --eta/--domain/--quad).")
@click.option("--eta", type=float, default=None)
@click.option("--domain", type=str, default=None)
@click.option("--quad", "quads", type=str, multiple=True)
@_common
@click.pass_context
def spectrum(ctx, **_):
    """Fourier-Walsh weights of a small Boolean function."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "function": str, "eta": float, "domain": None, "quads": None,
        "out": None, "threads": int,
    })
    name = p["function"]
    if name == "dictator":
        tt = TruthTable(1, (0,), np.array([-1, 1], dtype=np.int8))
    elif name == "maj3":
        vals = np.empty(8, dtype=np.int8)
        for a in range(8):
            vals[a] = 1 if ((a & 1) + (a >> 1 & 1) + (a >> 2 & 1)) >= 2 else -1
        tt = TruthTable(3, (0, 1, 2), vals)
    elif name == "quad":
        if p["eta"] is None or p["domain"] is None or not p["quads"]:
            raise ValueError("function=quad needs --eta, --domain and --quad")
        lat = build_lattice(p["eta"], _rect(p["domain"]))
        qs = [_quad(q) for q in (
            p["quads"] if isinstance(p["quads"], (list, tuple)) else [p["quads"]]
        )]
        tt = truth_table_from_quads(lat, qs)
    else:
        raise ValueError(f"unknown function {name!r} (maj3, dictator, quad)")
    dist = spectral_distribution(walsh_transform(tt), tt.site_ids)
    _emit(lambda path: spectrum_to_csv(dist, path), p["out"])
    _manifest("spectrum", p, p["out"], t0, extra={"n_weights": int(dist.masks.size)})
    return 0


@cli.command()
@click.option("--gamma", type=float, default=None, help="Chaos parameter (required).")
@click.option("--eta", type=float, default=None, help="Mesh (required).")
@click.option("--quad", type=str, default="0,0,1,1,h", show_default=True)
@click.option("--t-grid", type=str, default=None,
              help="Explicit comma-separated grid; overrides --tmax.")
@click.option("--tmax", type=float, default=100.0, show_default=True,
              help="Log-spaced 12-point grid on [0.1, tmax].")
@click.option("--replicas", type=int, default=200, show_default=True)
@click.option("--mode", type=str, default="annealed", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cutoff", type=float, default=float("inf"), show_default="inf")
@click.option("--fit-tmin", type=float, default=None,
              help="Also fit a power law above this t.")
@click.option("--cal-samples", type=int, default=3000, show_default=True)
@click.option("--cal-seed", type=int, default=1234, show_default=True)
@click.option("--cache-dir", type=click.Path(), default=None)
@_common
@click.pass_context
def mixing(ctx, **_):
    """Crossing-covariance decay curve; soft-checks monotonicity."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "gamma": float, "eta": float, "quad": None, "t_grid": None,
        "tmax": float, "replicas": int, "mode": str, "seed": int,
        "cutoff": float, "fit_tmin": float, "cal_samples": int,
        "cal_seed": int, "cache_dir": str, "out": None, "threads": int,
    }, required=("gamma", "eta"))
    grid = (
        _floats(p["t_grid"]) if p["t_grid"]
        else np.geomspace(0.1, p["tmax"], 12).tolist()
    )
    cal = _get_cal(p["eta"], p["cal_samples"], p["cal_seed"], p["cache_dir"])
    curve = mixing_curve(
        p["gamma"], p["eta"], _quad(p["quad"]), grid, p["replicas"],
        p["mode"], p["seed"], cal, C=p["cutoff"],
    )
    _emit(lambda path: mixing_to_csv(curve, path), p["out"])
    extra = {}
    if p["fit_tmin"] is not None:
        try:
            extra["fit"] = fit_power_law(curve, p["fit_tmin"])
        except ValueError as exc:
            extra["fit"] = {"error": str(exc)}
    soft_ok = all(
        curve.est_cov[j + 1] <= curve.est_cov[j]
        + 2.0 * (curve.se[j] + curve.se[j + 1])
        for j in range(curve.t_grid.size - 1)
    )
    extra["monotone_within_2se"] = soft_ok
    _manifest("mixing", p, p["out"], t0, extra=extra)
    if not soft_ok:
        click.echo("soft-assert failed: est_cov not nonincreasing within 2 SE", err=True)
        return 2
    return 0


@cli.command()
@click.option("--gamma", type=float, default=1.8, show_default=True)
@click.option("--etas", type=str, default=None,
              help="Comma-separated mesh list (required).")
@click.option("--quad", type=str, default="0,0,1,1,h", show_default=True)
@click.option("--t", type=float, default=10.0, show_default=True)
@click.option("--replicas", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cutoff", type=float, default=float("inf"), show_default="inf")
@click.option("--cal-samples", type=int, default=3000, show_default=True)
@click.option("--cal-seed", type=int, default=1234, show_default=True)
@click.option("--cache-dir", type=click.Path(), default=None)
@_common
@click.pass_context
def frozen(ctx, **_):
    """Quad flip probability per mesh; soft-checks the decreasing trend."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "gamma": float, "etas": None, "quad": None, "t": float,
        "replicas": int, "seed": int, "cutoff": float, "cal_samples": int,
        "cal_seed": int, "cache_dir": str, "out": None, "threads": int,
    }, required=("etas",))
    etas = sorted(_floats(p["etas"]), reverse=True)
    rows = []
    for eta in etas:
        cal = _get_cal(eta, p["cal_samples"], p["cal_seed"], p["cache_dir"])
        rows += frozen_check(
            p["gamma"], [eta], _quad(p["quad"]), p["t"], p["replicas"],
            p["seed"], cal, C=p["cutoff"],
        )
    _emit(lambda path: frozen_to_csv(rows, path), p["out"])
    soft_ok = True
    if p["gamma"] > 0.0:
        for a, b in zip(rows, rows[1:]):  # coarse -> fine
            soft_ok &= b["p_flip"] <= a["p_flip"] + 2.0 * (a["se"] + b["se"])
    _manifest("frozen", p, p["out"], t0, extra={"decreasing_within_2se": soft_ok})
    if not soft_ok:
        click.echo("soft-assert failed: flip probability not decreasing in mesh", err=True)
        return 2
    return 0


@cli.command()
@click.option("--eta", type=float, default=1.0, show_default=True)
@click.option("--domain", type=str, default="-0.2,-0.2,4.2,1.0", show_default=True)
@click.option("--quad", type=str, default="-0.1,-0.2,4.1,1.0,h", show_default=True)
@click.option("--rate", type=float, default=1.0, show_default=True)
@click.option("--t1", type=float, default=0.0, show_default=True)
@click.option("--t2", type=float, default=1.0, show_default=True)
@click.option("--replicas", type=int, default=1000, show_default=True)
@click.option("--n-static", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_common
@click.pass_context
def switchcheck(ctx, **_):
    """Observed vs predicted quad re-decision counts; |z| >= 4 exits 2."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "eta": float, "domain": None, "quad": None, "rate": float,
        "t1": float, "t2": float, "replicas": int, "n_static": int,
        "seed": int, "out": None, "threads": int,
    })
    lat = build_lattice(p["eta"], _rect(p["domain"]))
    rates = ClockRates(np.full(lat.n_sites, p["rate"]), 0.0, 1.0, lat)
    rep = switch_count_check(
        rates, _quad(p["quad"]), p["t1"], p["t2"], p["replicas"], p["seed"],
        n_static=p["n_static"],
    )

    def write(path):
        import csv as _csv
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            keys = ["observed_mean", "observed_se", "predicted", "predicted_se",
                    "z_score", "n_replicas"]
            w.writerow(keys)
            w.writerow([
                repr(float(rep[k])) if k != "n_replicas" else rep[k] for k in keys
            ])

    _emit(write, p["out"])
    _manifest("switchcheck", p, p["out"], t0, extra={"report": rep})
    if abs(rep["z_score"]) >= 4.0:
        click.echo(f"soft-assert failed: |z| = {abs(rep['z_score']):.2f} >= 4", err=True)
        return 2
    return 0


@cli.command()
@click.option("--gamma", type=float, default=None, help="Chaos parameter (required).")
@click.option("--d", type=float, default=0.75, show_default=True)
@_common
@click.pass_context
def regime(ctx, **_):
    """Classify gamma and print the central-charge coordinates."""
    t0 = time.monotonic()
    p = _resolve(ctx, ctx.params["config"], {
        "gamma": float, "d": float, "out": None, "threads": int,
    }, required=("gamma",))
    rep = regime_classify(p["gamma"], p["d"])

    def write(path):
        import csv as _csv
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["gamma", "regime", "d", "Q", "c"])
            w.writerow([repr(rep.gamma), rep.regime, repr(rep.d),
                        repr(rep.Q), repr(rep.c)])

    click.echo(f"gamma={rep.gamma:g} regime={rep.regime} Q={rep.Q:.6f} c={rep.c:.6f}")
    if p["out"]:
        _emit(write, p["out"])
    _manifest("regime", p, p["out"], t0)
    return 0


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return int(rv) if isinstance(rv, int) else 0
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except click.ClickException as exc:  # usage errors included
        click.echo(f"error: {exc.format_message()}", err=True)
        click.echo(_HINT, err=True)
        return 1
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        click.echo(_HINT, err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
