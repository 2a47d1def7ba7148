"""Statistical studies: mixing curves, decay fits, regime classification.

Exponent checks here are soft by design — estimates carry bootstrap or
binomial errors and the asymptotic predictions have o(1) corrections at
any finite mesh — so assertions happen at generous thresholds and the
reports carry everything needed to judge a run by eye.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import run_ldp
from .field import Kernel, sample_field
from .gmc import SiteMeasure, gmc_measure
from .lattice import Rect, RectQuad, build_lattice
from .perc import crosses
from .rng import derive_seed, generator

ANNEALED = "ANNEALED"
QUENCHED = "QUENCHED"

#: regime boundaries in gamma
GAMMA_STABLE_MAX = 2.0 - math.sqrt(2.5)
GAMMA_SUPER_MIN = math.sqrt(1.5)

_BOOTSTRAP = 200


def theta(d: float, gamma: float) -> float:
    """(d - gamma^2) / (d + gamma^2); the polynomial-decay exponent input."""
    if d <= 0.0:
        raise ValueError("d must be positive")
    if gamma < 0.0 or gamma * gamma > d:
        raise ValueError("theta needs 0 <= gamma <= sqrt(d)")
    return (d - gamma * gamma) / (d + gamma * gamma)


@dataclass
class RegimeReport:
    gamma: float
    regime: str
    thresholds: tuple
    d: float
    Q: float
    c: float


def regime_classify(gamma: float, d: float = 0.75) -> RegimeReport:
    """Stability regime of gamma plus the central-charge coordinates."""
    if not 0.0 < gamma < 2.0:
        raise ValueError(f"gamma out of (0,2): {gamma}")
    if gamma < GAMMA_STABLE_MAX:
        regime = "STABLE"
    elif gamma < GAMMA_SUPER_MIN:
        regime = "INTERMEDIATE"
    elif gamma == GAMMA_SUPER_MIN:
        regime = "UNRESOLVED"  # boundary point excluded from both results
    else:
        regime = "SUPERCRITICAL"
    q = d / gamma + gamma / 2.0
    c = 25.0 - 6.0 * q * q
    return RegimeReport(
        gamma=gamma,
        regime=regime,
        thresholds=(GAMMA_STABLE_MAX, GAMMA_SUPER_MIN),
        d=d,
        Q=q,
        c=c,
    )


@dataclass
class MixingCurve:
    gamma: float
    eta: float
    quad: RectQuad
    t_grid: np.ndarray
    est_cov: np.ndarray
    se: np.ndarray
    n_replicas: int
    mode: str
    seed: int

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.est_cov = np.asarray(self.est_cov, dtype=float)
        self.se = np.asarray(self.se, dtype=float)
        if not self.t_grid.shape == self.est_cov.shape == self.se.shape:
            raise ValueError("grid/estimate/SE length mismatch")


def _default_domain(quad: RectQuad, eta: float) -> Rect:
    r = quad.rect
    pad = 2.0 * eta
    return Rect(r.x0 - pad, r.y0 - pad, r.x1 + pad, r.y1 + pad)


def mixing_curve(
    gamma: float,
    eta: float,
    quad: RectQuad,
    t_grid,
    n_replicas: int,
    mode: str,
    seed: int,
    cal,
    C: float = np.inf,
    kernel: Kernel | None = None,
    domain: Rect | None = None,
) -> MixingCurve:
    """Cov[crossing(0), crossing(t)] over the grid, with bootstrap SEs.

    ANNEALED draws a fresh field every replica; QUENCHED reuses one field
    and re-randomizes only the percolation and its clocks.
    """
    mode = mode.upper()
    if mode not in (ANNEALED, QUENCHED):
        raise ValueError(f"mode must be ANNEALED or QUENCHED, got {mode!r}")
    if n_replicas < 8:
        raise ValueError("need at least 8 replicas")
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if t_grid.size == 0 or t_grid[0] < 0.0:
        raise ValueError("t_grid must be nonempty and nonnegative")
    kernel = kernel or Kernel()
    lat = build_lattice(eta, domain or _default_domain(quad, eta))
    horizon = float(t_grid[-1]) if t_grid[-1] > 0 else 1.0
    sample_times = sorted({0.0, *t_grid.tolist()})
    col = {t: sample_times.index(t) for t in t_grid}

    quenched_field = (
        sample_field(lat, kernel, derive_seed(seed, 0)) if mode == QUENCHED else None
    )
    x0 = np.empty(n_replicas)
    xt = np.empty((n_replicas, t_grid.size))
    for rep in range(n_replicas):
        fld = quenched_field
        if fld is None:
            fld = sample_field(lat, kernel, derive_seed(seed, 2 * rep))
        traj = run_ldp(
            lat, fld, gamma, C, horizon, [quad], sample_times,
            derive_seed(seed, 2 * rep + 1), cal,
        )
        row = traj.crossings[:, 0].astype(float)
        x0[rep] = row[0]
        for j, t in enumerate(t_grid):
            xt[rep, j] = row[col[t]]

    est = (x0[:, None] * xt).mean(axis=0) - x0.mean() * xt.mean(axis=0)
    rng = generator(derive_seed(seed, 10**9))
    idx = rng.integers(0, n_replicas, (_BOOTSTRAP, n_replicas))
    boot = np.empty((_BOOTSTRAP, t_grid.size))
    for b in range(_BOOTSTRAP):
        xb0 = x0[idx[b]]
        xbt = xt[idx[b]]
        boot[b] = (xb0[:, None] * xbt).mean(axis=0) - xb0.mean() * xbt.mean(axis=0)
    se = boot.std(axis=0, ddof=1)

    return MixingCurve(
        gamma=gamma, eta=eta, quad=quad, t_grid=t_grid, est_cov=est, se=se,
        n_replicas=n_replicas, mode=mode, seed=seed,
    )


def fit_power_law(curve: MixingCurve, t_min: float) -> dict:
    """Least squares of log est_cov on log t above t_min.

    Grid points whose bootstrap CI touches zero are excluded (and listed);
    at least four usable points are required.  xi_hat is the decay
    exponent of c * t^(-xi).
    """
    t = curve.t_grid
    est = curve.est_cov
    se = curve.se
    usable = (t > t_min) & (t > 0.0) & (est > 0.0)
    excluded = usable & (est - 1.96 * se <= 0.0)
    keep = usable & ~excluded
    if keep.sum() < 4:
        raise ValueError(
            f"need >= 4 positive grid points above t_min: "
            f"{int(usable.sum())} positive, {int(excluded.sum())} excluded by CI"
        )
    lx = np.log(t[keep])
    ly = np.log(est[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    fit = slope * lx + intercept
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    dof = int(keep.sum()) - 2
    stderr = (
        math.sqrt(ss_res / dof / float(np.sum((lx - lx.mean()) ** 2)))
        if dof > 0
        else math.inf
    )
    return {
        "xi_hat": -float(slope),
        "stderr": stderr,
        "r_squared": r2,
        "n_used": int(keep.sum()),
        "excluded_t": t[excluded].tolist(),
        "flag": None if r2 >= 0.9 else "poor-fit",
    }


def frozen_check(
    gamma: float,
    eta_list,
    quad: RectQuad,
    t: float,
    n_replicas: int,
    seed: int,
    cal,
    C: float = np.inf,
    kernel: Kernel | None = None,
) -> list:
    """P(quad crossing differs between times 0 and t), one row per mesh.

    Meant for the supercritical regime, where the flip probability should
    fall with the mesh; gamma = 0 is allowed as the homogeneous contrast.
    """
    if gamma != 0.0 and not GAMMA_SUPER_MIN < gamma < 2.0:
        raise ValueError("frozen_check needs gamma in (sqrt(3/2), 2) or gamma = 0")
    if t <= 0.0:
        raise ValueError("t must be positive")
    kernel = kernel or Kernel()
    rows = []
    for mi, eta in enumerate(eta_list):
        lat = build_lattice(eta, _default_domain(quad, eta))
        mesh_seed = derive_seed(seed, mi)
        flips = 0
        for rep in range(n_replicas):
            fld = sample_field(lat, kernel, derive_seed(mesh_seed, 2 * rep))
            traj = run_ldp(
                lat, fld, gamma, C, t, [quad], [0.0, t],
                derive_seed(mesh_seed, 2 * rep + 1), cal,
            )
            flips += int(traj.crossings[0, 0] != traj.crossings[1, 0])
        p = flips / n_replicas
        rows.append(
            {
                "eta": float(eta),
                "p_flip": p,
                "se": math.sqrt(max(p * (1.0 - p), 1.0 / n_replicas) / n_replicas),
                "n_replicas": n_replicas,
                "gamma": gamma,
                "t": t,
            }
        )
    return rows


def laplace_decay_check(
    gamma: float,
    base: SiteMeasure,
    t_grid,
    n_replicas: int,
    seed: int = 0,
    kernel: Kernel | None = None,
    d: float = 2.0,
) -> dict:
    """Monte-Carlo Laplace transform of the total chaos mass over t_grid.

    Fits the log-log slope over the upper half of the grid and soft-checks
    it is at least as steep as -theta(d, gamma); gamma = 0 reproduces
    exp(-t * sigma(D)) exactly.
    """
    sigma = float(base.masses.sum())
    if sigma <= 0.0:
        raise ValueError("base measure must have positive total mass")
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if t_grid.size == 0 or t_grid[0] < 0.0:
        raise ValueError("t_grid must be nonempty and nonnegative")
    kernel = kernel or Kernel()
    lat = base.lattice
    if gamma == 0.0:
        totals = np.full(n_replicas, sigma)
    else:
        totals = np.empty(n_replicas)
        for rep in range(n_replicas):
            fld = sample_field(lat, kernel, derive_seed(seed, rep))
            totals[rep] = gmc_measure(fld, gamma, base).masses.sum()
    vals = np.exp(-np.outer(t_grid, totals))
    est = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(n_replicas) if n_replicas > 1 else 0 * est

    th = theta(d, gamma)
    pos = t_grid > 0.0
    tail = pos & (t_grid >= np.median(t_grid[pos]))
    slope = float(np.polyfit(np.log(t_grid[tail]), np.log(est[tail]), 1)[0])
    k_fit = float(np.max(est[tail] * sigma * t_grid[tail] ** th))
    return {
        "t": t_grid,
        "estimate": est,
        "se": se,
        "sigma": sigma,
        "slope": slope,
        "theta": th,
        "K": k_fit,
        "ok": bool(slope <= -th + 0.05),
    }


def mixing_to_csv(curve: MixingCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "eta", "mode", "t", "est_cov", "se", "n"])
        for t, e, s in zip(curve.t_grid, curve.est_cov, curve.se):
            w.writerow(
                [
                    repr(float(curve.gamma)),
                    repr(float(curve.eta)),
                    curve.mode,
                    repr(float(t)),
                    repr(float(e)),
                    repr(float(s)),
                    curve.n_replicas,
                ]
            )


def frozen_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "eta", "t", "p_flip", "se", "n"])
        for r in rows:
            w.writerow(
                [
                    repr(float(r["gamma"])),
                    repr(float(r["eta"])),
                    repr(float(r["t"])),
                    repr(float(r["p_flip"])),
                    repr(float(r["se"])),
                    r["n_replicas"],
                ]
            )
