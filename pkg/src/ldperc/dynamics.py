"""Event-driven dynamical percolation with measure-driven Poisson clocks.

Each site rings at rate mass/alpha4(eta, 1); at a ring its color is
re-drawn uniformly.  Candidate rings come from a per-site dominating
("base") rate and are accepted by thinning, with all randomness drawn
from counter-based uniform streams keyed (seed, site, ring index, tag).
Two runs sharing a seed and a base therefore couple exactly: sitewise
smaller rates produce a subset of the events, with identical colors on
the shared ones.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .gmc import (
    SiteMeasure,
    default_rho,
    gmc_measure,
    lebesgue_measure,
    moderate_set,
    truncate_measure,
)
from .lattice import Lattice, RectQuad
from .perc import Configuration, crosses, pivotal_for, sample_configuration
from .rng import derive_seed, generator, stream_u01

_EVENT_BUDGET = 1e9


@dataclass
class ClockRates:
    """Per-site Poisson rates = driving masses / alpha4(eta, 1)."""

    rates: np.ndarray
    total_rate: float
    alpha4_ref: float
    lattice: Lattice

    def __post_init__(self):
        self.rates = np.ascontiguousarray(self.rates, dtype=float)
        if self.rates.shape != (self.lattice.n_sites,):
            raise ValueError("rates length must match the site count")
        if np.any(self.rates < 0.0):
            raise ValueError("rates must be nonnegative")
        self.total_rate = float(self.rates.sum())


def make_rates(m: SiteMeasure, cal) -> ClockRates:
    if cal is None:
        raise ValueError("make_rates requires an alpha4 calibration; none given")
    a4 = float(cal.value_at(m.lattice.eta))
    if a4 <= 0.0:
        raise ValueError("alpha4 normalizer must be positive")
    rates = m.masses / a4
    return ClockRates(rates, float(rates.sum()), a4, m.lattice)


@dataclass
class Trajectory:
    initial: Configuration
    event_times: np.ndarray
    event_sites: np.ndarray
    event_colors: np.ndarray
    horizon: float
    seed: int
    sample_times: np.ndarray
    quads: list
    crossings: np.ndarray  # (n_sample_times, n_quads)

    def __post_init__(self):
        if self.event_times.size > 1 and not np.all(np.diff(self.event_times) > 0):
            raise ValueError("event times must be strictly increasing")

    @property
    def events(self):
        """Time-ordered (time, site, new_color) triples."""
        return list(
            zip(
                self.event_times.tolist(),
                self.event_sites.tolist(),
                self.event_colors.tolist(),
            )
        )

    def configuration_at(self, t: float) -> Configuration:
        colors = self.initial.colors.copy()
        m = int(np.searchsorted(self.event_times, t, side="right"))
        for k in range(m):  # repeated sites: the last ring wins
            colors[self.event_sites[k]] = self.event_colors[k]
        return Configuration(colors, self.initial.lattice)


def run_dp(
    init: Configuration,
    rates: ClockRates,
    T: float,
    quads,
    sample_times,
    seed: int,
    base_rates=None,
) -> Trajectory:
    """Simulate to horizon T, recording quad crossings at sample times.

    `base_rates` fixes the dominating candidate process: passing the same
    base (and seed) to runs with sitewise-smaller rates yields exact
    event-set inclusion.  Default: the rates themselves (no thinning).
    """
    if T <= 0.0:
        raise ValueError("horizon T must be positive")
    lat = init.lattice
    r = rates.rates
    if rates.lattice is not lat and r.shape != (lat.n_sites,):
        raise ValueError("rates and configuration live on different lattices")
    base = r if base_rates is None else np.ascontiguousarray(base_rates, dtype=float)
    if base.shape != r.shape:
        raise ValueError("base rates length mismatch")
    if np.any(base < r - 1e-12 * np.maximum(base, 1.0)):
        raise ValueError("base rates must dominate the clock rates sitewise")
    expected = float(base.sum()) * T
    if expected > _EVENT_BUDGET:
        raise ValueError(
            f"expected candidate events {expected:.3g} exceed the 1e9 budget"
        )
    st = np.asarray(sorted(sample_times), dtype=float)
    if st.size and (st[0] < 0.0 or st[-1] > T):
        raise ValueError("sample times must lie in [0, T]")

    colors = init.colors.copy()
    heap = []
    for i in np.nonzero(base > 0.0)[0]:
        dt = -math.log(stream_u01(seed, int(i), 0, 0)) / base[i]
        heap.append((dt, int(i)))
    heapq.heapify(heap)
    ring_idx = np.zeros(lat.n_sites, dtype=np.int64)

    ev_t: list = []
    ev_s: list = []
    ev_c: list = []
    cross = np.zeros((st.size, len(quads)), dtype=bool)
    si = 0

    def _sample_until(up_to):
        nonlocal si
        while si < st.size and st[si] < up_to:
            if quads:
                cfg = Configuration(colors, lat)
                for qi, q in enumerate(quads):
                    cross[si, qi] = crosses(cfg, q)
            si += 1

    while heap:
        t, i = heapq.heappop(heap)
        if t > T:
            break
        _sample_until(t)
        k = int(ring_idx[i])
        ring_idx[i] += 1
        # thinning accept; exact equality skips the draw so an undominated
        # run consumes the same ring-index stream as a coupled one
        if base[i] <= r[i] or stream_u01(seed, i, k, 1) * base[i] < r[i]:
            c = 1 if stream_u01(seed, i, k, 2) < 0.5 else -1
            ev_t.append(t)
            ev_s.append(i)
            ev_c.append(c)
            colors[i] = c
        dt = -math.log(stream_u01(seed, i, k + 1, 0)) / base[i]
        heapq.heappush(heap, (t + dt, i))
    _sample_until(math.inf)

    return Trajectory(
        initial=init,
        event_times=np.asarray(ev_t, dtype=float),
        event_sites=np.asarray(ev_s, dtype=np.int64),
        event_colors=np.asarray(ev_c, dtype=np.int8),
        horizon=float(T),
        seed=seed,
        sample_times=st,
        quads=list(quads),
        crossings=cross,
    )


def run_ldp(
    lat: Lattice,
    field,
    gamma: float,
    C: float,
    T: float,
    quads,
    sample_times,
    seed: int,
    cal,
    rho: float | None = None,
) -> Trajectory:
    """Liouville dynamics: GMC rates over Lebesgue base, optional cutoff C.

    The initial coloring and the clock streams are derived independently
    from `seed` (the field is the caller's, sampled separately).  Finite-C
    runs thin from the untruncated rates, so runs sharing a seed couple
    exactly across cutoffs.
    """
    if not 0.0 <= gamma < 2.0:
        raise ValueError(f"gamma out of [0,2): {gamma}")
    if field.lattice is not lat and field.lattice.n_sites != lat.n_sites:
        raise ValueError("field lives on a different lattice")
    mu = gmc_measure(field, gamma, lebesgue_measure(lat))
    full = make_rates(mu, cal)
    if np.isfinite(C):
        ms = moderate_set(mu, C, default_rho(gamma) if rho is None else rho, cal)
        rates = make_rates(truncate_measure(mu, ms), cal)
    else:
        rates = full
    init = sample_configuration(lat, derive_seed(seed, 0))
    return run_dp(
        init, rates, T, quads, sample_times, derive_seed(seed, 1),
        base_rates=full.rates,
    )


def coupled_cutoff_run(
    lat: Lattice,
    field,
    gamma: float,
    C: float,
    C_prime: float,
    t: float,
    quads,
    seed: int,
    cal,
    rho: float | None = None,
):
    """Couple the C-cutoff endpoint with a C'-cutoff one at time t.

    Stage one runs the C system on [0, t].  Stage two starts from its
    endpoint and plays the correction clocks — driven by the measure
    between the two cutoffs — over [0, t]; a correction at time s lands
    only if the site saw no stage-one ring in (s, t], and the latest
    landing correction decides the color.  Returns both endpoint
    configurations and the number of quads crossing in exactly one.
    """
    if not C < C_prime:
        raise ValueError("need C < C_prime")
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    if not 0.0 <= gamma < 2.0:
        raise ValueError(f"gamma out of [0,2): {gamma}")
    rh = default_rho(gamma) if rho is None else rho
    mu = gmc_measure(field, gamma, lebesgue_measure(lat))
    full = make_rates(mu, cal)
    msC = moderate_set(mu, C, rh, cal)
    if np.isfinite(C_prime):
        member_p = moderate_set(mu, C_prime, rh, cal).member
    else:
        member_p = np.ones(lat.n_sites, dtype=bool)
    ratesC = make_rates(truncate_measure(mu, msC), cal)
    diff = full.rates * (member_p & ~msC.member)

    init = sample_configuration(lat, derive_seed(seed, 0))
    if t == 0.0:
        a = Configuration(init.colors.copy(), lat)
        b = Configuration(init.colors.copy(), lat)
        return a, b, 0

    traj = run_dp(init, ratesC, t, [], [], derive_seed(seed, 1), base_rates=full.rates)
    w_c = traj.configuration_at(t)
    last = np.full(lat.n_sites, -1.0)
    for tt, ss in zip(traj.event_times, traj.event_sites):
        last[ss] = tt

    colors = w_c.colors.copy()
    rng = generator(derive_seed(seed, 2))
    idx = np.nonzero(diff > 0.0)[0]
    counts = rng.poisson(diff[idx] * t)
    for pos in range(idx.size):
        m = int(counts[pos])
        if m == 0:
            continue
        i = int(idx[pos])
        s_times = rng.uniform(0.0, t, m)
        flips = 2 * rng.integers(0, 2, m) - 1
        ok = s_times >= last[i]
        if ok.any():
            colors[i] = flips[int(np.argmax(np.where(ok, s_times, -1.0)))]
    w_cp = Configuration(colors, lat)
    count = sum(1 for q in quads if crosses(w_c, q) != crosses(w_cp, q))
    return w_c, w_cp, count


def near_critical(
    init: Configuration, rates: ClockRates, lambdas, seed: int
) -> list:
    """Monotone near-critical family indexed by lambda, anchored at 0.

    Each site carries one Exp(rate) threshold; raising lambda turns
    closed sites open once the threshold is passed, lowering it does the
    symmetric thing to open sites.  The lambda marginal is Bernoulli with
    p = 1/2 + sign(lambda) * (1 - exp(-|lambda| * rate)) / 2.
    """
    lam = np.asarray(lambdas, dtype=float)
    if lam.size == 0 or np.any(np.diff(lam) < 0.0):
        raise ValueError("lambdas must be sorted ascending")
    if not np.any(lam == 0.0):
        raise ValueError("lambdas must include 0")
    lat = init.lattice
    r = rates.rates
    thresh = np.full(lat.n_sites, np.inf)
    for i in np.nonzero(r > 0.0)[0]:
        thresh[i] = -math.log(stream_u01(seed, int(i), 0, 3)) / r[i]
    out = []
    for lv in lam:
        colors = init.colors.copy()
        if lv > 0.0:
            colors[(colors == -1) & (thresh <= lv)] = 1
        elif lv < 0.0:
            colors[(colors == 1) & (thresh <= -lv)] = -1
        out.append(Configuration(colors, lat))
    return out


def switch_count_check(
    rates: ClockRates,
    q: RectQuad,
    T1: float,
    T2: float,
    n_replicas: int,
    seed: int,
    pivotal_probs=None,
    n_static: int = 2000,
) -> dict:
    """Observed switch count of a quad vs the stationarity prediction.

    A switch is a clock ring at a site currently pivotal for the quad:
    the moments the crossing value is re-decided (it then flips with a
    fair coin).  Predicted = (T2-T1) * sum(rate * P(pivotal)), with the
    pivotal probabilities either supplied exactly or estimated from an
    independent static sample; the report carries a two-sample z-score.
    """
    if not T2 > T1 >= 0.0:
        raise ValueError("need 0 <= T1 < T2")
    if n_replicas < 2:
        raise ValueError("need at least two replicas")
    lat = rates.lattice
    counts = np.zeros(n_replicas)
    for rep in range(n_replicas):
        init = sample_configuration(lat, derive_seed(seed, 2 * rep))
        traj = run_dp(init, rates, T2, [], [], derive_seed(seed, 2 * rep + 1))
        colors = init.colors.copy()
        c = 0
        for tt, ss, cc in zip(
            traj.event_times, traj.event_sites, traj.event_colors
        ):
            if tt > T1:
                if pivotal_for(Configuration(colors, lat), int(ss), [q]):
                    c += 1
            colors[ss] = cc
        counts[rep] = c
    observed = float(counts.mean())
    se_obs = float(counts.std(ddof=1) / math.sqrt(n_replicas))

    if pivotal_probs is not None:
        piv = np.asarray(pivotal_probs, dtype=float)
        se_pred = 0.0
    else:
        rect = q.rect
        x, y = lat.sites[:, 0], lat.sites[:, 1]
        tol = 1e-9 * lat.eta
        inside = np.nonzero(
            (x >= rect.x0 - tol) & (x <= rect.x1 + tol)
            & (y >= rect.y0 - tol) & (y <= rect.y1 + tol)
        )[0]
        sseed = derive_seed(seed, 10**6)
        piv = np.zeros(lat.n_sites)
        for k in range(n_static):
            cfg = sample_configuration(lat, derive_seed(sseed, k))
            f0 = crosses(cfg, q)
            for i in inside:
                piv[i] += f0 != crosses(cfg.flipped(int(i)), q)
        piv /= n_static
        se_pred = (T2 - T1) * float(
            np.sqrt(np.sum(rates.rates**2 * piv * (1.0 - piv) / n_static))
        )
    predicted = (T2 - T1) * float(np.sum(rates.rates * piv))
    denom = math.hypot(se_obs, se_pred)
    if denom == 0.0:
        z = 0.0 if observed == predicted else math.inf
    else:
        z = (observed - predicted) / denom
    return {
        "observed_mean": observed,
        "observed_se": se_obs,
        "predicted": predicted,
        "predicted_se": se_pred,
        "z_score": z,
        "n_replicas": n_replicas,
    }


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Sampled observables: one row per (sample_time, quad)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_time", "quad_id", "crossed"])
        for si in range(traj.sample_times.size):
            for qi in range(len(traj.quads)):
                w.writerow(
                    [repr(float(traj.sample_times[si])), qi, int(traj.crossings[si, qi])]
                )


def event_log_to_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "site", "new_color"])
        for tt, ss, cc in zip(
            traj.event_times, traj.event_sites, traj.event_colors
        ):
            w.writerow([repr(float(tt)), int(ss), int(cc)])
