"""Exact Fourier-Walsh machinery for Boolean functions on few sites.

Conventions: a truth table of n bits is indexed by a bitmask a, where
bit k of a gives the color of site_ids[k] (bit 1 -> +1, bit 0 -> -1);
f-hat(S) = E[f * chi_S] with chi_S the product of the colors over S,
subsets encoded as 32-bit masks in the same bit order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ClockRates
from .gmc import SiteMeasure
from .lattice import Lattice
from .perc import Configuration, crosses

_MAX_TRANSFORM = 25
_MAX_BRUTE = 14
_WEIGHT_FLOOR = 1e-18
_PARSEVAL_TOL = 1e-10


@dataclass
class TruthTable:
    """A {-1,+1}-valued function of n site colors, tabulated."""

    n: int
    site_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.n > _MAX_TRANSFORM:
            raise ValueError(f"n={self.n} exceeds the exact-transform budget of {_MAX_TRANSFORM}")
        if self.n < 1:
            raise ValueError("need at least one site")
        self.site_ids = tuple(int(s) for s in self.site_ids)
        if len(self.site_ids) != self.n:
            raise ValueError("site_ids length must equal n")
        self.values = np.ascontiguousarray(self.values, dtype=np.int8)
        if self.values.shape != (1 << self.n,):
            raise ValueError("values must have length 2^n")
        if not np.all(np.abs(self.values) == 1):
            raise ValueError("values must be +-1")

    def bit_rates(self, rates) -> np.ndarray:
        """Per-bit clock rates, resolved through site_ids when needed."""
        if isinstance(rates, ClockRates):
            return rates.rates[list(self.site_ids)]
        r = np.asarray(rates, dtype=float)
        if r.shape != (self.n,):
            raise ValueError("need one rate per truth-table bit")
        return r


@dataclass
class SpectralDistribution:
    """P(S = mask) = f-hat(mask)^2; the signed empty coefficient kept aside."""

    n: int
    masks: np.ndarray
    weights: np.ndarray
    f_hat_empty: float
    site_ids: tuple = field(default=())

    def mean_size(self) -> float:
        sizes = np.array([int(m).bit_count() for m in self.masks], dtype=float)
        return float(np.sum(self.weights * sizes))

    def one_point(self, k: int) -> float:
        hit = (self.masks >> np.uint32(k)) & np.uint32(1)
        return float(self.weights[hit == 1].sum())

    def two_point(self, j: int, k: int) -> float:
        pair = (np.uint32(1) << np.uint32(j)) | (np.uint32(1) << np.uint32(k))
        hit = (self.masks & pair) == pair
        return float(self.weights[hit].sum())


def walsh_transform(tt: TruthTable) -> np.ndarray:
    """All 2^n coefficients f-hat(S), indexed by subset mask."""
    a = tt.values.astype(float)
    h = 1
    while h < a.size:
        v = a.reshape(-1, 2 * h)
        u = v[:, :h].copy()
        w = v[:, h:].copy()
        v[:, :h] = u + w
        v[:, h:] = w - u  # bit=1 carries color +1, bit=0 carries -1
        h *= 2
    return a / a.size


def spectral_distribution(coeffs, site_ids=()) -> SpectralDistribution:
    """Squared-coefficient law of the spectral sample; Parseval-gated."""
    if isinstance(coeffs, TruthTable):
        site_ids = coeffs.site_ids
        coeffs = walsh_transform(coeffs)
    c = np.asarray(coeffs, dtype=float)
    n = int(c.size).bit_length() - 1
    if c.size != 1 << n:
        raise ValueError("coefficient count must be a power of two")
    w = c * c
    total = float(w.sum())
    if abs(total - 1.0) > _PARSEVAL_TOL:
        raise ValueError(f"Parseval violated: sum f_hat^2 = {total!r}")
    keep = np.nonzero(w > _WEIGHT_FLOOR)[0]
    return SpectralDistribution(
        n=n,
        masks=keep.astype(np.uint32),
        weights=w[keep],
        f_hat_empty=float(c[0]),
        site_ids=tuple(site_ids),
    )


def truth_table_from_quads(lat: Lattice, quads) -> TruthTable:
    """Indicator (+-1) that every registered quad is crossed, tabulated
    over all colorings; bit k is site k in lattice order."""
    n = lat.n_sites
    if n > _MAX_TRANSFORM:
        raise ValueError(f"lattice has {n} sites; exact budget is {_MAX_TRANSFORM}")
    quads = list(quads)
    if not quads:
        raise ValueError("need at least one quad")
    vals = np.empty(1 << n, dtype=np.int8)
    bits = np.arange(n)
    for a in range(1 << n):
        colors = np.where((a >> bits) & 1, 1, -1).astype(np.int8)
        cfg = Configuration(colors, lat)
        vals[a] = 1 if all(crosses(cfg, q) for q in quads) else -1
    return TruthTable(n=n, site_ids=tuple(range(n)), values=vals)


def spectral_measure(sample_sites, lat: Lattice, cal) -> SiteMeasure:
    """Measure identification of a sampled spectral set: each site of the
    sample carries cell_area / alpha4(eta, 1)."""
    if cal is None:
        raise ValueError("spectral_measure requires an alpha4 calibration")
    masses = np.zeros(lat.n_sites)
    idx = np.asarray(list(sample_sites), dtype=np.int64)
    if idx.size:
        if idx.min() < 0 or idx.max() >= lat.n_sites:
            raise ValueError("sample sites outside the lattice")
        masses[idx] = lat.cell_area / float(cal.value_at(lat.eta))
    return SiteMeasure(masses=masses, lattice=lat, label="spectral sample")


def sample_mask(dist: SpectralDistribution, u: float) -> int:
    """Inverse-CDF draw of a spectral-sample mask from a uniform in [0,1)."""
    cum = np.cumsum(dist.weights)
    j = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return int(dist.masks[min(j, dist.masks.size - 1)])


def covariance_spectral(dist: SpectralDistribution, rates, t: float) -> float:
    """Sum over S != empty of f-hat(S)^2 exp(-t * total clock rate on S)."""
    if isinstance(rates, ClockRates):
        if not dist.site_ids:
            raise ValueError("distribution lacks site_ids; pass per-bit rates")
        bit = rates.rates[list(dist.site_ids)]
    else:
        bit = np.asarray(rates, dtype=float)
        if bit.shape != (dist.n,):
            raise ValueError("need one rate per bit")
    total = 0.0
    for m, w in zip(dist.masks, dist.weights):
        m = int(m)
        if m == 0:
            continue
        s = 0.0
        k = 0
        while m:
            if m & 1:
                s += bit[k]
            m >>= 1
            k += 1
        total += w * np.exp(-t * s)
    return float(total)


def covariance_bruteforce(tt: TruthTable, rates, t: float) -> float:
    """Cov[f(omega_0), f(omega_t)] by direct summation over both states.

    The two-time site marginal of uniform re-coloring at rate r is
    (1 + w0*wt*exp(-r t))/2, so the pair kernel depends only on the
    agreement pattern: grouping the double sum by d = a XOR b gives
    sum_d g(d) * autocorrelation(d) without any transform.
    """
    if tt.n > _MAX_BRUTE:
        raise ValueError(f"n={tt.n} exceeds the brute-force budget of {_MAX_BRUTE}")
    bit = tt.bit_rates(rates)
    q = np.exp(-t * bit)
    size = 1 << tt.n
    f = tt.values.astype(float)
    idx = np.arange(size)
    total = 0.0
    for d in range(size):
        g = 1.0
        for k in range(tt.n):
            g *= (1.0 + (1.0 if not (d >> k) & 1 else -1.0) * q[k]) / 2.0
        if g == 0.0:
            continue
        total += g * float(f @ f[idx ^ d])
    mean = float(f.mean())
    return total / size - mean * mean


def cross_covariance_bruteforce(tt_f: TruthTable, tt_g: TruthTable, rates, t: float) -> float:
    """Cov[f(omega_0), g(omega_t)] by direct summation (shared sites)."""
    if tt_f.n != tt_g.n or tt_f.site_ids != tt_g.site_ids:
        raise ValueError("truth tables must share their sites")
    if tt_f.n > _MAX_BRUTE:
        raise ValueError(f"n={tt_f.n} exceeds the brute-force budget of {_MAX_BRUTE}")
    q = np.exp(-t * tt_f.bit_rates(rates))
    size = 1 << tt_f.n
    f = tt_f.values.astype(float)
    g = tt_g.values.astype(float)
    idx = np.arange(size)
    total = 0.0
    for d in range(size):
        w = 1.0
        for k in range(tt_f.n):
            w *= (1.0 + (1.0 if not (d >> k) & 1 else -1.0) * q[k]) / 2.0
        if w == 0.0:
            continue
        total += w * float(f @ g[idx ^ d])
    return total / size - float(f.mean()) * float(g.mean())


def _pivotal_table(tt: TruthTable) -> np.ndarray:
    """(2^n, n) booleans: bit k pivotal at input a."""
    size = 1 << tt.n
    piv = np.empty((size, tt.n), dtype=bool)
    idx = np.arange(size)
    for k in range(tt.n):
        piv[:, k] = tt.values != tt.values[idx ^ (1 << k)]
    return piv


def intensity_check(tt: TruthTable, quads=(), lat: Lattice | None = None) -> dict:
    """Spectral-sample intensities vs pivotal intensities, exactly.

    One-point: P(x in S) = sum_{S owns x} f-hat(S)^2 vs P(x pivotal);
    two-point: P(x,y in S) vs P(x,y both pivotal); both by enumeration.
    When the table came from quads on a lattice, pivotality is also
    recomputed through the crossing machinery as an independent path.
    """
    if tt.n > _MAX_BRUTE:
        raise ValueError(f"n={tt.n} exceeds the enumeration budget of {_MAX_BRUTE}")
    dist = spectral_distribution(walsh_transform(tt), tt.site_ids)
    piv = _pivotal_table(tt)
    p_piv = piv.mean(axis=0)

    max_one = 0.0
    for k in range(tt.n):
        max_one = max(max_one, abs(dist.one_point(k) - float(p_piv[k])))
    max_two = 0.0
    for j in range(tt.n):
        for k in range(j + 1, tt.n):
            both = float((piv[:, j] & piv[:, k]).mean())
            max_two = max(max_two, abs(dist.two_point(j, k) - both))

    max_cross = None
    if quads and lat is not None:
        quads = list(quads)
        max_cross = 0.0
        bits = np.arange(tt.n)
        for a in range(1 << tt.n):
            colors = np.where((a >> bits) & 1, 1, -1).astype(np.int8)
            cfg = Configuration(colors, lat)
            base = all(crosses(cfg, q) for q in quads)
            for k in range(tt.n):
                flip = all(crosses(cfg.flipped(tt.site_ids[k]), q) for q in quads)
                max_cross = max(max_cross, abs(float(base != flip) - float(piv[a, k])))

    out = {
        "n": tt.n,
        "max_one_point": max_one,
        "max_two_point": max_two,
        "mean_spectral_size": dist.mean_size(),
        "sum_pivotal": float(p_piv.sum()),
    }
    if max_cross is not None:
        out["max_crossing_crosscheck"] = max_cross
    return out


def spectrum_to_csv(dist: SpectralDistribution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mask", "weight"])
        for m, wt in zip(dist.masks, dist.weights):
            w.writerow([int(m), repr(float(wt))])
