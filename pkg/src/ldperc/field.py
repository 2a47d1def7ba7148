"""Log-correlated Gaussian fields on lattice sites.

Two backends:

* EXACT_LOG -- dense covariance K_ij = log(L / max(|x_i - x_j|, eta/2))
  + ridge*delta_ij, sampled by Cholesky.  Exact target covariance, cost
  O(N^3); capped at 8192 sites.
* DYADIC_BRW -- branching random walk over dyadic squares: h(x) is the
  sum of independent N(0, log 2) weights of the dyadic ancestors of x,
  so Cov(x, y) = log(2) * #common ancestors = log(1/|x-y|) + O(1).
  Linear cost, unbounded N, covariance exact only up to the dyadic
  alignment wobble.

Marginal variances are log(1/eta) + O(1) in both cases; all downstream
consumers treat the additive constant as unknown.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lattice import Lattice
from .rng import derive_seed, generator

EXACT_LOG = "exact-log"
DYADIC_BRW = "dyadic-brw"

_LN2 = np.log(2.0)
_CHOLESKY_CAP = 8192
_SNAPSHOT_MAGIC = b"LDPF\x01"

# (factor, variance) memo keyed by lattice identity + kernel; the
# geometry fingerprint guards against id() reuse after gc.
_factor_cache: dict = {}


@dataclass(frozen=True)
class Kernel:
    """Field kernel parameters.

    length_scale None means "domain diameter"; brw_depth None means the
    smallest depth whose finest dyadic cell is <= eta.
    """

    kind: str = DYADIC_BRW
    length_scale: Optional[float] = None
    brw_depth: Optional[int] = None
    ridge: float = 1e-8

    def __post_init__(self):
        if self.kind not in (EXACT_LOG, DYADIC_BRW):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.length_scale is not None and not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass
class Field:
    lattice: Lattice
    values: np.ndarray
    variance: np.ndarray
    seed: int
    kernel: Kernel


def _domain_diameter(lat: Lattice) -> float:
    d = lat.domain
    return float(np.hypot(d.width, d.height))


def _lat_fingerprint(lat: Lattice) -> tuple:
    d = lat.domain
    return (id(lat), lat.n_sites, lat.eta, d.x0, d.y0, d.x1, d.y1)


def _cholesky_factor(lat: Lattice, kernel: Kernel) -> tuple:
    key = (_lat_fingerprint(lat), kernel)
    hit = _factor_cache.get(key)
    if hit is not None:
        return hit

    n = lat.n_sites
    if n > _CHOLESKY_CAP:
        raise ValueError(
            f"EXACT_LOG is capped at {_CHOLESKY_CAP} sites (got {n}); use DYADIC_BRW"
        )
    L = kernel.length_scale if kernel.length_scale is not None else _domain_diameter(lat)
    diff = lat.sites[:, None, :] - lat.sites[None, :, :]
    dist = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), lat.eta / 2.0)
    K = np.log(L / dist)

    ridge = kernel.ridge
    for _ in range(8):
        try:
            factor = np.linalg.cholesky(K + ridge * np.eye(n))
            break
        except np.linalg.LinAlgError:
            ridge *= 2.0
    else:
        lam = float(np.linalg.eigvalsh(K)[0])
        raise ValueError(
            f"covariance not positive definite after 8 ridge doublings "
            f"(smallest eigenvalue {lam:.3e}); increase ridge or length_scale"
        )
    variance = np.diag(K) + ridge
    _factor_cache.clear()  # keep at most one factor resident (O(N^2) memory)
    _factor_cache[key] = (factor, variance)
    return factor, variance


def sample_field_cholesky(lat: Lattice, kernel: Kernel, seed: int) -> Field:
    factor, variance = _cholesky_factor(lat, kernel)
    z = generator(seed).standard_normal(lat.n_sites)
    return Field(lat, factor @ z, variance.copy(), seed, kernel)


def brw_root_square(lat: Lattice, kernel: Kernel) -> tuple:
    """(x0, y0, side, depth) of the dyadic hierarchy covering the domain."""
    d = lat.domain
    side = 2.0 ** int(np.ceil(np.log2(max(d.width, d.height))))
    min_depth = max(1, int(np.ceil(np.log2(side / lat.eta) - 1e-9)))
    if kernel.brw_depth is not None:
        depth = kernel.brw_depth
        if depth <= 0:
            raise ValueError(f"brw_depth must be positive, got {depth}")
        if depth < min_depth:
            raise ValueError(
                f"brw_depth {depth} too shallow for eta {lat.eta}: need >= {min_depth}"
            )
    else:
        depth = min_depth
    return d.x0, d.y0, side, depth


def _dyadic_cells(u: np.ndarray, cell: float, ncells: int) -> np.ndarray:
    # Half-open cells except the global top/right edge, which is closed
    # (clamped into the last cell) so boundary sites keep full chains.
    return np.clip(np.floor(u / cell).astype(np.int64), 0, ncells - 1)


def sample_field_brw(lat: Lattice, kernel: Kernel, seed: int) -> Field:
    x0, y0, side, depth = brw_root_square(lat, kernel)
    x = lat.sites[:, 0] - x0
    y = lat.sites[:, 1] - y0
    h = np.zeros(lat.n_sites)
    for k in range(depth + 1):
        ncells = 1 << k
        cell = side / ncells
        kx = _dyadic_cells(x, cell, ncells)
        ky = _dyadic_cells(y, cell, ncells)
        keys = kx * (ncells + 1) + ky
        uniq, inv = np.unique(keys, return_inverse=True)
        w = generator(derive_seed(seed, k)).normal(0.0, np.sqrt(_LN2), len(uniq))
        h += w[inv]
    variance = np.full(lat.n_sites, (depth + 1) * _LN2)
    return Field(lat, h, variance, seed, kernel)


def sample_field(lat: Lattice, kernel: Kernel, seed: int) -> Field:
    if kernel.kind == EXACT_LOG:
        return sample_field_cholesky(lat, kernel, seed)
    return sample_field_brw(lat, kernel, seed)


def brw_common_ancestors(lat: Lattice, kernel: Kernel, a: int, b: int) -> int:
    """Number of dyadic levels (0..depth) where sites a and b share a square."""
    x0, y0, side, depth = brw_root_square(lat, kernel)
    pa, pb = lat.sites[a] - (x0, y0), lat.sites[b] - (x0, y0)
    count = 0
    for k in range(depth + 1):
        ncells = 1 << k
        cell = side / ncells
        ca = (_dyadic_cells(pa[:1], cell, ncells)[0], _dyadic_cells(pa[1:], cell, ncells)[0])
        cb = (_dyadic_cells(pb[:1], cell, ncells)[0], _dyadic_cells(pb[1:], cell, ncells)[0])
        if ca == cb:
            count += 1
        else:
            break  # dyadic squares nest: once split, split at all finer levels
    return count


# --- binary snapshot (little-endian, fixed header + float64 values) ---

_KIND_CODE = {EXACT_LOG: 1, DYADIC_BRW: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_HEADER = struct.Struct("<5sBQQdiddd")  # magic, kind, n, seed, L, depth, ridge, eta, var


def save_field(field: Field, path) -> None:
    k = field.kernel
    L = k.length_scale if k.length_scale is not None else _domain_diameter(field.lattice)
    depth = -1
    if k.kind == DYADIC_BRW:
        depth = brw_root_square(field.lattice, k)[3]
    header = _HEADER.pack(
        _SNAPSHOT_MAGIC,
        _KIND_CODE[k.kind],
        field.lattice.n_sites,
        field.seed & (2**64 - 1),
        L,
        depth,
        k.ridge,
        field.lattice.eta,
        float(field.variance[0]),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path, lat: Lattice) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, kind_code, n, seed, L, depth, ridge, eta, var = _HEADER.unpack(raw)
        if magic != _SNAPSHOT_MAGIC:
            raise ValueError(f"not a field snapshot: {path}")
        if n != lat.n_sites:
            raise ValueError(f"snapshot has {n} sites, lattice has {lat.n_sites}")
        if abs(eta - lat.eta) > 1e-12 * lat.eta:
            raise ValueError(f"snapshot mesh {eta} != lattice mesh {lat.eta}")
        values = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
    kernel = Kernel(
        kind=_CODE_KIND[kind_code],
        length_scale=L,
        brw_depth=depth if depth >= 0 else None,
        ridge=ridge,
    )
    return Field(lat, values, np.full(n, var), seed, kernel)
