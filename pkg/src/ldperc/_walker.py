"""Interface walker for four-arm calibration.

Colors are never materialized: each cell's color is a hash of (sample key,
cell), so a sample costs only the cells its boundary interfaces visit.  For
every interface crossing a shell just outside the largest probed radius, the
walk traverses it exactly once and per-radius state machines count the
strands that run from the inner box (or its adjacent ring) out to the cells
touching the exterior of the unit box.  Four alternating arms at radius r
are equivalent to at least four such strands.

Cells are axial coordinates (i, j) of the triangular lattice in mesh units:
x = i + j/2, y = j*sqrt(3)/2.
"""

import numpy as np
from numba import njit

ROOT3_HALF = 0.8660254037844386

# cyclic neighbor directions; common neighbors of L and L+D[k] are
# L+D[k-1] and L+D[k+1]
_DI = np.array([1, 0, -1, -1, 0, 1], dtype=np.int64)
_DJ = np.array([0, 1, 1, 0, -1, -1], dtype=np.int64)
# (di+1, dj+1) -> direction index
_DIDX = -np.ones((3, 3), dtype=np.int64)
for _k in range(6):
    _DIDX[_DI[_k] + 1, _DJ[_k] + 1] = _k

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_OFF = np.int64(1 << 20)  # coordinate offset so packed keys are nonnegative


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _cell_key(i, j):
    return (np.uint64(i + _OFF) << np.uint64(21)) | np.uint64(j + _OFF)


@njit(inline="always")
def _color(skey, i, j):
    # 1 = open, 0 = closed
    return np.int64((_mix(skey ^ _cell_key(i, j)) >> np.uint64(32)) & np.uint64(1))


@njit(inline="always")
def _mnu(i, j):
    x = i + 0.5 * j
    y = ROOT3_HALF * j
    return max(abs(x), abs(y))


@njit(inline="always")
def _edge_key(i, j, k):
    # straddling edge keyed by its inner cell and direction
    return (np.int64(_cell_key(i, j)) << np.int64(3)) | np.int64(k)


@njit(cache=True)
def _find_edge(keys, ne, key):
    lo, hi = 0, ne
    while lo < hi:
        mid = (lo + hi) // 2
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < ne and keys[lo] == key:
        return lo
    return -1


@njit(inline="always")
def _touch(k, z, state, first, tcnt):
    # z: 1 = inner box edge, 2 = outer boundary
    if first[k] == 0:
        first[k] = z
        state[k] = z
    elif state[k] != z:
        tcnt[k] += 1
        state[k] = z


@njit(inline="always")
def _edge_contacts(mL, mR, ru, nr, tolu, state, first, tcnt):
    """Inner contact: the active edge straddles the boundary of Box(r).

    Only then do both flanking clusters provably touch the inner box and
    its adjacent ring, which is what an arm needs.
    """
    mmin = mL if mL < mR else mR
    if mmin > ru[nr - 1] + tolu:
        return
    for k in range(nr):
        if (mL <= ru[k] + tolu) != (mR <= ru[k] + tolu):
            _touch(k, 1, state, first, tcnt)


@njit(cache=True)
def _walk_dir(
    skey, Li, Lj, Ri, Rj, k, side, Ru, ru, nr, tolu, S,
    ekeys, eflags, ne, state, first, tcnt,
):
    """Walk one interface direction; marks straddling edges it passes.

    k is the direction index L -> R.  The cell the walk came from is always
    the same rotational side of the current edge, so it reduces to a
    constant bit: side 0 means it was L + D[k-1], side 1 means L + D[k+1].
    Returns True if the walk closed a loop (returned to its start edge).
    """
    sLi, sLj, sRi, sRj = Li, Lj, Ri, Rj
    mL = _mnu(Li, Lj)
    mR = _mnu(Ri, Rj)
    rumax = ru[nr - 1] + tolu
    while True:
        if side == 0:
            kk = k + 1 if k < 5 else 0
        else:
            kk = k - 1 if k > 0 else 5
        Ti = Li + _DI[kk]
        Tj = Lj + _DJ[kk]
        mT = _mnu(Ti, Tj)
        if mT > Ru + tolu:
            # interface leaves the box: both endpoints of the final edge
            # touch the exterior, so both flanking clusters reach it
            for m in range(nr):
                _touch(m, 2, state, first, tcnt)
            return False
        if _color(skey, Ti, Tj) == 1:
            Li = Ti
            Lj = Tj
            mL = mT
            if side == 0:
                k = k - 1 if k > 0 else 5
            else:
                k = k + 1 if k < 5 else 0
        else:
            Ri = Ti
            Rj = Tj
            mR = mT
            if side == 0:
                k = k + 1 if k < 5 else 0
            else:
                k = k - 1 if k > 0 else 5
        mmin = mL if mL < mR else mR
        if mmin <= rumax:
            _edge_contacts(mL, mR, ru, nr, tolu, state, first, tcnt)
        # mark a consumed straddling edge (one endpoint inside the shell S)
        if (mL <= S) != (mR <= S):
            if mL <= S:
                ii, jj, kd = Li, Lj, _DIDX[Ri - Li + 1, Rj - Lj + 1]
            else:
                ii, jj, kd = Ri, Rj, _DIDX[Li - Ri + 1, Lj - Rj + 1]
            pos = _find_edge(ekeys, ne, _edge_key(ii, jj, kd))
            if pos >= 0:
                eflags[pos] = 1
        if Li == sLi and Lj == sLj and Ri == sRi and Rj == sRj:
            return True  # closed loop


@njit(cache=True)
def _enumerate_entries(skey, Ru, tolu, S, ekeys):
    """All differing-color edges straddling shell S, keyed and sorted."""
    ne = 0
    jmax = np.int64(np.floor((S + 1.0) / ROOT3_HALF)) + 1
    for j in range(-jmax, jmax + 1):
        yabs = ROOT3_HALF * abs(j)
        if yabs > S + 1.0:
            continue
        # i ranges where the cell can sit within one step of the shell
        if yabs > S - 1.2:
            ilo1 = np.int64(np.ceil(-S - 0.5 * j - tolu))
            ihi1 = np.int64(np.floor(S - 0.5 * j + tolu))
            ilo2, ihi2 = np.int64(1), np.int64(0)  # empty second window
        else:
            ilo1 = np.int64(np.ceil(-S - 0.5 * j - tolu))
            ihi1 = np.int64(np.floor(-(S - 1.2) - 0.5 * j))
            ilo2 = np.int64(np.ceil((S - 1.2) - 0.5 * j))
            ihi2 = np.int64(np.floor(S - 0.5 * j + tolu))
        for half in range(2):
            ilo = ilo1 if half == 0 else ilo2
            ihi = ihi1 if half == 0 else ihi2
            for i in range(ilo, ihi + 1):
                if _mnu(i, j) > S:
                    continue
                ca = _color(skey, i, j)
                for k in range(6):
                    bi = i + _DI[k]
                    bj = j + _DJ[k]
                    if _mnu(bi, bj) <= S:
                        continue
                    if _color(skey, bi, bj) == ca:
                        continue
                    ekeys[ne] = _edge_key(i, j, k)
                    ne += 1
    ekeys[:ne].sort()
    return ne


@njit(cache=True)
def _sample_strands(skey, Ru, ru, tolu, ekeys, eflags, scratch, strands):
    """Strand counts per radius for one sample; returns entry count walked."""
    nr = ru.shape[0]
    S = ru[nr - 1] + 2.5
    ne = _enumerate_entries(skey, Ru, tolu, S, ekeys)
    for e in range(ne):
        eflags[e] = 0
    for k in range(nr):
        strands[k] = 0
    st1 = scratch[0]
    f1 = scratch[1]
    t1 = scratch[2]
    st2 = scratch[3]
    f2 = scratch[4]
    t2 = scratch[5]
    for e in range(ne):
        if eflags[e]:
            continue
        eflags[e] = 1
        key = ekeys[e]
        k = np.int64(key & np.int64(7))
        packed = np.uint64(key >> np.int64(3))
        aj = np.int64(packed & np.uint64((1 << 21) - 1)) - _OFF
        ai = np.int64(packed >> np.uint64(21)) - _OFF
        bi = ai + _DI[k]
        bj = aj + _DJ[k]
        if _color(skey, ai, aj) == 1:
            Li, Lj, Ri, Rj = ai, aj, bi, bj
        else:
            Li, Lj, Ri, Rj = bi, bj, ai, aj
        kk = _DIDX[Ri - Li + 1, Rj - Lj + 1]
        for m in range(nr):
            st1[m] = 0
            f1[m] = 0
            t1[m] = 0
            st2[m] = 0
            f2[m] = 0
            t2[m] = 0
        # the seam edge feeds machine 1 so it is counted exactly once
        _edge_contacts(_mnu(Li, Lj), _mnu(Ri, Rj), ru, nr, tolu, st1, f1, t1)
        looped = _walk_dir(
            skey, Li, Lj, Ri, Rj, kk, 0, Ru, ru, nr,
            tolu, S, ekeys, eflags, ne, st1, f1, t1,
        )
        if looped:
            for m in range(nr):
                tot = t1[m]
                if f1[m] != 0 and st1[m] != 0 and f1[m] != st1[m]:
                    tot += 1  # cyclic wrap
                strands[m] += tot
            continue
        _walk_dir(
            skey, Li, Lj, Ri, Rj, kk, 1, Ru, ru, nr,
            tolu, S, ekeys, eflags, ne, st2, f2, t2,
        )
        for m in range(nr):
            tot = t1[m] + t2[m]
            if f1[m] != 0 and f2[m] != 0 and f1[m] != f2[m]:
                tot += 1  # seam between the two directions
            strands[m] += tot
    return ne


@njit(cache=True)
def mc_chunk(seed, start, stop, Ru, ru, tolu, hits):
    """Accumulate four-arm hits per radius over samples [start, stop)."""
    nr = ru.shape[0]
    cap = 64 * np.int64(ru[nr - 1] + 8) + 1024
    ekeys = np.empty(cap, dtype=np.int64)
    eflags = np.zeros(cap, dtype=np.int64)
    scratch = np.zeros((6, nr), dtype=np.int64)
    strands = np.zeros(nr, dtype=np.int64)
    for s in range(start, stop):
        skey = _mix(np.uint64(seed) ^ _mix(np.uint64(s)))
        _sample_strands(skey, Ru, ru, tolu, ekeys, eflags, scratch, strands)
        for k in range(nr):
            if strands[k] >= 4:
                hits[k] += 1


@njit(cache=True)
def sample_strands(skey, Ru, ru, tolu):
    """Strand counts per radius for a single hashed sample (test hook)."""
    nr = ru.shape[0]
    cap = 64 * np.int64(ru[nr - 1] + 8) + 1024
    ekeys = np.empty(cap, dtype=np.int64)
    eflags = np.zeros(cap, dtype=np.int64)
    scratch = np.zeros((6, nr), dtype=np.int64)
    strands = np.zeros(nr, dtype=np.int64)
    _sample_strands(np.uint64(skey), Ru, ru, tolu, ekeys, eflags, scratch, strands)
    return strands


@njit(cache=True)
def hash_colors(skey, ij):
    """Materialize the hashed sample's colors (+1/-1) for given cells."""
    n = ij.shape[0]
    out = np.empty(n, dtype=np.int8)
    for t in range(n):
        out[t] = 1 if _color(np.uint64(skey), ij[t, 0], ij[t, 1]) == 1 else -1
    return out
