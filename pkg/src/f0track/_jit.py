"""Compiled inner loops shared by the sketches.

All field arithmetic is done in ``uint64``.  Numba silently promotes mixed
``uint64``/``int64`` arithmetic to float64, so every constant that meets a
field element is a ``np.uint64``.
"""

import math

import numpy as np
from numba import njit

MERSENNE61 = (1 << 61) - 1

_P61 = np.uint64(MERSENNE61)
_M31 = np.uint64((1 << 31) - 1)
_M30 = np.uint64((1 << 30) - 1)
_U1 = np.uint64(1)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_U61 = np.uint64(61)
_U0 = np.uint64(0)


@njit(cache=True, inline="always")
def mulmod61(a, b):
    # a, b < 2**61; split into 31-bit limbs, fold with 2**61 == 1 (mod p)
    a1 = a >> _U31
    a0 = a & _M31
    b1 = b >> _U31
    b0 = b & _M31
    mid = a1 * b0 + a0 * b1
    r = ((a1 * b1) << _U1) + (mid >> _U30) + ((mid & _M30) << _U31) + a0 * b0
    r = (r & _P61) + (r >> _U61)
    r = (r & _P61) + (r >> _U61)
    return r - _P61 if r >= _P61 else r  # a select, so loops over it vectorize


@njit(cache=True, inline="always")
def mulmod(a, b, p):
    if p == _P61:
        return mulmod61(a, b)
    # small fields only (p < 2**32), product fits in 64 bits
    return (a * b) % p


@njit(cache=True, inline="always")
def poly_eval(coeffs, x, p):
    """Horner evaluation of sum(coeffs[i] * x**i) mod p."""
    x = x % p
    acc = coeffs[coeffs.shape[0] - 1]
    for j in range(coeffs.shape[0] - 2, -1, -1):
        acc = mulmod(acc, x, p) + coeffs[j]
        if acc >= p:
            acc -= p
    return acc


@njit(cache=True, inline="always")
def reduce_out(v, out_range):
    if (out_range & (out_range - _U1)) == _U0:
        return v & (out_range - _U1)
    return v % out_range


@njit(cache=True, inline="always")
def lsb(v, width):
    if v == _U0:
        return width
    n = 0
    while (v & _U1) == _U0:
        v >>= _U1
        n += 1
    return n


@njit(cache=True, inline="always")
def gamma_len(v):
    # v >= 1
    n = 0
    while v > 1:
        v >>= 1
        n += 1
    return 2 * n + 1


@njit(cache=True, inline="always")
def zigzag(d):
    if d >= 0:
        return 2 * d
    return -2 * d - 1


@njit(cache=True)
def gamma_encode(values):
    """Concatenated gamma codes of positive ``values`` as a 0/1 array."""
    total = 0
    for v in values:
        total += gamma_len(v)
    out = np.zeros(total, np.uint8)
    pos = 0
    for v in values:
        n = gamma_len(v) // 2
        pos += n
        for k in range(n, -1, -1):
            out[pos] = (v >> k) & 1
            pos += 1
    return out


@njit(cache=True)
def gamma_decode(bits, count, out):
    """Decode ``count`` gamma codes from a 0/1 array; returns bits used or -1."""
    pos = 0
    n = bits.shape[0]
    for k in range(count):
        zeros = 0
        while pos < n and bits[pos] == 0:
            zeros += 1
            pos += 1
        if pos + zeros + 1 > n or zeros > 62:
            return -1
        v = 0
        for _ in range(zeros + 1):
            v = (v << 1) | bits[pos]
            pos += 1
        out[k] = v
    return pos


@njit(cache=True)
def hash_many(xs, coeffs, p, out_range):
    out = np.empty(xs.shape[0], np.uint64)
    for i in range(xs.shape[0]):
        out[i] = reduce_out(poly_eval(coeffs, xs[i], p), out_range)
    return out


@njit(cache=True)
def lsb_many(vs, width):
    out = np.empty(vs.shape[0], np.int64)
    for i in range(vs.shape[0]):
        out[i] = lsb(vs[i], width)
    return out


@njit(cache=True)
def lower_median(a, n):
    """Lower-middle element of the first n entries of a."""
    b = np.sort(a[:n])
    return b[(n - 1) // 2]


# --- streaming kernel -------------------------------------------------------

NO_ORACLE = -2  # every estimator group is broken


@njit(cache=True)
def _group_size(levels, start, w2, medw, tmp):
    for j in range(w2):
        tmp[j] = levels[start + j]
    tmp[:w2].sort()
    med = tmp[(w2 - 1) // 2]
    size = medw
    for j in range(w2):
        size += gamma_len(zigzag(levels[start + j] - med) + 1)
    return med, size


@njit(cache=True)
def group_sizes(levels, w2, medw, budget, broken, gmed, gsize):
    """Recompute every unbroken group's median and size, breaking oversized ones."""
    tmp = np.empty(w2, np.int64)
    for g in range(broken.shape[0]):
        if not broken[g]:
            med, size = _group_size(levels, g * w2, w2, medw, tmp)
            if size > budget:
                broken[g] = True
            else:
                gmed[g], gsize[g] = med, size


@njit(cache=True)
def oracle_level(broken, gmed, tmp):
    k = 0
    for g in range(broken.shape[0]):
        if not broken[g]:
            tmp[k] = gmed[g]
            k += 1
    if k == 0:
        return NO_ORACLE
    return lower_median(tmp, k)


@njit(cache=True)
def _low_levels(vs, mask, ub, fl, fi, out):
    """out[j] = lsb(vs[j] & mask), with ub for zero; vectorizes.

    The isolated low bit converts to float64 exactly, so its exponent field
    is the bit index.  ``fi`` must be an int64 view of ``fl``.
    """
    top = _U1 << np.uint64(ub)
    n = vs.shape[0]
    for j in range(n):
        t = (vs[j] & mask) | top
        fl[j] = np.float64(np.int64(t & (~t + _U1)))
    for j in range(n):
        out[j] = (fi[j] >> 52) - 1023


@njit(cache=True)
def _oracle_step(x, ub, mask, coeffs, levels, w2, budget, medw, broken, gmed, gsize, tmp, hv, fl, fi, lv):
    # coeffs is (2, n): constant terms then slopes, kept contiguous so the
    # hashing pass vectorizes; broken groups are hashed and ignored
    n = levels.shape[0]
    c0 = coeffs[0]
    c1 = coeffs[1]
    for j in range(n):
        v = mulmod61(c1[j], x) + c0[j]
        hv[j] = v - _P61 if v >= _P61 else v
    _low_levels(hv, mask, ub, fl, fi, lv)
    for g in range(broken.shape[0]):
        if broken[g]:
            continue
        changed = False
        for j in range(g * w2, (g + 1) * w2):
            if lv[j] > levels[j]:
                levels[j] = lv[j]
                changed = True
        if changed:
            med, size = _group_size(levels, g * w2, w2, medw, tmp)
            if size > budget:
                broken[g] = True
            else:
                gmed[g] = med
                gsize[g] = size
    return oracle_level(broken, gmed, tmp)


@njit(cache=True)
def _instance_estimate(q, buckets, d):
    return math.log1p(-q / buckets) / math.log1p(-1.0 / buckets) * 2.0**d


@njit(cache=True)
def _bank_query(est, alive, gsz, tmpf, tmpg):
    # lower median over groups of the lower median of live members
    ng = 0
    ngroups = alive.shape[0] // gsz if gsz > 0 else 0
    for g in range(ngroups):
        k = 0
        for r in range(g * gsz, (g + 1) * gsz):
            if alive[r] and not math.isnan(est[r]):
                tmpf[k] = est[r]
                k += 1
        if k > 0:
            tmpg[ng] = lower_median(tmpf, k)
            ng += 1
    if ng == 0:
        return math.nan
    return lower_median(tmpg, ng)


@njit(cache=True)
def run_stream(
    xs, ub,
    o_coeffs, o_levels, o_w2, o_budget, o_medw, o_broken, o_gmed, o_gsize, o_stats,
    h1, h3, h4, buckets, counters, q, wbits, alive, dstate, shift, w_budget, gsz,
    out_level, out_est, out_w,
):
    """Feed ``xs`` through the oracle and every live KNW instance.

    Returns the number of elements consumed; fewer than ``len(xs)`` means
    the oracle lost its last group on the next element.
    ``dstate`` holds [D]; ``o_stats`` holds [max persisted group bits].
    All three hash matrices are laid out (degree, instances) so one Horner
    pass serves every instance.
    """
    mask = (_U1 << np.uint64(ub)) - _U1
    p2 = np.uint64(buckets) * np.uint64(buckets)
    pb = np.uint64(buckets)
    nr = counters.shape[0]
    tmp = np.empty(max(o_w2, o_broken.shape[0]), np.int64)
    no = o_levels.shape[0]
    hv = np.empty(no, np.uint64)
    fl = np.empty(no, np.float64)
    fi = fl.view(np.int64)
    lv = np.empty(no, np.int64)
    xm_acc = np.empty(nr, np.uint64)
    rfl = np.empty(nr, np.float64)
    rfi = rfl.view(np.int64)
    zs = np.empty(nr, np.int64)
    deg1 = h1.shape[0]
    deg3 = h3.shape[0]
    deg4 = h4.shape[0]
    acc = np.empty(nr, np.uint64)
    bk = np.empty(nr, np.int64)
    est = np.empty(nr, np.float64)
    tmpf = np.empty(max(nr, 1), np.float64)
    tmpg = np.empty(max(nr, 1), np.float64)
    for r in range(nr):
        est[r] = math.nan if q[r] >= buckets else _instance_estimate(q[r], buckets, dstate[0])
    track_w = out_w.shape[0] > 0
    for i in range(xs.shape[0]):
        x = xs[i]
        lvl = _oracle_step(
            x, ub, mask, o_coeffs, o_levels, o_w2, o_budget, o_medw, o_broken, o_gmed, o_gsize, tmp,
            hv, fl, fi, lv,
        )
        if lvl == NO_ORACLE:
            return i
        total = 0
        for g in range(o_broken.shape[0]):
            if not o_broken[g]:
                total += o_gsize[g]
        if total > o_stats[0]:
            o_stats[0] = total
        out_level[i] = lvl
        d = dstate[0]
        newd = max(d, lvl - shift)
        if nr > 0:
            # h1 for every instance at once: Horner over the (degree, R) matrix
            xm = x % _P61
            for r in range(nr):
                xm_acc[r] = h1[deg1 - 1, r]
            for k in range(deg1 - 2, -1, -1):
                row = h1[k]
                for r in range(nr):
                    a = mulmod61(xm_acc[r], xm) + row[r]
                    xm_acc[r] = a - _P61 if a >= _P61 else a
            _low_levels(xm_acc, mask, ub, rfl, rfi, zs)
            # below the offset an element can never raise a counter
            need = False
            for r in range(nr):
                if alive[r] and zs[r] >= d:
                    need = True
            if need:
                for r in range(nr):
                    acc[r] = h3[deg3 - 1, r]
                for k in range(deg3 - 2, -1, -1):
                    row = h3[k]
                    for r in range(nr):
                        a = mulmod61(acc[r], xm) + row[r]
                        acc[r] = a - _P61 if a >= _P61 else a
                for r in range(nr):
                    xm_acc[r] = reduce_out(acc[r], p2) % _P61
                    acc[r] = h4[deg4 - 1, r]
                for k in range(deg4 - 2, -1, -1):
                    row = h4[k]
                    for r in range(nr):
                        a = mulmod61(acc[r], xm_acc[r]) + row[r]
                        acc[r] = a - _P61 if a >= _P61 else a
                for r in range(nr):
                    bk[r] = np.int64(reduce_out(acc[r], pb))
        for r in range(nr):
            if not alive[r]:
                continue
            dirty = newd > d
            z = zs[r] - d
            if z >= 0:
                b = bk[r]
                c = counters[r, b]
                if z > c:
                    if c >= 0:
                        wbits[r] += gamma_len(z + 1) - gamma_len(c + 1)
                    else:
                        wbits[r] += gamma_len(z + 1)
                        q[r] += 1
                        dirty = True
                    counters[r, b] = z
            if newd > d:
                delta = newd - d
                for j in range(buckets):
                    c = counters[r, j]
                    if c >= 0:
                        c2 = c - delta
                        if c2 < 0:
                            c2 = -1
                            q[r] -= 1
                            wbits[r] -= gamma_len(c + 1)
                        else:
                            wbits[r] += gamma_len(c2 + 1) - gamma_len(c + 1)
                        counters[r, j] = c2
            if wbits[r] > w_budget:
                alive[r] = False
            if dirty:
                est[r] = math.nan if q[r] >= buckets else _instance_estimate(q[r], buckets, newd)
            if track_w:
                out_w[i, r] = wbits[r]
        dstate[0] = newd
        if nr > 0:
            out_est[i] = _bank_query(est, alive, gsz, tmpf, tmpg)
    return xs.shape[0]
