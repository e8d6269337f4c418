"""Inner loops that dominate permutation sweeps and physio feature extraction.

Every kernel has an explicit-loop form (``*_loop``, compiled by numba) and a
vectorized numpy form (``*_numpy``). The public name is bound to one of them
by :func:`cogload._accel.dispatch`; both must agree to rounding error.
"""
import numpy as np

from ._accel import dispatch, njit


@njit(fastmath=True)
def quadform_power_loop(filters, moments):
    n_win = moments.shape[0]
    n_f, n_ch = filters.shape
    cc = n_ch * n_ch
    outer = np.empty((n_f, cc))
    for f in range(n_f):
        for i in range(n_ch):
            for j in range(n_ch):
                outer[f, i * n_ch + j] = filters[f, i] * filters[f, j]
    flat = moments.reshape(n_win, cc)
    out = np.empty((n_win, n_f))
    for n in range(n_win):
        row = flat[n]
        for f in range(n_f):
            o = outer[f]
            acc = 0.0
            for k in range(cc):
                acc += row[k] * o[k]
            out[n, f] = acc
    return out


def quadform_power_numpy(filters, moments):
    n_f, n_ch = filters.shape
    outer = (filters[:, :, None] * filters[:, None, :]).reshape(n_f, n_ch * n_ch)
    return moments.reshape(moments.shape[0], n_ch * n_ch) @ outer.T


quadform_power = dispatch(quadform_power_loop, quadform_power_numpy)
quadform_power.__doc__ = """``out[n, f] = filters[f] @ moments[n] @ filters[f]``.

``filters`` is (F, C), ``moments`` is (N, C, C): the band power of spatially
filtered windows from each window's second-moment matrix.
"""


@njit
def lw_residual_sum_loop(z, s):
    n, d = z.shape
    s_norm = 0.0
    for i in range(d):
        for j in range(d):
            s_norm += s[i, j] * s[i, j]
    total = 0.0
    for k in range(n):
        zz = 0.0
        for i in range(d):
            zz += z[k, i] * z[k, i]
        qs = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += s[i, j] * z[k, j]
            qs += z[k, i] * acc
        total += zz * zz - 2.0 * qs + s_norm
    return total


def lw_residual_sum_numpy(z, s):
    zz = np.einsum("ki,ki->k", z, z)
    qs = np.einsum("ki,ij,kj->k", z, s, z)
    return float(np.sum(zz * zz - 2.0 * qs) + z.shape[0] * np.sum(s * s))


# Sum over rows of ||z_k z_k^T - S||_F^2, via (z.z)^2 - 2 z^T S z + ||S||^2.
lw_residual_sum = dispatch(lw_residual_sum_loop, lw_residual_sum_numpy)


@njit
def pick_peaks_loop(envelope, threshold, refractory):
    n = envelope.shape[0]
    out = np.empty(n, dtype=np.int64)
    count = 0
    for i in range(1, n - 1):
        v = envelope[i]
        if v <= threshold[i] or v <= envelope[i - 1] or v < envelope[i + 1]:
            continue
        if count > 0 and i - out[count - 1] < refractory:
            if v > envelope[out[count - 1]]:
                out[count - 1] = i
            continue
        out[count] = i
        count += 1
    return out[:count].copy()


def pick_peaks_numpy(envelope, threshold, refractory):
    e = envelope
    mid = e[1:-1]
    cand = np.flatnonzero((mid > threshold[1:-1]) & (mid > e[:-2]) & (mid >= e[2:])) + 1
    out = []
    for i in cand.tolist():
        if out and i - out[-1] < refractory:
            if e[i] > e[out[-1]]:
                out[-1] = i
            continue
        out.append(i)
    return np.asarray(out, dtype=np.int64)


pick_peaks = dispatch(pick_peaks_loop, pick_peaks_numpy)
pick_peaks.__doc__ = """Local maxima of ``envelope`` above ``threshold`` with a refractory gap.

A candidate closer than ``refractory`` samples to the last accepted peak
replaces it only if taller. Plateaus count once, at their first sample.
"""


@njit
def signed_rank_tail_count_loop(ranks2, w2_obs):
    n = ranks2.shape[0]
    total = 0
    for r in range(n):
        total += ranks2[r]
    count = 0
    for mask in range(1 << n):
        wp = 0
        for r in range(n):
            if (mask >> r) & 1:
                wp += ranks2[r]
        if min(wp, total - wp) <= w2_obs:
            count += 1
    return count


def signed_rank_tail_count_numpy(ranks2, w2_obs):
    sums = np.zeros(1, dtype=np.int64)
    for r in ranks2:
        sums = np.concatenate([sums, sums + r])
    total = int(np.sum(ranks2))
    return int(np.sum(np.minimum(sums, total - sums) <= w2_obs))


signed_rank_tail_count = dispatch(signed_rank_tail_count_loop, signed_rank_tail_count_numpy)
signed_rank_tail_count.__doc__ = """Number of the ``2**n`` sign assignments with ``min(W+, W-) <= w2_obs``.

``ranks2`` holds twice the (mid)ranks so every rank sum is an exact integer.
"""
