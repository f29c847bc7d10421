"""Hot inner loops, each with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``DYNREID_DISABLE_NUMBA`` is unset or ``0``. Both paths sum in
the same order wherever the result feeds an exact-equality contract
(``col2im`` accumulation, ranking metrics); the mutual distance kernels
agree to rounding only.
"""

import os

import numpy as np

_FLAG = os.environ.get("DYNREID_DISABLE_NUMBA", "0").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by DYNREID_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------
# pure numpy
# --------------------------------------------------------------------------


def im2col_np(xp, kh, kw, stride, oh, ow):
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def col2im_np(dcols, hp, wp, stride):
    b, c, kh, kw, oh, ow = dcols.shape
    dxp = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
    return dxp


def mutual_cross_np(fq, kq, fg, kg):
    # U[q, g] = K_q f_g - K_g f_q
    u = np.einsum("qab,gb->qga", kq, fg) - np.einsum("gab,qb->qga", kg, fq)
    return np.sqrt(np.einsum("qga,qga->qg", u, u)), u


def mutual_self_np(f, k):
    d, u = mutual_cross_np(f, k, f, k)
    upper = np.triu(d, 1)
    return upper + upper.T, u


def rank_eval_np(distmat, q_ids, g_ids, q_cams, g_cams, max_rank):
    nq = distmat.shape[0]
    first = np.full(nq, -1, dtype=np.int64)
    ap = np.zeros(nq, dtype=np.float64)
    for q in range(nq):
        order = np.argsort(distmat[q], kind="stable")
        gid = g_ids[order]
        keep = ~((gid == q_ids[q]) & (g_cams[order] == q_cams[q]))
        matches = gid[keep] == q_ids[q]
        pos = np.flatnonzero(matches)
        if pos.size == 0:
            continue
        first[q] = pos[0]
        prec = np.arange(1, pos.size + 1) / (pos + 1)
        ap[q] = np.cumsum(prec)[-1] / pos.size
    return first, ap


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_nb(xp, kh, kw, stride, oh, ow):
        b, c = xp.shape[0], xp.shape[1]
        cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for y in range(oh):
                            for x in range(ow):
                                cols[n, ch, i, j, y, x] = xp[n, ch, i + stride * y, j + stride * x]
        return cols

    @njit(cache=True)
    def _col2im_nb(dcols, hp, wp, stride):
        b, c, kh, kw, oh, ow = dcols.shape
        dxp = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for y in range(oh):
                            for x in range(ow):
                                dxp[n, ch, i + stride * y, j + stride * x] += dcols[n, ch, i, j, y, x]
        return dxp

    @njit(cache=True)
    def _pair_residual(ka, fb, kb, fa, out):
        c = fa.shape[0]
        s = 0.0
        for r in range(c):
            acc = 0.0
            for t in range(c):
                acc += ka[r, t] * fb[t] - kb[r, t] * fa[t]
            out[r] = acc
            s += acc * acc
        return np.sqrt(s)

    @njit(cache=True)
    def _mutual_cross_nb(fq, kq, fg, kg):
        nq, ng, c = fq.shape[0], fg.shape[0], fq.shape[1]
        d = np.zeros((nq, ng))
        u = np.zeros((nq, ng, c))
        for q in range(nq):
            for g in range(ng):
                d[q, g] = _pair_residual(kq[q], fg[g], kg[g], fq[q], u[q, g])
        return d, u

    @njit(cache=True)
    def _mutual_self_nb(f, k):
        n, c = f.shape
        d = np.zeros((n, n))
        u = np.zeros((n, n, c))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = _pair_residual(k[i], f[j], k[j], f[i], u[i, j])
                d[j, i] = d[i, j]
                for r in range(c):
                    u[j, i, r] = -u[i, j, r]
        return d, u

    @njit(cache=True)
    def _rank_eval_nb(distmat, q_ids, g_ids, q_cams, g_cams, max_rank):
        nq = distmat.shape[0]
        first = np.full(nq, -1, dtype=np.int64)
        ap = np.zeros(nq, dtype=np.float64)
        for q in range(nq):
            order = np.argsort(distmat[q], kind="mergesort")
            rank = 0
            hits = 0
            s = 0.0
            for g in order:
                if g_ids[g] == q_ids[q] and g_cams[g] == q_cams[q]:
                    continue
                if g_ids[g] == q_ids[q]:
                    if hits == 0:
                        first[q] = rank
                    hits += 1
                    s += hits / (rank + 1)
                rank += 1
            if hits > 0:
                ap[q] = s / hits
        return first, ap

    im2col = _im2col_nb
    col2im = _col2im_nb
    mutual_cross = _mutual_cross_nb
    mutual_self = _mutual_self_nb
    rank_eval = _rank_eval_nb
else:
    im2col = im2col_np
    col2im = col2im_np
    mutual_cross = mutual_cross_np
    mutual_self = mutual_self_np
    rank_eval = rank_eval_np


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
