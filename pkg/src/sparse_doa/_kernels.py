"""Hot loops, each with a numba loop version and a vectorised numpy version.

The public wrappers pick the backend from :mod:`sparse_doa._accel`; pass
``numba=True/False`` to force one (the tests and the benchmark do).
"""

import math

import numpy as np

from ._accel import njit, use_numba

COND_LIMIT = 1e12
RIDGE_SCALE = 1e-10


# --------------------------------------------------------------------------
# per-subarray CRB ingredients
# --------------------------------------------------------------------------


def _geometric_terms_numpy(a, dt, dp, combos):
    ac, tc, pc = a[combos], dt[combos], dp[combos]
    n = (np.abs(ac) ** 2).sum(1)
    at = (ac.conj() * tc).sum(1)
    ap = (ac.conj() * pc).sum(1)
    gtt = ((np.abs(tc) ** 2).sum(1) - np.abs(at) ** 2 / n).real
    gpp = ((np.abs(pc) ** 2).sum(1) - np.abs(ap) ** 2 / n).real
    gtp = ((tc.conj() * pc).sum(1) - at.conj() * ap / n).real
    return gtt, gtp, gpp


def _quadratic_form_numpy(R, a, combos):
    """``a_c^H R_c^{-1} a_c`` per subarray, ridge-regularised when ill-conditioned.

    Returns ``(q, bad)`` where ``bad`` flags subarrays whose covariance has
    non-positive trace (no regularisation can rescue those).
    """
    Rc = R[combos[:, :, None], combos[:, None, :]]
    K = combos.shape[1]
    w, U = np.linalg.eigh(Rc)
    tr = w.sum(1)
    wmax = w[:, -1]
    wmin = w[:, 0]
    ill = (wmin <= 0) | (wmax > COND_LIMIT * wmin)
    ridge = np.where(ill, RIDGE_SCALE * tr / K, 0.0)
    w = w + ridge[:, None]
    proj = np.einsum("ckj,ck->cj", U.conj(), a[combos])
    bad = (tr <= 0) | (w[:, 0] <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):  # bad rows are discarded by the caller
        q = (np.abs(proj) ** 2 / w).sum(1)
    return q, bad


@njit
def _crb_terms_loop(a, dt, dp, combos, R, have_R):
    C, K = combos.shape
    gtt = np.empty(C)
    gtp = np.empty(C)
    gpp = np.empty(C)
    q = np.empty(C)
    bad = np.zeros(C, dtype=np.bool_)
    Rc = np.empty((K, K), dtype=np.complex128)
    ac = np.empty(K, dtype=np.complex128)
    for c in range(C):
        n = 0.0
        at = 0j
        ap = 0j
        stt = 0.0
        spp = 0.0
        stp = 0j
        for i in range(K):
            m = combos[c, i]
            am, tm, pm = a[m], dt[m], dp[m]
            ac[i] = am
            n += am.real * am.real + am.imag * am.imag
            at += am.conjugate() * tm
            ap += am.conjugate() * pm
            stt += tm.real * tm.real + tm.imag * tm.imag
            spp += pm.real * pm.real + pm.imag * pm.imag
            stp += tm.conjugate() * pm
        gtt[c] = stt - (at.real * at.real + at.imag * at.imag) / n
        gpp[c] = spp - (ap.real * ap.real + ap.imag * ap.imag) / n
        gtp[c] = (stp - at.conjugate() * ap / n).real
        if have_R:
            for i in range(K):
                for j in range(K):
                    Rc[i, j] = R[combos[c, i], combos[c, j]]
            w, U = np.linalg.eigh(Rc)
            tr = 0.0
            for i in range(K):
                tr += w[i]
            if w[0] <= 0.0 or w[K - 1] > COND_LIMIT * w[0]:
                ridge = RIDGE_SCALE * tr / K
                for i in range(K):
                    w[i] += ridge
            if tr <= 0.0 or w[0] <= 0.0:
                bad[c] = True
            acc = 0.0
            for j in range(K):
                s = 0j
                for i in range(K):
                    s += U[i, j].conjugate() * ac[i]
                acc += (s.real * s.real + s.imag * s.imag) / w[j]
            q[c] = acc
        else:
            q[c] = 0.0
    return q, gtt, gtp, gpp, bad


def crb_terms(a, dt, dp, combos, R=None, numba=None):
    """Ingredients of the single-source CRB for every row of ``combos``.

    Returns ``(q, gtt, gtp, gpp, bad)``: ``q = a_c^H R_c^{-1} a_c`` (zeros when
    ``R`` is None) and the entries of ``Re{D^H P_perp D}`` with
    ``D = [da/dtheta, da/dphi]`` restricted to the subarray.
    """
    combos = np.ascontiguousarray(combos, dtype=np.int64)
    a = np.ascontiguousarray(a, dtype=np.complex128)
    dt = np.ascontiguousarray(dt, dtype=np.complex128)
    dp = np.ascontiguousarray(dp, dtype=np.complex128)
    if use_numba(numba):
        Rin = np.zeros((1, 1), np.complex128) if R is None else np.ascontiguousarray(R, dtype=np.complex128)
        return _crb_terms_loop(a, dt, dp, combos, Rin, R is not None)
    gtt, gtp, gpp = _geometric_terms_numpy(a, dt, dp, combos)
    if R is None:
        q = np.zeros(combos.shape[0])
        bad = np.zeros(combos.shape[0], dtype=bool)
    else:
        q, bad = _quadratic_form_numpy(np.asarray(R, dtype=np.complex128), a, combos)
    return q, gtt, gtp, gpp, bad


# --------------------------------------------------------------------------
# simulated annealing over K-of-M selections
# --------------------------------------------------------------------------


@njit
def _anneal_loop(inv, dist, sel, unsel, pick_out, pick_in, uniforms, temps, moves, bound):
    K = sel.size
    sel = sel.copy()
    unsel = unsel.copy()
    cost = 0.0
    for i in range(K):
        for j in range(i + 1, K):
            cost += inv[sel[i], sel[j]]
    best_cost = cost
    best = sel.copy()
    step = 0
    accepted = 0
    for lvl in range(temps.size):
        T = temps[lvl]
        for _ in range(moves):
            i = pick_out[step]
            j = pick_in[step]
            u = uniforms[step]
            step += 1
            s_old = sel[i]
            s_new = unsel[j]
            feasible = True
            delta = 0.0
            for k in range(K):
                if k == i:
                    continue
                o = sel[k]
                if dist[s_new, o] > bound:
                    feasible = False
                    break
                delta += inv[s_new, o] - inv[s_old, o]
            if not feasible:
                continue
            if delta <= 0.0 or u < math.exp(-delta / T):
                sel[i] = s_new
                unsel[j] = s_old
                cost += delta
                accepted += 1
                if cost < best_cost:
                    best_cost = cost
                    best[:] = sel
    return best, best_cost, accepted


def _anneal_numpy(inv, dist, sel, unsel, pick_out, pick_in, uniforms, temps, moves, bound):
    sel = sel.copy()
    unsel = unsel.copy()
    K = sel.size
    cost = float(inv[np.ix_(sel, sel)][np.triu_indices(K, 1)].sum())
    best_cost, best = cost, sel.copy()
    accepted = 0
    mask = np.ones(K, dtype=bool)
    step = 0
    for T in temps:
        for _ in range(moves):
            i, j, u = pick_out[step], pick_in[step], uniforms[step]
            step += 1
            s_old, s_new = sel[i], unsel[j]
            mask[:] = True
            mask[i] = False
            others = sel[mask]
            if np.any(dist[s_new, others] > bound):
                continue
            delta = float(np.sum(inv[s_new, others] - inv[s_old, others]))
            if delta <= 0.0 or u < math.exp(-delta / T):
                sel[i], unsel[j] = s_new, s_old
                cost += delta
                accepted += 1
                if cost < best_cost:
                    best_cost, best = cost, sel.copy()
    return best, best_cost, accepted


def anneal(inv, dist, sel, unsel, pick_out, pick_in, uniforms, temps, moves, bound, numba=None):
    """Metropolis swap-move annealing with pre-drawn randomness.

    ``pick_out[s]``/``pick_in[s]`` index into the selected/unselected lists at
    step ``s`` and ``uniforms[s]`` is the acceptance draw, so both backends
    walk the same chain. Returns ``(best_selection, best_cost, n_accepted)``.
    """
    args = (
        np.ascontiguousarray(inv, dtype=np.float64),
        np.ascontiguousarray(dist, dtype=np.float64),
        np.ascontiguousarray(sel, dtype=np.int64),
        np.ascontiguousarray(unsel, dtype=np.int64),
        np.ascontiguousarray(pick_out, dtype=np.int64),
        np.ascontiguousarray(pick_in, dtype=np.int64),
        np.ascontiguousarray(uniforms, dtype=np.float64),
        np.ascontiguousarray(temps, dtype=np.float64),
        int(moves),
        float(bound),
    )
    if use_numba(numba):
        return _anneal_loop(*args)
    return _anneal_numpy(*args)


# --------------------------------------------------------------------------
# valid (unpadded, stride 1) 2-D convolution, NCHW
# --------------------------------------------------------------------------


def _conv_forward_numpy(x, W, b):
    kh, kw = W.shape[2], W.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    y = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))  # N, H', W', F
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)) + b[None, :, None, None]


def _conv_backward_numpy(x, W, dy):
    kh, kw = W.shape[2], W.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    dW = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))  # F, C, kh, kw
    db = dy.sum(axis=(0, 2, 3))
    pad = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    pwin = np.lib.stride_tricks.sliding_window_view(pad, (kh, kw), axis=(2, 3))
    Wf = W[:, :, ::-1, ::-1]
    dx = np.tensordot(pwin, Wf, axes=([1, 4, 5], [0, 2, 3]))  # N, H, W, C
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2)), dW, db


@njit
def _conv_forward_loop(x, W, b):
    N, C, H, Wd = x.shape
    F, _, kh, kw = W.shape
    Ho, Wo = H - kh + 1, Wd - kw + 1
    y = np.empty((N, F, Ho, Wo))
    for n in range(N):
        for f in range(F):
            y[n, f] = b[f]
            for c in range(C):
                for u in range(kh):
                    for v in range(kw):
                        w = W[f, c, u, v]
                        for i in range(Ho):
                            for j in range(Wo):
                                y[n, f, i, j] += w * x[n, c, i + u, j + v]
    return y


@njit
def _conv_backward_loop(x, W, dy):
    N, C, H, Wd = x.shape
    F, _, kh, kw = W.shape
    Ho, Wo = dy.shape[2], dy.shape[3]
    dx = np.zeros_like(x)
    dW = np.zeros_like(W)
    db = np.zeros(F)
    for n in range(N):
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    db[f] += dy[n, f, i, j]
            for c in range(C):
                for u in range(kh):
                    for v in range(kw):
                        w = W[f, c, u, v]
                        acc = 0.0
                        for i in range(Ho):
                            for j in range(Wo):
                                g = dy[n, f, i, j]
                                acc += g * x[n, c, i + u, j + v]
                                dx[n, c, i + u, j + v] += g * w
                        dW[f, c, u, v] += acc
    return dx, dW, db


# The tensordot path rides on BLAS and beats the loop kernels at these sizes
# (see benchmarks/bench_kernels.py), so convolution only uses numba on request.


def conv_forward(x, W, b, numba=None):
    if numba and use_numba(numba):
        return _conv_forward_loop(np.ascontiguousarray(x), np.ascontiguousarray(W), np.ascontiguousarray(b))
    return _conv_forward_numpy(x, W, b)


def conv_backward(x, W, dy, numba=None):
    """Gradients ``(dx, dW, db)`` of a valid convolution."""
    if numba and use_numba(numba):
        return _conv_backward_loop(np.ascontiguousarray(x), np.ascontiguousarray(W), np.ascontiguousarray(dy))
    return _conv_backward_numpy(x, W, dy)
