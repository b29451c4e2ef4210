"""Compiled coordinate-descent kernels.

Both kernels work on centered, scaled columns ``z_j = (x_j - m_j) / s_j`` and
penalize ``b_j / s_j`` (the original-scale coefficient), so the minimizer is
the one of the unstandardized objective

    (1/M) * loss + lam * (mix * |beta|_1 + (1 - mix) / 2 * |beta|_2^2).

KKT conditions are checked on the original scale. A lambda is reported as
converged only when the largest coefficient change in a full sweep is below
``tol`` and every KKT residual is below ``kkt_tol``.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, fastmath=True)
def _kkt_violation(grad, b, scale, lam, mix):
    # grad is the negative loss gradient on the original scale.
    worst = 0.0
    for j in range(grad.shape[0]):
        if scale[j] == 0.0:
            continue
        beta = b[j] / scale[j]
        if b[j] != 0.0:
            sgn = 1.0 if b[j] > 0 else -1.0
            v = abs(grad[j] - lam * (1.0 - mix) * beta - lam * mix * sgn)
        else:
            v = abs(grad[j]) - lam * mix
        if v > worst:
            worst = v
    return worst


@njit(cache=True, fastmath=True)
def _active_solve(G, c0, c, pf, b, lam, mix):
    """Solve the stationarity equations on the current support and signs.

    Accepted only if every active coefficient keeps its sign; then ``b`` and
    the residual correlations ``c`` are replaced. The caller's next full
    sweep and KKT check validate the result.
    """
    p = b.shape[0]
    na = 0
    for j in range(p):
        if b[j] != 0.0:
            na += 1
    if na == 0:
        return False
    idx = np.empty(na, dtype=np.int64)
    k = 0
    for j in range(p):
        if b[j] != 0.0:
            idx[k] = j
            k += 1
    H = np.empty((na, na))
    rhs = np.empty(na)
    for r in range(na):
        j = idx[r]
        sgn = 1.0 if b[j] > 0 else -1.0
        for q in range(na):
            H[r, q] = 2.0 * G[j, idx[q]]
        H[r, r] += lam * (1.0 - mix) * pf[j] * pf[j]
        rhs[r] = 2.0 * c0[j] - lam * mix * sgn * pf[j]
    try:
        sol = np.linalg.solve(H, rhs)
    except Exception:
        return False
    for r in range(na):
        if sol[r] * b[idx[r]] <= 0.0 or not np.isfinite(sol[r]):
            return False
    for r in range(na):
        b[idx[r]] = sol[r]
    for i in range(p):
        acc = c0[i]
        for r in range(na):
            acc -= G[i, idx[r]] * sol[r]
        c[i] = acc
    return True


@njit(cache=True, fastmath=True)
def gaussian_path(G, c0, scale, lams, mix, tol, kkt_tol, max_sweeps, b):
    """Squared-loss path with covariance updates.

    G is (1/M) Z'Z and c0 is (1/M) Z'(y - ybar). ``scale`` holds s_j with 0 for
    constant columns, which are held at zero. ``b`` is the warm start and is
    updated in place.
    """
    p = G.shape[0]
    L = lams.shape[0]
    coefs = np.zeros((L, p))
    sweeps = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=np.bool_)
    pf = np.zeros(p)
    for j in range(p):
        if scale[j] > 0.0:
            pf[j] = 1.0 / scale[j]
    c = c0.copy()
    for j in range(p):
        if b[j] != 0.0:
            for i in range(p):
                c[i] -= G[i, j] * b[j]
    grad = np.zeros(p)

    for k in range(L):
        lam = lams[k]
        nsw = 0
        while nsw < max_sweeps:
            maxd = 0.0
            for j in range(p):
                gjj = G[j, j]
                if scale[j] == 0.0 or gjj <= 0.0:
                    continue
                z = 2.0 * (c[j] + gjj * b[j])
                bn = soft(z, lam * mix * pf[j]) / (2.0 * gjj + lam * (1.0 - mix) * pf[j] * pf[j])
                d = bn - b[j]
                if d != 0.0:
                    b[j] = bn
                    for i in range(p):
                        c[i] -= G[i, j] * d
                    ad = abs(d) * np.sqrt(gjj)
                    if ad > maxd:
                        maxd = ad
            nsw += 1
            if maxd < tol:
                for j in range(p):
                    grad[j] = 2.0 * c[j] * scale[j]
                if _kkt_violation(grad, b, scale, lam, mix) <= kkt_tol:
                    conv[k] = True
                    break
                continue
            inner = 0
            while nsw < max_sweeps:
                inner += 1
                if inner % 10 == 0 and _active_solve(G, c0, c, pf, b, lam, mix):
                    nsw += 1
                    break
                maxd = 0.0
                for j in range(p):
                    if b[j] == 0.0:
                        continue
                    gjj = G[j, j]
                    z = 2.0 * (c[j] + gjj * b[j])
                    bn = soft(z, lam * mix * pf[j]) / (2.0 * gjj + lam * (1.0 - mix) * pf[j] * pf[j])
                    d = bn - b[j]
                    if d != 0.0:
                        b[j] = bn
                        for i in range(p):
                            c[i] -= G[i, j] * d
                        ad = abs(d) * np.sqrt(gjj)
                        if ad > maxd:
                            maxd = ad
                nsw += 1
                if maxd < tol:
                    break
        coefs[k] = b
        sweeps[k] = nsw
    return coefs, sweeps, conv


@njit(cache=True, fastmath=True)
def _log1pexp(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True, fastmath=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True, fastmath=True)
def _logistic_objective(eta, a, b, pf, lam, mix):
    M = eta.shape[0]
    loss = 0.0
    for i in range(M):
        loss += _log1pexp(eta[i]) - a[i] * eta[i]
    pen = 0.0
    for j in range(b.shape[0]):
        if b[j] != 0.0:
            pen += mix * pf[j] * abs(b[j]) + 0.5 * (1.0 - mix) * pf[j] * pf[j] * b[j] * b[j]
    return loss / M + lam * pen


@njit(cache=True, fastmath=True)
def _neg_gradient(Z, a, eta, means, scale, grad):
    # Original-scale negative gradient (1/M) x_j'(a - p); returns intercept part.
    M, p = Z.shape
    resid = np.empty(M)
    g0 = 0.0
    for i in range(M):
        resid[i] = a[i] - _sigmoid(eta[i])
        g0 += resid[i]
    g0 /= M
    for j in range(p):
        acc = 0.0
        for i in range(M):
            acc += Z[i, j] * resid[i]
        grad[j] = scale[j] * acc / M + means[j] * g0
    return g0


@njit(cache=True, fastmath=True)
def logistic_path(Z, a, means, scale, lams, mix, tol, kkt_tol, max_outer, max_sweeps,
                  wfloor, b0, b):
    """Logistic-loss path by proximal Newton with Armijo backtracking.

    Each outer step minimizes the penalized quadratic model by coordinate
    descent restricted to a screened working set; screening uses the
    sequential strong rule and is validated by a full KKT check.
    """
    M, p = Z.shape
    L = lams.shape[0]
    coefs = np.zeros((L, p))
    icpts = np.zeros(L)
    sweeps = np.zeros(L, dtype=np.int64)
    outers = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=np.bool_)
    pf = np.zeros(p)
    for j in range(p):
        if scale[j] > 0.0:
            pf[j] = 1.0 / scale[j]

    eta = np.empty(M)
    for i in range(M):
        acc = b0
        for j in range(p):
            if b[j] != 0.0:
                acc += Z[i, j] * b[j]
        eta[i] = acc
    grad = np.zeros(p)
    _neg_gradient(Z, a, eta, means, scale, grad)
    lam_prev = lams[0]

    w = np.empty(M)
    r = np.empty(M)
    r_start = np.empty(M)
    h = np.empty(p)
    nb = np.empty(p)
    eta_t = np.empty(M)
    bt = np.empty(p)
    working = np.zeros(p, dtype=np.bool_)

    for k in range(L):
        lam = lams[k]
        thresh = mix * (2.0 * lam - lam_prev)
        for j in range(p):
            working[j] = scale[j] > 0.0 and (b[j] != 0.0 or abs(grad[j]) >= thresh)
        nsw = 0
        it = 0
        # Inexact Newton: early inner solves stop at a looser tolerance.
        inner_tol = tol if tol > 1e-3 else 1e-3
        while it < max_outer:
            it += 1
            sw = 0.0
            for i in range(M):
                pi = _sigmoid(eta[i])
                wi = pi * (1.0 - pi)
                if wi < wfloor:
                    wi = wfloor
                w[i] = wi
                r[i] = (a[i] - pi) / wi
                r_start[i] = r[i]
                sw += wi
            for j in range(p):
                h[j] = -1.0
                nb[j] = b[j]
            nb0 = b0
            inner = 0
            full = True
            while inner < max_sweeps:
                maxd = 0.0
                acc = 0.0
                for i in range(M):
                    acc += w[i] * r[i]
                d0 = acc / sw
                if d0 != 0.0:
                    nb0 += d0
                    for i in range(M):
                        r[i] -= d0
                    if abs(d0) > maxd:
                        maxd = abs(d0)
                for j in range(p):
                    if not working[j]:
                        continue
                    if not full and nb[j] == 0.0:
                        continue
                    if h[j] < 0.0:
                        acc = 0.0
                        for i in range(M):
                            acc += w[i] * Z[i, j] * Z[i, j]
                        h[j] = acc / M
                    hj = h[j]
                    if hj <= 0.0:
                        continue
                    acc = 0.0
                    for i in range(M):
                        acc += w[i] * Z[i, j] * r[i]
                    gj = acc / M
                    bn = soft(hj * nb[j] + gj, lam * mix * pf[j]) / (hj + lam * (1.0 - mix) * pf[j] * pf[j])
                    d = bn - nb[j]
                    if d != 0.0:
                        nb[j] = bn
                        for i in range(M):
                            r[i] -= Z[i, j] * d
                        ad = abs(d) * np.sqrt(hj)
                        if ad > maxd:
                            maxd = ad
                inner += 1
                if maxd < inner_tol:
                    if full:
                        break
                    full = True
                else:
                    full = False
            nsw += inner

            # Armijo backtracking on the true objective along the Newton direction.
            f0 = _logistic_objective(eta, a, b, pf, lam, mix)
            slope = 0.0
            for i in range(M):
                slope -= (a[i] - _sigmoid(eta[i])) * (r_start[i] - r[i])
            slope /= M
            pen_old = 0.0
            pen_new = 0.0
            for j in range(p):
                pen_old += mix * pf[j] * abs(b[j]) + 0.5 * (1.0 - mix) * pf[j] * pf[j] * b[j] * b[j]
                pen_new += mix * pf[j] * abs(nb[j]) + 0.5 * (1.0 - mix) * pf[j] * pf[j] * nb[j] * nb[j]
            decrease = slope + lam * (pen_new - pen_old)
            if decrease > 0.0:
                decrease = 0.0
            t = 1.0
            accepted = False
            while t > 1e-10:
                for i in range(M):
                    eta_t[i] = eta[i] + t * (r_start[i] - r[i])
                for j in range(p):
                    bt[j] = b[j] + t * (nb[j] - b[j])
                ft = _logistic_objective(eta_t, a, bt, pf, lam, mix)
                if ft <= f0 + 1e-4 * t * decrease + 1e-14 * (1.0 + abs(f0)):
                    accepted = True
                    break
                t *= 0.5
            change = 0.0
            if accepted:
                change = t * abs(nb0 - b0)
                for j in range(p):
                    dj = t * abs(nb[j] - b[j])
                    if dj > change:
                        change = dj
                b0 = b0 + t * (nb0 - b0)
                for j in range(p):
                    b[j] = bt[j]
                for i in range(M):
                    eta[i] = eta_t[i]
            if change >= tol:
                # Superlinear forcing: the inner tolerance tracks the squared step.
                inner_tol = min(inner_tol, 0.1 * change, change * change)
                if inner_tol < tol:
                    inner_tol = tol
            elif inner_tol > tol:
                inner_tol = tol
            else:
                g0 = _neg_gradient(Z, a, eta, means, scale, grad)
                viol = _kkt_violation(grad, b, scale, lam, mix)
                if abs(g0) > viol:
                    viol = abs(g0)
                if viol <= kkt_tol:
                    conv[k] = True
                    break
                grew = False
                for j in range(p):
                    if not working[j] and scale[j] > 0.0 and abs(grad[j]) > lam * mix:
                        working[j] = True
                        grew = True
                if not grew and not accepted:
                    break
        if not conv[k]:
            _neg_gradient(Z, a, eta, means, scale, grad)
        coefs[k] = b
        icpts[k] = b0
        sweeps[k] = nsw
        outers[k] = it
        lam_prev = lam
    return icpts, coefs, sweeps, outers, conv
