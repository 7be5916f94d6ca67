"""numba-compiled twins of ``_kernels_numpy``; same signatures and semantics."""
import numpy as np
from numba import njit

STATUS_MAX_ITER = 0
STATUS_CONVERGED = 1
STATUS_STALLED = 2
STATUS_KEY_CHANGED = 3
# gain drops smaller than this are rounding, not a failed mixing step
FALLBACK_SLACK = 1e-12


@njit(cache=True)
def induced(theta, reward, mu):
    S, A = mu.shape
    P = np.zeros((S, S))
    r = np.zeros(S)
    for s in range(S):
        for a in range(A):
            p = mu[s, a]
            if p == 0.0:
                continue
            r[s] += p * reward[s, a]
            for t in range(S):
                P[s, t] += p * theta[s, a, t]
    return P, r


@njit(cache=True)
def gain_bias(P, r):
    S = P.shape[0]
    M = -P.copy()
    for s in range(S):
        M[s, s] += 1.0
        M[s, 0] = 1.0
    x = np.linalg.solve(M, r)
    b = x.copy()
    b[0] = 0.0
    return x[0], b


@njit(cache=True)
def _argmax_rows(x):
    S, A = x.shape
    out = np.empty(S, dtype=np.int64)
    for s in range(S):
        best = 0
        for a in range(1, A):
            if x[s, a] > x[s, best]:
                best = a
        out[s] = best
    return out


@njit(cache=True)
def _mix(mu, target, w):
    S, A = mu.shape
    out = np.empty_like(mu)
    for s in range(S):
        acc = 0.0
        for a in range(A):
            if a == target[s]:
                continue
            out[s, a] = w * mu[s, a]
            acc += out[s, a]
        out[s, target[s]] = 1.0 - acc
    return out


@njit(cache=True)
def _q_values(theta, reward, b):
    S, A = reward.shape
    Q = reward.copy()
    for s in range(S):
        for a in range(A):
            acc = 0.0
            for t in range(S):
                acc += theta[s, a, t] * b[t]
            Q[s, a] += acc
    return Q


@njit(cache=True)
def ppi_iterate(theta, reward, mu0, star, j_star, d_star, count, key,
                max_iter, kl_tol, w_min, w_forced):
    S = mu0.shape[0]
    mu = mu0.copy()
    j_tr = np.empty(max_iter)
    w_tr = np.empty(max_iter)
    kl_tr = np.empty(max_iter)
    P, rp = induced(theta, reward, mu)
    j_cur, b = gain_bias(P, rp)
    status = STATUS_MAX_ITER
    n = 0
    n_fb = 0
    for i in range(max_iter):
        if w_forced >= 0.0:
            w = w_forced
        elif j_cur >= j_star:
            w = 1.0
        else:
            w = np.exp(-count * np.log(j_star / j_cur))
            if w < w_min:
                w = w_min
        cand = _mix(mu, star, w)
        Pc, rc = induced(theta, reward, cand)
        j_c, b_c = gain_bias(Pc, rc)
        if j_c < j_cur - FALLBACK_SLACK:
            cand = _mix(mu, _argmax_rows(_q_values(theta, reward, b)), w)
            Pc, rc = induced(theta, reward, cand)
            j_c, b_c = gain_bias(Pc, rc)
            n_fb += 1
        mu = cand
        j_cur = j_c
        b = b_c
        kl = 0.0
        for s in range(S):
            if d_star[s] > 0.0:
                q = mu[s, star[s]]
                kl += d_star[s] * (-np.log(q)) if q > 0.0 else np.inf
        j_tr[i] = j_cur
        w_tr[i] = w
        kl_tr[i] = kl
        n = i + 1
        if kl <= kl_tol:
            status = STATUS_CONVERGED
            break
        if w == 1.0:
            status = STATUS_STALLED
            break
        am = _argmax_rows(mu)
        moved = False
        for s in range(S):
            if am[s] != key[s]:
                moved = True
        if moved:
            status = STATUS_KEY_CHANGED
            break
    return mu, n, j_tr[:n], w_tr[:n], kl_tr[:n], status, n_fb


@njit(cache=True)
def _search(row, u):
    n = row.shape[0]
    k = 0
    while k < n - 1 and u >= row[k]:
        k += 1
    return k


@njit(cache=True)
def rollout_rewards(cum_mu, cum_theta, reward, s0, u):
    n_steps, n_chains, _ = u.shape
    totals = np.zeros(n_chains)
    for c in range(n_chains):
        s = s0
        acc = 0.0
        for t in range(n_steps):
            a = _search(cum_mu[s], u[t, c, 0])
            acc += reward[s, a]
            s = _search(cum_theta[s, a], u[t, c, 1])
        totals[c] = acc
    return totals


@njit(cache=True)
def hitting_lengths(cum_P, source, target, n_ep, max_len, seed):
    lengths = np.full(n_ep, -1, dtype=np.int64)
    if source == target:
        lengths[:] = 0
        return lengths
    np.random.seed(seed)
    for e in range(n_ep):
        s = source
        for t in range(max_len):
            s = _search(cum_P[s], np.random.random())
            if s == target:
                lengths[e] = t + 1
                break
    return lengths


@njit(cache=True)
def all_pairs_max_hitting(P):
    S = P.shape[0]
    best = 0.0
    rhs = np.ones(S - 1)
    M = np.empty((S - 1, S - 1))
    for target in range(S):
        i = 0
        for s in range(S):
            if s == target:
                continue
            j = 0
            for t in range(S):
                if t == target:
                    continue
                M[i, j] = (1.0 if i == j else 0.0) - P[s, t]
                j += 1
            i += 1
        if S > 1:
            h = np.linalg.solve(M, rhs)
            for v in h:
                if v > best:
                    best = v
    return best
