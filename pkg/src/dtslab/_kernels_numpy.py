"""Pure-numpy implementations of the hot kernels.

Every function here has a twin with the same signature in
``_kernels_numba``; ``dtslab.kernels`` picks one at import time.
"""
import numpy as np

STATUS_MAX_ITER = 0
STATUS_CONVERGED = 1
STATUS_STALLED = 2
STATUS_KEY_CHANGED = 3
# gain drops smaller than this are rounding, not a failed mixing step
FALLBACK_SLACK = 1e-12


def induced(theta, reward, mu):
    """Chain ``P[s, s']`` and reward vector ``r[s]`` under row policy ``mu``."""
    P = np.einsum("sa,sat->st", mu, theta)
    r = np.einsum("sa,sa->s", mu, reward)
    return P, r


def gain_bias(P, r):
    """Solve ``J + b = r + P b`` with ``b[0] = 0``; returns ``(J, b)``."""
    S = P.shape[0]
    M = np.eye(S) - P
    M[:, 0] = 1.0
    x = np.linalg.solve(M, r)
    b = x.copy()
    b[0] = 0.0
    return x[0], b


def _argmax_rows(x):
    return np.argmax(x, axis=1)


def _mix(mu, target, w):
    S = mu.shape[0]
    rows = np.arange(S)
    out = w * mu
    out[rows, target] = 0.0
    out[rows, target] = 1.0 - out.sum(axis=1)
    return out


def ppi_iterate(theta, reward, mu0, star, j_star, d_star, count, key,
                max_iter, kl_tol, w_min, w_forced):
    """Posterior-weighted policy iteration on a fixed model.

    Runs until the marginal KL to ``star`` drops below ``kl_tol``, the weight
    hits 1 (identity step), the argmax key of ``mu`` moves off ``key``, or
    ``max_iter`` iterations elapse. ``w_forced < 0`` means "use the count-based
    weight". Returns ``(mu, n, j_trace, w_trace, kl_trace, status, n_fallback)``.
    """
    S = mu0.shape[0]
    rows = np.arange(S)
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
            w = max(np.exp(-count * np.log(j_star / j_cur)), w_min)
        cand = _mix(mu, star, w)
        Pc, rc = induced(theta, reward, cand)
        j_c, b_c = gain_bias(Pc, rc)
        if j_c < j_cur - FALLBACK_SLACK:
            # rowwise mixing is not linear in gain; mix toward the one-step
            # improvement of mu instead, which cannot lower it
            Q = reward + theta @ b
            cand = _mix(mu, _argmax_rows(Q), w)
            Pc, rc = induced(theta, reward, cand)
            j_c, b_c = gain_bias(Pc, rc)
            n_fb += 1
        mu = cand
        j_cur = j_c
        b = b_c
        on = d_star > 0.0
        with np.errstate(divide="ignore"):
            kl = float(np.sum(d_star[on] * -np.log(mu[rows[on], star[on]])))
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
        if np.any(_argmax_rows(mu) != key):
            status = STATUS_KEY_CHANGED
            break
    return mu, n, j_tr[:n], w_tr[:n], kl_tr[:n], status, n_fb


def rollout_rewards(cum_mu, cum_theta, reward, s0, u):
    """Total raw reward per chain; ``u`` has shape ``(n_steps, n_chains, 2)``."""
    n_steps, n_chains, _ = u.shape
    S, A = reward.shape
    states = np.full(n_chains, s0, dtype=np.int64)
    totals = np.zeros(n_chains)
    for t in range(n_steps):
        a = (u[t, :, 0][:, None] >= cum_mu[states]).sum(axis=1)
        np.minimum(a, A - 1, out=a)
        totals += reward[states, a]
        nxt = (u[t, :, 1][:, None] >= cum_theta[states, a]).sum(axis=1)
        np.minimum(nxt, S - 1, out=nxt)
        states = nxt
    return totals


def hitting_lengths(cum_P, source, target, n_ep, max_len, seed):
    """First-passage lengths of ``n_ep`` simulated episodes; ``-1`` if not hit within ``max_len``.

    Randomness comes from ``seed``; the numba twin uses its own generator, so
    the two backends agree in distribution, not draw for draw.
    """
    S = cum_P.shape[0]
    lengths = np.full(n_ep, -1, dtype=np.int64)
    if source == target:
        lengths[:] = 0
        return lengths
    rng = np.random.default_rng(seed)
    states = np.full(n_ep, source, dtype=np.int64)
    idx = np.arange(n_ep)
    for t in range(max_len):
        if idx.size == 0:
            break
        u = rng.random(idx.size)
        nxt = (u[:, None] >= cum_P[states]).sum(axis=1)
        np.minimum(nxt, S - 1, out=nxt)
        hit = nxt == target
        lengths[idx[hit]] = t + 1
        idx = idx[~hit]
        states = nxt[~hit]
    return lengths


def all_pairs_max_hitting(P):
    """Largest expected hitting time over ordered pairs, irreducible ``P``."""
    S = P.shape[0]
    best = 0.0
    for target in range(S):
        keep = np.arange(S) != target
        M = np.eye(S - 1) - P[np.ix_(keep, keep)]
        h = np.linalg.solve(M, np.ones(S - 1))
        if h.size:
            best = max(best, float(h.max()))
    return best
