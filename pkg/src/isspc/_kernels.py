"""numba kernels for the fused-group MM solver.

A group is a set of subsample points sharing one center. ``size`` holds the
group sizes as floats, ``ybar`` the group data means and ``theta`` the centers.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _mcp(t, lam_delta):
    if t < lam_delta:
        return t - t * t / (2.0 * lam_delta)
    return 0.5 * lam_delta


@njit(cache=True)
def _dist(theta, g, h):
    s = 0.0
    for m in range(theta.shape[1]):
        d = theta[g, m] - theta[h, m]
        s += d * d
    return np.sqrt(s)


@njit(cache=True)
def group_objective(theta, ybar, size, within, lam, lam_delta):
    """Penalized loss evaluated on fused groups."""
    G, p = theta.shape
    loss = within
    for g in range(G):
        s = 0.0
        for m in range(p):
            d = ybar[g, m] - theta[g, m]
            s += d * d
        loss += size[g] * s
    pen = 0.0
    if lam > 0.0:
        for g in range(G):
            for h in range(g + 1, G):
                pen += size[g] * size[h] * _mcp(_dist(theta, g, h), lam_delta)
    return loss + lam * pen


@njit(cache=True)
def mm_sweep_groups(theta, ybar, size, lam, lam_delta):
    """One majorization at ``theta`` then one cyclic pass over the groups.

    Updates ``theta`` in place. Pairs at or beyond ``lam_delta`` carry zero
    MCP slope and exert no pull.
    """
    G, p = theta.shape
    coef = np.zeros((G, G))
    if lam > 0.0:
        for g in range(G):
            for h in range(g + 1, G):
                d = _dist(theta, g, h)
                if d > 0.0 and d < lam_delta:
                    c = (1.0 - d / lam_delta) / d
                    coef[g, h] = c
                    coef[h, g] = c
    num = np.empty(p)
    for g in range(G):
        for m in range(p):
            num[m] = ybar[g, m]
        den = 1.0
        for h in range(G):
            c = coef[g, h]
            if c > 0.0:
                a = 0.5 * lam * size[h] * c
                den += a
                for m in range(p):
                    num[m] += a * theta[h, m]
        for m in range(p):
            theta[g, m] = num[m] / den


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def close_components(theta, tol):
    """Connected components of the graph with edges ``||theta_g - theta_h|| <= tol``.

    Returns a component id per row, numbered by first appearance.
    """
    G = theta.shape[0]
    parent = np.arange(G)
    for g in range(G):
        for h in range(g + 1, G):
            if _dist(theta, g, h) <= tol:
                a = _find(parent, g)
                b = _find(parent, h)
                if a != b:
                    if a < b:
                        parent[b] = a
                    else:
                        parent[a] = b
    comp = np.full(G, -1)
    roots = np.full(G, -1)
    nxt = 0
    for g in range(G):
        r = _find(parent, g)
        if roots[r] < 0:
            roots[r] = nxt
            nxt += 1
        comp[g] = roots[r]
    return comp


@njit(cache=True)
def assign_stream(values, order, wmean, wm2, count, floor, bg_mean, bg_var, log_c):
    """Sequential likelihood-ratio assignment with untrimmed Welford updates.

    ``wmean``, ``wm2`` and ``count`` hold the running per-component state and
    are updated in place, in the same operation order as the Python
    ``welford_push``. Returns a label per entry of ``order`` (0 for noise).
    """
    K, p = wmean.shape
    n_t = order.shape[0]
    labels = np.zeros(n_t, dtype=np.int64)
    log2pi = np.log(2.0 * np.pi)
    var = np.empty((K, p))
    lognorm = np.empty(K)
    total = 0.0
    for k in range(K):
        total += count[k]
        s = 0.0
        for m in range(p):
            v = max(wm2[k, m] / (count[k] - 1), floor[m])
            var[k, m] = v
            s += log2pi + np.log(v)
        lognorm[k] = -0.5 * s
    bg_norm = 0.0
    for m in range(p):
        bg_norm += log2pi + np.log(bg_var[m])
    bg_norm = -0.5 * bg_norm
    scores = np.empty(K)
    for t in range(n_t):
        i = order[t]
        q = 0.0
        for m in range(p):
            d = values[i, m] - bg_mean[m]
            q += d * d / bg_var[m]
        log_bg = bg_norm - 0.5 * q
        best = 0
        for k in range(K):
            q = 0.0
            for m in range(p):
                d = values[i, m] - wmean[k, m]
                q += d * d / var[k, m]
            scores[k] = np.log(count[k] / total) + lognorm[k] - 0.5 * q
            if scores[k] > scores[best]:
                best = k
        top = scores[best]
        acc = 0.0
        for k in range(K):
            acc += np.exp(scores[k] - top)
        if top + np.log(acc) - log_bg < log_c:
            continue
        labels[t] = best + 1
        count[best] += 1
        total += 1.0
        n = count[best]
        s = 0.0
        for m in range(p):
            x = values[i, m]
            delta = x - wmean[best, m]
            wmean[best, m] += delta / n
            wm2[best, m] += delta * (x - wmean[best, m])
            v = max(wm2[best, m] / (n - 1), floor[m])
            var[best, m] = v
            s += log2pi + np.log(v)
        lognorm[best] = -0.5 * s
    return labels
