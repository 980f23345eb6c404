"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops over units, sharing no
code with the package, so agreement is evidence of correctness rather than
of shared bugs. The DGP reference reuses only the random streams (so draws
match) and numpy's vectorised exp (so rounding matches).
"""
from __future__ import annotations

import math

import numpy as np


# ------------------------------------------------------------------ metrics


def ranked_order(tau_hat):
    return sorted(range(len(tau_hat)), key=lambda i: (-float(tau_hat[i]), i))


def n_top(n, k):
    return max(1, math.floor(n * k + 1e-9))


def naive_metrics(tau_hat, tau_true, t, y, k):
    """All five metrics by direct per-prefix summation."""
    n = len(tau_hat)
    order = ranked_order(tau_hat)
    nk = n_top(n, k)
    top = order[:nk]
    pehe = math.sqrt(sum((tau_hat[i] - tau_true[i]) ** 2 for i in top) / nk)
    ate = sum(tau_true[i] for i in top) / nk

    def prefix(i):
        """Counts and sums over the first i ranked units."""
        nt = nc = 0
        st = sc = 0.0
        for j in order[:i]:
            if t[j] == 1:
                nt += 1
                st += y[j]
            else:
                nc += 1
                sc += y[j]
        return nt, nc, st, sc

    def means(i):
        nt, nc, st, sc = prefix(i)
        return (st / nt if nt else 0.0), (sc / nc if nc else 0.0)

    def v_uc(i):
        mt, mc = means(i)
        return (mt - mc) * i

    def v_qc(i):
        nt, nc, st, sc = prefix(i)
        return st - sc * (nt / nc if nc else 0.0)

    mt, mc = means(nk)
    uplift = mt - mc
    auuc = sum((v_uc(i) + v_uc(i + 1)) / 2 for i in range(1, nk)) / nk
    full = v_qc(n)
    model_area = sum((v_qc(i) + v_qc(i + 1)) / 2 for i in range(1, nk))
    rand_area = sum(((i / n) * full + ((i + 1) / n) * full) / 2 for i in range(1, nk))
    qini = (model_area - rand_area) / nk
    return {"pehe": pehe, "ate": ate, "uplift": uplift, "auuc": auuc, "qini": qini}


def naive_spearman(a, b):
    def ranks(v):
        out = [0.0] * len(v)
        for i, vi in enumerate(v):
            less = sum(1 for w in v if w < vi)
            equal = sum(1 for w in v if w == vi)
            out[i] = less + (equal + 1) / 2
        return out

    ra, rb = ranks(a), ranks(b)
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    cov = sum((p - ma) * (q - mb) for p, q in zip(ra, rb))
    va = sum((p - ma) ** 2 for p in ra)
    vb = sum((q - mb) ** 2 for q in rb)
    if va == 0 or vb == 0:
        return math.nan
    return cov / math.sqrt(va * vb)


# ------------------------------------------------------------------ DGP


def brute_force_neighbors(x, radius):
    """Sorted neighbour lists from an all-pairs scan."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            acc = 0.0
            for c in range(d):
                diff = float(x[i, c]) - float(x[j, c])
                acc += diff * diff
            if math.sqrt(acc) <= radius:
                row.append(j)
        out.append(row)
    return out


def _rng(seed, purpose):
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose]))


def naive_dgp(x, xi, theta0, theta1, omega, m, radius, noise_var, coeff_seed, treat_seed, noise_seed):
    """Unit-by-unit reference for the whole generating process."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    rng = _rng(coeff_seed, 1)
    beta_t = rng.normal(-0.2, math.sqrt(0.01), size=d)
    b0_lin = rng.random(d) < 0.3
    b0_quad = rng.random((d, d)) < 0.2
    b1_lin = rng.random(d) < 0.2
    b1_quad = rng.random((d, d)) < 0.5
    b1_cub = rng.random((d, d, d)) < 0.6

    nbrs = brute_force_neighbors(x, radius)
    zeta, g0, g1 = [], [], []
    for i in range(n):
        r = [float(v) for v in x[i]]
        z = 0.0
        for j in range(d):
            z += float(beta_t[j]) * r[j]
        a0 = 0.0
        for j in range(d):
            a0 += float(b0_lin[j]) * r[j]
        for j in range(d):
            for k in range(d):
                a0 += float(b0_quad[j, k]) * r[j] * r[k]
        a1 = 0.0
        for j in range(d):
            a1 += float(b1_lin[j]) * r[j]
        for j in range(d):
            for k in range(d):
                a1 += float(b1_quad[j, k]) * r[j] * r[k]
        for j in range(d):
            for k in range(d):
                jk = r[j] * r[k]
                for l in range(d):
                    a1 += float(b1_cub[j, k, l]) * jk * r[l]
        zeta.append(z)
        g0.append(a0)
        g1.append(a1)

    def nbr_mean(values, i):
        s = 0.0
        for j in nbrs[i]:
            s += 1.0 * values[j]
        return s / len(nbrs[i])

    sigma = [nbr_mean(zeta, i) for i in range(n)]
    logit = np.array([xi * (zeta[i] + 0.2 * sigma[i] + 0.3) for i in range(n)])
    p = 1.0 / (1.0 + np.exp(-logit))
    u = _rng(treat_seed, 2).random(n)
    t = [1 if u[i] < p[i] else 0 for i in range(n)]
    y0 = [g0[i] + theta0 * nbr_mean(g0, i) for i in range(n)]
    y1 = [g1[i] + theta1 * nbr_mean(g1, i) for i in range(n)]
    eps = _rng(noise_seed, 3).normal(0.0, math.sqrt(noise_var), n)
    y = [(y1[i] if t[i] == 1 else y0[i]) + eps[i] for i in range(n)]
    tau = [y1[i] - y0[i] for i in range(n)]

    if omega == 0:
        x_err = x.copy()
    else:
        x_err = x + _rng(noise_seed, 4).normal(0.0, math.sqrt(omega / d), x.shape)
    n_drop = math.floor(m * d + 1e-9)
    drop = set(_rng(noise_seed, 5).choice(d, size=n_drop, replace=False).tolist())
    kept = [j for j in range(d) if j not in drop]
    return {
        "neighbors": nbrs, "zeta": zeta, "gamma0": g0, "gamma1": g1, "sigma": sigma,
        "propensity": p.tolist(), "t": t, "y0": y0, "y1": y1, "y": y, "tau": tau,
        "x_obs": x_err[:, kept],
    }


# ------------------------------------------------------------------ trees


def _soft(g, alpha):
    return math.copysign(max(abs(g) - alpha, 0.0), g) if alpha else g


def _score(g, h, alpha, lam):
    return _soft(g, alpha) ** 2 / (h + lam) if h + lam > 0 else 0.0


def naive_tree(x, grad, hess, depth, lr, alpha=0.0, lam=1.0, min_child_weight=1.0):
    """Recursive exact-greedy regression tree; returns a predict(row) closure."""

    def build(rows, level):
        g = sum(grad[i] for i in rows)
        h = sum(hess[i] for i in rows)
        leaf = -lr * _soft(g, alpha) / (h + lam) if h + lam > 0 else 0.0
        if level == depth:
            return ("leaf", leaf)
        parent = _score(g, h, alpha, lam)
        best = (0.0, None, None)
        for f in range(x.shape[1]):
            values = sorted(set(float(x[i, f]) for i in rows))
            for lo, hi in zip(values[:-1], values[1:]):
                thr = lo + (hi - lo) / 2.0
                if thr >= hi:
                    thr = lo
                left = [i for i in rows if x[i, f] <= thr]
                right = [i for i in rows if x[i, f] > thr]
                gl, hl = sum(grad[i] for i in left), sum(hess[i] for i in left)
                gr, hr = g - gl, h - hl
                if hl < min_child_weight or hr < min_child_weight:
                    continue
                gain = _score(gl, hl, alpha, lam) + _score(gr, hr, alpha, lam) - parent
                if gain > best[0] + 1e-12:
                    best = (gain, f, thr)
        if best[1] is None:
            return ("leaf", leaf)
        _, f, thr = best
        left = [i for i in rows if x[i, f] <= thr]
        right = [i for i in rows if x[i, f] > thr]
        return ("split", f, thr, build(left, level + 1), build(right, level + 1))

    root = build(list(range(len(grad))), 0)

    def predict(row):
        node = root
        while node[0] == "split":
            node = node[3] if row[node[1]] <= node[2] else node[4]
        return node[1]

    return predict


# ------------------------------------------------------------------ gradients


def numeric_gradient(loss_fn, params, step=1e-5):
    """Central differences of ``loss_fn(params)`` for every parameter entry."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + step
            up = loss_fn(params)
            arr[idx] = keep - step
            down = loss_fn(params)
            arr[idx] = keep
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest per-array ||a - n|| / max(||a|| + ||n||, floor) over all parameters."""
    worst = 0.0
    for name, num in numeric.items():
        ana = np.asarray(analytic.get(name, np.zeros_like(num)), dtype=np.float64).reshape(num.shape)
        denom = max(np.linalg.norm(ana) + np.linalg.norm(num), floor)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
