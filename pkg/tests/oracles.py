"""Slow, independent reference implementations used to check the library.

Everything here is plain Python loops over the defining formulas and shares
no code paths with the package beyond its data types.
"""

import math

N_BINS = 63
FLOOR = -113


def smoothed(counts, rssi, alpha):
    total = sum(counts.values())
    return (counts.get(rssi, 0) + alpha) / (total + alpha * N_BINS)


def cellsense(fp, scans, k):
    """Brute-force K-weighted centroid over every stored cell."""
    cells = sorted(fp.cells)
    ll = []
    for idx in cells:
        hists = fp.cells[idx].histograms
        total = 0.0
        for s in scans:
            per_scan = 0.0
            for r in s.readings:
                h = hists.get(r.tower_id)
                counts = h.counts if h is not None else {}
                per_scan += math.log(smoothed(counts, r.rssi_dbm, fp.alpha))
            total += per_scan
        ll.append(total)
    return weighted_top_k(ll, cells, [fp.cells[i].rep_location for i in cells], k)


def weighted_top_k(ll, keys, locs, k):
    m = max(ll)
    rel = [math.exp(v - m) for v in ll]
    order = sorted(range(len(ll)), key=lambda i: (-rel[i], i))
    kk = len(ll) if k == "ALL" else min(k, len(ll))
    top = order[:kk]
    s = math.fsum(rel[i] for i in top)
    w = [rel[i] / s for i in top]
    x = math.fsum(wi * locs[i].x for wi, i in zip(w, top))
    y = math.fsum(wi * locs[i].y for wi, i in zip(w, top))
    return (x, y), [keys[i] for i in top], w


def knn(points, scan, k):
    """Full sort of every distance; points are (LocalPoint, {tower: rssi})."""
    vec = scan.as_dict()
    dists = []
    for i, (_, fv) in enumerate(points):
        towers = set(fv) | set(vec)
        d2 = sum((fv.get(t, FLOOR) - vec.get(t, FLOOR)) ** 2 for t in towers)
        dists.append((math.sqrt(d2), i))
    dists.sort()
    chosen = [i for _, i in dists[:k]]
    x = math.fsum(points[i][0].x for i in chosen) / len(chosen)
    y = math.fsum(points[i][0].y for i in chosen) / len(chosen)
    return (x, y), chosen


def se_kernel(a, b, l, sf):
    d2 = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
    return sf * sf * math.exp(-d2 / (2 * l * l))


def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting on lists of floats."""
    n = len(A)
    M = [list(map(float, row)) + [float(v)] for row, v in zip(A, b)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(M[r][c]))
        M[c], M[p] = M[p], M[c]
        for r in range(c + 1, n):
            f = M[r][c] / M[c][c]
            for j in range(c, n + 1):
                M[r][j] -= f * M[c][j]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (M[r][n] - sum(M[r][j] * x[j] for j in range(r + 1, n))) / M[r][r]
    return x


def gp_predict(xs, ys, x, l, sf, sn, mu):
    """Posterior mean and latent variance at ``x`` by dense elimination."""
    n = len(xs)
    K = [[se_kernel(xs[i], xs[j], l, sf) + (sn * sn if i == j else 0.0) for j in range(n)]
         for i in range(n)]
    ks = [se_kernel(xi, x, l, sf) for xi in xs]
    z = gauss_solve(K, [y - mu for y in ys])
    v = gauss_solve(K, ks)
    mean = mu + sum(a * b for a, b in zip(ks, z))
    var = sf * sf - sum(a * b for a, b in zip(ks, v))
    return mean, var


def gp_locate(models, candidates, scan, k):
    """Per-candidate Gaussian likelihood over towers, then weighted top-K."""
    ll = []
    for _, c in candidates:
        total = 0.0
        for r in scan.readings:
            m = models.get(r.tower_id)
            if m is None:
                continue
            xs = [tuple(p) for p in m.inputs.tolist()]
            h = m.hyper
            mean, var = gp_predict(xs, m.targets.tolist(), (c.x, c.y), h.length_scale_m,
                                   h.sigma_f_db, h.sigma_n_db, m.prior_mean)
            var = max(var, 0.0) + h.sigma_n_db ** 2
            total += -0.5 * (math.log(2 * math.pi * var) + (r.rssi_dbm - mean) ** 2 / var)
        ll.append(total)
    return weighted_top_k(ll, [c[0] for c in candidates], [c[1] for c in candidates], k)
