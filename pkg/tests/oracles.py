"""Independent brute-force reference implementations (plain Python loops).

They follow the same seed, tie and padding rules as the library kernels but
share no code with them.
"""
import math


def _d2(p, q):
    dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
    return dx * dx + dy * dy + dz * dz


def fps(points, n):
    pts = [tuple(map(float, p)) for p in points]
    m = len(pts)
    mean = tuple(math.fsum(p[j] for p in pts) / m for j in range(3))
    # key: larger distance first, then lexicographically smaller coordinates
    seed = min(range(m), key=lambda i: (-_d2(pts[i], mean), pts[i]))
    chosen = [seed]
    while len(chosen) < n:
        best, best_key = None, None
        for i in range(m):
            if i in chosen:
                continue
            dmin = min(_d2(pts[i], pts[c]) for c in chosen)
            key = (-dmin, pts[i])
            if best_key is None or key < best_key:
                best, best_key = i, key
        chosen.append(best)
    return chosen


def ball_query(points, centroids, radius, k):
    pts = [tuple(map(float, p)) for p in points]
    r2 = radius * radius
    out = []
    for c in centroids:
        hits = [j for j in range(len(pts)) if _d2(pts[j], pts[c]) <= r2]
        if len(hits) > k:
            hits = sorted(hits, key=lambda j: (_d2(pts[j], pts[c]), pts[j], j))[:k]
            hits.sort()
        if not hits:
            hits = [c]
        out.append(hits + [hits[0]] * (k - len(hits)))
    return out


def group(points, feats, centroids, neighbors):
    out = []
    for c, row in zip(centroids, neighbors):
        g = []
        for j in row:
            rel = [float(points[j][a]) - float(points[c][a]) for a in range(3)]
            g.append(rel + ([float(x) for x in feats[j]] if feats is not None else []))
        out.append(g)
    return out


def three_nn(fine, coarse, k=3, eps=1e-10):
    idx_out, w_out = [], []
    kk = min(k, len(coarse))
    for p in fine:
        p = tuple(map(float, p))
        d = sorted((_d2(p, tuple(map(float, q))), i) for i, q in enumerate(coarse))[:kk]
        ids = [i for _, i in d]
        if d[0][0] < eps * eps:
            w = [1.0] + [0.0] * (kk - 1)
        else:
            inv = [1.0 / dd for dd, _ in d]
            s = sum(inv)
            w = [v / s for v in inv]
        idx_out.append(ids)
        w_out.append(w)
    return idx_out, w_out


def vlad(feats, assign, clusters, attn=None):
    """V[k][d] = sum_l s_l a_lk (f_ld - c_kd), summed in ascending l."""
    n, kk, dd = len(feats), len(clusters), len(clusters[0])
    s = attn if attn is not None else [1.0] * n
    out = [[0.0] * dd for _ in range(kk)]
    for k in range(kk):
        for d in range(dd):
            acc = 0.0
            for l in range(n):
                acc += s[l] * assign[l][k] * (feats[l][d] - clusters[k][d])
            out[k][d] = acc
    return out


def softmax_row(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    t = sum(e)
    return [v / t for v in e]


def mine(utm, pos_r=10.0, neg_r=50.0):
    """Per anchor: positive and negative candidate sets from pairwise distances."""
    n = len(utm)
    pos, neg = [], []
    for i in range(n):
        p, q = set(), set()
        for j in range(n):
            if i == j:
                continue
            d = math.dist(utm[i], utm[j])
            if d <= pos_r:
                p.add(j)
            if d >= neg_r:
                q.add(j)
        pos.append(p)
        neg.append(q)
    return pos, neg


def recall_at(query_desc, query_utm, db_desc, db_utm, n, thresh=25.0):
    hits = 0
    for qd, qu in zip(query_desc, query_utm):
        d = sorted((sum((a - b) ** 2 for a, b in zip(qd, row)), j) for j, row in enumerate(db_desc))
        top = [j for _, j in d[:n]]
        hits += any(math.dist(qu, db_utm[j]) <= thresh for j in top)
    return hits / len(query_desc)
