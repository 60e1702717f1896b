"""Independent reference implementations used as test oracles."""

import math


def diagonal_frechet(mu1, sd1, mu2, sd2) -> float:
    """Closed form for Gaussians with diagonal covariance diag(sd^2)."""
    return math.fsum((a - b) ** 2 + (s - t) ** 2 for a, b, s, t in zip(mu1, mu2, sd1, sd2))


def _poly(u, v, degree, gamma, coef):
    dot = 0.0
    for a, b in zip(u, v):
        dot += a * b
    base = gamma * dot + coef
    out = base
    for _ in range(degree - 1):
        out = out * base
    return out


def mmd2_brute(x, y, degree=3, gamma=None, coef=1.0) -> float:
    """Double-loop unbiased MMD^2, summing in the same order as the library."""
    x = [list(map(float, r)) for r in x]
    y = [list(map(float, r)) for r in y]
    if gamma is None:
        gamma = 1.0 / len(x[0])
    n, m = len(x), len(y)
    kxx = [_poly(x[i], x[j], degree, gamma, coef) for i in range(n) for j in range(n) if i != j]
    kyy = [_poly(y[i], y[j], degree, gamma, coef) for i in range(m) for j in range(m) if i != j]
    kxy = [_poly(x[i], y[j], degree, gamma, coef) for i in range(n) for j in range(m)]
    return (math.fsum(kxx) / (n * (n - 1)) + math.fsum(kyy) / (m * (m - 1))
            - 2.0 * (math.fsum(kxy) / (n * m)))


def _dist(u, v) -> float:
    acc = 0.0
    for a, b in zip(u, v):
        d = a - b
        acc += d * d
    return math.sqrt(acc)


def prim_mst_weights(points) -> list[float]:
    """Sorted edge weights of a Euclidean MST, O(N^2) Prim."""
    pts = [list(map(float, r)) for r in points]
    n = len(pts)
    in_tree = [False] * n
    best = [math.inf] * n
    best[0] = 0.0
    weights = []
    for _ in range(n):
        u = min((i for i in range(n) if not in_tree[i]), key=lambda i: best[i])
        in_tree[u] = True
        if u != 0:
            weights.append(best[u])
        for v in range(n):
            if not in_tree[v]:
                d = _dist(pts[u], pts[v])
                if d < best[v]:
                    best[v] = d
    return sorted(weights)
