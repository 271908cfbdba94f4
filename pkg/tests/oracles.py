"""Independent reference implementations used only by the tests.

None of these call into the package's numerical code paths: they rebuild
the quantity from first principles, usually by brute force.
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# -- frusta -------------------------------------------------------------------

def frustum_planes_from_corners(pose, intr, near, far):
    """Outward unit normals n and offsets d (inside: n.x <= d), built from
    the frustum's corner rays rather than from its intrinsic matrix."""
    R = pose.rotation
    c = pose.position
    px = [(0.0, 0.0), (intr.width, 0.0), (intr.width, intr.height), (0.0, intr.height)]
    rays = []
    for u, v in px:
        local = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
        rays.append(R.T @ local)
    axis = R[2]
    inside = c + axis * (0.5 * (near + far))
    normals, offsets = [], []
    for i in range(4):
        n = np.cross(rays[i], rays[(i + 1) % 4])
        n /= np.linalg.norm(n)
        if n @ (inside - c) > 0:
            n = -n
        normals.append(n)
        offsets.append(n @ c)
    normals.append(-axis)
    offsets.append(-(axis @ c + near))
    normals.append(axis)
    offsets.append(axis @ c + far)
    return np.array(normals), np.array(offsets)


def inscribed_radius_grid(planes, lo, hi, n=33, rounds=14):
    """Max over x of min_i (d_i - n_i . x) by dense grid + zoom.

    The objective is concave and 1-Lipschitz, so the maximizer stays inside the
    set of grid points within half a cell diagonal of the best value; each
    round shrinks the box to that set (padded by one cell).
    """
    N, d = planes
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    best = -np.inf
    for _ in range(rounds):
        axes = [np.linspace(lo[i], hi[i], n) for i in range(3)]
        G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        f = np.min(d[None, :] - G @ N.T, axis=1)
        h = float(np.max((hi - lo) / (n - 1)))
        best = max(best, float(f.max()))
        keep = G[f >= best - 0.87 * h]
        lo = np.maximum(lo, keep.min(axis=0) - h)
        hi = np.minimum(hi, keep.max(axis=0) + h)
    return best


def _golden_max_scalar(fun, lo, hi, iters=80):
    a, b = lo, hi
    for _ in range(iters):
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        if fun(x1) > fun(x2):
            b = x2
        else:
            a = x1
    return fun(0.5 * (a + b))


def _triples(n):
    return np.array([(i, j, k) for i in range(n) for j in range(i + 1, n)
                     for k in range(j + 1, n)])


def _max_min_affine_2d(c, U, triples):
    """max over p in R^2 of min_i (c_i + U_i . p), exactly.

    The maximum of a bounded concave piecewise-linear function sits where three
    of its pieces are equal, so every triple of pieces is tried.
    """
    i, j, k = triples.T
    a11, a12 = U[i, 0] - U[j, 0], U[i, 1] - U[j, 1]
    a21, a22 = U[i, 0] - U[k, 0], U[i, 1] - U[k, 1]
    r1, r2 = c[j] - c[i], c[k] - c[i]
    det = a11 * a22 - a12 * a21
    ok = np.abs(det) > 1e-12
    px = (r1[ok] * a22[ok] - a12[ok] * r2[ok]) / det[ok]
    py = (a11[ok] * r2[ok] - r1[ok] * a21[ok]) / det[ok]
    if len(px) == 0:
        return -np.inf
    vals = np.min(c[None, :] + np.outer(px, U[:, 0]) + np.outer(py, U[:, 1]), axis=1)
    return float(vals.max())


def inscribed_radius_search(planes, lo, hi):
    """Max over x of min_i (d_i - n_i . x) without a linear-programming solver.

    The partial maximum over (y, z) of a concave function is concave in x, so a
    golden-section search over x is exact up to its tolerance; for each x the
    maximization over (y, z) is solved in closed form.
    """
    N, d = planes
    triples = _triples(len(d))

    def over_yz(x):
        return _max_min_affine_2d(d - N[:, 0] * x, -N[:, 1:], triples)

    return _golden_max_scalar(over_yz, lo[0], hi[0])


# -- BDI ----------------------------------------------------------------------

def _golden_min(fun, lo, hi, iters=80):
    """Vectorized golden-section minimization on per-instance intervals."""
    a, b = lo.copy(), hi.copy()
    for _ in range(iters):
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        left = fun(x1) < fun(x2)
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
    return 0.5 * (a + b)


def bdi_weights_search(Q, D, span=20.0, step=0.25):
    """Affine weights minimizing ||q - sum w_i d_i|| for batches of k = 2 or 3.

    Q: (B, dim) queries, D: (B, k, dim). Weights are parametrized by their first
    k-1 entries; a coarse grid brackets the minimizer of the convex objective
    and nested golden-section searches refine it.
    """
    B, k, _ = D.shape

    def cost(t):  # t: (B, k-1)
        w = np.concatenate([t, 1.0 - t.sum(axis=1, keepdims=True)], axis=1)
        r = Q - np.einsum("bk,bkd->bd", w, D)
        return np.sum(r * r, axis=1)

    grid = np.arange(-span, span + step / 2, step)
    if k == 2:
        vals = np.stack([cost(np.full((B, 1), g)) for g in grid], axis=1)
        t0 = grid[np.argmin(vals, axis=1)]
        t = _golden_min(lambda x: cost(x[:, None]), t0 - step, t0 + step)
        return np.column_stack([t, 1.0 - t])
    if k != 3:
        raise ValueError("oracle supports k = 2 or 3")
    T1, T2 = np.meshgrid(grid, grid, indexing="ij")
    flat = np.column_stack([T1.ravel(), T2.ravel()])
    vals = np.stack([cost(np.tile(p, (B, 1))) for p in flat], axis=1)
    start = flat[np.argmin(vals, axis=1)]

    def inner(t1):
        t2 = _golden_min(lambda x: cost(np.column_stack([t1, x])),
                         start[:, 1] - step, start[:, 1] + step)
        return t2

    def outer_cost(t1):
        return cost(np.column_stack([t1, inner(t1)]))

    t1 = _golden_min(outer_cost, start[:, 0] - step, start[:, 0] + step)
    t2 = inner(t1)
    return np.column_stack([t1, t2, 1.0 - t1 - t2])


# -- retrieval ----------------------------------------------------------------

def _as_integers(values):
    """Exact integer vector proportional to a float vector (power-of-two scale)."""
    ratios = [float(v).as_integer_ratio() for v in values]
    denom = max(d for _, d in ratios)
    return [n * (denom // d) for n, d in ratios]


def brute_rank(query, ids, vectors, k):
    """Top-k ids by cosine similarity, ordered with exact integer arithmetic.

    Each vector is rescaled to integers by a power of two, which leaves its
    cosine unchanged. Cosines are then compared through sign(dot) * dot^2 / |v|^2
    (the query norm is common to all) by cross-multiplication, so equal
    directions tie exactly and ties go to the smaller id. Returns ids and
    float cosines.
    """
    from functools import cmp_to_key

    q = _as_integers(query)
    keyed = []
    for image_id, vec in zip(ids, vectors):
        v = _as_integers(vec)
        dot = sum(a * b for a, b in zip(q, v))
        keyed.append((dot, sum(x * x for x in v), image_id, vec))

    def cmp(a, b):
        # larger cosine first: compare sign(dot_a) dot_a^2 |b|^2 with the same for b
        ka = (1 if a[0] >= 0 else -1) * a[0] * a[0] * b[1]
        kb = (1 if b[0] >= 0 else -1) * b[0] * b[0] * a[1]
        if ka != kb:
            return -1 if ka > kb else 1
        return -1 if a[2] < b[2] else (1 if a[2] > b[2] else 0)

    keyed.sort(key=cmp_to_key(cmp))
    qn = math.sqrt(sum(v * v for v in query))
    top = keyed[:k]
    scores = [sum(a * b for a, b in zip(query, vec)) / (qn * math.sqrt(sum(x * x for x in vec)))
              for _, _, _, vec in top]
    return [t[2] for t in top], scores


def brute_iou(a, b):
    a, b = list(set(a)), list(set(b))
    inter = sum(1 for x in a if x in b)
    union = len(a) + len(b) - inter
    return 0.0 if union == 0 else inter / union


def brute_precision(relevant_flags, k):
    top = relevant_flags[:k]
    return 0.0 if not top else sum(1 for f in top if f) / len(top)


def brute_recall(relevant_flags, k):
    return 1 if any(relevant_flags[:k]) else 0


# -- geometry -----------------------------------------------------------------

def central_difference_jacobian(fun, x0, eps=1e-6):
    x0 = np.asarray(x0, dtype=float)
    f0 = fun(x0)
    J = np.zeros((len(f0), len(x0)))
    for j in range(len(x0)):
        e = np.zeros_like(x0)
        e[j] = eps
        J[:, j] = (fun(x0 + e) - fun(x0 - e)) / (2 * eps)
    return J


def ray_intersection(centers, directions):
    """Least-squares point closest to a set of rays (normal equations)."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c, d in zip(centers, directions):
        d = d / np.linalg.norm(d)
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ c
    return np.linalg.solve(A, b)


def triangulate_reprojection_optimal(pixels, rotations, centers, K, start):
    """Point minimizing summed squared reprojection error (Gauss-Newton via scipy)."""
    from scipy.optimize import least_squares

    def residuals(X):
        out = []
        for uv, R, c in zip(pixels, rotations, centers):
            x = K @ (R @ (X - c))
            out.extend([x[0] / x[2] - uv[0], x[1] / x[2] - uv[1]])
        return np.array(out)

    return least_squares(residuals, np.asarray(start, dtype=float), xtol=1e-12).x
