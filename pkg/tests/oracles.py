"""Reference implementations used to check the package.

Each oracle is written from the definition, in the most literal form that
runs fast enough, and shares no code with ``vloscale`` beyond plain data.
"""

from __future__ import annotations

import itertools

import numpy as np

# radius-3 Bresenham circle, clockwise from 12 o'clock, (du, dv)
CIRCLE16 = [
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
]


def fast9_bruteforce(img: np.ndarray, threshold: float):
    """Corner mask and max-min arc score at every pixel 3 px inside the border.

    A pixel is a corner when some run of 9 consecutive circle pixels (with
    wrap-around) is entirely brighter than centre + threshold or entirely
    darker than centre - threshold.  Every one of the 16 start positions is
    tried explicitly.  The score is the largest, over all such runs and both
    polarities, of the smallest contrast inside the run.
    """
    a = img.astype(np.int64)
    h, w = a.shape
    centre = a[3:h - 3, 3:w - 3]
    ring = np.stack([a[3 + dv:h - 3 + dv, 3 + du:w - 3 + du] for du, dv in CIRCLE16])
    diff = ring - centre[None]
    corner = np.zeros(centre.shape, dtype=bool)
    score = np.full(centre.shape, -np.inf)
    for start in range(16):
        arc = [(start + k) % 16 for k in range(9)]
        bright = np.all(diff[arc] > threshold, axis=0)
        dark = np.all(-diff[arc] > threshold, axis=0)
        corner |= bright | dark
        score = np.maximum(score, diff[arc].min(axis=0))
        score = np.maximum(score, (-diff[arc]).min(axis=0))
    return corner, np.maximum(score, 0.0)


def fast12_probe_count(img: np.ndarray, u: int, v: int, threshold: float) -> int:
    c = int(img[v, u])
    return sum(abs(int(img[v + dv, u + du]) - c) > threshold for du, dv in ((3, 0), (0, 3), (-3, 0), (0, -3)))


def max_consensus(samples, tol: float) -> int:
    """Largest inlier set over every sample taken as the hypothesis."""
    s = [float(x) for x in samples]
    best = 0
    for h in s:
        if h <= 0:
            continue
        best = max(best, sum(1 for x in s if abs(x - h) <= tol * h))
    return best


def consensus_sets(samples, tol: float):
    """All maximal-size consensus sets (as sorted index tuples)."""
    s = [float(x) for x in samples]
    sets = {}
    for h in s:
        if h <= 0:
            continue
        idx = tuple(i for i, x in enumerate(s) if abs(x - h) <= tol * h)
        sets[idx] = len(idx)
    top = max(sets.values(), default=0)
    return [k for k, v in sets.items() if v == top]


def knn_normals_bruteforce(points: np.ndarray, k: int, radius: float):
    """Normals from an exhaustive distance sort; returns (neighbour index sets, normals, valid)."""
    n = points.shape[0]
    neigh, normals, valid = [], np.zeros((n, 3)), np.zeros(n, dtype=bool)
    for i in range(n):
        d = np.sqrt(np.sum((points - points[i]) ** 2, axis=1))
        order = np.argsort(d, kind="stable")[:k]
        neigh.append(frozenset(order.tolist()))
        q = points[order]
        c = q - q.mean(axis=0)
        w, v = np.linalg.eigh(c.T @ c / k)
        normals[i] = v[:, 0]
        valid[i] = d[order[-1]] <= radius and w[1] > 1e-9 * w[2]
    return neigh, normals, valid


def horn_similarity(reference: np.ndarray, estimate: np.ndarray):
    """Similarity ``reference ~ s R estimate + t`` by Horn's unit-quaternion method."""
    y, x = np.asarray(reference, float), np.asarray(estimate, float)
    my, mx = y.mean(0), x.mean(0)
    yc, xc = y - my, x - mx
    S = xc.T @ yc
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
    ])
    w, v = np.linalg.eigh(N)
    q0, qx, qy, qz = v[:, -1]
    R = np.array([
        [q0 * q0 + qx * qx - qy * qy - qz * qz, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
        [2 * (qy * qx + q0 * qz), q0 * q0 - qx * qx + qy * qy - qz * qz, 2 * (qy * qz - q0 * qx)],
        [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0 * q0 - qx * qx - qy * qy + qz * qz],
    ])
    s = float(np.sum(yc * (xc @ R.T)) / np.sum(xc * xc))
    return s, R, my - s * R @ mx


def ray_plane_hits(origin, dirs, normal, offset):
    """Ray parameters where ``origin + t dir`` meets ``normal . x = offset`` (inf when missed)."""
    dirs = np.asarray(dirs, float)
    denom = dirs @ np.asarray(normal, float)
    t = np.full(dirs.shape[0], np.inf)
    ok = np.abs(denom) > 1e-12
    t[ok] = (offset - np.asarray(origin, float) @ normal) / denom[ok]
    t[t <= 0] = np.inf
    return t


def segment_errors_direct(gt_xyz: np.ndarray, est_xyz: np.ndarray, lengths=range(100, 801, 100)):
    """Translation-only segment metric for pose sequences with identity rotations.

    For each start i and length L, the end j is the first sample whose
    cumulative ground-truth distance from i reaches L; the error is the
    distance between the ground-truth and estimated displacement vectors.
    """
    steps = np.linalg.norm(np.diff(gt_xyz, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    errs = []
    for i in range(len(gt_xyz)):
        for L in lengths:
            j = next((j for j in range(i, len(gt_xyz)) if cum[j] - cum[i] >= L), None)
            if j is None:
                continue
            e = np.linalg.norm((gt_xyz[j] - gt_xyz[i]) - (est_xyz[j] - est_xyz[i]))
            errs.append(100.0 * e / L)
    return float(np.mean(errs)) if errs else None


def contiguous_runs(mask) -> int:
    """Longest circular run of True, by checking every start and length."""
    n = len(mask)
    best = 0
    for start, length in itertools.product(range(n), range(1, n + 1)):
        if all(mask[(start + k) % n] for k in range(length)):
            best = max(best, length)
    return best
