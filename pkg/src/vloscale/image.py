"""Grayscale image primitives: sampling, corner tests, keypoint selection and
pyramidal Lucas-Kanade tracking.

All routines take :class:`ImageGray` values and work on continuous pixel
coordinates ``(u, v)`` where integer coordinates hit pixel samples.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DataError, OutOfBoundsError
from .geometry import KeypointSet

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (du, dv).
FAST_CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ]
)
FAST12_PROBES = np.array([(3, 0), (0, 3), (-3, 0), (0, -3)])
FAST_ARC = 9


@dataclass(frozen=True, eq=False)
class ImageGray:
    """8-bit grayscale image stored row-major as ``data[v, u]``."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise DataError("grayscale image must be 2-D")
        if a.dtype != np.uint8:
            a = np.clip(np.rint(a), 0, 255).astype(np.uint8)
        else:
            a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @classmethod
    def from_intensities(cls, width: int, height: int, intensities) -> "ImageGray":
        vals = np.asarray(intensities)
        if vals.size != width * height:
            raise DataError("intensities length must equal width * height")
        return cls(vals.reshape(height, width))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def intensities(self) -> np.ndarray:
        return self.data.reshape(-1)

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)


def read_pgm(path) -> ImageGray:
    """Read a binary (P5) 8-bit PGM file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    body = raw[pos : pos + width * height]
    if len(body) != width * height:
        raise DataError(f"{path}: truncated PGM data")
    return ImageGray(np.frombuffer(body, dtype=np.uint8).reshape(height, width))


def write_pgm(path, img: ImageGray) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img.data).tobytes())


def read_image(path) -> ImageGray:
    """Read PGM natively, anything else through Pillow."""
    if os.path.splitext(str(path))[1].lower() == ".pgm":
        return read_pgm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise DataError(f"{path}: reading non-PGM images requires Pillow") from exc
    try:
        with Image.open(path) as im:
            return ImageGray(np.asarray(im.convert("L")))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def bilinear(a: np.ndarray, u, v) -> np.ndarray:
    """Bilinear samples of float array ``a`` at ``(u, v)``; edges are clamped."""
    h, w = a.shape
    u = np.clip(np.asarray(u, dtype=float), 0.0, w - 1.0)
    v = np.clip(np.asarray(v, dtype=float), 0.0, h - 1.0)
    u0 = np.minimum(np.floor(u).astype(np.intp), w - 2) if w > 1 else np.zeros_like(u, dtype=np.intp)
    v0 = np.minimum(np.floor(v).astype(np.intp), h - 2) if h > 1 else np.zeros_like(v, dtype=np.intp)
    fu = u - u0
    fv = v - v0
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    top = a[v0, u0] * (1 - fu) + a[v0, u1] * fu
    bot = a[v1, u0] * (1 - fu) + a[v1, u1] * fu
    return top * (1 - fv) + bot * fv


def _interior(img: ImageGray, pixels, margin: int) -> np.ndarray:
    p = np.rint(np.asarray(pixels, dtype=float).reshape(-1, 2)).astype(np.int64)
    return (
        (p[:, 0] >= margin)
        & (p[:, 0] <= img.width - 1 - margin)
        & (p[:, 1] >= margin)
        & (p[:, 1] <= img.height - 1 - margin)
    )


def gradients_at(img: ImageGray, pixels) -> np.ndarray:
    """Central-difference gradients ``(N, 2)``; NaN where the pixel is too close to the border."""
    p = np.asarray(pixels, dtype=float).reshape(-1, 2)
    finite = np.isfinite(p).all(axis=1)
    p = np.where(finite[:, None], p, 0.0)
    a = img.as_float()
    u, v = p[:, 0], p[:, 1]
    g = np.stack(
        [
            (bilinear(a, u + 1, v) - bilinear(a, u - 1, v)) / 2.0,
            (bilinear(a, u, v + 1) - bilinear(a, u, v - 1)) / 2.0,
        ],
        axis=1,
    )
    g[~(_interior(img, p, 1) & finite)] = np.nan
    return g


def gradient_at(img: ImageGray, pixel) -> tuple[float, float]:
    g = gradients_at(img, [pixel])[0]
    if np.isnan(g[0]):
        raise OutOfBoundsError(f"pixel {tuple(pixel)} within 1 px of the border")
    return float(g[0]), float(g[1])


def _circle_values(img: ImageGray, pixels: np.ndarray, offsets: np.ndarray):
    p = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    centre = img.data[p[:, 1], p[:, 0]].astype(np.int32)
    ring = img.data[p[:, 1, None] + offsets[None, :, 1], p[:, 0, None] + offsets[None, :, 0]].astype(np.int32)
    return centre, ring


def _longest_circular_run(mask: np.ndarray) -> np.ndarray:
    """Length of the longest circular run of True per row (capped at row length)."""
    n = mask.shape[1]
    doubled = np.concatenate([mask, mask], axis=1)
    run = np.zeros(mask.shape[0], dtype=np.int64)
    best = np.zeros(mask.shape[0], dtype=np.int64)
    for j in range(2 * n):
        run = np.where(doubled[:, j], run + 1, 0)
        best = np.maximum(best, run)
    return np.minimum(best, n)


def _arc_min_max(diff: np.ndarray, arc: int) -> np.ndarray:
    """max over circular windows of length ``arc`` of the window minimum."""
    n = diff.shape[1]
    doubled = np.concatenate([diff, diff], axis=1)
    best = np.full(diff.shape[0], -np.inf)
    for s in range(n):
        best = np.maximum(best, doubled[:, s : s + arc].min(axis=1))
    return best


def fast9_test(img: ImageGray, pixels, threshold: float):
    """Vectorized FAST-9 test at integer pixels.

    Returns ``(is_corner, score)``.  The score is the max-min arc contrast: the
    largest threshold at which the pixel would still be a corner, which makes
    it independent of ``threshold``.
    """
    p = np.rint(np.asarray(pixels, dtype=float).reshape(-1, 2)).astype(np.int64)
    if p.shape[0] == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    if not np.all(_interior(img, p, 3)):
        raise OutOfBoundsError("FAST test needs pixels at least 3 px inside the border")
    centre, ring = _circle_values(img, p, FAST_CIRCLE)
    d = ring - centre[:, None]
    brighter = _longest_circular_run(d > threshold) >= FAST_ARC
    darker = _longest_circular_run(-d > threshold) >= FAST_ARC
    score = np.maximum(_arc_min_max(d, FAST_ARC), _arc_min_max(-d, FAST_ARC)).astype(float)
    return brighter | darker, np.maximum(score, 0.0)


def is_fast9_corner(img: ImageGray, pixel, threshold: float = 20) -> tuple[bool, float]:
    flag, score = fast9_test(img, [pixel], threshold)
    return bool(flag[0]), float(score[0])


def fast12_mask(img: ImageGray, pixels, threshold: float) -> np.ndarray:
    p = np.rint(np.asarray(pixels, dtype=float).reshape(-1, 2)).astype(np.int64)
    if p.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    if not np.all(_interior(img, p, 3)):
        raise OutOfBoundsError("FAST-12 pre-test needs pixels at least 3 px inside the border")
    centre, ring = _circle_values(img, p, FAST12_PROBES)
    return (np.abs(ring - centre[:, None]) > threshold).sum(axis=1) >= 3


def fast12_pretest(img: ImageGray, pixel, threshold: float = 20) -> bool:
    """Axis-aligned 4-probe test; passes when at least 3 probes exceed the threshold."""
    return bool(fast12_mask(img, [pixel], threshold)[0])


@dataclass
class SelectionConfig:
    mode: str = "dense"
    fast_threshold: float = 20.0
    grad_min: float = 8.0
    nms_radius: float = 5.0

    def __post_init__(self):
        if self.mode not in ("dense", "sparse"):
            raise ConfigurationError(f"selection mode must be dense or sparse, got {self.mode!r}")
        if self.nms_radius < 0 or self.grad_min < 0 or self.fast_threshold < 0:
            raise ConfigurationError("selection thresholds must be non-negative")


def non_max_suppression(pixels: np.ndarray, scores: np.ndarray, candidates: np.ndarray, radius: float) -> np.ndarray:
    """Indices of ``candidates`` that outrank every point within ``radius``.

    Ranking is by score, ties going to the lower index.  Suppressors are drawn
    from *all* points, so the result only shrinks when ``candidates`` shrinks.
    """
    cand = np.flatnonzero(candidates)
    if cand.size == 0 or radius <= 0:
        return cand
    tree = cKDTree(pixels)
    keep = []
    for i, neigh in zip(cand, tree.query_ball_point(pixels[cand], r=radius)):
        si = scores[i]
        ok = True
        for j in neigh:
            if j != i and (scores[j] > si or (scores[j] == si and j < i)):
                ok = False
                break
        if ok:
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def select_keypoints(projected: KeypointSet, img: ImageGray, cfg: SelectionConfig | None = None) -> KeypointSet:
    """Keep projected points that look distinctive in ``img``.

    Dense mode requires a FAST-9 corner and NMS keys on the FAST score; sparse
    mode swaps in the 4-probe pre-test and keys NMS on gradient magnitude.
    Both modes require gradient magnitude of at least ``cfg.grad_min``.
    """
    cfg = cfg or SelectionConfig()
    if len(projected) == 0:
        return projected
    inside = _interior(img, projected.pixels, 3)
    pool = projected[np.flatnonzero(inside)]
    if len(pool) == 0:
        return pool
    grad = gradients_at(img, pool.pixels)
    gmag = np.hypot(grad[:, 0], grad[:, 1])
    if cfg.mode == "dense":
        passed, score = fast9_test(img, pool.pixels, cfg.fast_threshold)
    else:
        passed = fast12_mask(img, pool.pixels, cfg.fast_threshold)
        score = gmag
    passed &= gmag >= cfg.grad_min
    keep = non_max_suppression(pool.pixels, score, passed, cfg.nms_radius)
    return pool[keep]


@dataclass(frozen=True, eq=False)
class Pyramid:
    """Image pyramid; level 0 is full resolution, each level halves (floor) by 2x2 box averaging."""

    levels: tuple

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ConfigurationError("pyramid needs at least one level")

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k) -> ImageGray:
        return self.levels[k]


def build_pyramid(img: ImageGray, levels: int = 4) -> Pyramid:
    out = [img]
    for _ in range(1, levels):
        a = out[-1].data.astype(np.int32)
        h, w = a.shape[0] // 2, a.shape[1] // 2
        if h < 1 or w < 1:
            break
        a = a[: 2 * h, : 2 * w]
        s = a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2]
        out.append(ImageGray(((s + 2) // 4).astype(np.uint8)))
    return Pyramid(tuple(out))


@dataclass
class TrackerConfig:
    window: int = 21
    eps: float = 0.01
    max_iters: int = 30
    min_eig: float = 1.0
    levels: int = 4

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigurationError("tracker window must be an odd size >= 3")
        if self.max_iters < 1 or self.levels < 1:
            raise ConfigurationError("tracker iterations and levels must be positive")


@dataclass(frozen=True)
class TrackedPoint:
    prev_pixel: np.ndarray
    cur_pixel: np.ndarray
    status: str


@dataclass(frozen=True, eq=False)
class Tracks:
    """Batch of tracking results; ``ok`` is True where status is tracked."""

    prev: np.ndarray
    cur: np.ndarray
    ok: np.ndarray

    def __len__(self):
        return self.prev.shape[0]

    def __iter__(self) -> Iterator[TrackedPoint]:
        for p, c, s in zip(self.prev, self.cur, self.ok):
            yield TrackedPoint(p, c, "tracked" if s else "lost")


def lk_track(prev: Pyramid, cur: Pyramid, points, cfg: TrackerConfig | None = None) -> Tracks:
    """Coarse-to-fine iterative Lucas-Kanade on all points at once."""
    cfg = cfg or TrackerConfig()
    if len(prev) != len(cur) or any(
        a.data.shape != b.data.shape for a, b in zip(prev.levels, cur.levels)
    ):
        raise ConfigurationError("pyramids differ in size")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        return Tracks(pts.copy(), pts.copy(), np.zeros(0, dtype=bool))
    nlev = min(len(prev), cfg.levels)
    half = cfg.window // 2
    off = np.arange(-half, half + 1, dtype=float)
    du, dv = np.meshgrid(off, off)
    du, dv = du.ravel()[None, :], dv.ravel()[None, :]
    npix = du.size
    guess = np.zeros((n, 2))
    ok = np.isfinite(pts).all(axis=1)
    # non-finite inputs are lost already; park them so sampling stays valid
    pts = np.where(ok[:, None], pts, 0.0)
    for lev in range(nlev - 1, -1, -1):
        a_prev = prev[lev].as_float()
        a_cur = cur[lev].as_float()
        scale = 2.0**lev
        p = pts / scale
        wu = p[:, 0:1] + du
        wv = p[:, 1:2] + dv
        tmpl = bilinear(a_prev, wu, wv)
        ix = (bilinear(a_prev, wu + 1, wv) - bilinear(a_prev, wu - 1, wv)) / 2.0
        iy = (bilinear(a_prev, wu, wv + 1) - bilinear(a_prev, wu, wv - 1)) / 2.0
        gxx = np.sum(ix * ix, axis=1)
        gxy = np.sum(ix * iy, axis=1)
        gyy = np.sum(iy * iy, axis=1)
        tr = gxx + gyy
        det = gxx * gyy - gxy * gxy
        min_eig = (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))) / 2.0
        ok &= min_eig / npix >= cfg.min_eig
        flow = np.zeros((n, 2))
        active = ok.copy()
        with np.errstate(invalid="ignore", divide="ignore"):
            inv_det = 1.0 / det
        for _ in range(cfg.max_iters):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            pu = p[idx, 0:1] + guess[idx, 0:1] + flow[idx, 0:1] + du
            pv = p[idx, 1:2] + guess[idx, 1:2] + flow[idx, 1:2] + dv
            err = tmpl[idx] - bilinear(a_cur, pu, pv)
            bx = np.sum(err * ix[idx], axis=1)
            by = np.sum(err * iy[idx], axis=1)
            eta_u = (gyy[idx] * bx - gxy[idx] * by) * inv_det[idx]
            eta_v = (gxx[idx] * by - gxy[idx] * bx) * inv_det[idx]
            flow[idx, 0] += eta_u
            flow[idx, 1] += eta_v
            done = np.hypot(eta_u, eta_v) < cfg.eps
            active[idx[done]] = False
        diverged = ~np.isfinite(flow).all(axis=1) | (np.hypot(flow[:, 0], flow[:, 1]) > cfg.window)
        ok &= ~diverged
        flow[~ok] = 0.0
        guess = guess + flow
        if lev > 0:
            guess = guess * 2.0
    out = pts + guess
    h, w = cur[0].height, cur[0].width
    ok &= np.isfinite(out).all(axis=1)
    ok &= (out[:, 0] >= 0) & (out[:, 0] <= w - 1) & (out[:, 1] >= 0) & (out[:, 1] <= h - 1)
    out[~ok] = np.nan
    return Tracks(np.asarray(points, dtype=float).reshape(-1, 2).copy(), out, ok)
