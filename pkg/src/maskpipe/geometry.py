"""Descriptor matching and geometric verification.

Mutual nearest neighbor search pairs live and reference patch cells whose
descriptors are each other's closest match. The pairs are then verified
with a RANSAC-fitted planar homography over the patch-center pixel
coordinates; matches consistent with the model at the configured symmetric
transfer error are the inliers.

The fitted model maps live pixel coordinates to reference pixel
coordinates, so it can be reused directly as a backward-warp map.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .patch_features import DescriptorGrid

log = logging.getLogger("maskpipe.geometry")


@dataclass(frozen=True)
class MatchSet:
    """One-to-one descriptor matches between two grids.

    live_cells / ref_cells hold (i, j) grid indices, live_points /
    ref_points the corresponding patch-center (x, y) pixel coordinates,
    distances the descriptor L2 distances.
    """

    live_cells: np.ndarray
    ref_cells: np.ndarray
    distances: np.ndarray
    live_points: np.ndarray
    ref_points: np.ndarray

    def __post_init__(self):
        n = len(self.distances)
        for name in ("live_cells", "ref_cells", "distances", "live_points", "ref_points"):
            arr = np.ascontiguousarray(getattr(self, name))
            if arr.shape[0] != n:
                raise ValueError(f"{name} length {arr.shape[0]} does not match {n} pairs")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.distances)

    @staticmethod
    def empty() -> "MatchSet":
        return MatchSet(
            np.zeros((0, 2), dtype=np.int32),
            np.zeros((0, 2), dtype=np.int32),
            np.zeros(0, dtype=np.float64),
            np.zeros((0, 2), dtype=np.float64),
            np.zeros((0, 2), dtype=np.float64),
        )


@dataclass(frozen=True)
class RansacConfig:
    reproj_threshold: float = 3.0
    max_iterations: int = 2000
    confidence: float = 0.999
    min_inliers: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if self.reproj_threshold <= 0.0:
            raise ValueError(f"reproj_threshold must be > 0, got {self.reproj_threshold}")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class InlierSet:
    """Verified subset of a MatchSet plus the homography that explains it.

    The model is 3x3 with the bottom-right element normalized to 1 and maps
    live (x, y) to reference (x, y). A degenerate result carries the
    identity model and no inliers.
    """

    model: np.ndarray
    indices: np.ndarray
    live_cells: np.ndarray
    ref_cells: np.ndarray
    live_points: np.ndarray
    ref_points: np.ndarray
    reproj_threshold: float
    degenerate: bool = False

    def __post_init__(self):
        model = np.ascontiguousarray(self.model, dtype=np.float64)
        if model.shape != (3, 3):
            raise ValueError(f"model must be 3x3, got {model.shape}")
        model.setflags(write=False)
        object.__setattr__(self, "model", model)
        for name in ("indices", "live_cells", "ref_cells", "live_points", "ref_points"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.indices)


def mutual_nearest_neighbors(live: DescriptorGrid, ref: DescriptorGrid) -> MatchSet:
    """Pair cells that are each other's nearest descriptor.

    A pair (a, b) is kept iff b is the closest reference descriptor to a
    and a is the closest live descriptor to b. Zero-vector (textureless)
    descriptors are excluded from candidacy on both sides. Distance ties
    break toward the lowest row-major cell index, matching argmin order.
    """
    if live.dim != ref.dim:
        raise ValueError(f"descriptor dims do not match: {live.dim} vs {ref.dim}")
    a = live.descriptors.astype(np.float64)
    b = ref.descriptors.astype(np.float64)
    valid_a = a.any(axis=1)
    valid_b = b.any(axis=1)
    if not valid_a.any() or not valid_b.any():
        return MatchSet.empty()

    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(d2, 0.0, out=d2)
    d2[~valid_a, :] = np.inf
    d2[:, ~valid_b] = np.inf

    nn_ab = np.argmin(d2, axis=1)
    nn_ba = np.argmin(d2, axis=0)
    idx_a = np.arange(len(a))
    mutual = valid_a & valid_b[nn_ab] & (nn_ba[nn_ab] == idx_a)

    ia = idx_a[mutual]
    ib = nn_ab[mutual]
    live_cells = np.stack([ia // live.grid_w, ia % live.grid_w], axis=1).astype(np.int32)
    ref_cells = np.stack([ib // ref.grid_w, ib % ref.grid_w], axis=1).astype(np.int32)
    return MatchSet(
        live_cells,
        ref_cells,
        np.sqrt(d2[ia, ib]),
        live.centers[ia].astype(np.float64),
        ref.centers[ib].astype(np.float64),
    )


def project_points(model: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a homography to (N, 2) points; division-by-zero rows map to inf."""
    pts = np.asarray(points, dtype=np.float64)
    ones = np.ones((pts.shape[0], 1))
    q = np.hstack([pts, ones]) @ np.asarray(model, dtype=np.float64).T
    w = q[:, 2]
    out = np.full_like(pts, np.inf)
    ok = np.abs(w) > 1e-12
    out[ok] = q[ok, :2] / w[ok, None]
    return out


def _normalize_points(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    mean_dist = float(np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean())
    if mean_dist < 1e-9:
        return None, None
    s = math.sqrt(2.0) / mean_dist
    t = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    normalized = pts * s - s * centroid
    return normalized, t


def fit_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Normalized DLT fit of a homography mapping src points to dst points.

    Returns None when the system is numerically degenerate (coincident or
    collinear configurations).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[0] < 4 or src.shape[1] != 2:
        raise ValueError(f"need matching (N>=4, 2) point arrays, got {src.shape} vs {dst.shape}")
    src_n, t_src = _normalize_points(src)
    dst_n, t_dst = _normalize_points(dst)
    if src_n is None or dst_n is None:
        return None

    n = src.shape[0]
    x, y = src_n[:, 0], src_n[:, 1]
    u, v = dst_n[:, 0], dst_n[:, 1]
    zeros = np.zeros(n)
    ones = np.ones(n)
    a = np.zeros((2 * n, 9))
    a[0::2] = np.column_stack([x, y, ones, zeros, zeros, zeros, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zeros, zeros, zeros, x, y, ones, -v * x, -v * y, -v])
    try:
        _, sv, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        return None
    if sv[7] < 1e-9:
        return None  # rank below 8, more than one solution
    h_norm = vt[-1].reshape(3, 3)
    model = np.linalg.inv(t_dst) @ h_norm @ t_src
    if abs(model[2, 2]) < 1e-12:
        return None
    return model / model[2, 2]


def symmetric_transfer_error(model: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Per-pair sqrt(|H s - d|^2 + |H^-1 d - s|^2) in pixels, None if H is singular."""
    model = np.asarray(model, dtype=np.float64)
    if abs(np.linalg.det(model)) < 1e-12:
        return None
    inv = np.linalg.inv(model)
    fwd = project_points(model, src) - np.asarray(dst, dtype=np.float64)
    bwd = project_points(inv, dst) - np.asarray(src, dtype=np.float64)
    err2 = np.sum(fwd * fwd, axis=1) + np.sum(bwd * bwd, axis=1)
    return np.sqrt(np.where(np.isfinite(err2), err2, np.inf))


def _cross2(u: np.ndarray, v: np.ndarray) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _sample_degenerate(pts: np.ndarray) -> bool:
    # All four triangle areas near zero means a collinear minimal sample.
    p, q, r, s = pts
    areas = [
        abs(_cross2(q - p, r - p)),
        abs(_cross2(q - p, s - p)),
        abs(_cross2(r - p, s - p)),
        abs(_cross2(r - q, s - q)),
    ]
    return max(areas) < 1e-6


def _iterations_needed(inlier_ratio: float, confidence: float, cap: int) -> int:
    if inlier_ratio <= 0.0:
        return cap
    p_good = inlier_ratio**4
    if p_good >= 1.0 - 1e-12:
        return 1
    needed = math.log1p(-confidence) / math.log1p(-p_good)
    return max(1, min(cap, int(math.ceil(needed))))


def _degenerate_result(cfg: RansacConfig) -> InlierSet:
    return InlierSet(
        model=np.eye(3),
        indices=np.zeros(0, dtype=np.int64),
        live_cells=np.zeros((0, 2), dtype=np.int32),
        ref_cells=np.zeros((0, 2), dtype=np.int32),
        live_points=np.zeros((0, 2), dtype=np.float64),
        ref_points=np.zeros((0, 2), dtype=np.float64),
        reproj_threshold=cfg.reproj_threshold,
        degenerate=True,
    )


def estimate_homography_ransac(matches: MatchSet, cfg: RansacConfig = RansacConfig()) -> InlierSet:
    """RANSAC homography estimation over matched patch centers.

    Minimal 4-point samples are fit with normalized DLT and scored by the
    count of matches whose symmetric transfer error stays within the
    threshold (ties break toward lower total error). The iteration budget
    adapts to the current inlier ratio, bounded by max_iterations. The
    best consensus set is refit with normalized DLT over all its inliers
    and the membership recomputed under the refit model. Runs below
    min_inliers come back flagged degenerate with an empty inlier set.

    Deterministic for a fixed rng_seed.
    """
    n = len(matches)
    if n < 4:
        return _degenerate_result(cfg)
    src = matches.live_points.astype(np.float64)
    dst = matches.ref_points.astype(np.float64)
    rng = np.random.default_rng(cfg.rng_seed)

    best_count = 0
    best_err_sum = np.inf
    best_mask: np.ndarray | None = None
    best_model: np.ndarray | None = None
    needed = cfg.max_iterations
    it = 0
    while it < min(cfg.max_iterations, needed):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        if _sample_degenerate(src[sample]) or _sample_degenerate(dst[sample]):
            continue
        model = fit_homography(src[sample], dst[sample])
        if model is None:
            continue
        err = symmetric_transfer_error(model, src, dst)
        if err is None:
            continue
        inliers = err <= cfg.reproj_threshold
        count = int(inliers.sum())
        err_sum = float(err[inliers].sum())
        if count > best_count or (count == best_count and err_sum < best_err_sum):
            best_count, best_err_sum = count, err_sum
            best_mask, best_model = inliers, model
            needed = _iterations_needed(count / n, cfg.confidence, cfg.max_iterations)

    if best_model is None or best_count < 4:
        return _degenerate_result(cfg)

    model, mask = best_model, best_mask
    refit = fit_homography(src[mask], dst[mask])
    if refit is not None:
        err = symmetric_transfer_error(refit, src, dst)
        if err is not None:
            model, mask = refit, err <= cfg.reproj_threshold

    if int(mask.sum()) < cfg.min_inliers:
        log.debug("consensus %d below min_inliers %d", int(mask.sum()), cfg.min_inliers)
        return _degenerate_result(cfg)

    idx = np.flatnonzero(mask)
    return InlierSet(
        model=model,
        indices=idx,
        live_cells=matches.live_cells[idx],
        ref_cells=matches.ref_cells[idx],
        live_points=matches.live_points[idx],
        ref_points=matches.ref_points[idx],
        reproj_threshold=cfg.reproj_threshold,
        degenerate=False,
    )
