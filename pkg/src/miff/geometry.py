"""Planar homography estimation and the polygon geometry used by the stabilizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    GeometryError,
    InvalidArgumentError,
    NoModelError,
    NonPrincipalPowerError,
    OrientationError,
)

DET_EPS = 1e-12


def normalize_homography(H) -> np.ndarray:
    """Scale ``H`` so the bottom-right entry is 1 (left untouched if that entry is ~0)."""
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        raise GeometryError("homography has non-finite entries")
    if abs(H[2, 2]) > 1e-15:
        H = H / H[2, 2]
    return H


def check_homography(H) -> np.ndarray:
    H = normalize_homography(H)
    if H.shape != (3, 3):
        raise InvalidArgumentError("homography must be 3x3")
    if abs(np.linalg.det(H)) <= DET_EPS:
        raise GeometryError("homography is singular")
    return H


def apply_homography(H, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    hom = pts @ H[:, :2].T + H[:, 2]
    return hom[:, :2] / hom[:, 2:3]


def _hartley(pts):
    centroid = pts.mean(axis=0)
    mean_dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist < 1e-15:
        raise GeometryError("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _dlt_rows(src, dst):
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    r2 = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    A = np.stack([r1, r2], axis=-2)
    return A.reshape(*src.shape[:-2], 2 * src.shape[-2], 9)


def estimate_homography_dlt(src, dst) -> np.ndarray:
    """Normalized DLT for H with dst ~ H src. Needs at least four pairs."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise InvalidArgumentError("point sets differ in length")
    if len(src) < 4:
        raise GeometryError("DLT needs at least 4 correspondences")
    T_src, T_dst = _hartley(src), _hartley(dst)
    ns = apply_homography(T_src, src)
    nd = apply_homography(T_dst, dst)
    A = _dlt_rows(ns, nd)
    _, s, vt = np.linalg.svd(A)
    # A rank below 8 means the null space is not a single homography.
    if s[7] <= 1e-10 * s[0]:
        raise GeometryError("degenerate point configuration (rank-deficient DLT system)")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(T_dst) @ Hn @ T_src
    return check_homography(H)


def _batched_dlt(src, dst):
    """DLT on a stack of 4-point samples, shape (k, 4, 2). Returns (k, 3, 3), unnormalized."""
    A = _dlt_rows(src, dst)
    _, _, vt = np.linalg.svd(A)
    return vt[:, -1, :].reshape(-1, 3, 3)


def _transfer_errors(H, src, dst):
    """Symmetric squared transfer error for each pair under each model in H (k, 3, 3)."""
    with np.errstate(all="ignore"):
        fwd = np.einsum("kij,nj->kni", H, np.c_[src, np.ones(len(src))])
        fwd = fwd[..., :2] / fwd[..., 2:3]
        Hinv = np.linalg.pinv(H)
        bwd = np.einsum("kij,nj->kni", Hinv, np.c_[dst, np.ones(len(dst))])
        bwd = bwd[..., :2] / bwd[..., 2:3]
        err = ((fwd - dst) ** 2).sum(-1) + ((bwd - src) ** 2).sum(-1)
    return np.where(np.isfinite(err), err, np.inf)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    threshold: float = 2.0
    seed: int = 0


def ransac_homography(src, dst, config: RansacConfig = RansacConfig()):
    """Four-point RANSAC; returns (H, sorted inlier indices) with H refit on the inliers.

    Inliers are pairs whose summed squared forward and backward transfer
    error is below ``threshold**2``.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise NoModelError(f"RANSAC needs at least 4 pairs, got {n}")
    rng = np.random.default_rng(config.seed)
    samples = np.argsort(rng.random((config.iterations, n)), axis=1)[:, :4]
    T_src, T_dst = _hartley(src), _hartley(dst)
    ns, nd = apply_homography(T_src, src), apply_homography(T_dst, dst)
    Hs = _batched_dlt(ns[samples], nd[samples])
    Hs = np.linalg.inv(T_dst) @ Hs @ T_src
    err = _transfer_errors(Hs, src, dst)
    inlier_mask = err < config.threshold**2
    counts = inlier_mask.sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < 4:
        raise NoModelError("no model with at least 4 inliers")
    inliers = np.flatnonzero(inlier_mask[best])
    try:
        H = estimate_homography_dlt(src[inliers], dst[inliers])
    except GeometryError:
        H = check_homography(Hs[best])
    refit = np.flatnonzero(_transfer_errors(H[None], src, dst)[0] < config.threshold**2)
    if len(refit) >= len(inliers):
        inliers = refit
    return H, inliers


def homography_fractional_power(H, w: float) -> np.ndarray:
    """Principal power ``H**w`` of a homography, normalized; exact at w = 0 and 1."""
    if not 0.0 <= w <= 1.0:
        raise InvalidArgumentError(f"w must lie in [0, 1], got {w}")
    H = check_homography(H)
    if w == 0.0:
        return np.eye(3)
    if w == 1.0:
        return H.copy()
    det = np.linalg.det(H)
    Hn = H / np.cbrt(det)
    vals, vecs = np.linalg.eig(Hn)
    on_neg_axis = (np.abs(vals.imag) <= 1e-12 * np.abs(vals)) & (vals.real < 0)
    if np.any(on_neg_axis):
        raise NonPrincipalPowerError("eigenvalue on the negative real axis; principal power undefined")
    if np.linalg.cond(vecs) < 1e8:
        P = (vecs * vals**w) @ np.linalg.inv(vecs)
    else:
        # Defective matrices (e.g. pure translations) have no eigenbasis.
        P = scipy.linalg.fractional_matrix_power(Hn, w)
    return normalize_homography(np.real(P))


def interpolate_homography_linear(H, w: float) -> np.ndarray:
    """Entry-wise blend of identity and H; fallback when no principal power exists."""
    H = normalize_homography(H)
    return normalize_homography((1.0 - w) * np.eye(3) + w * H)


# --- polygons ---------------------------------------------------------------


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise in a y-up frame)."""
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon(subject, clip) -> list[tuple[float, float]]:
    """Sutherland-Hodgman: part of ``subject`` inside the convex ``clip`` polygon.

    ``clip`` must have positive orientation.
    """
    out = [tuple(map(float, p)) for p in subject]
    clip = [tuple(map(float, p)) for p in clip]
    for k in range(len(clip)):
        if not out:
            break
        (ax, ay), (bx, by) = clip[k], clip[(k + 1) % len(clip)]

        def side(p):
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)

        inp, out = out, []
        for i in range(len(inp)):
            cur, prev = inp[i], inp[i - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
    return out


def frame_quad(width: float, height: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])


def centered_rect(width: float, height: float, fraction: float) -> np.ndarray:
    """Axis-aligned rectangle with ``fraction`` of each frame dimension, centered."""
    mx, my = width * (1 - fraction) / 2.0, height * (1 - fraction) / 2.0
    return np.array([[mx, my], [width - mx, my], [width - mx, height - my], [mx, height - my]])


def warped_quad(H, width: float, height: float) -> np.ndarray:
    """Image of the frame outline under H; raises if H folds or flips it."""
    corners = frame_quad(width, height)
    hom = np.c_[corners, np.ones(4)] @ np.asarray(H, dtype=float).T
    if np.any(hom[:, 2] <= 0):
        raise OrientationError("frame corner mapped behind the camera")
    quad = hom[:, :2] / hom[:, 2:3]
    # The outline must stay convex with its original orientation.
    for i in range(4):
        a, b, c = quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= 0:
            raise OrientationError("warped frame is not a convex, orientation-preserving quad")
    return quad


def coverage_fraction(H, width: float, height: float, crop_rect) -> float:
    """Fraction of ``crop_rect`` covered by the frame warped with H."""
    quad = warped_quad(H, width, height)
    crop = np.asarray(crop_rect, dtype=float)
    crop_area = polygon_area(crop)
    if crop_area <= 0:
        raise InvalidArgumentError("crop rectangle has no area")
    inter = clip_polygon(crop, quad)
    return min(max(polygon_area(inter) / crop_area, 0.0), 1.0)
