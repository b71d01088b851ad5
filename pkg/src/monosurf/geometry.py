"""Surfaces, cameras, projection, rigid alignment, and the e3d metric."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DegeneracyError, DegenerateDepthError, DimensionError, ParameterError


@dataclass
class SurfaceSequence:
    """F frames of GxG vertex grids, coordinates in camera-space units."""

    vertices: np.ndarray  # [F, G, G, 3]

    def __post_init__(self):
        v = np.asarray(self.vertices)
        if v.ndim != 4 or v.shape[-1] != 3 or v.shape[1] != v.shape[2]:
            raise DimensionError(f"expected [F,G,G,3] vertices, got {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 2:
            raise ParameterError(f"need F >= 1 and G >= 2, got {v.shape}")
        if not np.isfinite(v).all():
            raise ParameterError("surface coordinates must be finite")
        self.vertices = v

    @property
    def frames(self):
        return self.vertices.shape[0]

    @property
    def grid_side(self):
        return self.vertices.shape[1]

    @classmethod
    def single(cls, surface):
        return cls(np.asarray(surface)[None])


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    mode: str = "perspective"
    ortho_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("perspective", "orthographic"):
            raise ParameterError(f"unknown camera mode {self.mode!r}")
        if self.mode == "perspective" and (self.fx <= 0 or self.fy <= 0):
            raise ParameterError("focal lengths must be positive")
        if self.mode == "orthographic" and self.ortho_scale <= 0:
            raise ParameterError("ortho_scale must be positive")

    def scaled(self, s):
        """Intrinsics for an image uniformly rescaled by s."""
        return CameraIntrinsics(
            self.fx * s, self.fy * s, self.cx * s, self.cy * s,
            self.mode, self.ortho_scale * s,
        )


@dataclass
class RigidAlignment:
    rotation: np.ndarray  # 3x3, proper
    translation: np.ndarray  # 3
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise DimensionError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ParameterError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise ParameterError("rotation determinant must be +1")
        if self.scale <= 0:
            raise ParameterError("scale must be positive")
        self.rotation = r
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation


def project_perspective(points, cam):
    """Pinhole projection (u, v) = (fx x/z + cx, fy y/z + cy); differentiable.

    Rejects non-positive depths: a batch containing such a point cannot be
    projected and the caller is expected to abort with the diagnostic.
    """
    pts = ad.as_tensor(points)
    if pts.shape[-1] != 3:
        raise DimensionError(f"points must have trailing dim 3, got {pts.shape}")
    x, y, z = pts.data[..., 0], pts.data[..., 1], pts.data[..., 2]
    if not (z > 0).all():  # also catches NaN depths
        raise DegenerateDepthError(
            f"non-positive depth in projection (min z = {z.min():.6g})"
        )
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    out = np.stack([u, v], axis=-1)

    def rule(g):
        gu, gv = g[..., 0], g[..., 1]
        gx = gu * (cam.fx / z)
        gy = gv * (cam.fy / z)
        gz = -gu * cam.fx * x / (z * z) - gv * cam.fy * y / (z * z)
        return (np.stack([gx, gy, gz], axis=-1).astype(pts.dtype),)

    return ad.make_op("project_perspective", out.astype(pts.dtype), (pts,), rule)


def project_orthographic(points, cam):
    """(u, v) = (s x + cx, s y + cy); depth-independent, differentiable."""
    pts = ad.as_tensor(points)
    if pts.shape[-1] != 3:
        raise DimensionError(f"points must have trailing dim 3, got {pts.shape}")
    s = cam.ortho_scale
    u = s * pts.data[..., 0] + cam.cx
    v = s * pts.data[..., 1] + cam.cy
    out = np.stack([u, v], axis=-1)

    def rule(g):
        gx = g[..., 0] * s
        gy = g[..., 1] * s
        gz = np.zeros_like(gx)
        return (np.stack([gx, gy, gz], axis=-1).astype(pts.dtype),)

    return ad.make_op("project_orthographic", out.astype(pts.dtype), (pts,), rule)


def project(points, cam):
    if cam.mode == "perspective":
        return project_perspective(points, cam)
    return project_orthographic(points, cam)


def procrustes_align(pred, gt, allow_scale=False):
    """Least-squares rigid (optionally similarity) registration of pred onto gt.

    Returns the alignment and the aligned copy of pred. The rotation is
    always proper: if the best orthogonal map is a reflection, the sign of
    the smallest singular vector is flipped.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if p.shape != g.shape:
        raise DimensionError(f"point sets differ: {p.shape} vs {g.shape}")
    if not (np.isfinite(p).all() and np.isfinite(g).all()):
        raise ParameterError("procrustes inputs must be finite")
    pm = p.mean(axis=0)
    gm = g.mean(axis=0)
    pc = p - pm
    gc = g - gm
    if float((gc * gc).sum()) < 1e-24:
        raise DegeneracyError("ground-truth point set has no spatial extent")
    h = pc.T @ gc
    u, s, vt = np.linalg.svd(h)
    d = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    if allow_scale:
        denom = float((pc * pc).sum())
        if denom < 1e-24:
            raise DegeneracyError("prediction has no spatial extent to scale")
        scale = float((s * np.array([1.0, 1.0, d])).sum()) / denom
    else:
        scale = 1.0
    trans = gm - scale * (rot @ pm)
    align = RigidAlignment(rot, trans, scale)
    aligned = align.apply(p).reshape(np.asarray(pred).shape)
    return align, aligned


def e3d_metric(pred, gt, align=True, allow_scale=False):
    """Per-frame normalized 3D error, averaged over frames.

    Each frame contributes ||gt_f - pred_f||_F / ||gt_f||_F, computed after
    rigid Procrustes alignment of the prediction when align is true. Returns
    (mean, population standard deviation, per-frame terms).
    """
    pv = pred.vertices if isinstance(pred, SurfaceSequence) else np.asarray(pred)
    gv = gt.vertices if isinstance(gt, SurfaceSequence) else np.asarray(gt)
    if pv.shape != gv.shape:
        raise DimensionError(f"shape mismatch: {pv.shape} vs {gv.shape}")
    terms = np.empty(pv.shape[0], dtype=np.float64)
    for f in range(pv.shape[0]):
        gn = float(np.linalg.norm(gv[f]))
        if gn == 0.0:
            raise DegeneracyError(f"frame {f}: ground truth has zero norm")
        pf = pv[f]
        if align:
            _, pf = procrustes_align(pf, gv[f], allow_scale=allow_scale)
        terms[f] = float(np.linalg.norm(gv[f] - pf)) / gn
    return float(terms.mean()), float(terms.std()), terms


def mean_laplacian_magnitude(surface):
    """Mean 5-point graph-Laplacian magnitude over interior grid vertices.

    Zero for any affine (in particular planar uniformly spaced) grid;
    invariant to translations. Diagnostic for how smooth a predicted
    surface is.
    """
    v = np.asarray(surface, dtype=np.float64)
    if v.ndim != 3 or v.shape[-1] != 3:
        raise DimensionError(f"expected [G,G,3], got {v.shape}")
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise ParameterError("grid must be at least 3x3")
    lap = (
        4.0 * v[1:-1, 1:-1]
        - v[:-2, 1:-1]
        - v[2:, 1:-1]
        - v[1:-1, :-2]
        - v[1:-1, 2:]
    )
    return float(np.linalg.norm(lap, axis=-1).mean())
