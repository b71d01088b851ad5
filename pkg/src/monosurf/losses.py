"""The three training losses and the differentiable contour rasterizer.

The total energy is  w3d * E3d + wiso * Eiso + wcont * Econt  where

* E3d   averages squared Frobenius distances between predicted and true
  surface grids over frames;
* Eiso  averages unsquared Frobenius distances between each predicted frame
  and its Gaussian-smoothed copy (a smoothness prior; note: unsquared, unlike
  E3d);
* Econt compares soft rasterizations of the projected predicted and true
  grids. Projection uses the camera intrinsics, rasterization splats each
  projected point bilinearly onto a small grid and squashes the accumulated
  mass through tau(x) = max(tanh(2x), 0). The true-surface branch is held
  constant; gradients flow only through the prediction.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, ParameterError
from .geometry import SurfaceSequence, project


@dataclass
class LossConfig:
    w3d: float = 1.0
    wiso: float = 1.0
    wcont: float = 1.0
    sigma_gauss: float = 1.0
    ksize: int = 5
    raster_side: int = 99
    raster_scale: float | None = None  # image coords -> raster coords
    raster_offset: float = 0.0
    use_3d: bool = True
    use_iso: bool = True
    use_cont: bool = True

    def __post_init__(self):
        if min(self.w3d, self.wiso, self.wcont) < 0:
            raise ParameterError("loss weights must be non-negative")
        if self.ksize % 2 == 0 or self.ksize < 1:
            raise ParameterError(f"ksize must be odd, got {self.ksize}")
        if self.raster_side < 3:
            raise ParameterError(f"raster_side must be >= 3, got {self.raster_side}")

    def for_image(self, image_side):
        """Resolve the raster map for images spanning [0, image_side)."""
        return replace(self, raster_scale=self.raster_side / image_side,
                       raster_offset=0.0)

    def _require_raster(self):
        if self.raster_scale is None:
            raise ConfigError(
                "raster_scale unresolved; call LossConfig.for_image(image_side)"
            )


def _as_batch(x):
    t = x if isinstance(x, ad.Tensor) else ad.as_tensor(
        x.vertices if isinstance(x, SurfaceSequence) else x
    )
    if t.ndim != 4 or t.shape[-1] != 3:
        raise DimensionError(f"expected [F,G,G,3] surfaces, got {t.shape}")
    return t


def loss_3d(pred, gt):
    """Mean squared Frobenius distance between surface grids."""
    p = _as_batch(pred)
    g = _as_batch(gt)
    if p.shape != g.shape:
        raise DimensionError(f"shape mismatch: {p.shape} vs {g.shape}")
    frames = p.shape[0]
    return ad.frobenius_norm_sq(ad.sub(p, g)) / frames


def loss_iso(pred, cfg):
    """Mean per-frame distance between a surface and its smoothed copy."""
    p = _as_batch(pred)
    frames = p.shape[0]
    total = None
    for f in range(frames):
        sf = ad.frame(p, f)
        smoothed = ad.gaussian_blur2d(sf, cfg.sigma_gauss, cfg.ksize)
        term = ad.frobenius_norm(ad.sub(smoothed, sf))
        total = term if total is None else ad.add(total, term)
    return total / frames


def soft_rasterize(points2d, cfg):
    """Differentiable occupancy map of projected grid points.

    Points go through the affine raster map, deposit bilinear weights on
    their four neighbouring cells of a raster_side^2 grid (points mapping
    outside contribute nothing), and the summed mass passes through
    tau(x) = max(tanh(2x), 0). Raster axes follow the (u, v) projection
    axes.
    """
    cfg._require_raster()
    pts = ad.as_tensor(points2d)
    if pts.shape[-1] != 2:
        raise DimensionError(f"points2d must have trailing dim 2, got {pts.shape}")
    k = pts.size // 2
    flat = ad.reshape(pts, (k, 2))
    mapped = ad.add_scalar(ad.scale(flat, cfg.raster_scale), cfg.raster_offset)
    mass = ad.bilinear_splat(mapped, cfg.raster_side, cfg.raster_side)
    return ad.relu(ad.tanh(ad.scale(mass, 2.0)))


def loss_contour(pred, gt, cam, cfg):
    """Mean squared difference between soft-rasterized projections.

    Symmetric in value; gradients flow only through the prediction (the
    ground-truth branch is a constant).
    """
    p = _as_batch(pred)
    g = _as_batch(gt)
    if p.shape != g.shape:
        raise DimensionError(f"shape mismatch: {p.shape} vs {g.shape}")
    frames = p.shape[0]
    total = None
    for f in range(frames):
        raster_p = soft_rasterize(project(ad.frame(p, f), cam), cfg)
        with ad.no_grad():
            raster_g = soft_rasterize(project(ad.Tensor(g.data[f]), cam), cfg)
        term = ad.frobenius_norm_sq(ad.sub(raster_p, raster_g))
        total = term if total is None else ad.add(total, term)
    return total / frames


def total_loss(pred, gt, cam, cfg):
    """Weighted sum of the enabled loss terms plus a per-term breakdown.

    Disabled terms contribute exactly zero and are reported as 0.0.
    """
    parts = []
    breakdown = {"3d": 0.0, "iso": 0.0, "cont": 0.0}
    if cfg.use_3d and cfg.w3d > 0:
        term = loss_3d(pred, gt)
        breakdown["3d"] = term.item()
        parts.append(ad.scale(term, cfg.w3d))
    if cfg.use_iso and cfg.wiso > 0:
        term = loss_iso(pred, cfg)
        breakdown["iso"] = term.item()
        parts.append(ad.scale(term, cfg.wiso))
    if cfg.use_cont and cfg.wcont > 0:
        term = loss_contour(pred, gt, cam, cfg)
        breakdown["cont"] = term.item()
        parts.append(ad.scale(term, cfg.wcont))
    if not parts:
        total = ad.zeros(())
    else:
        total = parts[0]
        for extra in parts[1:]:
            total = ad.add(total, extra)
    breakdown["total"] = total.item()
    return total, breakdown


# -- reference construction for the rasterizer (translated-impulse form) ----


@dataclass
class ContourStamp:
    """Raster occupancy described as translated copies of a central impulse.

    ``basis`` is an RxR map whose only non-zero entry is a 1 at the centre;
    each point contributes the basis sampled through a flow field that
    translates the impulse to the point's raster position. Summing the K
    sampled maps reproduces bilinear splatting exactly; this form exists as
    the slow reference for tests and inspection.
    """

    basis: np.ndarray
    flows: np.ndarray  # [K, R, R, 2]

    @classmethod
    def build(cls, points_rc, raster_side):
        points_rc = np.asarray(points_rc, dtype=np.float64).reshape(-1, 2)
        r = int(raster_side)
        if r % 2 == 0:
            raise ParameterError("translated-impulse form needs an odd raster side")
        basis = np.zeros((r, r))
        centre = (r - 1) // 2
        basis[centre, centre] = 1.0
        rows, cols = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
        grid = np.stack([rows, cols], axis=-1).astype(np.float64)
        shift = points_rc - centre  # impulse centre -> point position
        flows = grid[None] - shift[:, None, None, :]
        return cls(basis=basis, flows=flows)

    def accumulate(self):
        total = np.zeros_like(self.basis)
        basis_t = ad.Tensor(self.basis)
        for k in range(self.flows.shape[0]):
            total = total + ad.grid_sample_bilinear(
                basis_t, ad.Tensor(self.flows[k])
            ).data
        return total
