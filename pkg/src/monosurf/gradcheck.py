"""Central finite-difference verification of every differentiable operation.

Each registered operation provides a case builder: seeded random input
arrays plus a scalar-valued function of them. The harness compares the
recorded-graph gradients against central differences (step 1e-5, 64-bit).
The relative error of a trial is the max over coordinates of
|analytic - numeric| / (|analytic| + |numeric|).

Coordinates are compared only where the denominator exceeds both the
absolute floor 1e-8 and 1e-4 times the array's largest gradient magnitude:
below that, the difference quotient at step 1e-5 is dominated by float64
cancellation noise and cannot grade agreement. Because the mask uses
|analytic| + |numeric|, a wrong gradient on either side still lands above
the floor and fails. Instances are additionally conditioned away from
non-differentiable sets (relu kinks, bilinear lattice lines) by seeded
rejection sampling; central differences are only meaningful where the
operation is differentiable.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry, losses, network
from .errors import ParameterError

STEP = 1e-5
DENOM_FLOOR = 1e-8


@dataclass
class GradcheckResult:
    op: str
    trials: int
    worst_rel: float
    tolerance: float

    @property
    def passed(self):
        return self.worst_rel < self.tolerance

    def line(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{self.op:<22} trials={self.trials:<4} worst_rel={self.worst_rel:.3e} "
            f"tol={self.tolerance:.0e}  {status}"
        )


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    den = np.abs(a) + np.abs(n)
    floor = max(DENOM_FLOOR, 1e-4 * den.max()) if den.size else DENOM_FLOOR
    mask = den > floor
    if not mask.any():
        return 0.0
    return float((np.abs(a - n)[mask] / den[mask]).max())


def _numeric_grad(fn, arrays, which, coords, step=STEP):
    """Central differences of fn(*arrays) w.r.t. arrays[which] at coords."""
    flat = arrays[which].reshape(-1)
    out = np.zeros(len(coords))
    tensors = [ad.Tensor(a) for a in arrays]  # share memory with arrays
    with ad.no_grad():
        for pos, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn(*tensors).data)
            flat[i] = orig - step
            fm = float(fn(*tensors).data)
            flat[i] = orig
            out[pos] = (fp - fm) / (2.0 * step)
    return out


def check_case(arrays, fn, rng, max_coords=None):
    """Worst relative FD error over all (or a sampled subset of) coordinates."""
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    loss.backward()
    analytic = [t.grad for t in tensors]
    worst = 0.0
    for which, arr in enumerate(arrays):
        n = arr.size
        if max_coords is not None and max_coords < n:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        numeric = _numeric_grad(fn, arrays, which, coords)
        ana = analytic[which].reshape(-1)[coords]
        worst = max(worst, relative_error(ana, numeric))
    return worst


# ---------------------------------------------------------------------------
# case builders (one per op); each returns (arrays, fn, max_coords)
# ---------------------------------------------------------------------------


def _proj_weights(rng, shape):
    w = rng.standard_normal(shape)
    return lambda t: ad.tensor_sum(ad.mul(t, ad.Tensor(w)))


def _case_conv2d(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    k = rng.standard_normal((4, 3, 3, 3))
    proj = _proj_weights(rng, (2, 4, 8, 8))

    def fn(xt, kt):
        return proj(ad.conv2d(xt, kt, stride=1, padding=1))

    return [x, k], fn, None


def _case_transposed_conv2d(rng):
    x = rng.standard_normal((2, 4, 5, 5))
    k = rng.standard_normal((4, 3, 3, 3))
    proj = _proj_weights(rng, (2, 3, 9, 9))

    def fn(xt, kt):
        return proj(ad.transposed_conv2d(xt, kt, stride=2, padding=1))

    return [x, k], fn, None


def _case_relu(rng):
    x = rng.uniform(0.05, 2.0, size=60) * rng.choice([-1.0, 1.0], size=60)
    proj = _proj_weights(rng, (60,))

    def fn(xt):
        return proj(ad.relu(xt))

    return [x], fn, None


def _case_tanh(rng):
    x = rng.uniform(-3, 3, size=60)
    proj = _proj_weights(rng, (60,))

    def fn(xt):
        return proj(ad.tanh(xt))

    return [x], fn, None


def _signed_away_from_zero(rng, shape, lo, hi):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _off_lattice(rng, shape, low, high):
    """Coordinates with fractional parts in [0.2, 0.8] (off bilinear kinks)."""
    base = rng.integers(int(np.floor(low)), int(np.ceil(high)) - 1, size=shape)
    return base + rng.uniform(0.2, 0.8, size=shape)


def _case_grid_sample(rng):
    src = rng.standard_normal((5, 5))
    flow = np.stack(
        [_off_lattice(rng, (4, 4), 0, 4), _off_lattice(rng, (4, 4), 0, 4)], axis=-1
    )
    proj = _proj_weights(rng, (4, 4))

    def fn(st, ft):
        return proj(ad.grid_sample_bilinear(st, ft))

    return [src, flow.astype(np.float64)], fn, None


def _case_gaussian_blur2d(rng):
    x = rng.standard_normal((7, 7, 3))
    sigma = rng.uniform(0.6, 1.6)
    proj = _proj_weights(rng, (7, 7, 3))

    def fn(xt):
        return proj(ad.gaussian_blur2d(xt, sigma, 5))

    return [x], fn, None


def _case_bilinear_resize(rng):
    x = rng.standard_normal((1, 2, 7, 9))
    proj = _proj_weights(rng, (1, 2, 5, 6))

    def fn(xt):
        return proj(ad.bilinear_resize(xt, 5, 6))

    return [x], fn, None


def _case_frobenius_norm(rng):
    # away from zero: both the norm and each coordinate's gradient
    x = _signed_away_from_zero(rng, (4, 5), 0.2, 1.5)

    def fn(xt):
        return ad.frobenius_norm(xt)

    return [x], fn, None


def _case_frobenius_norm_sq(rng):
    x = _signed_away_from_zero(rng, (4, 5), 0.2, 1.5)

    def fn(xt):
        return ad.frobenius_norm_sq(xt)

    return [x], fn, None


def _rejection_guard(tries, what):
    if tries > 10000:
        raise RuntimeError(f"rejection sampling for {what} failed to converge")


def _case_backward_chain(rng):
    """relu composed with conv2d, kept away from the relu kink."""
    tries = 0
    while True:
        _rejection_guard(tries := tries + 1, "backward_chain")
        x = rng.standard_normal((1, 2, 6, 6))
        k = rng.standard_normal((3, 2, 3, 3))
        pre = ad.conv2d(ad.Tensor(x), ad.Tensor(k), stride=1, padding=0)
        if np.abs(pre.data).min() > 1e-3:
            break
    proj = _proj_weights(rng, (1, 3, 4, 4))

    def fn(xt, kt):
        return proj(ad.relu(ad.conv2d(xt, kt, stride=1, padding=0)))

    return [x, k], fn, None


_CAM = geometry.CameraIntrinsics(fx=280.0, fy=497.7, cx=128.0, cy=128.0)
_ORTHO = geometry.CameraIntrinsics(
    fx=1.0, fy=1.0, cx=32.0, cy=32.0, mode="orthographic", ortho_scale=40.0
)


def _case_project_perspective(rng):
    pts = np.stack(
        [
            rng.uniform(-1, 1, (4, 4)),
            rng.uniform(-1, 1, (4, 4)),
            rng.uniform(0.8, 3.0, (4, 4)),
        ],
        axis=-1,
    )
    proj = _proj_weights(rng, (4, 4, 2))

    def fn(pt):
        return proj(geometry.project_perspective(pt, _CAM))

    return [pts], fn, None


def _case_project_orthographic(rng):
    pts = rng.standard_normal((4, 4, 3))
    proj = _proj_weights(rng, (4, 4, 2))

    def fn(pt):
        return proj(geometry.project_orthographic(pt, _ORTHO))

    return [pts], fn, None


def _case_loss_3d(rng):
    pred = rng.standard_normal((2, 5, 5, 3))
    gt = rng.standard_normal((2, 5, 5, 3))

    def fn(pt):
        return losses.loss_3d(pt, ad.Tensor(gt))

    return [pred], fn, None


_LOSS_CFG = losses.LossConfig(raster_side=15).for_image(15)


def _case_loss_iso(rng):
    pred = rng.standard_normal((2, 7, 7, 3))

    def fn(pt):
        return losses.loss_iso(pt, _LOSS_CFG)

    return [pred], fn, None


def _raster_coords_off_lattice(points2d, cfg, margin=0.02):
    r = np.asarray(points2d) * cfg.raster_scale + cfg.raster_offset
    frac = r - np.floor(r)
    return bool((np.abs(frac - 0.5) < 0.5 - margin).all())


def _case_soft_rasterize(rng):
    cfg = _LOSS_CFG
    tries = 0
    while True:
        _rejection_guard(tries := tries + 1, "soft_rasterize points")
        pts = _off_lattice(rng, (4, 4, 2), 1, 13) / cfg.raster_scale
        if _raster_coords_off_lattice(pts, cfg):
            break
    proj = _proj_weights(rng, (15, 15))

    def fn(pt):
        return proj(losses.soft_rasterize(pt, cfg))

    return [pts], fn, None


def _surface_pair_off_lattice(rng, cam, cfg, frames=1, side=5):
    """Random surface batches whose projections avoid raster lattice lines.

    The margin (0.005 raster cells) is ~50x the raster-space motion of a
    1e-5 finite-difference step through this projection, so no central
    difference straddles a bilinear kink.
    """
    base = np.stack(
        [
            *np.meshgrid(
                np.linspace(-0.4, 0.4, side),
                np.linspace(-0.4, 0.4, side),
                indexing="ij",
            ),
            np.full((side, side), 2.2),
        ],
        axis=-1,
    )
    tries = 0
    while True:
        _rejection_guard(tries := tries + 1, "surface pair off lattice")
        pred = base[None] + rng.normal(0, 0.08, (frames, side, side, 3))
        gt = base[None] + rng.normal(0, 0.08, (frames, side, side, 3))
        ok = True
        for f in range(frames):
            for surf in (pred[f], gt[f]):
                with ad.no_grad():
                    p2 = geometry.project(ad.Tensor(surf), cam).data
                if not _raster_coords_off_lattice(p2, cfg, margin=0.005):
                    ok = False
        if ok:
            return pred, gt


_CAM_SMALL = geometry.CameraIntrinsics(fx=17.5, fy=31.1, cx=8.0, cy=8.0)
_CFG_SMALL = losses.LossConfig(raster_side=15).for_image(16)


def _case_loss_contour(rng):
    pred, gt = _surface_pair_off_lattice(rng, _CAM_SMALL, _CFG_SMALL)

    def fn(pt):
        return losses.loss_contour(pt, ad.Tensor(gt), _CAM_SMALL, _CFG_SMALL)

    return [pred], fn, None


def _case_total_loss(rng):
    pred, gt = _surface_pair_off_lattice(rng, _CAM_SMALL, _CFG_SMALL)

    def fn(pt):
        return losses.total_loss(pt, ad.Tensor(gt), _CAM_SMALL, _CFG_SMALL)[0]

    return [pred], fn, None


def _case_network(rng):
    """End-to-end tiny model: gradient w.r.t. every parameter and the input.

    Some weight draws leave a pre-activation pinned (near) zero for every
    input, so both the input and, if needed, the model are resampled until
    all relu arguments clear the finite-difference step.
    """
    model_tries = 0
    while True:
        _rejection_guard(model_tries := model_tries + 1, "network instance")
        cfg = network.ModelConfig(
            input_side=16, grid_side=5, widths=(4, 8), seed=int(rng.integers(1 << 31))
        )
        model = network.build_model(cfg)
        names = sorted(model.params)
        x = None
        for _ in range(25):
            candidate = rng.random((2, 3, 16, 16))
            out = model.forward(candidate)
            pre_acts = [
                t.node.parents[0].data
                for t in ad.trace(out)
                if t.node is not None and t.node.op == "relu"
            ]
            if min(np.abs(a).min() for a in pre_acts) > 1e-4:
                x = candidate
                break
        if x is not None:
            break
    proj = _proj_weights(rng, (2, 5, 5, 3))
    arrays = [model.params[n].data.copy() for n in names] + [x]

    def fn(*tensors):
        for n, t_ in zip(names, tensors[:-1]):
            model.params[n] = t_
        return proj(model.forward(tensors[-1]))

    return arrays, fn, 20


@dataclass
class OpCheck:
    name: str
    build: callable
    tolerance: float


_REGISTRY = [
    OpCheck("conv2d", _case_conv2d, 1e-6),
    OpCheck("transposed_conv2d", _case_transposed_conv2d, 1e-6),
    OpCheck("relu", _case_relu, 1e-6),
    OpCheck("tanh", _case_tanh, 1e-6),
    OpCheck("grid_sample_bilinear", _case_grid_sample, 1e-5),
    OpCheck("gaussian_blur2d", _case_gaussian_blur2d, 1e-5),
    OpCheck("bilinear_resize", _case_bilinear_resize, 1e-6),
    OpCheck("frobenius_norm", _case_frobenius_norm, 1e-7),
    OpCheck("frobenius_norm_sq", _case_frobenius_norm_sq, 1e-7),
    OpCheck("backward_chain", _case_backward_chain, 1e-6),
    OpCheck("project_perspective", _case_project_perspective, 1e-6),
    OpCheck("project_orthographic", _case_project_orthographic, 1e-6),
    OpCheck("soft_rasterize", _case_soft_rasterize, 1e-5),
    OpCheck("loss_3d", _case_loss_3d, 1e-6),
    OpCheck("loss_iso", _case_loss_iso, 1e-5),
    OpCheck("loss_contour", _case_loss_contour, 1e-4),
    OpCheck("total_loss", _case_total_loss, 1e-4),
    OpCheck("network", _case_network, 1e-4),
]
_BY_NAME = {c.name: c for c in _REGISTRY}


def available_ops():
    return [c.name for c in _REGISTRY]


def run_check(name, trials=100, seed=0):
    """Run one op's finite-difference suite; returns a GradcheckResult."""
    try:
        check = _BY_NAME[name]
    except KeyError:
        raise ParameterError(
            f"unknown gradcheck op {name!r}; known: {', '.join(available_ops())}"
        ) from None
    rng = np.random.default_rng(seed + 7919 * (1 + _REGISTRY.index(check)))
    worst = 0.0
    for _ in range(trials):
        arrays, fn, max_coords = check.build(rng)
        worst = max(worst, check_case(arrays, fn, rng, max_coords))
    return GradcheckResult(name, trials, worst, check.tolerance)


def run_all(trials=100, seed=0):
    return [run_check(name, trials=trials, seed=seed) for name in available_ops()]
