"""Optimization loop, evaluation reports, noise sweeps, and loss ablations."""

import dataclasses
import time

import numpy as np

from . import autodiff as ad
from .datagen import add_salt_pepper_noise, rest_grid
from .errors import (
    ConfigError,
    DegenerateDepthError,
    ParameterError,
    TrainingDivergedError,
)
from .geometry import CameraIntrinsics, e3d_metric, mean_laplacian_magnitude
from .losses import LossConfig, total_loss
from .network import build_model

TIMING_METHOD = (
    "mean wall-clock per frame of the forward pass over the evaluated split, "
    "steady state (first batch excluded when more than one), I/O and metric "
    "computation excluded"
)


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"  # or "sgd_momentum"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # off by default
    lr_decay: float = 1.0  # per-epoch multiplier, 1.0 = no schedule
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    eval_period: int = 0  # epochs between mid-train test evaluations; 0 = off
    seed: int = 0
    precision: str = "float32"
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        # lr == 0 is the documented null update; negatives are rejected
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_period < 0:
            raise ConfigError("eval_period must be >= 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")


class Adam:
    """Per-parameter adaptive steps with first/second moment decay."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key in sorted(self.params):
            p = self.params[key]
            g = p.grad.astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            mhat = self.m[key] / (1 - b1**self.t)
            vhat = self.v[key] / (1 - b2**self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self):
        out = {"t": np.array([float(self.t)])}
        for key in self.params:
            out[f"m/{key}"] = self.m[key]
            out[f"v/{key}"] = self.v[key]
        return out


class SGDMomentum:
    def __init__(self, params, lr=1e-3, momentum=0.9, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.vel = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        for key in sorted(self.params):
            p = self.params[key]
            g = p.grad.astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.vel[key] = self.momentum * self.vel[key] + g
            p.data = p.data - self.lr * self.vel[key]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self):
        return {f"vel/{k}": v for k, v in self.vel.items()}


def make_optimizer(model, cfg):
    if cfg.optimizer == "adam":
        return Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                    cfg.weight_decay)
    return SGDMomentum(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)


def dataset_camera(dataset):
    k = dataset.meta["camera_intrinsics"]
    return CameraIntrinsics(fx=k["fx"], fy=k["fy"], cx=k["cx"], cy=k["cy"])


def base_surface_of(dataset):
    scene = dataset.scene
    return rest_grid(
        scene["grid_side"], scene["surface_side"], scene["rest_depth"]
    )


def _images_to_input(imgs_u8, dtype):
    return np.ascontiguousarray(
        imgs_u8.transpose(0, 3, 1, 2).astype(dtype) / dtype(255.0)
    )


def train(model, dataset, cfg, log=None):
    """Optimize the model on the dataset's train split.

    Deterministic for a fixed (seed, config, dataset); returns the model and
    a per-epoch history of the total loss and its per-term breakdown. A
    non-finite loss aborts with a diagnostic naming the epoch and batch.
    """
    idx, imgs_u8, surfs = dataset.load_split("train")
    if not idx:
        raise ConfigError("dataset has an empty train split")
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    images = _images_to_input(imgs_u8, dtype)
    targets = surfs.astype(dtype)
    cam = dataset_camera(dataset)
    loss_cfg = cfg.loss.for_image(dataset.image_side)
    optimizer = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(idx)
    history = []
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        sums = {"total": 0.0, "3d": 0.0, "iso": 0.0, "cont": 0.0}
        batches = 0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            pred = model.forward(ad.Tensor(images[sel]))
            try:
                loss, breakdown = total_loss(
                    pred, ad.Tensor(targets[sel]), cam, loss_cfg
                )
            except DegenerateDepthError as exc:
                raise TrainingDivergedError(
                    f"degenerate depth at epoch {epoch}, batch {batches} "
                    f"(samples {sel.tolist()}): {exc}"
                ) from None
            if not np.isfinite(breakdown["total"]):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batches} "
                    f"(samples {sel.tolist()})"
                )
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            for key in sums:
                sums[key] += breakdown.get(key if key != "total" else "total", 0.0)
            batches += 1
        row = {
            "epoch": epoch,
            "loss": sums["total"] / batches,
            "loss_3d": sums["3d"] / batches,
            "loss_iso": sums["iso"] / batches,
            "loss_cont": sums["cont"] / batches,
        }
        if cfg.eval_period and (epoch + 1) % cfg.eval_period == 0:
            rep = evaluate(model, dataset, split="test", with_loss=False)
            row["e3d_test"] = rep.e3d
        history.append(row)
        if log is not None:
            log(row)
        if cfg.lr_decay != 1.0:
            lr *= cfg.lr_decay
            optimizer.lr = lr
    return model, history


@dataclasses.dataclass
class GroupStats:
    e3d: float
    sigma: float
    count: int


@dataclasses.dataclass
class EvalReport:
    split: str
    n_frames: int
    e3d: float
    sigma: float
    per_texture: dict
    per_light: dict
    loss_breakdown: dict
    mean_laplacian: float
    ms_per_frame: float
    timing_method: str
    align: bool
    per_frame: np.ndarray

    def table_rows(self):
        rows = [
            {
                "group": "overall",
                "e3d": self.e3d,
                "sigma": self.sigma,
                "count": self.n_frames,
            }
        ]
        for name, st in self.per_texture.items():
            rows.append(
                {"group": f"texture:{name}", "e3d": st.e3d, "sigma": st.sigma,
                 "count": st.count}
            )
        for lid, st in self.per_light.items():
            rows.append(
                {"group": f"light:{lid}", "e3d": st.e3d, "sigma": st.sigma,
                 "count": st.count}
            )
        return rows


def _group_stats(terms, keys):
    out = {}
    for key in sorted(set(keys)):
        vals = terms[[k == key for k in keys]]
        out[key] = GroupStats(float(vals.mean()), float(vals.std()), len(vals))
    return out


def evaluate(model, dataset, split="test", align=True, batch_size=32,
             noise_fraction=0.0, noise_seed=0, with_loss=True):
    """Forward the whole split, compute per-frame aligned e3d and groupings.

    The model is never mutated. Inference time is the steady-state mean
    forward wall time per frame (see TIMING_METHOD).
    """
    idx, imgs_u8, surfs = dataset.load_split(split)
    if not idx:
        raise ConfigError(f"dataset has an empty {split!r} split")
    if noise_fraction:
        base_seed = list(noise_seed) if isinstance(noise_seed, (list, tuple)) else [noise_seed]
        for k in range(len(imgs_u8)):
            imgs_u8[k] = add_salt_pepper_noise(
                imgs_u8[k], noise_fraction, [*base_seed, idx[k]]
            )
    model_cfg = getattr(model, "cfg", None)
    dtype = model_cfg.np_dtype if model_cfg is not None else np.float32
    images = _images_to_input(imgs_u8, dtype)
    metas = [dataset.samples[i] for i in idx]
    n = len(idx)

    preds = np.empty((n, dataset.grid_side, dataset.grid_side, 3), dtype=np.float64)
    batch_times = []
    for start in range(0, n, batch_size):
        chunk = images[start : start + batch_size]
        t0 = time.perf_counter()
        out = model.predict(chunk)
        batch_times.append((time.perf_counter() - t0, len(chunk)))
        preds[start : start + batch_size] = out
    timed = batch_times[1:] if len(batch_times) > 1 else batch_times
    ms_per_frame = 1e3 * sum(t for t, _ in timed) / max(sum(c for _, c in timed), 1)

    _, _, terms = e3d_metric(preds, surfs.astype(np.float64), align=align)
    e3d = float(terms.mean())
    sigma = float(terms.std())
    tex_names = [dataset.texture_names[m.texture] for m in metas]
    light_ids = [m.light for m in metas]

    breakdown = {}
    if with_loss:
        cam = dataset_camera(dataset)
        loss_cfg = LossConfig().for_image(dataset.image_side)
        sums = {"total": 0.0, "3d": 0.0, "iso": 0.0, "cont": 0.0}
        try:
            with ad.no_grad():
                for start in range(0, n, batch_size):
                    sel = slice(start, start + batch_size)
                    _, part = total_loss(
                        ad.Tensor(preds[sel]),
                        ad.Tensor(surfs[sel].astype(np.float64)),
                        cam,
                        loss_cfg,
                    )
                    weight = len(preds[sel]) / n
                    for key in sums:
                        sums[key] += part[key] * weight
            breakdown = sums
        except DegenerateDepthError:
            # losses undefined for predictions behind the camera; the e3d
            # metric itself is still meaningful
            breakdown = {k: float("nan") for k in sums}

    lap = float(
        np.mean([mean_laplacian_magnitude(preds[k]) for k in range(n)])
    )
    return EvalReport(
        split=split,
        n_frames=n,
        e3d=e3d,
        sigma=sigma,
        per_texture=_group_stats(terms, tex_names),
        per_light=_group_stats(terms, light_ids),
        loss_breakdown=breakdown,
        mean_laplacian=lap,
        ms_per_frame=float(ms_per_frame),
        timing_method=TIMING_METHOD,
        align=align,
        per_frame=terms,
    )


def noise_sweep(model, dataset, fractions, seed, split="test", align=True):
    """e3d of the split under increasing salt-pepper corruption."""
    fracs = list(fractions)
    if any(not 0.0 <= f <= 1.0 for f in fracs):
        raise ParameterError("noise fractions must lie in [0, 1]")
    if fracs != sorted(fracs):
        raise ParameterError("noise fractions must be sorted ascending")
    rows = []
    for i, f in enumerate(fracs):
        rep = evaluate(
            model, dataset, split=split, align=align,
            noise_fraction=f, noise_seed=[seed, i], with_loss=False,
        )
        rows.append({"fraction": f, "e3d": rep.e3d, "sigma": rep.sigma})
    return rows


_COMBO_FLAGS = {
    "3d": ("use_3d",),
    "iso": ("use_iso",),
    "cont": ("use_cont",),
}


def loss_config_for_combo(base, combo):
    """LossConfig with exactly the named terms enabled ('3d', 'iso', 'cont')."""
    names = set(combo)
    unknown = names - set(_COMBO_FLAGS)
    if unknown:
        raise ConfigError(f"unknown loss terms {sorted(unknown)}")
    if "3d" not in names:
        raise ConfigError("every loss combination must include the 3d term")
    return dataclasses.replace(
        base,
        use_3d=True,
        use_iso="iso" in names,
        use_cont="cont" in names,
    )


def combo_label(combo):
    order = {"3d": 0, "cont": 1, "iso": 2}
    return "+".join(sorted(set(combo), key=lambda n: order[n]))


def ablation_run(dataset, combos, train_cfg, model_cfg, base_surface=None,
                 split="test", log=None):
    """Train one model per loss combination from identical initial weights.

    Returns one row per combo with the evaluated e3d, sigma, and the mean
    Laplacian magnitude of its predictions, plus the shared init hash.
    """
    rows = []
    init_hash = None
    for combo in combos:
        model = build_model(model_cfg, base_surface)
        if init_hash is None:
            init_hash = model.param_hash()
        elif model.param_hash() != init_hash:
            raise ConfigError("ablation models must start from identical weights")
        cfg = dataclasses.replace(
            train_cfg, loss=loss_config_for_combo(train_cfg.loss, combo)
        )
        _, history = train(model, dataset, cfg, log=log)
        rep = evaluate(model, dataset, split=split, with_loss=False)
        rows.append(
            {
                "combo": combo_label(combo),
                "e3d": rep.e3d,
                "sigma": rep.sigma,
                "mean_laplacian": rep.mean_laplacian,
                "final_loss": history[-1]["loss"],
                "init_hash": init_hash,
            }
        )
    return rows
