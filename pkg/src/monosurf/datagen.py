"""Synthetic deformation states, train/test splitting, and noise.

States are generated by composing three parametric families on a flat rest
grid, each driven by low-frequency smooth trajectories of its parameters:

* cylinder bend: constant-curvature tangent profile about a moving axis;
* developable fold: a tangent step across a crease line, smoothly blended;
* wave: a small sinusoidal tangent profile on the perpendicular axis.

Bend and fold act along the grid's column direction, the wave along the
row direction. Profiles are integrated by discrete marching with exactly
unit segment length, so every grid polyline along a deformed direction
keeps its rest length to machine precision (the quasi-isometry the
training data is meant to embody). Surfaces live in the frame of the
frontal camera: x right, y down, z forward, rest plane at z = rest_depth.
"""

import dataclasses

import numpy as np

from .errors import ConfigError, ParameterError
from .geometry import SurfaceSequence

TEXTURE_NAMES = ("endoscopy", "graffiti", "clothes", "carpet")

# frontal + alternating yaw orbits around the surface centre (radians)
_POSE_YAWS = (0.0, 0.26, -0.26, 0.52, -0.52)
_LIGHTS = (
    (0.45, -0.55, 0.35),
    (-0.95, 0.55, 0.75),
    (0.95, 0.45, 0.55),
    (0.0, -1.1, 1.0),
    (-0.55, -0.85, 0.25),
)


@dataclasses.dataclass
class SceneConfig:
    num_states: int = 200
    grid_side: int = 17
    surface_side: float = 1.0
    rest_depth: float = 2.2
    image_side: int = 64
    num_poses: int = 2
    num_lights: int = 2
    camera_yaws: tuple | None = None  # radians; None = built-in orbit presets
    light_positions: tuple | None = None  # world xyz triples; None = presets
    textures: tuple = TEXTURE_NAMES
    holdout_texture: str = "carpet"
    holdout_light: int = 1
    split_period: int = 5
    split_test_len: int = 1
    shading: str = "cook_torrance"
    roughness: float = 0.3
    specular: float = 0.45
    ambient: float = 0.25
    background: tuple = (0.18, 0.18, 0.22)
    bend_max: float = 1.1  # curvature bound (1/length units)
    fold_max: float = 0.35  # fold angle bound (radians)
    wave_max: float = 0.18  # wave tangent bound (radians)
    max_step: float = 0.05  # per-vertex displacement bound between states
    texture_size: int = 96
    texture_dir: str | None = None  # optional on-disk textures by name
    seed: int = 0

    def __post_init__(self):
        self.textures = tuple(self.textures)
        if self.num_states < 2:
            raise ConfigError("num_states must be >= 2")
        if self.grid_side < 2:
            raise ConfigError("grid_side must be >= 2")
        if self.camera_yaws is not None:
            self.camera_yaws = tuple(float(y) for y in self.camera_yaws)
            if len(self.camera_yaws) != self.num_poses:
                raise ConfigError("camera_yaws length must equal num_poses")
        elif not (1 <= self.num_poses <= len(_POSE_YAWS)):
            raise ConfigError(f"num_poses must be in 1..{len(_POSE_YAWS)}")
        if self.light_positions is not None:
            self.light_positions = tuple(
                tuple(float(c) for c in p) for p in self.light_positions
            )
            if len(self.light_positions) != self.num_lights or any(
                len(p) != 3 for p in self.light_positions
            ):
                raise ConfigError("light_positions must be num_lights xyz triples")
        elif not (1 <= self.num_lights <= len(_LIGHTS)):
            raise ConfigError(f"num_lights must be in 1..{len(_LIGHTS)}")
        if not self.textures:
            raise ConfigError("need at least one texture")
        if self.holdout_texture is not None and self.holdout_texture not in self.textures:
            raise ConfigError(
                f"holdout texture {self.holdout_texture!r} not in {self.textures}"
            )
        if self.holdout_light is not None and not (
            0 <= self.holdout_light < self.num_lights
        ):
            raise ConfigError("holdout_light out of range")
        if self.split_test_len < 1 or self.split_period <= self.split_test_len:
            raise ConfigError("need split_period > split_test_len >= 1")
        if self.shading not in ("cook_torrance", "lambert"):
            raise ConfigError(f"unknown shading {self.shading!r}")
        if self.rest_depth <= 0:
            raise ConfigError("rest_depth must be positive")
        if self.image_side < 8:
            raise ConfigError("image_side must be >= 8")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["textures"] = list(self.textures)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def rest_grid(grid_side, surface_side, rest_depth):
    """Flat rest surface [G,G,3]: rows along y, columns along x."""
    half = surface_side / 2.0
    ys = np.linspace(-half, half, grid_side)
    xs = np.linspace(-half, half, grid_side)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx, yy, np.full_like(xx, rest_depth)], axis=-1)


def camera_poses(cfg):
    """World->camera extrinsics (R, C): x right, y down, z forward.

    Pose 0 is the frontal camera, whose frame is the world frame; further
    poses orbit the surface centre about the vertical axis.
    """
    centre = np.array([0.0, 0.0, cfg.rest_depth])
    yaws = cfg.camera_yaws if cfg.camera_yaws is not None else _POSE_YAWS[: cfg.num_poses]
    poses = []
    for yaw in yaws:
        cy, sy = np.cos(yaw), np.sin(yaw)
        ryaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        cam_pos = centre + ryaw @ np.array([0.0, 0.0, -cfg.rest_depth])
        fwd = centre - cam_pos
        fwd = fwd / np.linalg.norm(fwd)
        down = np.array([0.0, 1.0, 0.0])
        right = np.cross(down, fwd)
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        poses.append((rot, cam_pos))
    return poses


def light_positions(cfg):
    table = cfg.light_positions if cfg.light_positions is not None else _LIGHTS
    return [np.array(p, dtype=np.float64) for p in table[: cfg.num_lights]]


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _trajectory(rng, n, lo, hi, harmonics=3, max_cycles=3):
    """Smooth band-limited path through [lo, hi] over n steps.

    Sampled on a virtual timeline of at least 100 steps so the per-state
    parameter velocity (hence temporal smoothness) does not degrade for
    short sequences.
    """
    freqs = rng.integers(1, max_cycles + 1, size=harmonics)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=harmonics)
    amps = rng.uniform(0.3, 1.0, size=harmonics)
    t = np.arange(n) / max(n, 100)
    raw = np.zeros(n)
    for f, p, a in zip(freqs, phases, amps):
        raw += a * np.sin(2.0 * np.pi * f * t + p)
    raw /= amps.sum()  # |raw| <= 1
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * raw


def _march_profile(angles, h, centre):
    """Integrate unit-speed segments of length h with given tangent angles.

    angles[k] is the direction of the segment joining samples k and k+1;
    the profile passes through the origin at index ``centre``. Consecutive
    samples are exactly h apart.
    """
    n = len(angles) + 1
    dx = h * np.cos(angles)
    dz = h * np.sin(angles)
    x = np.zeros(n)
    z = np.zeros(n)
    x[centre + 1 :] = np.cumsum(dx[centre:])
    z[centre + 1 :] = np.cumsum(dz[centre:])
    if centre > 0:
        x[:centre] = -np.cumsum(dx[:centre][::-1])[::-1]
        z[:centre] = -np.cumsum(dz[:centre][::-1])[::-1]
    return x, z


def synthesize_deformations(cfg):
    """Temporally smooth quasi-isometric states; frame 0 conventions above.

    Raises ConfigError if the configured amplitude bounds break the 2% area
    tolerance or the per-vertex temporal step bound (they do not at the
    defaults; the check guards custom configurations).
    """
    g = cfg.grid_side
    side = cfg.surface_side
    h = side / (g - 1)
    centre = (g - 1) // 2
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_states

    kappa = _trajectory(rng, n, -cfg.bend_max, cfg.bend_max)
    axis_pos = _trajectory(rng, n, -0.25 * side, 0.25 * side)
    fold = _trajectory(rng, n, -cfg.fold_max, cfg.fold_max)
    crease = _trajectory(rng, n, -0.25 * side, 0.25 * side)
    wave_amp = _trajectory(rng, n, 0.15 * cfg.wave_max, cfg.wave_max)
    wave_phase = _trajectory(rng, n, -2.2, 2.2)
    blend_width = 0.18 * side
    wave_freq = 1.5

    mids = (np.arange(g - 1) + 0.5) * h - side / 2.0
    states = np.empty((n, g, g, 3))
    for s in range(n):
        a_row = kappa[s] * (mids - axis_pos[s]) + fold[s] * _smoothstep(
            (mids - crease[s]) / blend_width
        )
        a_col = wave_amp[s] * np.sin(
            2.0 * np.pi * wave_freq * mids / side + wave_phase[s]
        )
        x, zb = _march_profile(a_row, h, centre)
        y, zw = _march_profile(a_col, h, centre)
        states[s, :, :, 0] = (x - x.mean())[None, :]
        states[s, :, :, 1] = (y - y.mean())[:, None]
        states[s, :, :, 2] = (
            cfg.rest_depth + (zb - zb.mean())[None, :] + (zw - zw.mean())[:, None]
        )

    worst_area = _max_area_distortion(states, rest_grid(g, side, cfg.rest_depth))
    if worst_area > 0.02:
        raise ConfigError(
            f"amplitude bounds break quasi-isometry: area distortion "
            f"{worst_area:.4f} > 0.02"
        )
    if n > 1:
        step = np.linalg.norm(np.diff(states, axis=0), axis=-1).max()
        if step > cfg.max_step:
            raise ConfigError(
                f"temporal smoothness violated: max per-vertex step "
                f"{step:.4f} > {cfg.max_step}"
            )
    return SurfaceSequence(states)


def surface_area(vertices):
    """Total area of the two-triangles-per-cell surface [G,G,3]."""
    v = np.asarray(vertices, dtype=np.float64)
    a = v[:-1, :-1]
    b = v[1:, :-1]
    c = v[:-1, 1:]
    d = v[1:, 1:]
    t1 = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)
    t2 = 0.5 * np.linalg.norm(np.cross(d - b, c - b), axis=-1)
    return float(t1.sum() + t2.sum())


def _max_area_distortion(states, rest):
    rest_area = surface_area(rest)
    worst = 0.0
    for s in range(states.shape[0]):
        worst = max(worst, abs(surface_area(states[s]) - rest_area) / rest_area)
    return worst


def assign_splits(cfg):
    """Split tag per (state, texture, light, camera) sample, in index order.

    Along the state axis, the last ``split_test_len`` states of every
    ``split_period`` window are test; samples of the held-out texture or
    held-out light are test regardless of state.
    """
    period, tail = cfg.split_period, cfg.split_test_len
    tags = []
    for state in range(cfg.num_states):
        time_test = (state % period) >= period - tail
        for t_i, tex in enumerate(cfg.textures):
            tex_test = cfg.holdout_texture is not None and tex == cfg.holdout_texture
            for l_i in range(cfg.num_lights):
                light_test = cfg.holdout_light is not None and l_i == cfg.holdout_light
                for c_i in range(cfg.num_poses):
                    test = time_test or tex_test or light_test
                    tags.append("test" if test else "train")
    if "train" not in tags or "test" not in tags:
        raise ConfigError("split pattern leaves the train or test partition empty")
    return tags


def generate_dataset(cfg, path):
    """Render every (state, texture, light, camera) combination to an HDMD file.

    Ground-truth surfaces are synthesized once per state (float32) and the
    identical array is stored with every render of that state. Returns the
    sample count per split.
    """
    from . import dataset_io, render

    seq = synthesize_deformations(cfg)
    surfaces32 = seq.vertices.astype(np.float32)
    poses = camera_poses(cfg)
    lights = light_positions(cfg)
    textures = {
        name: render.resolve_texture(name, cfg.texture_size, cfg.seed, cfg.texture_dir)
        for name in cfg.textures
    }
    tags = assign_splits(cfg)

    n = cfg.num_states * len(cfg.textures) * cfg.num_lights * cfg.num_poses
    images = np.empty((n, cfg.image_side, cfg.image_side, 3), dtype=np.uint8)
    gt = np.empty((n, cfg.grid_side, cfg.grid_side, 3), dtype=np.float32)
    metas = []
    k = 0
    for state in range(cfg.num_states):
        for t_i, tex_name in enumerate(cfg.textures):
            for l_i in range(cfg.num_lights):
                for c_i in range(cfg.num_poses):
                    images[k] = render.render_frame(
                        surfaces32[state], poses[c_i], lights[l_i],
                        textures[tex_name], cfg,
                    )
                    gt[k] = surfaces32[state]
                    metas.append(
                        {
                            "state": state,
                            "texture": t_i,
                            "light": l_i,
                            "camera": c_i,
                            "split": tags[k],
                        }
                    )
                    k += 1
    cam = render.render_intrinsics(cfg.image_side)
    dataset_io.write_dataset(
        path,
        cfg.to_dict(),
        {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy},
        cfg.textures,
        metas,
        images,
        gt,
    )
    return {
        "samples": n,
        "train": tags.count("train"),
        "test": tags.count("test"),
        "states": cfg.num_states,
        "textures": len(cfg.textures),
        "lights": cfg.num_lights,
        "cameras": cfg.num_poses,
    }


def add_salt_pepper_noise(image, fraction, seed):
    """Set exactly round(fraction * pixels) distinct pixels to 0 or 255.

    Each corrupted pixel goes to black or white with probability 1/2
    (all channels). Rounding is half-up. uint8 images only.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"noise fraction must be in [0, 1], got {fraction}")
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ParameterError(f"expected a uint8 image, got dtype {img.dtype}")
    out = img.copy()
    npix = img.shape[0] * img.shape[1]
    count = int(np.floor(fraction * npix + 0.5))
    if count == 0:
        return out
    rng = np.random.default_rng(seed)
    chosen = rng.choice(npix, size=count, replace=False)
    values = rng.integers(0, 2, size=count).astype(np.uint8) * 255
    flat = out.reshape(npix, -1)
    flat[chosen] = values[:, None]
    return out
