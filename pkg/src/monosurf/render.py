"""Software triangle rasterizer with z-buffer and Cook-Torrance shading.

Renders the two triangles of every grid cell with per-pixel point-light
shading. Back-facing triangles are culled, so a surface turned fully away
from the camera yields a pure-background image. Everything is plain
deterministic NumPy; the per-triangle loop vectorizes over the triangle's
pixel bounding box.
"""

import hashlib
import os

import numpy as np

from .errors import ParameterError
from .geometry import CameraIntrinsics

# projection used for rendering, stated for a 256-pixel image and rescaled
# to the requested side (principal point at the image centre)
BASE_INTRINSICS = CameraIntrinsics(fx=280.0, fy=497.7, cx=128.0, cy=128.0)
BASE_IMAGE_SIDE = 256


def render_intrinsics(image_side):
    return BASE_INTRINSICS.scaled(image_side / BASE_IMAGE_SIDE)


def _grid_triangles(g):
    """Vertex index triples (consistent winding) for a GxG grid, flat ids."""
    idx = np.arange(g * g).reshape(g, g)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[:-1, 1:].ravel()
    d = idx[1:, 1:].ravel()
    t1 = np.stack([a, b, c], axis=1)
    t2 = np.stack([b, d, c], axis=1)
    return np.concatenate([t1, t2], axis=0)


def _ggx_specular(n_dot_h, n_dot_v, n_dot_l, v_dot_h, roughness, f0=0.04):
    alpha = roughness * roughness
    a2 = alpha * alpha
    denom = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    dist = a2 / np.maximum(np.pi * denom * denom, 1e-9)
    k = alpha / 2.0
    g1 = n_dot_v / np.maximum(n_dot_v * (1.0 - k) + k, 1e-9)
    g2 = n_dot_l / np.maximum(n_dot_l * (1.0 - k) + k, 1e-9)
    fresnel = f0 + (1.0 - f0) * (1.0 - v_dot_h) ** 5
    return dist * g1 * g2 * fresnel / np.maximum(4.0 * n_dot_v * n_dot_l, 1e-9)


def render_frame(surface, pose, light_world, texture, cfg):
    """Render one surface state to a uint8 [S,S,3] image.

    surface: [G,G,3] world-frame vertices; pose: (R, C) world->camera;
    light_world: point-light position; texture: [T,T,3] float albedo in
    [0,1]; cfg: SceneConfig (image side, shading model, background).
    """
    s_img = cfg.image_side
    cam = render_intrinsics(s_img)
    rot, cam_pos = pose
    verts = np.asarray(surface, dtype=np.float64).reshape(-1, 3)
    vc = (verts - cam_pos) @ rot.T  # camera frame
    light = (np.asarray(light_world, dtype=np.float64) - cam_pos) @ rot.T

    g = int(np.sqrt(len(verts)))
    uv_axis = np.linspace(0.0, 1.0, g)
    tex_v, tex_u = np.meshgrid(uv_axis, uv_axis, indexing="ij")
    tex_coords = np.stack([tex_v.ravel(), tex_u.ravel()], axis=1)  # (row, col)

    u = cam.fx * vc[:, 0] / vc[:, 2] + cam.cx
    v = cam.fy * vc[:, 1] / vc[:, 2] + cam.cy
    pts = np.stack([u, v], axis=1)

    img = np.empty((s_img, s_img, 3), dtype=np.float64)
    img[:] = np.asarray(cfg.background, dtype=np.float64)
    tex = np.asarray(texture, dtype=np.float64)

    # per-triangle precomputation, vectorized across all triangles
    tris = _grid_triangles(g)
    p = pts[tris]  # [T,3,2]
    c = vc[tris]  # [T,3,3]
    normal = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    area2 = np.linalg.norm(normal, axis=1)
    facing = (normal * c.sum(axis=1)).sum(axis=1)
    det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])
    cmin = np.clip(np.floor(p[:, :, 0].min(axis=1)).astype(int), 0, s_img)
    cmax = np.clip(np.ceil(p[:, :, 0].max(axis=1)).astype(int), 0, s_img)
    rmin = np.clip(np.floor(p[:, :, 1].min(axis=1)).astype(int), 0, s_img)
    rmax = np.clip(np.ceil(p[:, :, 1].max(axis=1)).astype(int), 0, s_img)
    counts = np.maximum(cmax - cmin, 0) * np.maximum(rmax - rmin, 0)
    keep = (area2 > 1e-15) & (facing < 0.0) & (np.abs(det) > 1e-12) & (counts > 0)
    if not keep.any():
        return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    tids = np.nonzero(keep)[0]
    counts = counts[tids]
    widths = (cmax - cmin)[tids]

    # one fragment per (triangle, bbox pixel), flattened
    frag_tri = np.repeat(np.arange(len(tids)), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(counts.sum()) - np.repeat(offsets, counts)
    frag_row = rmin[tids][frag_tri] + local // widths[frag_tri]
    frag_col = cmin[tids][frag_tri] + local % widths[frag_tri]
    t = tids[frag_tri]

    # pixel (r, c) samples image-plane point (u, v) = (c + .5, r + .5)
    pu = frag_col + 0.5
    pv = frag_row + 0.5
    du, dv = pu - p[t, 0, 0], pv - p[t, 0, 1]
    w1 = (du * (p[t, 2, 1] - p[t, 0, 1]) - (p[t, 2, 0] - p[t, 0, 0]) * dv) / det[t]
    w2 = ((p[t, 1, 0] - p[t, 0, 0]) * dv - du * (p[t, 1, 1] - p[t, 0, 1])) / det[t]
    w0 = 1.0 - w1 - w2
    inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
    if not inside.any():
        return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    t, w0, w1, w2 = t[inside], w0[inside], w1[inside], w2[inside]
    pix = frag_row[inside] * s_img + frag_col[inside]
    depth = w0 * c[t, 0, 2] + w1 * c[t, 1, 2] + w2 * c[t, 2, 2]

    # z-buffer resolve: stable sort by (pixel, depth), keep the nearest
    order = np.lexsort((depth, pix))
    pix_sorted = pix[order]
    first = np.empty(len(order), dtype=bool)
    first[0] = True
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    t, w0, w1, w2, pix = t[win], w0[win], w1[win], w2[win], pix[win]

    bary = np.stack([w0, w1, w2], axis=1)[:, :, None]  # [W,3,1]
    pos = (bary * c[t]).sum(axis=1)
    trc = (bary * tex_coords[tris[t]]).sum(axis=1)
    albedo = _sample_texture(tex, trc, tex.shape[0])
    nrm = normal[t] / area2[t][:, None]

    ldir = light[None, :] - pos
    ldir = ldir / np.maximum(np.linalg.norm(ldir, axis=1, keepdims=True), 1e-9)
    vdir = -pos / np.maximum(np.linalg.norm(pos, axis=1, keepdims=True), 1e-9)
    ndl = np.maximum((ldir * nrm).sum(axis=1), 0.0)
    color = albedo * (cfg.ambient + 0.85 * ndl)[:, None]
    if cfg.shading == "cook_torrance":
        hvec = ldir + vdir
        hvec = hvec / np.maximum(np.linalg.norm(hvec, axis=1, keepdims=True), 1e-9)
        spec = _ggx_specular(
            np.maximum((hvec * nrm).sum(axis=1), 0.0),
            np.maximum((vdir * nrm).sum(axis=1), 1e-6),
            np.maximum(ndl, 1e-6),
            np.maximum((vdir * hvec).sum(axis=1), 0.0),
            cfg.roughness,
        )
        color = color + (cfg.specular * spec * ndl)[:, None]
    img.reshape(-1, 3)[pix] = color

    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def _sample_texture(tex, rc, tside):
    """Bilinear albedo lookup at normalized (row, col) coordinates [K,2]."""
    pos = np.clip(rc, 0.0, 1.0) * (tside - 1)
    i0 = np.minimum(pos[:, 0].astype(int), tside - 2)
    j0 = np.minimum(pos[:, 1].astype(int), tside - 2)
    fi = (pos[:, 0] - i0)[:, None]
    fj = (pos[:, 1] - j0)[:, None]
    return (
        tex[i0, j0] * (1 - fi) * (1 - fj)
        + tex[i0, j0 + 1] * (1 - fi) * fj
        + tex[i0 + 1, j0] * fi * (1 - fj)
        + tex[i0 + 1, j0 + 1] * fi * fj
    )


# ---------------------------------------------------------------------------
# procedural textures
# ---------------------------------------------------------------------------


def _blur(img, passes=2):
    out = img.astype(np.float64)
    for _ in range(passes):
        out = (
            out
            + np.roll(out, 1, 0)
            + np.roll(out, -1, 0)
            + np.roll(out, 1, 1)
            + np.roll(out, -1, 1)
        ) / 5.0
    return out


def _low_freq_noise(rng, size, coarse=8, passes=3):
    base = rng.random((coarse, coarse, 3))
    reps = int(np.ceil(size / coarse))
    up = np.kron(base, np.ones((reps, reps, 1)))[:size, :size]
    return _blur(up, passes)


def load_texture_file(path):
    """Texture from disk: .npy [T,T,3] (uint8 or float in [0,1]) or raw RGB."""
    path = os.fspath(path)
    if path.endswith(".npy"):
        arr = np.load(path)
    else:
        raw = np.fromfile(path, dtype=np.uint8)
        side = int(np.sqrt(raw.size / 3))
        if side * side * 3 != raw.size:
            raise ParameterError(f"{path}: raw texture is not square RGB")
        arr = raw.reshape(side, side, 3)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] != arr.shape[1]:
        raise ParameterError(f"{path}: expected a square [T,T,3] texture")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return np.clip(arr.astype(np.float32), 0.0, 1.0)


def resolve_texture(name, size, seed, texture_dir=None):
    """Use `<texture_dir>/<name>.npy` or `.rgb` when present, else procedural."""
    if texture_dir:
        for ext in (".npy", ".rgb"):
            candidate = os.path.join(texture_dir, name + ext)
            if os.path.exists(candidate):
                return load_texture_file(candidate)
    return make_texture(name, size, seed)


def make_texture(name, size, seed):
    """Procedural stand-in albedo for one named scenario texture."""
    digest = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    rng = np.random.default_rng([seed, digest])
    if name == "endoscopy":
        base = np.array([0.72, 0.32, 0.28])
        n = _low_freq_noise(rng, size)
        tex = base[None, None] * (0.75 + 0.5 * n[..., :1])
        tex[..., 1] += 0.10 * n[..., 1]
        streaks = 0.12 * np.sin(
            np.linspace(0, 6 * np.pi, size)[:, None]
            + 4.0 * n[..., 2]
        )
        tex[..., 0] += streaks
    elif name == "graffiti":
        tex = np.full((size, size, 3), 0.85)
        for _ in range(14):
            r0, c0 = rng.integers(0, size - 8, 2)
            rh, cw = rng.integers(size // 8, size // 2, 2)
            color = rng.random(3) * 0.9 + 0.1
            tex[r0 : r0 + rh, c0 : c0 + cw] = color
        tex = 0.8 * tex + 0.2 * _low_freq_noise(rng, size)
    elif name == "clothes":
        rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        weave = 0.5 + 0.22 * np.sign(np.sin(rr * np.pi / 3) * np.sin(cc * np.pi / 3))
        base = np.array([0.30, 0.40, 0.72])
        tex = base[None, None] * weave[..., None]
        tex += 0.08 * (rng.random((size, size, 3)) - 0.5)
    elif name == "carpet":
        palette = np.array([[0.55, 0.22, 0.18], [0.20, 0.35, 0.25], [0.75, 0.65, 0.35]])
        pick = rng.integers(0, len(palette), (size, size))
        tex = palette[pick] * (0.6 + 0.8 * rng.random((size, size, 1)))
        tex = _blur(tex, passes=1)
    elif name == "white":
        tex = np.full((size, size, 3), 0.95)
    else:
        tex = _low_freq_noise(rng, size)
    return np.clip(tex, 0.0, 1.0).astype(np.float32)
