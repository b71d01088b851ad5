"""Encoder-decoder surface regressor and its checkpoint format.

One image in, one GxG grid of 3D points out. The encoder is a stack of
(3x3 stride-1 conv, 4x4 stride-2 conv) pairs doubling channel width while
halving resolution; the decoder mirrors it with 4x4 stride-2 transposed
convolutions, receiving elementwise-addition skip connections from the
encoder stage at the same resolution. The head is a 3x3 convolution to 3
channels followed by a fixed bilinear resampling to the grid side. There
are no fully connected layers. Optionally a constant base surface (the
rest grid) is added, so the convolutional output is an offset field.
"""

import dataclasses
import hashlib
import io
import json
import os
import struct
import tempfile
import zlib

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError, DimensionError

CHECKPOINT_MAGIC = b"HDMC"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclasses.dataclass
class ModelConfig:
    input_side: int = 64
    input_channels: int = 3
    grid_side: int = 17
    widths: tuple = (16, 32, 64)
    skips: tuple | None = None  # (encoder_stage, decoder_stage) pairs
    activation: str = "relu"
    init: str = "he"
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if not self.widths:
            raise ConfigError("widths must name at least one encoder stage")
        stages = len(self.widths)
        if self.input_side % (1 << stages) != 0:
            raise ConfigError(
                f"input_side {self.input_side} not divisible by 2^{stages}"
            )
        if self.grid_side < 2:
            raise ConfigError("grid_side must be >= 2")
        if self.input_side < self.grid_side:
            raise ConfigError(
                f"decoder output side {self.input_side} is smaller than "
                f"grid_side {self.grid_side}"
            )
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.init not in ("he", "zeros"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        if self.skips is None:
            self.skips = self.default_skips()
        else:
            self.skips = tuple((int(e), int(d)) for e, d in self.skips)
            for e, d in self.skips:
                if not (1 <= d <= stages - 1) or e != stages - d - 1:
                    raise ConfigError(
                        f"skip pair ({e}, {d}) joins mismatched resolutions "
                        f"for {stages} stages"
                    )

    @property
    def num_stages(self):
        return len(self.widths)

    def default_skips(self):
        s = len(self.widths)
        return tuple((s - d - 1, d) for d in range(1, s))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def latent_shape(self):
        side = self.input_side >> self.num_stages
        return (self.widths[-1], side, side)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["skips"] = [list(p) for p in self.skips]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        d["skips"] = tuple(tuple(p) for p in d["skips"])
        return cls(**d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _layer_specs(cfg):
    """Parameter shapes in forward order: list of (name, kernel_shape, bias_len)."""
    specs = []
    c_in = cfg.input_channels
    for s, w in enumerate(cfg.widths):
        specs.append((f"enc{s}.pre", (w, c_in, 3, 3), w))
        specs.append((f"enc{s}.down", (w, w, 4, 4), w))
        c_in = w
    stages = cfg.num_stages
    c_prev = cfg.widths[-1]
    for d in range(1, stages + 1):
        c_out = cfg.widths[stages - 1 - d] if d < stages else cfg.widths[0]
        specs.append((f"dec{d}.up", (c_prev, c_out, 4, 4), c_out))
        c_prev = c_out
    specs.append(("head", (3, cfg.widths[0], 3, 3), 3))
    return specs


class Model:
    def __init__(self, cfg, params, base_surface=None):
        self.cfg = cfg
        self.params = params  # name -> Tensor (requires_grad)
        self.base_surface = base_surface
        self._skip_targets = {d: e for e, d in cfg.skips}

    @property
    def param_count(self):
        return sum(t.size for t in self.params.values())

    def parameters(self):
        return self.params

    def param_hash(self):
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    def _act(self, x):
        return ad.relu(x) if self.cfg.activation == "relu" else x

    def forward(self, images):
        """Regress [N, G, G, 3] surfaces from [N, 3, side, side] images in [0,1]."""
        x = images if isinstance(images, ad.Tensor) else ad.Tensor(
            np.asarray(images, dtype=self.cfg.np_dtype)
        )
        cfg = self.cfg
        expect = (cfg.input_channels, cfg.input_side, cfg.input_side)
        if x.ndim != 4 or x.shape[1:] != expect:
            raise DimensionError(
                f"expected images [N, {expect[0]}, {expect[1]}, {expect[2]}], "
                f"got {x.shape}"
            )
        if x.dtype != cfg.np_dtype:
            x = ad.Tensor(x.data.astype(cfg.np_dtype), requires_grad=x.requires_grad)
        p = self.params
        taps = {}
        for s in range(cfg.num_stages):
            x = self._act(ad.conv2d(x, p[f"enc{s}.pre.w"], 1, 1, p[f"enc{s}.pre.b"]))
            x = self._act(ad.conv2d(x, p[f"enc{s}.down.w"], 2, 1, p[f"enc{s}.down.b"]))
            taps[s] = x
        for d in range(1, cfg.num_stages + 1):
            x = ad.transposed_conv2d(x, p[f"dec{d}.up.w"], 2, 1, p[f"dec{d}.up.b"])
            enc = self._skip_targets.get(d)
            if enc is not None:
                x = ad.add(x, taps[enc])
            x = self._act(x)
        x = ad.conv2d(x, p["head.w"], 1, 1, p["head.b"])
        x = ad.bilinear_resize(x, cfg.grid_side, cfg.grid_side)
        out = ad.permute(x, (0, 2, 3, 1))
        if self.base_surface is not None:
            out = ad.add_constant(out, self.base_surface[None])
        return out

    def predict(self, images):
        with ad.no_grad():
            return self.forward(images).data

    def layer_summary(self):
        """(name, kind, output shape) per layer, input batch of 1."""
        cfg = self.cfg
        side = cfg.input_side
        rows = []
        for s, w in enumerate(cfg.widths):
            rows.append((f"enc{s}.pre", "conv2d", (w, side, side)))
            side //= 2
            rows.append((f"enc{s}.down", "conv2d", (w, side, side)))
        rows.append(("latent", "activation", cfg.latent_shape()))
        stages = cfg.num_stages
        for d in range(1, stages + 1):
            c_out = cfg.widths[stages - 1 - d] if d < stages else cfg.widths[0]
            side *= 2
            kind = "transposed_conv2d"
            if d in self._skip_targets:
                kind = "transposed_conv2d+skip_add"
            rows.append((f"dec{d}.up", kind, (c_out, side, side)))
        rows.append(("head", "conv2d", (3, side, side)))
        rows.append(("resample", "bilinear_resize", (3, cfg.grid_side, cfg.grid_side)))
        return rows


def build_model(cfg, base_surface=None):
    """Construct a model with seeded He (fan-in) or zero initialisation."""
    rng = np.random.default_rng(cfg.seed)
    dtype = cfg.np_dtype
    params = {}
    for name, kshape, bias_len in _layer_specs(cfg):
        if cfg.init == "he":
            if name.startswith("dec"):
                fan_in = kshape[0] * kshape[2] * kshape[3]  # tconv: axis 0 is input
            else:
                fan_in = kshape[1] * kshape[2] * kshape[3]
            w = rng.standard_normal(kshape) * np.sqrt(2.0 / fan_in)
        else:
            w = np.zeros(kshape)
        params[f"{name}.w"] = ad.Tensor(w.astype(dtype), requires_grad=True)
        params[f"{name}.b"] = ad.Tensor(
            np.zeros(bias_len, dtype=dtype), requires_grad=True
        )
    base = None
    if base_surface is not None:
        base = np.asarray(base_surface, dtype=dtype)
        if base.shape != (cfg.grid_side, cfg.grid_side, 3):
            raise ConfigError(
                f"base surface shape {base.shape} does not match grid "
                f"{cfg.grid_side}"
            )
    return Model(cfg, params, base)


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


def _write_record(buf, name, arr):
    arr = np.ascontiguousarray(arr)
    tag = _TAGS_BY_KIND.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for record {name!r}")
    raw = arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes()
    nb = name.encode()
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<BB", tag, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(raw)


def _read_record(f):
    head = f.read(2)
    if len(head) < 2:
        raise CheckpointError("truncated checkpoint: record header")
    (nlen,) = struct.unpack("<H", head)
    name = f.read(nlen).decode()
    meta = f.read(2)
    if len(meta) < 2:
        raise CheckpointError("truncated checkpoint: record meta")
    tag, rank = struct.unpack("<BB", meta)
    if tag not in _DTYPE_TAGS:
        raise CheckpointError(f"unknown dtype tag {tag}")
    dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    raw = f.read(count * _DTYPE_TAGS[tag].itemsize)
    if len(raw) != count * _DTYPE_TAGS[tag].itemsize:
        raise CheckpointError(f"truncated checkpoint: data of {name!r}")
    native = np.float32 if tag == 0 else np.float64
    arr = np.frombuffer(raw, dtype=_DTYPE_TAGS[tag]).reshape(dims)
    return name, arr.astype(native)  # copy: frombuffer views are read-only


def save_checkpoint(model, path, step=0, optimizer_state=None):
    """Serialize model (+ optional optimizer state) with a CRC32 footer."""
    names = list(model.params)
    blob = json.dumps(
        {
            "config": model.cfg.to_dict(),
            "config_sha": model.cfg.config_hash(),
            "step": int(step),
            "has_base": model.base_surface is not None,
            "param_order": names,
            "optim_keys": sorted(optimizer_state) if optimizer_state else [],
        },
        sort_keys=True,
    ).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name in names:
        _write_record(buf, f"param.{name}", model.params[name].data)
    if model.base_surface is not None:
        _write_record(buf, "buffer.base_surface", model.base_surface)
    if optimizer_state:
        for key in sorted(optimizer_state):
            _write_record(buf, f"optim.{key}", optimizer_state[key])
    payload = buf.getvalue()
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.write(struct.pack("<I", zlib.crc32(payload)))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect_grid_side=None, expect_input_side=None):
    """Read a checkpoint; returns (model, step, optimizer_state).

    Verifies magic, version, CRC footer, the config hash, and parameter
    shapes; ``expect_*`` let callers enforce compatibility with a dataset.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    payload, footer = data[:-4], data[-4:]
    if struct.unpack("<I", footer)[0] != zlib.crc32(payload):
        raise CheckpointError("checkpoint CRC mismatch (corrupt or truncated)")
    (blob_len,) = struct.unpack("<I", payload[8:12])
    try:
        blob = json.loads(payload[12 : 12 + blob_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config blob: {exc}") from None
    cfg = ModelConfig.from_dict(blob["config"])
    if blob.get("config_sha") != cfg.config_hash():
        raise CheckpointError("config hash mismatch")
    if expect_grid_side is not None and cfg.grid_side != expect_grid_side:
        raise CheckpointError(
            f"checkpoint grid side {cfg.grid_side} != expected {expect_grid_side}"
        )
    if expect_input_side is not None and cfg.input_side != expect_input_side:
        raise CheckpointError(
            f"checkpoint input side {cfg.input_side} != expected {expect_input_side}"
        )
    f = io.BytesIO(payload[12 + blob_len :])
    records = {}
    while f.tell() < len(payload) - 12 - blob_len:
        name, arr = _read_record(f)
        records[name] = arr
    expected = {f"param.{n}" for n in blob["param_order"]}
    if blob.get("has_base"):
        expected.add("buffer.base_surface")
    expected.update(f"optim.{k}" for k in blob.get("optim_keys", []))
    if set(records) != expected:
        raise CheckpointError("checkpoint records do not match its manifest")
    model = build_model(cfg, records.get("buffer.base_surface"))
    for name in blob["param_order"]:
        arr = records[f"param.{name}"]
        tgt = model.params[name]
        if arr.shape != tgt.data.shape:
            raise CheckpointError(
                f"record {name!r} has shape {arr.shape}, expected {tgt.data.shape}"
            )
        tgt.data = np.ascontiguousarray(arr, dtype=cfg.np_dtype)
    optim = {
        k[len("optim.") :]: v for k, v in records.items() if k.startswith("optim.")
    }
    return model, int(blob.get("step", 0)), optim
