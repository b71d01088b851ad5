"""HDMD dataset container: header, JSON metadata with an offset index, then
fixed-length records (raw 8-bit RGB image + raw little-endian float32
surface + CRC32). Supports random access to single samples without loading
the file. Writes go to a temp file and are atomically renamed, so an
interrupted run never leaves a half-written container behind.
"""

import dataclasses
import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import DatasetIOError, DimensionError

DATASET_MAGIC = b"HDMD"
DATASET_VERSION = 1


@dataclasses.dataclass(frozen=True)
class SampleMeta:
    index: int
    state: int
    texture: int
    light: int
    camera: int
    split: str


def read_dataset(path):
    """Open an HDMD container for random-access reading."""
    return DatasetReader(path)


class DatasetReader:
    """Random-access reader over an HDMD container."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self._f = open(self.path, "rb")
        try:
            head = self._f.read(12)
            if len(head) < 12 or head[:4] != DATASET_MAGIC:
                raise DatasetIOError(f"{self.path}: not an HDMD container")
            (version,) = struct.unpack("<I", head[4:8])
            if version != DATASET_VERSION:
                raise DatasetIOError(f"{self.path}: unsupported version {version}")
            (meta_len,) = struct.unpack("<I", head[8:12])
            try:
                self.meta = json.loads(self._f.read(meta_len).decode())
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise DatasetIOError(f"{self.path}: corrupt metadata: {exc}") from None
            self._records_start = 12 + meta_len
            self.image_side = int(self.meta["image_side"])
            self.grid_side = int(self.meta["grid_side"])
            self.texture_names = list(self.meta["texture_names"])
            self._offsets = self.meta["offsets"]
            self.samples = [
                SampleMeta(index=i, **entry)
                for i, entry in enumerate(self.meta["samples"])
            ]
            self._img_bytes = self.image_side * self.image_side * 3
            self._surf_bytes = self.grid_side * self.grid_side * 3 * 4
        except Exception:
            self._f.close()
            raise

    def __len__(self):
        return len(self.samples)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._f.close()

    @property
    def scene(self):
        return self.meta["scene"]

    def indices_of_split(self, split):
        return [m.index for m in self.samples if m.split == split]

    def read_sample(self, i):
        """(image uint8 [S,S,3], surface float32 [G,G,3]) for sample i."""
        if not 0 <= i < len(self.samples):
            raise DimensionError(f"sample index {i} out of range 0..{len(self)-1}")
        self._f.seek(self._records_start + self._offsets[i])
        payload = self._f.read(self._img_bytes + self._surf_bytes)
        footer = self._f.read(4)
        if len(payload) != self._img_bytes + self._surf_bytes or len(footer) != 4:
            raise DatasetIOError(f"{self.path}: truncated record {i}")
        if struct.unpack("<I", footer)[0] != zlib.crc32(payload):
            raise DatasetIOError(f"{self.path}: CRC mismatch in record {i}")
        img = np.frombuffer(payload[: self._img_bytes], dtype=np.uint8).reshape(
            self.image_side, self.image_side, 3
        )
        surf = np.frombuffer(payload[self._img_bytes :], dtype="<f4").reshape(
            self.grid_side, self.grid_side, 3
        )
        return img.copy(), surf.astype(np.float32)

    def load_split(self, split):
        """All (indices, images, surfaces) of a split, stacked in index order."""
        idx = self.indices_of_split(split)
        imgs = np.empty((len(idx), self.image_side, self.image_side, 3), np.uint8)
        surfs = np.empty((len(idx), self.grid_side, self.grid_side, 3), np.float32)
        for k, i in enumerate(idx):
            imgs[k], surfs[k] = self.read_sample(i)
        return idx, imgs, surfs


def write_dataset(path, scene_dict, intrinsics, texture_names, sample_metas,
                  images, surfaces):
    """Serialize samples into an HDMD container (atomic replace on success).

    images: uint8 [N,S,S,3]; surfaces: float32 [N,G,G,3]; sample_metas:
    list of dicts with state/texture/light/camera/split.
    """
    n = len(sample_metas)
    if images.shape[0] != n or surfaces.shape[0] != n:
        raise DimensionError("images/surfaces/metadata lengths differ")
    s_img = images.shape[1]
    g = surfaces.shape[1]
    rec_len = s_img * s_img * 3 + g * g * 3 * 4 + 4
    meta = {
        "scene": scene_dict,
        "camera_intrinsics": intrinsics,
        "image_side": int(s_img),
        "grid_side": int(g),
        "texture_names": list(texture_names),
        "num_samples": n,
        "record_length": rec_len,
        "samples": sample_metas,
        "offsets": [i * rec_len for i in range(n)],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".hdmd.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(struct.pack("<I", DATASET_VERSION))
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for i in range(n):
                payload = images[i].tobytes() + surfaces[i].astype("<f4").tobytes()
                f.write(payload)
                f.write(struct.pack("<I", zlib.crc32(payload)))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
