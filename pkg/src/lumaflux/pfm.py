"""PFM image I/O plus the JSON sidecar carrying colorimetry and provenance.

PFM stores float32 samples, little-endian (negative scale), rows
bottom-up. PFM has no colorimetry header, so every frame travels with a
sidecar JSON recording its color-space tag, the tool version, a config
hash, and the seed used to produce it.
"""

import hashlib
import json
import os

import numpy as np

from . import __version__
from . import colorimetry as cm
from .errors import DimensionError


def write_pfm(path, pixels):
    px = np.asarray(pixels, dtype=np.float32)
    if px.ndim != 3 or px.shape[2] != 3:
        raise DimensionError("write_pfm expects HxWx3 samples")
    h, w, _ = px.shape
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(px[::-1, :, :].astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"PF":
            raise DimensionError(f"{path}: not a 3-channel PFM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f4" if scale < 0 else ">f4")
    px = data.reshape(h, w, 3)[::-1, :, :]
    return np.ascontiguousarray(px, dtype=np.float64)


def config_hash(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def sidecar_path(frame_path):
    return os.path.splitext(frame_path)[0] + ".json"


def write_sidecar(frame_path, tag, seed=0, config=None, extra=None):
    doc = {
        "tag": tag.to_json(),
        "tool_version": __version__,
        "seed": seed,
        "config_hash": config_hash(config or {}),
    }
    if extra:
        doc.update(extra)
    with open(sidecar_path(frame_path), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def read_tagged(frame_path):
    pixels = read_pfm(frame_path)
    with open(sidecar_path(frame_path)) as fh:
        doc = json.load(fh)
    return cm.TaggedImage(pixels, cm.ColorSpaceTag.from_json(doc["tag"]))


def write_tagged(frame_path, img, seed=0, config=None, extra=None):
    write_pfm(frame_path, img.pixels)
    write_sidecar(frame_path, img.tag, seed=seed, config=config, extra=extra)
