"""Image and model persistence plus dataset construction.

Images travel as portable graymaps (P2/P5, 8 or 16 bit) or as the plain-text
FGRID float format, which round-trips doubles exactly. Models are stored in
a versioned human-readable text format with hex-float reals, so a round trip
is bit-exact.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import DiffusionModel, StageParams
from .imageops import as_image
from .influence import RbfGrid
from .speckle import NoisyPair, SpeckleConfig, sample_speckle

logger = logging.getLogger(__name__)

MODEL_MAGIC = "specklediff-model"
MODEL_FORMAT_VERSION = 1

IMAGE_SUFFIXES = (".pgm", ".fgrid")


# ---------------------------------------------------------------- images

def load_image(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"FGRID"):
        return _parse_fgrid(data.decode("ascii"), path)
    if data.startswith(b"P2") or data.startswith(b"P5"):
        return _parse_pgm(data, path)
    raise ValueError(f"{path}: unsupported image format")


def save_image(img, path, peak: float = 255.0) -> None:
    img = as_image(img)
    path = Path(path)
    if path.suffix == ".fgrid":
        save_fgrid(img, path)
    elif path.suffix == ".pgm":
        save_pgm(img, path, peak)
    else:
        raise ValueError(f"{path}: unsupported image suffix")


def _parse_fgrid(text: str, path) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 3 or tokens[0] != "FGRID":
        raise ValueError(f"{path}: malformed FGRID header")
    try:
        w, h = int(tokens[1]), int(tokens[2])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed FGRID header") from exc
    vals = tokens[3:]
    if len(vals) != w * h:
        raise ValueError(f"{path}: expected {w * h} values, got {len(vals)}")
    arr = np.array([float(v) for v in vals], dtype=np.float64)
    return arr.reshape(h, w)


def save_fgrid(img: np.ndarray, path) -> None:
    h, w = img.shape
    lines = [f"FGRID {w} {h}"]
    for row in img:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_pgm(data: bytes, path) -> np.ndarray:
    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated graymap header")
        tokens.append(data[start:pos])
    magic = tokens[0].decode("ascii")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed graymap header") from exc
    if w < 1 or h < 1 or maxval < 1 or maxval > 65535:
        raise ValueError(f"{path}: unsupported graymap geometry/depth")
    if magic == "P2":
        vals = data[pos:].split()
        if len(vals) != w * h:
            raise ValueError(f"{path}: truncated graymap data")
        arr = np.array([int(v) for v in vals], dtype=np.float64)
    else:
        pos += 1  # single whitespace after maxval
        raw = data[pos:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(raw) < need:
            raise ValueError(f"{path}: truncated graymap data")
        arr = np.frombuffer(raw[:need], dtype=dtype).astype(np.float64)
    if arr.max(initial=0) > maxval:
        raise ValueError(f"{path}: sample exceeds declared maxval")
    return arr.reshape(h, w)


def save_pgm(img: np.ndarray, path, peak: float = 255.0) -> None:
    if peak <= 0:
        raise ValueError("peak must be positive")
    maxval = int(round(peak))
    if maxval < 1 or maxval > 65535:
        raise ValueError(f"peak {peak} not representable in a graymap")
    q = np.rint(np.clip(img, 0.0, peak)).astype(np.uint32)
    q = np.minimum(q, maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5 {img.shape[1]} {img.shape[0]} {maxval}\n".encode("ascii")
    Path(path).write_bytes(header + q.astype(dtype).tobytes())


# ---------------------------------------------------------------- models

def _hex(v: float) -> str:
    return float(v).hex()


def save_model(model: DiffusionModel, path) -> None:
    lines = [f"{MODEL_MAGIC} {MODEL_FORMAT_VERSION}",
             f"filter_size {model.filter_size}",
             f"num_filters {model.num_filters}",
             f"stages {model.num_stages}",
             f"looks {model.looks}",
             f"value_range {_hex(model.value_range)}",
             f"variant {model.variant}",
             f"floor {_hex(model.floor)}",
             f"rbf_count {model.rbf.count}",
             f"rbf_radius {_hex(model.rbf.radius)}",
             f"rbf_bandwidth {_hex(model.rbf.gamma)}",
             f"generator {model.generator}",
             f"seed {model.seed}",
             f"metadata {json.dumps(model.metadata, sort_keys=True)}"]
    for t, s in enumerate(model.stages):
        lines.append(f"stage {t}")
        lines.append(f"beta {_hex(s.beta)}")
        for i in range(s.num_filters):
            lines.append("coeff " + " ".join(_hex(v) for v in s.coeffs[i]))
        for i in range(s.num_filters):
            lines.append("weight " + " ".join(_hex(v) for v in s.weights[i]))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> DiffusionModel:
    lines = Path(path).read_text().splitlines()
    it = iter(l for l in lines if l.strip())

    def expect(key):
        line = next(it, None)
        if line is None or not line.startswith(key + " "):
            raise ValueError(f"{path}: expected '{key}' entry")
        return line[len(key) + 1:]

    head = next(it, "")
    parts = head.split()
    if len(parts) != 2 or parts[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    if int(parts[1]) != MODEL_FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported model format version {parts[1]}")
    m = int(expect("filter_size"))
    nk = int(expect("num_filters"))
    T = int(expect("stages"))
    looks = int(expect("looks"))
    value_range = float.fromhex(expect("value_range"))
    variant = expect("variant")
    floor = float.fromhex(expect("floor"))
    rbf_count = int(expect("rbf_count"))
    rbf_radius = float.fromhex(expect("rbf_radius"))
    rbf_bandwidth = float.fromhex(expect("rbf_bandwidth"))
    generator = expect("generator")
    seed = int(expect("seed"))
    metadata = json.loads(expect("metadata"))
    stages = []
    for t in range(T):
        if expect("stage") != str(t):
            raise ValueError(f"{path}: stage blocks out of order")
        beta = float.fromhex(expect("beta"))
        coeffs = np.array([[float.fromhex(v) for v in expect("coeff").split()]
                           for _ in range(nk)])
        weights = np.array([[float.fromhex(v) for v in expect("weight").split()]
                            for _ in range(nk)])
        stages.append(StageParams(beta=beta, coeffs=coeffs, weights=weights))
    if next(it, None) != "end":
        raise ValueError(f"{path}: missing end marker")
    grid = RbfGrid(count=rbf_count, radius=rbf_radius,
                   bandwidth=rbf_bandwidth)
    return DiffusionModel(stages=stages, filter_size=m, looks=looks,
                          value_range=value_range, rbf=grid, variant=variant,
                          floor=floor, generator=generator, seed=seed,
                          metadata=metadata)


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class DatasetSpec:
    source_dir: str
    patch_size: int
    patches_per_image: int = 1
    crop_policy: str = "random"   # "random" or "center"
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.patches_per_image < 1:
            raise ValueError("patch_size and patches_per_image must be >= 1")
        if self.crop_policy not in ("random", "center"):
            raise ValueError(f"unknown crop policy {self.crop_policy!r}")


def _derived_seed(base: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(base), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def build_dataset(spec: DatasetSpec, cfg: SpeckleConfig):
    """Deterministic patch extraction plus per-patch speckle.

    Returns (pairs, manifest); every manifest entry records the source file,
    crop offsets and the derived noise seed.
    """
    root = Path(spec.source_dir)
    sources = sorted(p for p in root.iterdir()
                     if p.is_file() and p.suffix in IMAGE_SUFFIXES)
    pairs: list[NoisyPair] = []
    manifest: list[dict] = []
    counter = 0
    for src_index, src in enumerate(sources):
        try:
            img = load_image(src)
        except (ValueError, OSError) as exc:
            logger.warning("skipping unreadable image %s: %s", src, exc)
            continue
        h, w = img.shape
        ps = spec.patch_size
        if h < ps or w < ps:
            logger.warning("skipping %s: smaller than patch size %d", src, ps)
            continue
        crop_rng = np.random.default_rng(_derived_seed(spec.seed, src_index))
        for _ in range(spec.patches_per_image):
            if spec.crop_policy == "center":
                y, x = (h - ps) // 2, (w - ps) // 2
            else:
                y = int(crop_rng.integers(0, h - ps + 1))
                x = int(crop_rng.integers(0, w - ps + 1))
            patch = img[y:y + ps, x:x + ps].copy()
            noise_seed = _derived_seed(cfg.seed, counter)
            pair = sample_speckle(
                patch, SpeckleConfig(looks=cfg.looks, seed=noise_seed))
            pairs.append(pair)
            manifest.append({"source": src.name, "y": y, "x": x,
                             "seed": noise_seed})
            counter += 1
    if not pairs:
        raise ValueError(f"no usable images in {root}")
    return pairs, manifest
