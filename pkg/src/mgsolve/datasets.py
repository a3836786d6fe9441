"""Random tensors in [0, 1] that coefficient fields are generated from.

Distributions are described by short strings:

``white_noise``
    i.i.d. uniform [0, 1].
``mldata`` or ``mldata:levels=4,init_size=5``
    multi-level noise (coarse white noise repeatedly upsampled with
    decreasing fresh noise), min-max normalized.
``images:DIR``
    a random grayscale image from ``DIR`` (first channel, min-max
    normalized, bilinearly resized).
``white_noise*0.5+images:DIR*0.5``
    a mixture; one component is picked per tensor by weight.
"""
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .discretization import coef_from_random

IMAGE_SUFFIXES = (".pgm", ".png")


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    params: dict = field(default_factory=dict)
    components: tuple = ()  # (DistributionSpec, weight) pairs for mixtures

    def __post_init__(self):
        if self.kind not in ("white_noise", "mldata", "image_corpus", "mixture"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "mixture":
            weights = [w for _, w in self.components]
            if not weights or min(weights) < 0 or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
                raise ValueError(f"mixture weights must be non-negative and sum to 1, got {weights}")
        if self.kind == "mldata" and self.params.get("init_size", 5) < 2:
            raise ValueError("mldata init_size must be at least 2")


def _parse_single(text):
    text = text.strip()
    name, _, arg = text.partition(":")
    if name in ("white_noise", "noise"):
        return DistributionSpec("white_noise")
    if name == "mldata":
        params = {}
        for item in filter(None, arg.split(",")):
            key, _, value = item.partition("=")
            if key not in ("levels", "init_size"):
                raise ValueError(f"unknown mldata parameter {key!r}")
            params[key] = int(value)
        return DistributionSpec("mldata", params)
    if name in ("images", "image_corpus"):
        if not arg:
            raise ValueError("images distribution needs a directory: images:DIR")
        return DistributionSpec("image_corpus", {"directory": arg})
    raise ValueError(f"unknown distribution {text!r}")


def parse_distribution(text):
    """Parse a distribution string (see module docstring)."""
    if isinstance(text, DistributionSpec):
        return text
    parts = text.split("+")
    if len(parts) == 1 and "*" not in text:
        return _parse_single(text)
    comps = []
    for part in parts:
        spec, star, weight = part.rpartition("*")
        if not star:
            raise ValueError(f"mixture component {part!r} needs a '*weight'")
        comps.append((_parse_single(spec), float(weight)))
    return DistributionSpec("mixture", components=tuple(comps))


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _resize2d(data, size):
    return T.bilinear_resize(data[None], size, size)[0]


def minmax01(data):
    """Scale to [0, 1]; constant input maps to 0.5 everywhere."""
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        return np.full(data.shape, 0.5)
    return np.clip((data - lo) / (hi - lo), 0.0, 1.0)


def multi_level_schedule(levels, init_size=5):
    """``(size, noise_ratio)`` for every refinement step of the generator."""
    out = []
    size = init_size
    for i in range(1, levels + 1):
        size *= 2
        out.append((size, 2.0 ** -i))
    return out


def default_mldata_levels(goal_size, init_size=5):
    """Enough doublings for the generator to reach at least ``goal_size``."""
    return max(0, math.ceil(math.log2(goal_size / init_size)))


def gen_data_multi_level(goal_size, levels, init_size=5, seed=None, trace=None):
    """Multi-level random data (raw, unnormalized).

    Starts from ``init_size`` standard-normal noise; each level doubles the
    size by bilinear interpolation and adds fresh noise scaled by ``2**-i``;
    the result is finally interpolated to ``goal_size``. If ``trace`` is a
    list, ``(size, noise_ratio)`` is appended for each level.
    """
    if init_size < 2 or levels < 0:
        raise ValueError("need init_size >= 2 and levels >= 0")
    rng = _rng(seed)
    data = rng.standard_normal((init_size, init_size))
    for size, ratio in multi_level_schedule(levels, init_size):
        data = _resize2d(data, size)
        data = data + ratio * rng.standard_normal((size, size))
        if trace is not None:
            trace.append((data.shape[0], ratio))
    return _resize2d(data, goal_size)


# -- images -------------------------------------------------------------------

def _pgm_header(buf):
    """Parse a binary PGM header; returns (width, height, maxval, offset)."""
    if buf[:2] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise ValueError("truncated PGM header")
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(buf[start:pos]))
    width, height, maxval = tokens
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError(f"invalid PGM dimensions or maxval: {tokens}")
    return width, height, maxval, pos + 1  # one whitespace byte ends the header


def read_pgm(path):
    buf = Path(path).read_bytes()
    width, height, maxval, offset = _pgm_header(buf)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(buf) - offset < need:
        raise ValueError(f"PGM payload truncated: {len(buf) - offset} of {need} bytes")
    return np.frombuffer(buf, dtype=dtype, count=width * height, offset=offset).reshape(height, width)


def write_pgm(path, image):
    """Write an 8-bit binary PGM from values in [0, 255]."""
    img = np.clip(np.rint(np.asarray(image)), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _read_png(path, verify=False):
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ValueError("PNG support needs Pillow") from exc
    with Image.open(path) as im:
        if verify:
            im.verify()
            return None
        arr = np.asarray(im)
    return arr if arr.ndim == 2 else arr[..., 0]


def load_image(path):
    """First channel of an image file as a float array."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path).astype(np.float64)
    return _read_png(path).astype(np.float64)


class ImageCorpus:
    """Images in a directory, indexed once in filename order and read on demand."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"image directory not found: {self.directory}")
        self.paths = []
        self.skipped = 0
        for path in sorted(self.directory.iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES or not path.is_file():
                continue
            try:
                if path.suffix.lower() == ".pgm":
                    read_pgm(path)
                else:
                    _read_png(path, verify=True)
            except Exception as exc:
                warnings.warn(f"skipping unreadable image {path.name}: {exc}", stacklevel=2)
                self.skipped += 1
                continue
            self.paths.append(path)
        if not self.paths:
            raise ValueError(f"no readable images in {self.directory}")

    def __len__(self):
        return len(self.paths)

    def sample(self, goal_size, seed=None):
        rng = _rng(seed)
        img = load_image(self.paths[int(rng.integers(len(self.paths)))])
        return np.clip(_resize2d(minmax01(img), goal_size), 0.0, 1.0)


_CORPORA = {}


def ingest_images(directory):
    """Corpus handle for ``directory`` (cached per resolved path)."""
    key = str(Path(directory).resolve())
    if key not in _CORPORA:
        _CORPORA[key] = ImageCorpus(directory)
    return _CORPORA[key]


def sample_random_tensor(spec, goal_size, seed=None):
    """A ``goal_size x goal_size`` array in [0, 1] drawn from ``spec``."""
    spec = parse_distribution(spec)
    rng = _rng(seed)
    if goal_size < 1:
        raise ValueError("goal_size must be positive")
    if spec.kind == "white_noise":
        return rng.random((goal_size, goal_size))
    if spec.kind == "mldata":
        init = spec.params.get("init_size", 5)
        levels = spec.params.get("levels", default_mldata_levels(goal_size, init))
        return np.clip(minmax01(gen_data_multi_level(goal_size, levels, init, rng)), 0.0, 1.0)
    if spec.kind == "image_corpus":
        return ingest_images(spec.params["directory"]).sample(goal_size, rng)
    weights = np.array([w for _, w in spec.components])
    # a single component consumes no randomness for the pick
    pick = 0 if len(weights) == 1 else int(rng.choice(len(weights), p=weights / weights.sum()))
    return sample_random_tensor(spec.components[pick][0], goal_size, rng)


def sample_coefficients(spec, size, batch, seed, re_limit, dtype=np.float64):
    """A (batch, 1, size, size) coefficient tensor in [1/re_limit, 1]."""
    rng = _rng(seed)
    spec = parse_distribution(spec)
    random = np.stack([sample_random_tensor(spec, size, rng) for _ in range(batch)])
    return coef_from_random(random[:, None].astype(dtype), re_limit)
