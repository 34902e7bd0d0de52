"""
Image and Auxiliary File I/O
PNG images, blur kernel text files, depth maps (16-bit PGM / DPT) and FMAP feature files
"""
import hashlib
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from rzsr.core.error_handlers import CommonErrors, FeatureLoadError
from rzsr.core.logging_config import get_logger
from rzsr.models.schemas import BlurKernel, FeatureMap

logger = get_logger(__name__)

PathLike = Union[str, Path]

DPT_MAGIC = "DPT"
FMAP_MAGIC = "FMAP"


def _require_file(path: PathLike, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CommonErrors.file_not_found(path, what)
    return path


# =============================================================================
# PNG
# =============================================================================

def read_image(path: PathLike) -> np.ndarray:
    """
    Load an 8-bit PNG as a (C, H, W) float64 array in [0, 1]

    Grayscale files give one channel; everything else is converted to RGB.
    """
    path = _require_file(path, "Image")
    try:
        with PILImage.open(path) as pil:
            pil.load()
            if pil.mode not in ("L", "RGB"):
                pil = pil.convert("L" if pil.mode in ("1", "LA", "I", "I;16", "F") else "RGB")
            data = np.asarray(pil, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise CommonErrors.bad_file(path, str(e)) from e

    if data.ndim == 2:
        data = data[None, :, :]
    else:
        data = np.transpose(data, (2, 0, 1))
    return data.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path: PathLike, img: np.ndarray) -> Path:
    """Clamp, quantize to 8 bits and save as PNG"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_uint8(img)
    if data.shape[0] == 1:
        pil = PILImage.fromarray(data[0])
    else:
        pil = PILImage.fromarray(np.ascontiguousarray(np.transpose(data, (1, 2, 0))))
    pil.save(path, format="PNG")
    return path


# =============================================================================
# BLUR KERNELS
# =============================================================================

def read_kernel(path: PathLike) -> BlurKernel:
    """Kernel text file: first line the side, then row-major weights"""
    path = _require_file(path, "Kernel file")
    tokens = path.read_text().split()
    try:
        side = int(tokens[0])
        values = np.array([float(t) for t in tokens[1:]])
    except (IndexError, ValueError) as e:
        raise CommonErrors.bad_file(path, f"malformed kernel ({e})") from e
    if values.size != side * side:
        raise CommonErrors.bad_file(path, f"expected {side * side} weights, found {values.size}")
    try:
        return BlurKernel(weights=values.reshape(side, side))
    except ValueError as e:
        raise CommonErrors.bad_file(path, str(e)) from e


def write_kernel(path: PathLike, kernel: BlurKernel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [str(kernel.side)]
    lines += [" ".join(f"{w:.17g}" for w in row) for row in kernel.weights]
    path.write_text("\n".join(lines) + "\n")
    return path


# =============================================================================
# DEPTH MAPS
# =============================================================================

def normalize_depth(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant map becomes all zeros"""
    raw = np.asarray(raw, dtype=np.float64)
    low, high = raw.min(), raw.max()
    if high <= low:
        return np.zeros_like(raw)
    return (raw - low) / (high - low)


def _read_dpt(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise CommonErrors.bad_file(path, "missing DPT header")
    header = blob[:newline].decode("ascii", errors="replace").split()
    if len(header) != 3 or header[0] != DPT_MAGIC:
        raise CommonErrors.bad_file(path, f"bad DPT header {header}")
    width, height = int(header[1]), int(header[2])
    payload = blob[newline + 1:]
    if len(payload) != width * height * 4:
        raise CommonErrors.bad_file(path, f"expected {width * height * 4} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(height, width)


def read_depth(path: PathLike) -> np.ndarray:
    """
    Load a depth map (16-bit PGM or DPT float32) normalized to [0, 1]

    Smaller values are nearer.
    """
    path = _require_file(path, "Depth map")
    with path.open("rb") as fh:
        magic = fh.read(3)
    if magic == DPT_MAGIC.encode("ascii"):
        raw = _read_dpt(path)
    else:
        try:
            with PILImage.open(path) as pil:
                raw = np.asarray(pil).astype(np.float64)
        except (UnidentifiedImageError, OSError) as e:
            raise CommonErrors.bad_file(path, str(e)) from e
        if raw.ndim != 2:
            raise CommonErrors.bad_file(path, "depth map must have a single plane")
    if not np.all(np.isfinite(raw)):
        raise CommonErrors.bad_file(path, "depth map contains non-finite values")
    return normalize_depth(raw)


def write_depth_dpt(path: PathLike, depth: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = depth.shape
    header = f"{DPT_MAGIC} {width} {height}\n".encode("ascii")
    path.write_bytes(header + np.asarray(depth, dtype="<f4").tobytes())
    return path


def write_depth_pgm(path: PathLike, depth: np.ndarray) -> Path:
    """Write a [0, 1] depth map as 16-bit binary PGM"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = depth.shape
    levels = np.round(np.clip(depth, 0.0, 1.0) * 65535).astype(">u2")
    path.write_bytes(f"P5\n{width} {height}\n65535\n".encode("ascii") + levels.tobytes())
    return path


# =============================================================================
# FEATURE MAPS
# =============================================================================

def read_feature_map(path: PathLike, image_shape: Tuple[int, int]) -> FeatureMap:
    """
    Load a FMAP file and check it covers an image of (height, width)

    Layout: ASCII header "FMAP width height channels stride\\n", then
    float32 little-endian samples in channel-major order.
    """
    path = Path(path)
    if not path.is_file():
        raise FeatureLoadError(f"Feature map not found: {path}", details={"path": str(path)})
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    header = blob[:newline].decode("ascii", errors="replace").split() if newline > 0 else []
    if len(header) != 5 or header[0] != FMAP_MAGIC:
        raise FeatureLoadError(f"Bad FMAP header in {path}: {header}", details={"path": str(path)})
    width, height, channels, stride = (int(v) for v in header[1:])
    payload = blob[newline + 1:]
    if len(payload) != width * height * channels * 4:
        raise FeatureLoadError(
            f"{path}: expected {width * height * channels * 4} payload bytes, found {len(payload)}",
            details={"path": str(path)},
        )
    img_h, img_w = image_shape
    expected = (-(-img_h // stride), -(-img_w // stride))
    if (height, width) != expected:
        raise FeatureLoadError(
            f"{path}: feature grid {height}x{width} does not match image {img_h}x{img_w} at stride {stride}",
            details={"path": str(path), "grid": [height, width], "expected": list(expected)},
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width).astype(np.float64)
    return FeatureMap(data=data, stride=stride)


def write_feature_map(path: PathLike, fm: FeatureMap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    channels, height, width = fm.data.shape
    header = f"{FMAP_MAGIC} {width} {height} {channels} {fm.stride}\n".encode("ascii")
    path.write_bytes(header + np.asarray(fm.data, dtype="<f4").tobytes())
    return path


# =============================================================================
# HASHING
# =============================================================================

def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_array(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr)
    digest = hashlib.sha256()
    digest.update(str(arr.dtype).encode("ascii"))
    digest.update(str(arr.shape).encode("ascii"))
    digest.update(arr.tobytes())
    return digest.hexdigest()
