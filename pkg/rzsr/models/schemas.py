"""
Domain Schemas for RZSR
Enums and in-memory records shared by the image, database, network and pipeline layers.
Array-valued fields hold numpy arrays shaped (channels, height, width) unless noted.
"""
from enum import Enum
from typing import Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


# =============================================================================
# ENUMS
# =============================================================================

class ScaleTag(str, Enum):
    """Which image of the pyramid an index refers to"""
    FULL = "x1"
    HALF = "x2"
    QUARTER = "x4"

    @property
    def code(self) -> int:
        return {"x1": 1, "x2": 2, "x4": 4}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "ScaleTag":
        for tag in cls:
            if tag.code == code:
                return tag
        raise ValueError(f"Unknown scale code {code}")


class ModelMode(str, Enum):
    """Network variants"""
    FULL = "full"
    REFERENCE_FREE = "reference-free"
    SINGLE_SCALE = "single-scale"

    @property
    def code(self) -> int:
        return list(ModelMode).index(self)

    @classmethod
    def from_code(cls, code: int) -> "ModelMode":
        members = list(cls)
        if not 0 <= code < len(members):
            raise ValueError(f"Unknown mode code {code}")
        return members[code]


class RetrievalMode(str, Enum):
    """How HR cousins are searched"""
    DATABASE = "database"
    EXHAUSTIVE = "exhaustive"
    EXHAUSTIVE_NO_DEPTH = "exhaustive-no-depth"


class DescriptorBackend(str, Enum):
    """Feature map used for patch descriptors"""
    PIXEL = "pixel"
    GRADIENT_PYRAMID = "gradient-pyramid"
    EXTERNAL_FILE = "external-file"


class DegradationMode(str, Enum):
    """LR synthesis protocols"""
    BICUBIC = "bicubic"
    RANDOM_KERNEL = "random-kernel"
    FILE_KERNEL = "file-kernel"


class OverlapWeighting(str, Enum):
    """Accumulation weights for overlapping inference tiles"""
    UNIFORM = "uniform"
    TAPERED = "tapered"


class NoDepthPolicy(str, Enum):
    """Behaviour when no depth map is supplied"""
    EXHAUSTIVE = "exhaustive"
    FALLBACK = "fallback"


# =============================================================================
# ARRAY RECORDS
# =============================================================================

class ArrayModel(BaseModel):
    """Base for records carrying numpy arrays"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class BlurKernel(ArrayModel):
    """Normalized square blur kernel with odd side"""
    weights: np.ndarray

    @field_validator("weights")
    @classmethod
    def validate_weights(cls, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be square with odd side, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("kernel contains non-finite weights")
        if abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"kernel weights must sum to 1 (sum={v.sum():.8f})")
        return v

    @property
    def side(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def normalized(cls, weights: np.ndarray) -> "BlurKernel":
        weights = np.asarray(weights, dtype=np.float64)
        return cls(weights=weights / weights.sum())

    @classmethod
    def delta(cls, side: int = 1) -> "BlurKernel":
        weights = np.zeros((side, side))
        weights[side // 2, side // 2] = 1.0
        return cls(weights=weights)


class FeatureMap(ArrayModel):
    """Per-position feature vectors, sampled every `stride` image pixels"""
    data: np.ndarray
    stride: int = Field(default=1, ge=1)

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])


class Patch(ArrayModel):
    """Square window of a pyramid image"""
    scale_tag: ScaleTag
    center: Tuple[int, int]
    side: int
    pixels: np.ndarray


class Descriptor(ArrayModel):
    """L2-normalized patch descriptor; zero vectors carry `is_zero`"""
    vector: np.ndarray
    norm: float
    is_zero: bool = False

    def __len__(self) -> int:
        return int(self.vector.shape[0])


class PatchEntry(ArrayModel):
    center: Tuple[int, int]
    depth: float
    descriptor: Descriptor
    bin_index: int


class PatchDatabase(ArrayModel):
    """
    Depth-binned patch index over one pyramid image.

    Entries are stored column-wise: centers (N, 2) as (x, y), depths (N,),
    descriptors (N, L), zero_flags (N,), bins (N,). Rows are sorted by
    (bin, x, y).
    """
    scale_tag: ScaleTag
    patch_side: int
    depth_bin_edges: np.ndarray
    centers: np.ndarray
    depths: np.ndarray
    descriptors: np.ndarray
    zero_flags: np.ndarray
    bins: np.ndarray

    def __len__(self) -> int:
        return int(self.centers.shape[0])

    @property
    def depth_bins(self) -> int:
        return int(self.depth_bin_edges.shape[0] - 1)

    @property
    def descriptor_length(self) -> int:
        return int(self.descriptors.shape[1])

    def entry(self, index: int) -> PatchEntry:
        vector = self.descriptors[index]
        return PatchEntry(
            center=(int(self.centers[index, 0]), int(self.centers[index, 1])),
            depth=float(self.depths[index]),
            descriptor=Descriptor(
                vector=vector,
                norm=0.0 if self.zero_flags[index] else 1.0,
                is_zero=bool(self.zero_flags[index]),
            ),
            bin_index=int(self.bins[index]),
        )

    @property
    def entries(self) -> List[PatchEntry]:
        return [self.entry(i) for i in range(len(self))]


class RetrievalResult(BaseModel):
    """Outcome of one cousin search"""
    cousin_center: Optional[Tuple[int, int]] = None
    min_distance: float = 2.0
    used_fallback: bool = True
    entry_index: Optional[int] = None
    candidate_count: int = 0


class Triplet(ArrayModel):
    """One training sample: LR son, HR father and HR cousin"""
    triplet_id: int
    son_center: Tuple[int, int]
    son: np.ndarray
    son_up: np.ndarray
    father: np.ndarray
    cousin: Optional[np.ndarray] = None
    cousin_center: Optional[Tuple[int, int]] = None
    distance: float = 2.0
    used_fallback: bool = True

    @property
    def father_center(self) -> Tuple[int, int]:
        return (2 * self.son_center[0], 2 * self.son_center[1])


class TilePlan(ArrayModel):
    """
    Sliding-window layout over a (possibly padded) input image.

    `tops`/`lefts` are window origins in padded input coordinates; `padding`
    is (top, bottom, left, right) added to reach at least one full window.
    """
    tops: List[int]
    lefts: List[int]
    side: int
    stride: int
    height: int
    width: int
    padding: Tuple[int, int, int, int] = (0, 0, 0, 0)

    def origins(self) -> Iterator[Tuple[int, int]]:
        for top in self.tops:
            for left in self.lefts:
                yield top, left

    def __len__(self) -> int:
        return len(self.tops) * len(self.lefts)

    def coverage(self, scale: int = 2) -> np.ndarray:
        """Number of tiles covering each output pixel"""
        counts = np.zeros((self.height * scale, self.width * scale), dtype=np.int64)
        extent = self.side * scale
        for top, left in self.origins():
            counts[top * scale:top * scale + extent, left * scale:left * scale + extent] += 1
        return counts


class DegradationSpec(BaseModel):
    """Parameters of one LR synthesis protocol"""
    mode: DegradationMode = DegradationMode.BICUBIC
    factor: int = Field(default=2, ge=2)
    lambda_min: float = Field(default=0.6, gt=0)
    lambda_max: float = Field(default=5.0, gt=0)
    kernel_size: int = Field(default=11, ge=1)
    seed: int = 0
    noise_sigma: float = Field(default=0.0, ge=0)
    kernel_path: Optional[str] = None

    @field_validator("kernel_size")
    @classmethod
    def validate_kernel_size(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return v
