"""
Data Transfer Objects for RZSR
Records written to manifests, CSV traces and reports
"""
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class BaseDTO(BaseModel):
    """Base DTO with common configuration"""
    model_config = ConfigDict(from_attributes=True, ser_json_inf_nan="strings")


# =============================================================================
# TRACES
# =============================================================================

class LossRecord(BaseDTO):
    """One training iteration"""
    iteration: int
    loss: float
    lr: float
    triplet_id: int
    used_fallback: bool


class TileAuditRecord(BaseDTO):
    """Retrieval outcome for one inference tile"""
    tile_x: int
    tile_y: int
    cousin_x: Optional[int] = None
    cousin_y: Optional[int] = None
    distance: float
    used_fallback: bool
    query_depth: float
    cousin_depth: Optional[float] = None


class StageTiming(BaseDTO):
    stage: str
    seconds: float
    success: bool
    rss_mb: Optional[float] = None
    error: Optional[str] = None


# =============================================================================
# MANIFESTS
# =============================================================================

class RunManifest(BaseDTO):
    """Everything needed to re-run one SR experiment"""
    command: str
    run_id: str
    created_at: datetime = Field(default_factory=utc_now)
    config: Dict[str, Any]
    seeds: Dict[str, int] = Field(default_factory=dict)
    input_hashes: Dict[str, str] = Field(default_factory=dict)
    stages: List[StageTiming] = Field(default_factory=list)
    peak_rss_mb: Optional[float] = None
    triplets: int = 0
    training_fallbacks: int = 0
    retrievals: int = 0
    fallbacks: int = 0
    fallback_rate: float = 0.0
    iterations: int = 0
    final_lr: Optional[float] = None
    parameter_count: Optional[int] = None
    loss_trace_path: Optional[str] = None
    audit_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    output_path: Optional[str] = None
    output_hash: Optional[str] = None
    warnings: List[str] = Field(default_factory=list)


class DegradationEntry(BaseDTO):
    filename: str
    output: str
    seed: int
    kernel_path: Optional[str] = None
    kernel_params: Optional[Dict[str, float]] = None
    input_hash: str
    output_hash: str


class DegradationManifest(BaseDTO):
    mode: str
    factor: int
    seed: int
    noise_sigma: float
    created_at: datetime = Field(default_factory=utc_now)
    config: Dict[str, Any] = Field(default_factory=dict)
    entries: List[DegradationEntry] = Field(default_factory=list)


class KernelManifest(BaseDTO):
    seed: int
    count: int
    size: int
    created_at: datetime = Field(default_factory=utc_now)
    config: Dict[str, Any] = Field(default_factory=dict)
    kernels: List[Dict[str, Any]] = Field(default_factory=list)


class DatabaseManifest(BaseDTO):
    """Serialized half- and quarter-scale databases of one image"""
    command: str = "build-db"
    run_id: str
    created_at: datetime = Field(default_factory=utc_now)
    config: Dict[str, Any]
    seeds: Dict[str, int] = Field(default_factory=dict)
    input_hashes: Dict[str, str] = Field(default_factory=dict)
    files: Dict[str, str] = Field(default_factory=dict)
    entries: Dict[str, int] = Field(default_factory=dict)
    depth_bins: int
    patch_side: int


# =============================================================================
# REPORTS
# =============================================================================

class MetricRow(BaseDTO):
    filename: str
    psnr_db: float
    ssim: float


class MetricReport(BaseDTO):
    """Per-image metrics with dataset means over finite values"""
    rows: List[MetricRow] = Field(default_factory=list)
    mean_psnr_db: Optional[float] = None
    mean_ssim: Optional[float] = None
    infinite_psnr_count: int = 0
    shave: int = 0
    config: Dict[str, Any] = Field(default_factory=dict)


class AblationRow(BaseDTO):
    variant: str
    mode: str
    retrieval: str
    mean_psnr_db: Optional[float] = None
    mean_ssim: Optional[float] = None
    runtime_seconds: float
    images: int
