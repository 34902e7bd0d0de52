"""
Configuration for RZSR
All pipeline hyperparameters in one settings object, layered as
defaults < environment (RZSR_*) / .env < key=value config file < command-line flags
"""
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings

from rzsr.core.error_handlers import ConfigurationError
from rzsr.core.logging_config import get_logger
from rzsr.models.schemas import (
    DescriptorBackend, ModelMode, NoDepthPolicy, OverlapWeighting, RetrievalMode
)

logger = get_logger(__name__)

# Short names accepted in config files
KEY_ALIASES = {
    "D": "DEPTH_BINS",
    "T": "THRESHOLD",
    "M": "PATCH_SIDE",
    "S": "TILE_STRIDE",
    "LR": "LEARNING_RATE",
}


class Settings(BaseSettings):
    """Pipeline settings"""

    # =============================================================================
    # SCALE & RETRIEVAL
    # =============================================================================
    SCALE: int = Field(default=2, ge=2, description="Integer upscaling factor")
    DEPTH_BINS: int = Field(default=5, ge=1, description="Number of uniform depth ranges D")
    THRESHOLD: float = Field(default=0.9, ge=0.0, le=2.0, description="Cousin distance threshold T")
    PATCH_SIDE: int = Field(default=48, description="LR patch side M")
    TILE_STRIDE: int = Field(default=4, ge=1, description="Inference sliding-window stride s")
    CLUSTER_DIVISOR: int = Field(default=100, ge=1, description="k_i = ceil(N_i / divisor)")
    MIN_BIN_MEDOIDS: int = Field(default=1, ge=1, description="Per-bin medoid floor; 1 keeps the plain divisor rule")
    DB_STRIDE: int = Field(default=2, ge=2, description="Candidate lattice stride (even)")
    RETRIEVAL: RetrievalMode = Field(default=RetrievalMode.DATABASE, description="Cousin search strategy")
    DESCRIPTOR: DescriptorBackend = Field(default=DescriptorBackend.GRADIENT_PYRAMID, description="Descriptor backend")
    DESCRIPTOR_GRID: int = Field(default=1, ge=1, le=2, description="Sub-window grid of descriptor pooling")
    NO_DEPTH_POLICY: NoDepthPolicy = Field(default=NoDepthPolicy.EXHAUSTIVE, description="Retrieval when no depth map is given")
    KMEDOIDS_MAX_ITERS: int = Field(default=50, ge=1, description="Alternating k-medoids iteration cap")
    KMEDOIDS_SWAP: bool = Field(default=True, description="Run swap refinement after alternating k-medoids")

    # =============================================================================
    # NETWORK
    # =============================================================================
    MODE: ModelMode = Field(default=ModelMode.FULL, description="Network variant")
    CHANNELS: int = Field(default=128, ge=1, description="Feature channels")
    EMBED_DIM: int = Field(default=64, ge=1, description="Non-local embedding channels")
    NET_DTYPE: Literal["float32", "float64"] = Field(default="float32", description="Network arithmetic precision")

    # =============================================================================
    # TRAINING
    # =============================================================================
    SEED: int = Field(default=0, description="Seed for sampling and initialization")
    MAX_ITERS: int = Field(default=3000, ge=0, description="Training iteration cap")
    LEARNING_RATE: float = Field(default=0.001, gt=0, description="Initial Adam learning rate")
    LR_DROP_FACTOR: float = Field(default=10.0, gt=1.0, description="Learning-rate divisor on plateau")
    MIN_LEARNING_RATE: float = Field(default=1e-6, gt=0, description="Training stops below this learning rate")
    CHECK_EVERY: int = Field(default=50, ge=1, description="Iterations between reconstruction checks")
    SLOPE_WINDOW: int = Field(default=10, ge=4, description="Checkpoints in the plateau line fit")
    AUGMENT: bool = Field(default=True, description="Dihedral augmentation of triplets")
    MIN_TRIPLETS: int = Field(default=32, ge=1, description="Top up sons with lattice samples below this count")
    EVAL_TRIPLETS: int = Field(default=8, ge=1, description="Triplets used for the reconstruction check")

    # =============================================================================
    # INFERENCE
    # =============================================================================
    ENSEMBLE: bool = Field(default=False, description="Dihedral test-time ensemble")
    BP_ITERS: int = Field(default=8, ge=0, description="Back-projection iterations")
    OVERLAP_WEIGHTING: OverlapWeighting = Field(default=OverlapWeighting.UNIFORM, description="Tile overlap weights")
    AUDIT: bool = Field(default=False, description="Write per-tile retrieval audit CSV")

    # =============================================================================
    # DEGRADATION
    # =============================================================================
    NOISE_SIGMA: float = Field(default=0.0, ge=0.0, description="Gaussian noise added after degradation")

    # =============================================================================
    # PATHS
    # =============================================================================
    IMAGE_PATH: Optional[str] = Field(default=None, description="Input image (PNG)")
    DEPTH_PATH: Optional[str] = Field(default=None, description="Depth map (PGM or DPT)")
    KERNEL_PATH: Optional[str] = Field(default=None, description="Blur kernel text file")
    FEATURES_PATH: Optional[str] = Field(default=None, description="Directory of x1/x2/x4 .fmap files")
    OUTPUT_DIR: str = Field(default="rzsr_out", description="Artifact directory")

    # =============================================================================
    # LOGGING
    # =============================================================================
    LOG_LEVEL: str = Field(default="INFO", description="Logging level")
    LOG_FORMAT: Literal["text", "json"] = Field(default="text", description="Log output format")
    SHOW_PROGRESS: bool = Field(default=True, description="Show progress bars")
    DEBUG: bool = Field(default=False, description="Debug mode")

    @field_validator('PATCH_SIDE')
    @classmethod
    def validate_patch_side(cls, v):
        if v < 8 or v % 4 != 0:
            raise ValueError("PATCH_SIDE must be a multiple of 4 and at least 8")
        return v

    @field_validator('DB_STRIDE')
    @classmethod
    def validate_db_stride(cls, v):
        if v % 2 != 0:
            raise ValueError("DB_STRIDE must be even so halved centers stay integral")
        return v

    @field_validator('LOG_LEVEL')
    @classmethod
    def validate_log_level(cls, v):
        v = str(v).upper()
        if v not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level {v}")
        return v

    class Config:
        env_prefix = "RZSR_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True
        extra = "ignore"

    def describe(self) -> Dict[str, Any]:
        """Config echo written verbatim into manifests"""
        return self.model_dump(mode="json")

    def derive(self, **overrides: Any) -> "Settings":
        """Copy with validated overrides"""
        values = self.model_dump()
        values.update(overrides)
        return build_settings(values)


def normalize_key(key: str) -> str:
    key = key.strip().upper().replace("-", "_")
    return KEY_ALIASES.get(key, key)


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Parse a key=value config file

    Args:
        path: Config file path

    Returns:
        Mapping of normalized field names to raw string values
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}", details={"path": str(path)})

    raw = dotenv_values(path)
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        name = normalize_key(key)
        if name not in Settings.model_fields:
            raise ConfigurationError(
                f"Unknown config key '{key}' in {path}",
                details={"path": str(path), "key": key},
            )
        if value is None:
            raise ConfigurationError(
                f"Config key '{key}' in {path} has no value",
                details={"path": str(path), "key": key},
            )
        values[name] = value
    logger.debug(f"Loaded {len(values)} config values from {path}")
    return values


def build_settings(values: Optional[Dict[str, Any]] = None) -> Settings:
    """Construct Settings, converting validation failures into ConfigurationError"""
    values = {normalize_key(k): v for k, v in (values or {}).items()}
    try:
        return Settings(**values)
    except ValidationError as e:
        problems = [
            {"field": ".".join(str(loc) for loc in err["loc"]), "message": err["msg"]}
            for err in e.errors()
        ]
        summary = "; ".join(f"{p['field']}: {p['message']}" for p in problems)
        raise ConfigurationError(f"Invalid configuration: {summary}", details={"validation_errors": problems}) from e


def load_settings(
    config_file: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> Settings:
    """
    Layer config file values under command-line overrides

    Args:
        config_file: Optional key=value file
        overrides: Values given on the command line (None entries are ignored)
    """
    values: Dict[str, Any] = {}
    if config_file:
        values.update(read_config_file(config_file))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[normalize_key(key)] = value
    return build_settings(values)


def get_settings() -> Settings:
    """Get settings from defaults and environment"""
    return build_settings()
