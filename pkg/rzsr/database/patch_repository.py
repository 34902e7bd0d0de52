"""
Patch Database Repository
Binary persistence of PatchDatabase objects (RZDB format)

Layout, little-endian:
    magic        4 bytes  b"RZDB"
    version      u16
    scale_tag    u8       1 | 2 | 4
    patch_side   u16
    depth_bins   u16      D
    edges        f64 x (D + 1)
    desc_length  u32      L
    count        u32      N
    entries      N x { x i32, y i32, depth f32, descriptor f32 x L }

Zero descriptors are stored as zero vectors; bins are recomputed on load.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np

from rzsr.core.error_handlers import CommonErrors
from rzsr.core.logging_config import get_logger
from rzsr.models.schemas import PatchDatabase, ScaleTag
from rzsr.services.patch_database_service import assign_bins

logger = get_logger(__name__)

MAGIC = b"RZDB"
VERSION = 1
_HEADER = struct.Struct("<4sHBHH")
_COUNTS = struct.Struct("<II")


def _entry_dtype(length: int) -> np.dtype:
    return np.dtype([("x", "<i4"), ("y", "<i4"), ("depth", "<f4"), ("descriptor", "<f4", (length,))])


class PatchDatabaseRepository:
    """Reads and writes RZDB files"""

    def save(self, db: PatchDatabase, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        length = db.descriptor_length
        records = np.zeros(len(db), dtype=_entry_dtype(length))
        records["x"] = db.centers[:, 0]
        records["y"] = db.centers[:, 1]
        records["depth"] = db.depths
        records["descriptor"] = db.descriptors

        with path.open("wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, db.scale_tag.code, db.patch_side, db.depth_bins))
            fh.write(np.asarray(db.depth_bin_edges, dtype="<f8").tobytes())
            fh.write(_COUNTS.pack(length, len(db)))
            fh.write(records.tobytes())
        logger.info(f"Saved {len(db)} database entries to {path}", extra={"path": str(path), "entries": len(db)})
        return path

    def load(self, path: Union[str, Path]) -> PatchDatabase:
        path = Path(path)
        if not path.is_file():
            raise CommonErrors.file_not_found(path, "Database file")
        blob = path.read_bytes()
        try:
            magic, version, scale_code, side, bins = _HEADER.unpack_from(blob, 0)
            if magic != MAGIC:
                raise CommonErrors.bad_file(path, f"bad magic {magic!r}")
            if version != VERSION:
                raise CommonErrors.bad_file(path, f"unsupported version {version}")
            offset = _HEADER.size
            edges = np.frombuffer(blob, dtype="<f8", count=bins + 1, offset=offset).astype(np.float64)
            offset += 8 * (bins + 1)
            length, count = _COUNTS.unpack_from(blob, offset)
            offset += _COUNTS.size
            dtype = _entry_dtype(length)
            if len(blob) - offset != count * dtype.itemsize:
                raise CommonErrors.bad_file(path, "entry block size does not match header")
            records = np.frombuffer(blob, dtype=dtype, count=count, offset=offset) if count else np.zeros(0, dtype=dtype)
            scale_tag = ScaleTag.from_code(scale_code)
        except (struct.error, ValueError) as e:
            raise CommonErrors.bad_file(path, str(e)) from e

        centers = np.stack([records["x"], records["y"]], axis=1).astype(np.int64).reshape(-1, 2)
        depths = records["depth"].astype(np.float64)
        descriptors = records["descriptor"].astype(np.float64).reshape(count, length)
        zero_flags = ~np.any(descriptors != 0.0, axis=1)
        return PatchDatabase(
            scale_tag=scale_tag,
            patch_side=side,
            depth_bin_edges=edges,
            centers=centers,
            depths=depths,
            descriptors=descriptors,
            zero_flags=zero_flags,
            bins=assign_bins(depths, edges),
        )


_patch_repository = None


def get_patch_repository() -> PatchDatabaseRepository:
    """Get patch database repository instance"""
    global _patch_repository
    if _patch_repository is None:
        _patch_repository = PatchDatabaseRepository()
    return _patch_repository
