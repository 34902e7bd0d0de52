"""
Network Checkpoint Repository
Binary persistence of network parameters (RZNW format)

Layout, little-endian:
    magic           4 bytes  b"RZNW"
    version         u16
    mode            u8       0 full | 1 reference-free | 2 single-scale
    image_channels  u16
    channels        u16
    embed_dim       u16
    count           u32      number of parameter arrays
    arrays          count x { ndim u8, shape u32 x ndim, data f32 }

Arrays follow the network's declaration order.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np

from rzsr.core.error_handlers import CommonErrors, ShapeError
from rzsr.core.logging_config import get_logger
from rzsr.models.schemas import ModelMode
from rzsr.network.model import RZSRNetwork

logger = get_logger(__name__)

MAGIC = b"RZNW"
VERSION = 1
_HEADER = struct.Struct("<4sHBHHHI")


class CheckpointRepository:
    """Reads and writes RZNW files"""

    def save(self, net: RZSRNetwork, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            fh.write(_HEADER.pack(
                MAGIC, VERSION, net.mode.code, net.image_channels, net.channels, net.embed_dim, len(net.params)
            ))
            for value in net.params.values():
                fh.write(struct.pack("<B", value.ndim))
                fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
                fh.write(np.asarray(value, dtype="<f4").tobytes())
        logger.info(f"Saved checkpoint with {net.parameter_count} parameters to {path}")
        return path

    def load(self, path: Union[str, Path], dtype: str = "float32") -> RZSRNetwork:
        path = Path(path)
        if not path.is_file():
            raise CommonErrors.file_not_found(path, "Checkpoint")
        blob = path.read_bytes()
        try:
            magic, version, mode_code, image_channels, channels, embed_dim, count = _HEADER.unpack_from(blob, 0)
            if magic != MAGIC:
                raise CommonErrors.bad_file(path, f"bad magic {magic!r}")
            if version != VERSION:
                raise CommonErrors.bad_file(path, f"unsupported version {version}")
            net = RZSRNetwork(ModelMode.from_code(mode_code), image_channels, channels, embed_dim, dtype)
            names = list(net.parameter_shapes())
            if count != len(names):
                raise CommonErrors.bad_file(path, f"expected {len(names)} parameter arrays, found {count}")

            offset = _HEADER.size
            values = {}
            for name in names:
                (ndim,) = struct.unpack_from("<B", blob, offset)
                offset += 1
                shape = struct.unpack_from(f"<{ndim}I", blob, offset)
                offset += 4 * ndim
                size = int(np.prod(shape)) if ndim else 1
                values[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(shape)
                offset += 4 * size
            if offset != len(blob):
                raise CommonErrors.bad_file(path, "trailing bytes after parameter data")
            net.load_parameters(values)
        except (struct.error, ValueError, ShapeError) as e:
            raise CommonErrors.bad_file(path, str(e)) from e
        return net


_checkpoint_repository = None


def get_checkpoint_repository() -> CheckpointRepository:
    """Get checkpoint repository instance"""
    global _checkpoint_repository
    if _checkpoint_repository is None:
        _checkpoint_repository = CheckpointRepository()
    return _checkpoint_repository
