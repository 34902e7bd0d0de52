"""
RZSR Network
Shared 8-layer extractor, non-local attention pyramid fusing LR-son and HR-cousin
features, transposed-conv resizers, two-conv reconstruction head and global residual.
"""
from collections import OrderedDict
from typing import Dict, List, Optional, Tuple

import numpy as np

from rzsr.core.error_handlers import ModeError, ShapeError, UsageError
from rzsr.core.logging_config import LoggerMixin
from rzsr.models.schemas import ModelMode
from rzsr.network import layers

EXTRACTOR_DEPTH = 8
STRIDED_LAYERS = (6, 7, 8)
TAP_LAYERS = (6, 7, 8)
INPUT_MULTIPLE = 8


def parameter_count(mode: ModelMode, image_channels: int = 3, channels: int = 128, embed_dim: int = 64) -> int:
    """Closed-form parameter count for a network configuration"""
    extractor = (image_channels * channels * 9 + channels) + (EXTRACTOR_DEPTH - 1) * (channels * channels * 9 + channels)
    block = 3 * (channels * embed_dim + embed_dim) + (embed_dim * channels + channels)
    blocks = 1 if mode == ModelMode.SINGLE_SCALE else 3
    resizers = 3 * (channels * channels * 16 + channels)
    head = (channels * channels * 9 + channels) + (channels * image_channels * 9 + image_channels)
    return extractor + blocks * block + resizers + head


class RZSRNetwork(LoggerMixin):
    """
    Image-specific SR network

    Inputs are the bicubic-upsampled LR son and the HR cousin, both at the
    output size (divisible by 8). Output = son + predicted residual.
    """

    def __init__(
        self,
        mode: ModelMode = ModelMode.FULL,
        image_channels: int = 3,
        channels: int = 128,
        embed_dim: int = 64,
        dtype: str = "float32",
        seed: int = 0
    ):
        self.mode = ModelMode(mode)
        self.image_channels = image_channels
        self.channels = channels
        self.embed_dim = embed_dim
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._cache: Optional[Dict] = None
        self._initialize()

    # =========================================================================
    # PARAMETERS
    # =========================================================================

    @property
    def block_names(self) -> List[str]:
        if self.mode == ModelMode.SINGLE_SCALE:
            return ["nonlocal1"]
        return ["nonlocal1", "nonlocal2", "nonlocal3"]

    def parameter_shapes(self) -> "OrderedDict[str, Tuple[int, ...]]":
        c, e, ci = self.channels, self.embed_dim, self.image_channels
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        for layer in range(1, EXTRACTOR_DEPTH + 1):
            shapes[f"extractor.conv{layer}.weight"] = (c, ci if layer == 1 else c, 3, 3)
            shapes[f"extractor.conv{layer}.bias"] = (c,)
        for block in self.block_names:
            for embedding in ("theta", "phi", "g"):
                shapes[f"{block}.{embedding}.weight"] = (e, c)
                shapes[f"{block}.{embedding}.bias"] = (e,)
            shapes[f"{block}.h.weight"] = (c, e)
            shapes[f"{block}.h.bias"] = (c,)
        for resizer in range(1, 4):
            shapes[f"upsample{resizer}.weight"] = (c, c, 4, 4)
            shapes[f"upsample{resizer}.bias"] = (c,)
        shapes["head.conv1.weight"] = (c, c, 3, 3)
        shapes["head.conv1.bias"] = (c,)
        shapes["head.conv2.weight"] = (ci, c, 3, 3)
        shapes["head.conv2.bias"] = (ci,)
        return shapes

    def _initialize(self) -> None:
        """He initialization (fan-out) with a fixed seed; biases and the last head conv start at zero"""
        rng = np.random.default_rng(self.seed)
        for name, shape in self.parameter_shapes().items():
            if name.endswith(".bias") or name.startswith("head.conv2"):
                self.params[name] = np.zeros(shape, dtype=self.dtype)
                continue
            if name.startswith("upsample"):
                fan = shape[1] * shape[2] * shape[3]
            elif len(shape) == 4:
                fan = shape[0] * shape[2] * shape[3]
            else:
                fan = shape[0]
            std = np.sqrt(2.0 / fan)
            self.params[name] = (rng.standard_normal(shape) * std).astype(self.dtype)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_(self) -> "RZSRNetwork":
        for value in self.params.values():
            value[...] = 0
        return self

    def copy(self) -> "RZSRNetwork":
        clone = RZSRNetwork(self.mode, self.image_channels, self.channels, self.embed_dim, self.dtype.name, self.seed)
        for name, value in self.params.items():
            clone.params[name] = value.copy()
        return clone

    def load_parameters(self, values: Dict[str, np.ndarray]) -> None:
        for name, shape in self.parameter_shapes().items():
            if name not in values:
                raise ShapeError(f"Missing parameter {name}", details={"parameter": name})
            value = np.asarray(values[name])
            if value.shape != shape:
                raise ShapeError(
                    f"Parameter {name} has shape {value.shape}, expected {shape}",
                    details={"parameter": name},
                )
            self.params[name] = value.astype(self.dtype)

    # =========================================================================
    # EXTRACTOR
    # =========================================================================

    def _extract(self, x: np.ndarray) -> Tuple[Dict[int, np.ndarray], List]:
        taps: Dict[int, np.ndarray] = {}
        caches = []
        for layer in range(1, EXTRACTOR_DEPTH + 1):
            stride = 2 if layer in STRIDED_LAYERS else 1
            z, cache = layers.conv2d_forward(
                x, self.params[f"extractor.conv{layer}.weight"], self.params[f"extractor.conv{layer}.bias"], stride
            )
            x = layers.relu(z)
            caches.append((cache, x > 0))
            if layer in TAP_LAYERS:
                taps[layer] = x
        return taps, caches

    def _extract_backward(self, tap_grads: Dict[int, np.ndarray], caches: List, grads: Dict[str, np.ndarray]) -> None:
        upstream = None
        for layer in range(EXTRACTOR_DEPTH, 0, -1):
            cache, mask = caches[layer - 1]
            if layer in tap_grads:
                upstream = tap_grads[layer] if upstream is None else upstream + tap_grads[layer]
            if upstream is None:
                continue
            dz = upstream * mask
            dx, dweight, dbias = layers.conv2d_backward(dz, self.params[f"extractor.conv{layer}.weight"], cache)
            grads[f"extractor.conv{layer}.weight"] += dweight
            grads[f"extractor.conv{layer}.bias"] += dbias
            upstream = dx

    # =========================================================================
    # FORWARD / BACKWARD
    # =========================================================================

    def _check_inputs(self, son_up: np.ndarray, cousin: Optional[np.ndarray]) -> None:
        if son_up.ndim != 3 or son_up.shape[0] != self.image_channels:
            raise ShapeError(
                f"Son must be ({self.image_channels}, H, W), got {son_up.shape}",
                details={"shape": list(son_up.shape)},
            )
        _, height, width = son_up.shape
        if height % INPUT_MULTIPLE or width % INPUT_MULTIPLE:
            raise ShapeError(
                f"Network input {height}x{width} must be divisible by {INPUT_MULTIPLE}",
                details={"shape": [height, width]},
            )
        if self.mode == ModelMode.REFERENCE_FREE:
            if cousin is not None:
                raise ModeError("Reference-free network does not take a cousin input")
            return
        if cousin is None:
            raise ModeError(f"{self.mode.value} network needs a cousin input")
        if cousin.shape != son_up.shape:
            raise ShapeError(
                f"Cousin shape {cousin.shape} differs from son shape {son_up.shape}",
                details={"son": list(son_up.shape), "cousin": list(cousin.shape)},
            )

    def _upsample(self, index: int, x: np.ndarray, caches: Dict) -> np.ndarray:
        out, caches[f"upsample{index}"] = layers.transposed_conv_forward(
            x, self.params[f"upsample{index}.weight"], self.params[f"upsample{index}.bias"]
        )
        return out

    def _attend(self, block: str, fs: np.ndarray, fc: Optional[np.ndarray], caches: Dict) -> np.ndarray:
        out, caches[block] = layers.nonlocal_forward(fs, fs if fc is None else fc, self.params, block)
        return out

    def forward(self, son_up: np.ndarray, cousin: Optional[np.ndarray] = None, training: bool = False) -> np.ndarray:
        """
        Predict the HR patch

        Args:
            son_up: Bicubic-upsampled LR son, (C, H, W)
            cousin: HR cousin of the same shape; omitted only in reference-free mode
            training: Keep the cache needed by backward()

        Returns:
            son_up + residual, (C, H, W)
        """
        self._check_inputs(son_up, cousin)
        son_up = np.asarray(son_up, dtype=self.dtype)
        caches: Dict = {}

        son_taps, caches["son_extractor"] = self._extract(son_up)
        if self.mode == ModelMode.REFERENCE_FREE:
            x = self._attend("nonlocal1", son_taps[8], None, caches)
            x = self._upsample(1, x, caches)
            x = self._attend("nonlocal2", x, None, caches)
            x = self._upsample(2, x, caches)
            x = self._attend("nonlocal3", x, None, caches)
            x = self._upsample(3, x, caches)
        else:
            cousin_taps, caches["cousin_extractor"] = self._extract(np.asarray(cousin, dtype=self.dtype))
            x = self._attend("nonlocal1", son_taps[8], cousin_taps[8], caches)
            x = self._upsample(1, x, caches)
            if self.mode == ModelMode.FULL:
                x = self._attend("nonlocal2", x, cousin_taps[7], caches)
            x = self._upsample(2, x, caches)
            if self.mode == ModelMode.FULL:
                x = self._attend("nonlocal3", x, cousin_taps[6], caches)
            x = self._upsample(3, x, caches)

        z, caches["head.conv1"] = layers.conv2d_forward(x, self.params["head.conv1.weight"], self.params["head.conv1.bias"])
        hidden = layers.relu(z)
        caches["head.mask"] = hidden > 0
        residual, caches["head.conv2"] = layers.conv2d_forward(
            hidden, self.params["head.conv2.weight"], self.params["head.conv2.bias"]
        )
        if training:
            self._cache = caches
        return son_up + residual

    def _attend_backward(self, block: str, dout: np.ndarray, caches: Dict, grads: Dict, self_attention: bool):
        dfs, dfc, block_grads = layers.nonlocal_backward(dout, self.params, block, caches[block])
        for name, value in block_grads.items():
            grads[name] += value
        if self_attention:
            return dfs + dfc, None
        return dfs, dfc

    def _upsample_backward(self, index: int, dout: np.ndarray, caches: Dict, grads: Dict) -> np.ndarray:
        dx, dweight, dbias = layers.transposed_conv_backward(dout, self.params[f"upsample{index}.weight"], caches[f"upsample{index}"])
        grads[f"upsample{index}.weight"] += dweight
        grads[f"upsample{index}.bias"] += dbias
        return dx

    def backward(self, loss_grad: np.ndarray) -> Dict[str, np.ndarray]:
        """
        Parameter gradients of the loss given d(loss)/d(output)

        Consumes the cache of the last forward(training=True).
        """
        if self._cache is None:
            raise UsageError("backward() called without a cached training forward pass")
        caches, self._cache = self._cache, None
        grads = OrderedDict((name, np.zeros_like(value)) for name, value in self.params.items())
        dout = np.asarray(loss_grad, dtype=self.dtype)

        dhidden, dweight, dbias = layers.conv2d_backward(dout, self.params["head.conv2.weight"], caches["head.conv2"])
        grads["head.conv2.weight"] += dweight
        grads["head.conv2.bias"] += dbias
        dx, dweight, dbias = layers.conv2d_backward(dhidden * caches["head.mask"], self.params["head.conv1.weight"], caches["head.conv1"])
        grads["head.conv1.weight"] += dweight
        grads["head.conv1.bias"] += dbias

        cousin_grads: Dict[int, np.ndarray] = {}
        self_attention = self.mode == ModelMode.REFERENCE_FREE
        dx = self._upsample_backward(3, dx, caches, grads)
        if self.mode != ModelMode.SINGLE_SCALE:
            dx, dfc = self._attend_backward("nonlocal3", dx, caches, grads, self_attention)
            if dfc is not None:
                cousin_grads[6] = dfc
        dx = self._upsample_backward(2, dx, caches, grads)
        if self.mode != ModelMode.SINGLE_SCALE:
            dx, dfc = self._attend_backward("nonlocal2", dx, caches, grads, self_attention)
            if dfc is not None:
                cousin_grads[7] = dfc
        dx = self._upsample_backward(1, dx, caches, grads)
        dx, dfc = self._attend_backward("nonlocal1", dx, caches, grads, self_attention)
        if dfc is not None:
            cousin_grads[8] = dfc

        self._extract_backward({8: dx}, caches["son_extractor"], grads)
        if cousin_grads:
            self._extract_backward(cousin_grads, caches["cousin_extractor"], grads)
        return grads
