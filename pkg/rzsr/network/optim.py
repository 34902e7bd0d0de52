"""
Optimization
Adam with bias correction, and the plateau-driven learning-rate schedule used at test time
"""
from typing import Dict, List, Optional

import numpy as np

from rzsr.core.error_handlers import ShapeError
from rzsr.core.logging_config import get_logger

logger = get_logger(__name__)

# slopes below this count as flat even when the fit is exact
FLAT_SLOPE = 1e-12


class AdamState:
    """Per-parameter first/second moments and the step counter"""

    def __init__(self, params: Dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """
    One bias-corrected Adam update, in place

    Args:
        params: Parameters to update
        grads: Gradients with matching names and shapes
        state: Optimizer state, advanced by one step
        lr: Learning rate
    """
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient {name} has shape {grad.shape}, parameter {param.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)


class LrSchedule:
    """
    Reconstruction-error plateau rule

    Every check records the mean reconstruction error. Once `window`
    checks have accumulated since the last drop, a least-squares line is
    fitted to the most recent `window` of them; if |slope| does not exceed the
    slope's standard error the learning rate is divided by `factor`.
    """

    def __init__(self, lr: float, factor: float = 10.0, min_lr: float = 1e-6, window: int = 10):
        self.lr = lr
        self.factor = factor
        self.min_lr = min_lr
        self.window = window
        self.history: List[float] = []
        self.lr_trace: List[float] = [lr]

    @property
    def finished(self) -> bool:
        return self.lr < self.min_lr

    def fit_slope(self) -> Optional[tuple]:
        if len(self.history) < self.window:
            return None
        errors = np.asarray(self.history[-self.window:])
        x = np.arange(len(errors), dtype=np.float64)
        coefficients, covariance = np.polyfit(x, errors, 1, cov=True)
        return float(coefficients[0]), float(np.sqrt(max(covariance[0, 0], 0.0)))

    def update(self, error: float) -> bool:
        """Record a check; returns True when the learning rate dropped"""
        self.history.append(float(error))
        fit = self.fit_slope()
        if fit is None:
            return False
        slope, std = fit
        if abs(slope) <= max(std, FLAT_SLOPE):
            self.lr /= self.factor
            self.history = []
            self.lr_trace.append(self.lr)
            logger.info(
                f"Learning rate dropped to {self.lr:.3g}",
                extra={"lr": self.lr, "slope": slope, "slope_std": std},
            )
            return True
        return False
