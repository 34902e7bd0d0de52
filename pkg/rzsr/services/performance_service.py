"""
Performance Service
Per-stage wall time and resident memory for pipeline runs
"""
import time
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional

import psutil

from rzsr.core.logging_config import get_logger, set_run_context, stage_var
from rzsr.models.dto import StageTiming

logger = get_logger(__name__)


def resident_memory_mb() -> float:
    return psutil.Process().memory_info().rss / (1024 * 1024)


class StageTracker:
    """Records how long each pipeline stage took and how much memory was resident after it"""

    def __init__(self, slow_stage_seconds: float = 60.0):
        self._timings: List[StageTiming] = []
        self._slow_stage_seconds = slow_stage_seconds
        self.peak_rss_mb = resident_memory_mb()

    @contextmanager
    def track(self, stage: str) -> Iterator[None]:
        """Time the enclosed block; failures are recorded and re-raised"""
        previous_stage = stage_var.get()
        set_run_context(stage=stage)
        start_time = time.perf_counter()
        logger.info(f"Stage started: {stage}")
        try:
            yield
        except Exception as e:
            self._record(stage, start_time, success=False, error=str(e))
            raise
        else:
            self._record(stage, start_time, success=True)
        finally:
            stage_var.set(previous_stage)

    def _record(self, stage: str, start_time: float, success: bool, error: Optional[str] = None) -> None:
        seconds = time.perf_counter() - start_time
        rss = resident_memory_mb()
        self.peak_rss_mb = max(self.peak_rss_mb, rss)
        self._timings.append(StageTiming(stage=stage, seconds=seconds, success=success, rss_mb=rss, error=error))
        log_data = {"duration": seconds * 1000, "rss_mb": round(rss, 1), "success": success}
        if not success:
            logger.warning(f"Stage failed: {stage} after {seconds:.2f}s", extra=log_data)
        elif seconds > self._slow_stage_seconds:
            logger.warning(f"Slow stage: {stage} took {seconds:.2f}s", extra=log_data)
        else:
            logger.info(f"Stage finished: {stage} in {seconds:.2f}s", extra=log_data)

    @property
    def timings(self) -> List[StageTiming]:
        return list(self._timings)

    def summary(self) -> Dict[str, float]:
        """Total seconds per stage name"""
        totals: Dict[str, float] = {}
        for timing in self._timings:
            totals[timing.stage] = totals.get(timing.stage, 0.0) + timing.seconds
        return totals

    def total_seconds(self) -> float:
        return sum(t.seconds for t in self._timings)
