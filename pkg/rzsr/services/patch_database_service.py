"""
Patch Database Service
Depth-binned internal patch databases, k-medoids summarization and depth-constrained cousin retrieval
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from rzsr.core.config import Settings
from rzsr.core.error_handlers import ConfigurationError
from rzsr.core.logging_config import LoggerMixin, get_logger, log_function_call
from rzsr.models.schemas import (
    Descriptor, FeatureMap, PatchDatabase, RetrievalMode, RetrievalResult, ScaleTag
)
from rzsr.services.descriptor_service import distances_to, pairwise_distances, pool_descriptors
from rzsr.utils.image_ops import window_fits

logger = get_logger(__name__)

SWAP_MAX_POINTS = 3000


# =============================================================================
# DEPTH SEGMENTATION
# =============================================================================

def quantize_depth(depth: Optional[np.ndarray], shape: Tuple[int, int]) -> np.ndarray:
    """Depth at stored precision; a missing map reads as all zeros"""
    if depth is None:
        return np.zeros(shape)
    return np.asarray(depth, dtype=np.float32).astype(np.float64)


def depth_bin_edges(depth: np.ndarray, bins: int) -> np.ndarray:
    """D+1 uniform edges over [min, max]; a constant map gets tiny strictly increasing edges"""
    if bins < 1:
        raise ConfigurationError(f"Depth bin count must be >= 1, got {bins}")
    low, high = float(np.min(depth)), float(np.max(depth))
    if high <= low:
        unit = np.spacing(max(abs(low), 1.0)) * 4
        return low + np.arange(bins + 1) * unit
    return np.linspace(low, high, bins + 1)


def assign_bins(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin index per value; the topmost edge is inclusive"""
    bins = np.searchsorted(edges, values, side="right") - 1
    return np.clip(bins, 0, len(edges) - 2).astype(np.int64)


def segment_by_depth(
    depth: np.ndarray,
    centers: Sequence[Tuple[int, int]],
    bins: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Assign each center to a depth range by its center-pixel depth

    Returns:
        (bin index per center, edges)
    """
    edges = depth_bin_edges(depth, bins)
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    values = depth[centers[:, 1], centers[:, 0]] if len(centers) else np.zeros(0)
    return assign_bins(values, edges), edges


# =============================================================================
# K-MEDOIDS
# =============================================================================

def _assign(dist: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    labels = np.argmin(dist[:, medoids], axis=1)
    labels[medoids] = np.arange(len(medoids))
    return labels


def _total_cost(dist: np.ndarray, medoids: np.ndarray) -> float:
    return float(dist[:, medoids].min(axis=1).sum())


def _swap_refine(dist: np.ndarray, medoids: np.ndarray, max_passes: int) -> np.ndarray:
    """Best-improvement medoid/non-medoid swaps until no swap lowers the cost"""
    medoids = medoids.copy()
    cost = _total_cost(dist, medoids)
    for _ in range(max_passes):
        best_cost, best_swap = cost, None
        for slot in range(len(medoids)):
            others = np.delete(medoids, slot)
            nearest_other = dist[:, others].min(axis=1) if len(others) else np.full(dist.shape[0], np.inf)
            candidate_costs = np.minimum(nearest_other[:, None], dist).sum(axis=0)
            candidate_costs[medoids] = np.inf
            h = int(np.argmin(candidate_costs))
            if candidate_costs[h] < best_cost - 1e-12:
                best_cost, best_swap = float(candidate_costs[h]), (slot, h)
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        medoids = np.sort(medoids)
        cost = best_cost
    return medoids


def kmedoids_from_distances(
    dist: np.ndarray,
    k: int,
    max_iters: int = 50,
    swap: bool = True
) -> np.ndarray:
    """
    Deterministic k-medoids on a precomputed distance matrix

    Starts from the k points with the smallest distance sums, alternates
    assignment and medoid update (ties to the lowest index) until stable,
    then optionally refines with swaps.

    Args:
        dist: (N, N) symmetric distances with zero diagonal
        k: Number of medoids
        max_iters: Alternating iteration cap
        swap: Run swap refinement afterwards

    Returns:
        Sorted medoid indices
    """
    count = dist.shape[0]
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if k >= count:
        return np.arange(count)

    medoids = np.sort(np.argsort(dist.sum(axis=1), kind="stable")[:k])
    for _ in range(max_iters):
        labels = _assign(dist, medoids)
        updated = medoids.copy()
        for cluster in range(k):
            members = np.flatnonzero(labels == cluster)
            if len(members) == 0:
                continue
            within = dist[np.ix_(members, members)].sum(axis=1)
            updated[cluster] = members[int(np.argmin(within))]
        updated = np.sort(updated)
        if np.array_equal(updated, medoids):
            break
        medoids = updated

    if swap and count <= SWAP_MAX_POINTS:
        medoids = _swap_refine(dist, medoids, max_iters)
    return medoids


def cluster_kmedoids(
    descriptors: np.ndarray,
    k: int,
    zero_flags: Optional[np.ndarray] = None,
    max_iters: int = 50,
    swap: bool = True
) -> np.ndarray:
    """k-medoids over descriptors under the 1 - cosine distance"""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if zero_flags is None:
        zero_flags = np.zeros(descriptors.shape[0], dtype=bool)
    return kmedoids_from_distances(pairwise_distances(descriptors, zero_flags), k, max_iters, swap)


def medoid_count(members: int, divisor: int, floor: int = 1) -> int:
    """ceil(members / divisor), raised to `floor` but never above `members`"""
    return max(math.ceil(members / divisor), min(floor, members))


# =============================================================================
# DATABASE CONSTRUCTION
# =============================================================================

def lattice_centers(height: int, width: int, side: int, stride: int) -> np.ndarray:
    """Even-coordinate centers whose side x side window fits, as (x, y) rows ordered by x then y"""
    half = side // 2
    start = half + (half % 2)
    xs = np.arange(start, width - half + 1, stride)
    ys = np.arange(start, height - half + 1, stride)
    if len(xs) == 0 or len(ys) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([grid_x.ravel(), grid_y.ravel()], axis=1).astype(np.int64)


def _make_database(
    scale_tag: ScaleTag,
    side: int,
    edges: np.ndarray,
    centers: np.ndarray,
    depths: np.ndarray,
    descriptors: np.ndarray,
    zero_flags: np.ndarray,
    bins: np.ndarray
) -> PatchDatabase:
    order = np.lexsort((centers[:, 1], centers[:, 0], bins)) if len(centers) else np.zeros(0, dtype=np.int64)
    return PatchDatabase(
        scale_tag=scale_tag,
        patch_side=side,
        depth_bin_edges=np.asarray(edges, dtype=np.float64),
        centers=centers[order].astype(np.int64).reshape(-1, 2),
        depths=depths[order].astype(np.float32).astype(np.float64),
        descriptors=descriptors[order].reshape(len(order), descriptors.shape[1]),
        zero_flags=zero_flags[order].astype(bool),
        bins=bins[order].astype(np.int64),
    )


def build_candidate_index(
    img: np.ndarray,
    depth: Optional[np.ndarray],
    fm: FeatureMap,
    settings: Settings,
    scale_tag: ScaleTag = ScaleTag.HALF
) -> PatchDatabase:
    """Every lattice candidate of `img`, unclustered"""
    _, height, width = img.shape
    side = settings.PATCH_SIDE
    depth_q = quantize_depth(depth, (height, width))
    centers = lattice_centers(height, width, side, settings.DB_STRIDE)
    bins, edges = segment_by_depth(depth_q, centers, settings.DEPTH_BINS)
    descriptors, zero_flags = pool_descriptors(fm, centers, side, settings.DESCRIPTOR_GRID)
    depths = depth_q[centers[:, 1], centers[:, 0]] if len(centers) else np.zeros(0)
    return _make_database(scale_tag, side, edges, centers, depths, descriptors, zero_flags, bins)


@log_function_call()
def build_database(
    img: np.ndarray,
    depth: Optional[np.ndarray],
    fm: FeatureMap,
    settings: Settings,
    scale_tag: ScaleTag = ScaleTag.HALF
) -> PatchDatabase:
    """
    Summarize `img` as per-depth-bin k-medoids of its lattice patches

    Args:
        img: Image the database indexes (normally I downsampled by 2)
        depth: Depth aligned to `img`, or None
        fm: Feature map of `img`
        settings: Pipeline settings (D, divisor, patch side, lattice stride)
        scale_tag: Pyramid level of `img`
    """
    index = build_candidate_index(img, depth, fm, settings, scale_tag)
    keep: List[int] = []
    for b in range(index.depth_bins):
        members = np.flatnonzero(index.bins == b)
        if len(members) == 0:
            continue
        k = medoid_count(len(members), settings.CLUSTER_DIVISOR, settings.MIN_BIN_MEDOIDS)
        if len(members) <= k:
            keep.extend(members.tolist())
            continue
        medoids = cluster_kmedoids(
            index.descriptors[members], k, index.zero_flags[members],
            settings.KMEDOIDS_MAX_ITERS, settings.KMEDOIDS_SWAP,
        )
        keep.extend(members[medoids].tolist())
        logger.debug(f"Depth bin {b}: {len(members)} candidates -> {k} medoids")

    keep_idx = np.asarray(sorted(keep), dtype=np.int64)
    db = _make_database(
        scale_tag, index.patch_side, index.depth_bin_edges,
        index.centers[keep_idx], index.depths[keep_idx], index.descriptors[keep_idx],
        index.zero_flags[keep_idx], index.bins[keep_idx],
    )
    logger.info(
        f"Built {scale_tag.value} database: {len(db)} entries from {len(index)} candidates",
        extra={"entries": len(db), "candidates": len(index), "depth_bins": index.depth_bins},
    )
    return db


@log_function_call()
def derive_scaled_database(db: PatchDatabase, img4: np.ndarray, fm4: FeatureMap, grid: int = 1) -> PatchDatabase:
    """
    Map every entry to the next coarser image at halved centers

    Descriptors are recomputed from `fm4`; depths and bins are copied.
    Entries whose halved window leaves `img4` are dropped.
    """
    _, height, width = img4.shape
    side = db.patch_side
    halved = db.centers // 2
    fits = np.array([window_fits((int(x), int(y)), side, height, width) for x, y in halved], dtype=bool)
    dropped = int((~fits).sum())
    if dropped:
        logger.info(f"Dropped {dropped} entries whose halved window leaves the coarse image",
                    extra={"dropped": dropped})
    centers = halved[fits]
    descriptors, zero_flags = pool_descriptors(fm4, [tuple(c) for c in centers], side, grid)
    return _make_database(
        ScaleTag.QUARTER if db.scale_tag == ScaleTag.HALF else db.scale_tag,
        side, db.depth_bin_edges, centers.reshape(-1, 2), db.depths[fits],
        descriptors, zero_flags, db.bins[fits],
    )


# =============================================================================
# RETRIEVAL
# =============================================================================

def _retrieve(
    query: Descriptor,
    depth: float,
    db: PatchDatabase,
    threshold: float,
    use_depth: bool
) -> RetrievalResult:
    if len(db) == 0:
        return RetrievalResult()
    if use_depth:
        candidates = np.flatnonzero(db.depths < float(np.float32(depth)))
    else:
        candidates = np.arange(len(db))
    if len(candidates) == 0:
        return RetrievalResult()

    dist = distances_to(query, db.descriptors[candidates], db.zero_flags[candidates])
    best = int(np.argmin(dist))
    index = int(candidates[best])
    min_distance = float(dist[best])
    used_fallback = threshold <= 0 or min_distance > threshold
    return RetrievalResult(
        cousin_center=(int(db.centers[index, 0]), int(db.centers[index, 1])),
        min_distance=min_distance,
        used_fallback=used_fallback,
        entry_index=index,
        candidate_count=len(candidates),
    )


def retrieve_cousin(query: Descriptor, depth: float, db: PatchDatabase, threshold: float) -> RetrievalResult:
    """
    Nearest database entry strictly nearer than the query

    Falls back when no entry is nearer, when the best distance exceeds the
    threshold, or when the threshold is zero.
    """
    return _retrieve(query, depth, db, threshold, use_depth=True)


def retrieve_exhaustive(
    query: Descriptor,
    depth: float,
    index: PatchDatabase,
    threshold: float,
    use_depth: bool = True
) -> RetrievalResult:
    """Same rule as retrieve_cousin over every lattice candidate of the coarse image"""
    return _retrieve(query, depth, index, threshold, use_depth)


class PatchDatabaseService(LoggerMixin):
    """Builds the per-image search structure for the configured retrieval mode"""

    def __init__(self, settings: Settings, retrieval: Optional[RetrievalMode] = None):
        self.settings = settings
        self.retrieval = retrieval or settings.RETRIEVAL

    def build(self, img: np.ndarray, depth: Optional[np.ndarray], fm: FeatureMap, scale_tag: ScaleTag) -> PatchDatabase:
        if self.retrieval == RetrievalMode.DATABASE:
            return build_database(img, depth, fm, self.settings, scale_tag)
        return build_candidate_index(img, depth, fm, self.settings, scale_tag)

    def retrieve(self, query: Descriptor, depth: float, db: PatchDatabase) -> RetrievalResult:
        use_depth = self.retrieval != RetrievalMode.EXHAUSTIVE_NO_DEPTH
        return _retrieve(query, depth, db, self.settings.THRESHOLD, use_depth)
