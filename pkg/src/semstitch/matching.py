"""Context-stack building and sliding-window cosine matching.

Each boundary feature is concatenated with its n preceding and n following
neighbors (cyclic, boundaries are closed) into a context stack.  Moving
stacks are compared against every fixed stack in both traversal directions:
two abutting fragments walk their shared seam in opposite contour
orientations, so the fixed stack must also be tested with its constituent
vectors reversed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShortBoundaryError


@dataclass(frozen=True)
class CandidateMatch:
    """Best-scoring fixed stack for one moving stack."""

    moving_index: int
    fixed_index: int
    similarity: float
    reversed: bool


def build_stacks(features: np.ndarray, n: int) -> np.ndarray:
    """Concatenate each row with its +-n cyclic neighbors, re-normalized.

    ``features`` is (N, K) with N >= 2n+1; the result is (N, (2n+1)*K) with
    unit-L2 rows.
    """
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ValueError("features must be (N, K)")
    count = features.shape[0]
    if count < 2 * n + 1:
        raise ShortBoundaryError(
            f"fragment boundary too short for neighborhood: {count} < {2 * n + 1}"
        )
    if n == 0:
        stacks = features.copy()
    else:
        idx = (np.arange(count)[:, None] + np.arange(-n, n + 1)[None, :]) % count
        stacks = features[idx].reshape(count, -1)
    norms = np.linalg.norm(stacks, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return (stacks / norms).astype(np.float32)


def reverse_stacks(stacks: np.ndarray, n: int) -> np.ndarray:
    """Reverse the order of the 2n+1 constituent vectors in every stack."""
    count, width = stacks.shape
    k = width // (2 * n + 1)
    if k * (2 * n + 1) != width:
        raise ValueError("stack width is not divisible by 2n+1")
    return stacks.reshape(count, 2 * n + 1, k)[:, ::-1, :].reshape(count, width)


def match_candidates(
    moving: np.ndarray, fixed: np.ndarray, n: int = 0
) -> list[CandidateMatch]:
    """Best fixed stack (either orientation) per moving stack.

    Ties break toward the smaller fixed index, forward before reversed.
    Returns exactly one candidate per moving stack.
    """
    moving = np.asarray(moving, dtype=np.float32)
    fixed = np.asarray(fixed, dtype=np.float32)
    if moving.size == 0 or fixed.size == 0:
        raise ValueError("moving and fixed stacks must be non-empty")
    if moving.shape[1] != fixed.shape[1]:
        raise ValueError(
            f"stack width mismatch: {moving.shape[1]} vs {fixed.shape[1]}"
        )
    sims_fwd = moving @ fixed.T
    sims_rev = moving @ reverse_stacks(fixed, n).T
    # interleave (j fwd, j rev) so argmax tie-break follows the contract
    interleaved = np.empty((moving.shape[0], 2 * fixed.shape[0]), dtype=np.float32)
    interleaved[:, 0::2] = sims_fwd
    interleaved[:, 1::2] = sims_rev
    best = np.argmax(interleaved, axis=1)
    return [
        CandidateMatch(
            moving_index=k,
            fixed_index=int(b // 2),
            similarity=float(interleaved[k, b]),
            reversed=bool(b % 2),
        )
        for k, b in enumerate(best)
    ]


def pair_fragment(
    moving_id: str, pool: dict[str, np.ndarray], n: int = 0
) -> tuple[str, float, list[CandidateMatch]]:
    """Pick the fixed fragment with the highest summed best-match similarity.

    ``pool`` maps fragment id to its stack matrix and must contain
    ``moving_id`` plus at least one other fragment.  Ties break toward the
    smallest fragment id.
    """
    if moving_id not in pool:
        raise KeyError(f"moving fragment {moving_id!r} not in pool")
    fixed_ids = sorted(k for k in pool if k != moving_id)
    if not fixed_ids:
        raise ValueError("pool has no fixed fragment besides the moving one")
    moving = pool[moving_id]
    best: tuple[str, float, list[CandidateMatch]] | None = None
    for fid in fixed_ids:
        matches = match_candidates(moving, pool[fid], n)
        score = float(sum(m.similarity for m in matches))
        if best is None or score > best[1]:
            best = (fid, score, matches)
    return best


def matches_to_csv(matches: list[CandidateMatch], path: str | Path) -> None:
    """Debug dump consumed by the experiment harness."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["moving_index", "fixed_index", "similarity", "reversed"])
        for m in matches:
            writer.writerow([m.moving_index, m.fixed_index, f"{m.similarity:.9g}", int(m.reversed)])
