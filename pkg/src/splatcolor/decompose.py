"""Greedy base-view selection over per-camera visibility sets."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence

from .rasterizer import VisibilitySet


@dataclass(frozen=True)
class Decomposition:
    k: int
    base_view_ids: tuple
    covered_trace: tuple   # |covered| after each pick
    scores: tuple          # first pick scores |G_t|; later picks new / (overlap + 1)

    def to_json(self) -> dict:
        return {"K": self.k, "base_view_ids": list(self.base_view_ids),
                "covered_trace": list(self.covered_trace),
                "scores": [[s.numerator, s.denominator] for s in self.scores]}


def pick_score(members: frozenset, covered: frozenset) -> Fraction:
    """Newly covered splats over (overlap + 1), as an exact fraction."""
    return Fraction(len(members - covered), len(members & covered) + 1)


def decompose(visibility: Sequence[VisibilitySet], k: int) -> Decomposition:
    """Select ``k`` base views.

    The first pick is the camera seeing the most splats; each later pick
    maximizes :func:`pick_score` against the union of earlier picks among
    cameras not yet chosen. Ties go to the smallest camera id.
    """
    if not visibility:
        raise ValueError("empty visibility list")
    if not 1 <= k <= len(visibility):
        raise ValueError(f"K={k} outside [1, {len(visibility)}]")
    sets: Dict[int, frozenset] = {}
    for vs in visibility:
        if vs.camera_id in sets:
            raise ValueError(f"duplicate camera id {vs.camera_id}")
        sets[vs.camera_id] = vs.as_set()
    order = sorted(sets)

    first = min(order, key=lambda t: (-len(sets[t]), t))
    picks: List[int] = [first]
    scores = [Fraction(len(sets[first]))]
    covered = sets[first]
    trace = [len(covered)]
    for _ in range(1, k):
        best, best_score = None, None
        for t in order:
            if t in picks:
                continue
            sc = pick_score(sets[t], covered)
            if best_score is None or sc > best_score:
                best, best_score = t, sc
        picks.append(best)
        scores.append(best_score)
        covered = covered | sets[best]
        trace.append(len(covered))
    return Decomposition(k, tuple(picks), tuple(trace), tuple(scores))


def coverage_report(dec: Decomposition, visibility: Sequence[VisibilitySet], total_splats: int) -> dict:
    """Covered fraction after each pick and the pairwise overlap matrix of base views."""
    sets = {vs.camera_id: vs.as_set() for vs in visibility}
    base = [sets[t] for t in dec.base_view_ids]
    covered = frozenset()
    fractions = []
    for s in base:
        covered |= s
        fractions.append(len(covered) / total_splats if total_splats else 0.0)
    overlap = [[len(a & b) for b in base] for a in base]
    return {"base_view_ids": list(dec.base_view_ids), "covered_fraction": fractions,
            "overlap": overlap, "total_splats": total_splats}
