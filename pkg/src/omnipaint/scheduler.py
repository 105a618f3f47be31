"""Traversal planning: the ordered view sequence that realizes the
autoregressive factorization with longitude-prioritized sweeps.

A plan first sweeps the start latitude band alternately east/west until
the band closes around the sphere, then steps latitude bands alternately
toward +90 and -90 with the same longitudinal sweep, and ends with one
dedicated view per pole. Per-band view counts come from the requested
longitudinal stride rounded so the band closes exactly; alternation keeps
the known frontier compact.

Planning is pure and deterministic: identical inputs give identical plans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .canvas import Panorama
from .errors import PlanningError, SchedulingError, SteeringError
from .geometry import ViewSpec, latitude_weights, view_footprint

_VALIDATION_WIDTH = 256  # footprint grid used for plan-time checks


@dataclass(frozen=True)
class TraversalPlan:
    views: tuple
    stride_lon: float
    stride_lat: float
    min_overlap: float

    def __len__(self):
        return len(self.views)

    def to_dict(self) -> dict:
        return {
            "stride_lon": self.stride_lon,
            "stride_lat": self.stride_lat,
            "min_overlap": self.min_overlap,
            "views": [v.to_dict() for v in self.views],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraversalPlan":
        return cls(
            views=tuple(ViewSpec.from_dict(v) for v in d["views"]),
            stride_lon=d["stride_lon"],
            stride_lat=d["stride_lat"],
            min_overlap=d["min_overlap"],
        )


def _band_offsets(stride_lon: float) -> list[float]:
    """Longitude offsets 0, +s, -s, +2s, ... closing the band exactly."""
    n = math.ceil(360.0 / stride_lon)
    s = 360.0 / n
    offsets = [0.0]
    j = 1
    while len(offsets) < n:
        offsets.append(j * s)
        if len(offsets) < n:
            offsets.append(-j * s)
        j += 1
    return offsets


def _weighted_fraction(mask: np.ndarray, wgt: np.ndarray) -> float:
    counts = mask.sum(axis=1, dtype=np.int64).astype(np.float64)
    full = np.full(mask.shape[0], float(mask.shape[1]))
    return float(np.dot(counts, wgt) / np.dot(full, wgt))


def _overlap_fraction(foot: np.ndarray, known: np.ndarray, wgt: np.ndarray) -> float:
    """Solid-angle share of a footprint already covered by `known`.

    Row-count reduction keeps the value invariant under horizontal rolls
    of both masks, so scheduling decisions commute with exact rotations.
    """
    inter = (foot & known).sum(axis=1, dtype=np.int64).astype(np.float64)
    total = foot.sum(axis=1, dtype=np.int64).astype(np.float64)
    denom = float(np.dot(total, wgt))
    if denom == 0.0:
        return 0.0
    return float(np.dot(inter, wgt)) / denom


def plan_traversal(
    start: ViewSpec,
    pano_width: int,
    stride_lon: float = 45.0,
    stride_lat: float = 45.0,
    min_overlap: float = 0.25,
) -> TraversalPlan:
    """Deterministic band-then-pole traversal starting at ``start``.

    Raises PlanningError when a stride reaches the fov (no overlap is
    possible) or when the resulting plan violates its own coverage or
    min-overlap invariants on the validation grid.
    """
    if not (0.0 < stride_lon < start.fov_deg):
        raise PlanningError(
            f"stride_lon {stride_lon} must be positive and below fov {start.fov_deg}"
        )
    if not (0.0 < stride_lat < start.fov_deg):
        raise PlanningError(
            f"stride_lat {stride_lat} must be positive and below fov {start.fov_deg}"
        )
    if not (0.0 < min_overlap <= 0.9):
        raise PlanningError(f"min_overlap must lie in (0, 0.9], got {min_overlap}")

    offsets = _band_offsets(stride_lon)

    def band(lat: float) -> list[ViewSpec]:
        return [
            ViewSpec(start.lon + off, lat, start.fov_deg, start.width, start.height)
            for off in offsets
        ]

    views: list[ViewSpec] = list(band(start.lat))
    poles: list[float] = []
    k = 1
    up_open, down_open = True, True
    while up_open or down_open:
        if up_open:
            lat = start.lat + k * stride_lat
            if lat >= 90.0:
                poles.append(90.0)
                up_open = False
            else:
                views.extend(band(lat))
        if down_open:
            lat = start.lat - k * stride_lat
            if lat <= -90.0:
                poles.append(-90.0)
                down_open = False
            else:
                views.extend(band(lat))
        k += 1
    for pole_lat in poles:
        views.append(
            ViewSpec(start.lon, pole_lat, start.fov_deg, start.width, start.height)
        )

    plan = TraversalPlan(tuple(views), stride_lon, stride_lat, min_overlap)
    _validate_plan(plan, min(pano_width, _VALIDATION_WIDTH))
    return plan


def _validate_plan(plan: TraversalPlan, grid_width: int) -> None:
    grid_width = max(16, grid_width - grid_width % 2)
    wgt = latitude_weights(grid_width // 2)
    union = np.zeros((grid_width // 2, grid_width), dtype=bool)
    for i, view in enumerate(plan.views):
        foot = view_footprint(view, grid_width)
        if i > 0:
            frac = _overlap_fraction(foot, union, wgt)
            if frac < plan.min_overlap:
                raise PlanningError(
                    f"view {i} at ({view.lon}, {view.lat}) overlaps prior coverage "
                    f"by {frac:.3f} < min_overlap {plan.min_overlap}"
                )
        union |= foot
    if not union.all():
        raise PlanningError("plan does not cover the full sphere")


def next_view(plan: TraversalPlan, state: Panorama, cursor: int):
    """First planned view at/after ``cursor`` with work left to do.

    Skips views whose footprint is already fully known. A candidate must
    contain at least one unknown pixel and overlap the known region by at
    least min_overlap of its own footprint. Returns (index, view), or None
    once the panorama is complete.
    """
    if state.known_fraction == 1.0:
        return None
    if cursor < 0 or cursor > len(plan.views):
        raise SchedulingError(f"cursor {cursor} outside plan of {len(plan.views)}")
    wgt = latitude_weights(state.height)
    for i in range(cursor, len(plan.views)):
        view = plan.views[i]
        foot = view_footprint(view, state.width)
        unknown = foot & ~state.mask
        if not unknown.any():
            continue
        frac = _overlap_fraction(foot, state.mask, wgt)
        if frac >= plan.min_overlap:
            return i, view
        raise SchedulingError(
            f"plan view {i} at ({view.lon}, {view.lat}) has unknown pixels but "
            f"known overlap {frac:.3f} < min_overlap {plan.min_overlap}"
        )
    raise SchedulingError("plan exhausted before reaching full coverage")


def replan_from(state: Panorama, user_view: ViewSpec, plan: TraversalPlan) -> TraversalPlan:
    """New plan that starts at a user-steered view and still covers the rest.

    The steered view must see both known context (>= min_overlap of its
    footprint) and at least one unknown pixel; otherwise a SteeringError
    carries a hint pointing at the nearest scheduled frontier view.
    """
    foot = view_footprint(user_view, state.width)
    unknown = foot & ~state.mask
    wgt = latitude_weights(state.height)
    frac = _overlap_fraction(foot, state.mask, wgt)
    problem = None
    if not unknown.any():
        problem = "the chosen view is already fully generated"
    elif frac < plan.min_overlap:
        problem = (
            f"the chosen view overlaps known content by {frac:.3f}, "
            f"below the required {plan.min_overlap}"
        )
    if problem is not None:
        hint = None
        try:
            nxt = next_view(plan, state, 0)
            if nxt is not None:
                hint = (nxt[1].lon, nxt[1].lat)
        except SchedulingError:
            pass
        raise SteeringError(problem, hint=hint)

    tail = plan_traversal(
        user_view, state.width, plan.stride_lon, plan.stride_lat, plan.min_overlap
    )
    return tail
