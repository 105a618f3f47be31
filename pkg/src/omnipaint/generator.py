"""Single-step conditioned outpainting behind a pluggable interface.

The deterministic reference generator fills unknown view pixels from local
structure plus guidance:

    value = 0.55 * nearest-known pull
          + 0.30 * known-region mean
          + 0.05 * guidance tint
          + 0.10 * seeded smooth noise

with tint and noise mapped into [0, 1], then clamps into [0, 1]. Known
pixels copy through untouched. The engine additionally re-imposes known
pixels after any generator call, so the compositing semantics hold even
against non-cooperative generators.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .canvas import Panorama, attach_view
from .conditioning import ConditioningConfig, GuidanceBundle, build_bundle
from .errors import ContractError, SchedulingError
from .geometry import ViewSpec, project_view, view_footprint
from .manifest import RunConfig, StepRecord

W_PULL, W_MEAN, W_TINT, W_NOISE = 0.55, 0.30, 0.05, 0.10
_TINT_SEED = 0x0A06DE7
_NOISE_GRID = 9


@dataclass(frozen=True)
class OutpaintRequest:
    """Everything one outpainting step sees."""

    nfov: np.ndarray
    nfov_mask: np.ndarray
    bundle: GuidanceBundle
    prompt: str
    seed: int
    view: ViewSpec

    def __post_init__(self):
        if self.nfov.shape[:2] != self.nfov_mask.shape:
            raise ContractError(
                f"raster {self.nfov.shape[:2]} and mask {self.nfov_mask.shape} disagree"
            )
        if not self.nfov_mask.any():
            raise ContractError("request mask has no known pixels")
        if self.nfov_mask.all():
            raise ContractError("request mask has no unknown pixels")


@dataclass(frozen=True)
class OutpaintResult:
    nfov: np.ndarray
    generator_id: str
    latency_ms: float


def derive_seed(base_seed: int, index: int) -> int:
    """Per-step seed keyed by the step index (splitmix64 mix)."""
    x = (base_seed + index * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def _guidance_tint(bundle: GuidanceBundle) -> np.ndarray:
    """Fixed projection of the global stream to an RGB value in [0, 1].

    The summary vector is the exact (fsum) mean of the leading four stream
    tokens: in the standard wiring those are the four equatorial faces, so
    the tint is invariant under whole-face horizontal rotations of the
    canvas, which permute those tokens.
    """
    g = bundle.global_stream
    lead = min(4, g.shape[0])
    summary = np.array(
        [math.fsum(g[:lead, d]) / lead for d in range(g.shape[1])]
    )
    proj = np.random.default_rng(_TINT_SEED).standard_normal((3, g.shape[1]))
    proj = proj / math.sqrt(g.shape[1])
    return 0.5 + 0.5 * np.tanh(proj @ summary)


def _smooth_noise(height: int, width: int, channels: int, seed: int) -> np.ndarray:
    """Seeded low-frequency noise field in [0, 1]."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(-1.0, 1.0, (_NOISE_GRID, _NOISE_GRID, channels))
    ys = np.linspace(0.0, _NOISE_GRID - 1.0, height)
    xs = np.linspace(0.0, _NOISE_GRID - 1.0, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, _NOISE_GRID - 1)
    x1 = np.minimum(x0 + 1, _NOISE_GRID - 1)
    yf = (ys - y0)[:, None, None]
    xf = (xs - x0)[None, :, None]
    field = (
        coarse[y0][:, x0] * (1 - yf) * (1 - xf)
        + coarse[y0][:, x1] * (1 - yf) * xf
        + coarse[y1][:, x0] * yf * (1 - xf)
        + coarse[y1][:, x1] * yf * xf
    )
    return 0.5 + 0.5 * field


def outpaint_reference(req: OutpaintRequest) -> OutpaintResult:
    """Deterministic reference implementation of the outpainting function."""
    t0 = time.perf_counter()
    known = req.nfov_mask
    img = req.nfov
    channels = img.shape[2]

    # Nearest known pixel per unknown pixel (euclidean on the pixel grid).
    idx = ndimage.distance_transform_edt(
        ~known, return_distances=False, return_indices=True
    )
    pull = img[idx[0], idx[1]]
    mean = img[known].mean(axis=0)
    tint = _guidance_tint(req.bundle)[:channels]
    noise = _smooth_noise(img.shape[0], img.shape[1], channels, req.seed)

    est = W_PULL * pull + W_MEAN * mean + W_TINT * tint + W_NOISE * noise
    out = np.where(known[..., None], img, np.clip(est, 0.0, 1.0))
    return OutpaintResult(out, "reference-v1", (time.perf_counter() - t0) * 1e3)


class ReferenceGenerator:
    """Callable wrapper so the pipeline can treat generators uniformly."""

    generator_id = "reference-v1"

    def outpaint(self, req: OutpaintRequest) -> OutpaintResult:
        return outpaint_reference(req)


def reimpose_known(result: np.ndarray, nfov: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Engine-side enforcement: known input pixels survive any generator."""
    return np.where(mask[..., None], nfov, np.clip(result, 0.0, 1.0))


def step(
    state: Panorama,
    view: ViewSpec,
    prompt: str,
    seed: int,
    generator,
    config: RunConfig = RunConfig(),
    index: int = 1,
) -> tuple[Panorama, StepRecord]:
    """Run one autoregressive outpainting step and attach the result.

    Extracts the working view from the canvas, builds the guidance bundle,
    calls the generator, re-imposes known pixels and composites the view
    back. The known fraction strictly increases.
    """
    new_state, record, _ = step_full(state, view, prompt, seed, generator, config, index)
    return new_state, record


def step_full(
    state: Panorama,
    view: ViewSpec,
    prompt: str,
    seed: int,
    generator,
    config: RunConfig = RunConfig(),
    index: int = 1,
) -> tuple[Panorama, StepRecord, np.ndarray]:
    """Like ``step`` but also returns the completed NFoV raster, which the
    pipeline persists as the step artifact."""
    t0 = time.perf_counter()
    foot = view_footprint(view, state.width)
    if not (foot & ~state.mask).any():
        raise ContractError("view is already fully known; nothing to outpaint")
    nfov, nfov_mask = project_view(state.image, view, state.mask)
    if not nfov_mask.any():
        raise ContractError("view sees no known context; scheduling contract broken")
    if nfov_mask.all():
        raise ContractError(
            "view raster too coarse to see the unknown region it must fill"
        )

    ccfg = ConditioningConfig(
        dim=config.embed_dim,
        grid=config.patch_grid,
        face_size=config.omni_face_size,
        layers=config.attention_layers,
        seed=config.conditioning_seed,
        geometry_channels=config.geometry_channels,
        global_on=config.global_on,
        local_on=config.local_on,
        geometry_on=config.geometry_on,
    )
    bundle = build_bundle(state, nfov, nfov_mask, view, prompt, ccfg)
    req = OutpaintRequest(nfov, nfov_mask, bundle, prompt, seed, view)
    result = generator.outpaint(req)

    completed = reimpose_known(result.nfov, nfov, nfov_mask)
    new_state = attach_view(state, completed, view)
    if not new_state.known_fraction > state.known_fraction:
        raise SchedulingError("step did not increase coverage")

    record = StepRecord(
        index=index,
        view=view,
        prompt_in_force=prompt,
        seed=seed,
        generator_id=result.generator_id,
        known_fraction_after=new_state.known_fraction,
        duration_ms=(time.perf_counter() - t0) * 1e3,
    )
    return new_state, record, completed
