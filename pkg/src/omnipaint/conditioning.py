"""Guidance construction: text, omni-visual, NFoV and geometry conditions
fused into a global and a local stream by cross-attention.

The encoders here are deterministic seeded stand-ins for large pretrained
models: shapes, determinism and stream wiring are the contract the engine
exercises, not semantics. All projection and attention weights are frozen
functions of a conditioning seed, so repeated bundle construction is
bitwise identical. A remote-embedder hook can replace them later without
touching the stream wiring.

Face vectors are always ordered F, L, B, R, U, D before attention.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .canvas import Panorama
from .errors import ConfigError, NumericError
from .geometry import FACES, ViewSpec, face_view, geometry_map_for, project_view

DEFAULT_DIM = 64
DEFAULT_GRID = 8
DEFAULT_FACE_SIZE = 64
MAX_PROMPT_CHARS = 4096


def _rng_for(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _projection(seed: int, label: str, out_dim: int, in_dim: int) -> np.ndarray:
    return _rng_for(seed, label).standard_normal((out_dim, in_dim)) / math.sqrt(in_dim)


def _block_reduce(arr: np.ndarray, grid: int, fn=np.mean) -> np.ndarray:
    """Reduce an (H, W[, C]) array onto a grid x grid lattice of cells.

    Cell boundaries are integer splits, so any raster size works.
    """
    h, w = arr.shape[:2]
    ys = (np.arange(grid + 1) * h) // grid
    xs = (np.arange(grid + 1) * w) // grid
    out_shape = (grid, grid) if arr.ndim == 2 else (grid, grid, arr.shape[2])
    out = np.zeros(out_shape)
    for i in range(grid):
        for j in range(grid):
            out[i, j] = fn(arr[ys[i] : ys[i + 1], xs[j] : xs[j + 1]], axis=(0, 1))
    return out


# -- guidance containers -----------------------------------------------------


@dataclass(frozen=True)
class TextGuidance:
    """Prompt plus its embedding, one column per token (dim x tokens)."""

    prompt: str
    embedding: np.ndarray


@dataclass(frozen=True)
class OmniVisualGuidance:
    """One embedding vector per cube face of the current canvas."""

    vectors: dict

    def matrix(self) -> np.ndarray:
        """Face vectors stacked in canonical order, shape (6, dim)."""
        return np.stack([self.vectors[f] for f in FACES])


@dataclass(frozen=True)
class LocalGuidance:
    """Patch tokens of the working view plus its geometry tokens."""

    nfov_tokens: np.ndarray  # (grid^2, dim)
    geometry_tokens: np.ndarray  # (grid^2, dim)


@dataclass(frozen=True)
class GuidanceBundle:
    """Fused global and local conditioning streams plus ablation flags."""

    global_stream: np.ndarray  # (tokens, dim)
    local_stream: np.ndarray | None  # (tokens, dim) or None when ablated
    global_on: bool = True
    local_on: bool = True
    geometry_on: bool = True

    def __post_init__(self):
        if not np.isfinite(self.global_stream).all():
            raise NumericError("global stream contains non-finite values")
        if self.local_stream is not None and not np.isfinite(self.local_stream).all():
            raise NumericError("local stream contains non-finite values")


# -- encoders ----------------------------------------------------------------


def encode_text(prompt: str, dim: int = DEFAULT_DIM, seed: int = 0) -> TextGuidance:
    """Whitespace tokens, each hashed to a seeded unit vector.

    The empty prompt is the blank-prompt baseline: a single zero token.
    """
    if len(prompt) > MAX_PROMPT_CHARS:
        raise ConfigError(f"prompt exceeds {MAX_PROMPT_CHARS} characters")
    tokens = prompt.split()
    if not tokens:
        return TextGuidance(prompt, np.zeros((dim, 1)))
    cols = []
    for tok in tokens:
        v = _rng_for(seed, f"text-token:{tok}").standard_normal(dim)
        cols.append(v / np.linalg.norm(v))
    return TextGuidance(prompt, np.stack(cols, axis=1))


def encode_omni(
    state: Panorama,
    dim: int = DEFAULT_DIM,
    seed: int = 0,
    face_size: int = DEFAULT_FACE_SIZE,
    grid: int = DEFAULT_GRID,
) -> OmniVisualGuidance:
    """Embed each cube face of the canvas (grayscale + mask, 8x8, projected).

    The projection input carries a constant bias feature so even faces that
    see no known content embed to a nonzero vector.
    """
    proj = _projection(seed, "omni-face", dim, 2 * grid * grid + 1)
    vectors = {}
    for f in FACES:
        img, msk = project_view(state.image, face_view(f, face_size), state.mask)
        gray = img.mean(axis=2)
        g8 = _block_reduce(gray, grid)
        m8 = _block_reduce(msk.astype(np.float64), grid)
        feat = np.concatenate([g8.ravel(), m8.ravel(), [1.0]])
        vectors[f] = proj @ feat
    return OmniVisualGuidance(vectors)


def encode_local(
    nfov: np.ndarray,
    nfov_mask: np.ndarray,
    view: ViewSpec,
    dim: int = DEFAULT_DIM,
    grid: int = DEFAULT_GRID,
    seed: int = 0,
    geometry_channels: int = 4,
) -> LocalGuidance:
    """Patch tokens of the working view and geometry tokens of its rays."""
    gray = nfov.mean(axis=2)
    mean_rgb = _block_reduce(nfov, grid)  # (g, g, C)
    mean_known = _block_reduce(nfov_mask.astype(np.float64), grid)
    std_gray = _block_reduce(gray, grid, fn=np.std)
    rows, cols = np.meshgrid(
        (np.arange(grid) + 0.5) / grid, (np.arange(grid) + 0.5) / grid, indexing="ij"
    )
    feats = np.concatenate(
        [
            mean_rgb.reshape(grid * grid, -1),
            mean_known.reshape(-1, 1),
            std_gray.reshape(-1, 1),
            rows.reshape(-1, 1),
            cols.reshape(-1, 1),
            np.ones((grid * grid, 1)),
        ],
        axis=1,
    )
    p_nfov = _projection(seed, "local-patch", dim, feats.shape[1])
    nfov_tokens = feats @ p_nfov.T

    gmap = geometry_map_for(view, channels=geometry_channels)
    gfeat = _block_reduce(gmap, grid).reshape(grid * grid, -1)
    p_geo = _projection(seed, "local-geometry", dim, gfeat.shape[1])
    geometry_tokens = gfeat @ p_geo.T
    return LocalGuidance(nfov_tokens, geometry_tokens)


def encode_face_geometry(
    dim: int = DEFAULT_DIM,
    seed: int = 0,
    geometry_channels: int = 4,
    face_size: int = DEFAULT_FACE_SIZE,
) -> np.ndarray:
    """One geometry token per cube face (mean ray encoding), shape (6, dim)."""
    p_geo = _projection(seed, "face-geometry", dim, geometry_channels)
    rows = []
    for f in FACES:
        gmap = geometry_map_for(f, face_size, channels=geometry_channels)
        rows.append(p_geo @ gmap.mean(axis=(0, 1)))
    return np.stack(rows)


# -- cross-attention ---------------------------------------------------------


def _rms_normalize(tokens: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(tokens * tokens, axis=1))
    return tokens / np.maximum(rms, 1e-12)[:, None]


def cross_attention_block(q, k, v, wq, wk, wv):
    """One cross-attention block: scaled dot-product, softmax over keys,
    RMS-normalized attention output added back onto the queries.

    Returns (tokens, attention weights); each weight row sums to 1.
    """
    d = q.shape[1]
    qp = q @ wq
    kp = k @ wk
    vp = v @ wv
    scores = qp @ kp.T / math.sqrt(d)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=1, keepdims=True)
    return q + _rms_normalize(attn @ vp), attn


def _fuse(q, k, v, layers, seed, label, weights=None, return_attention=False):
    if not (np.isfinite(q).all() and np.isfinite(k).all() and np.isfinite(v).all()):
        raise NumericError("attention inputs contain NaN/Inf")
    dim = q.shape[1]
    attn_maps = []
    for layer in range(layers):
        if weights is not None:
            wq, wk, wv = weights[layer]
        else:
            wq = _projection(seed, f"{label}-wq-{layer}", dim, dim).T
            wk = _projection(seed, f"{label}-wk-{layer}", dim, dim).T
            wv = _projection(seed, f"{label}-wv-{layer}", dim, dim).T
        q, attn = cross_attention_block(q, k, v, wq, wk, wv)
        attn_maps.append(attn)
    if return_attention:
        return q, attn_maps
    return q


def fuse_global(
    text: TextGuidance,
    omni: OmniVisualGuidance,
    layers: int = 2,
    seed: int = 0,
    weights=None,
    return_attention: bool = False,
):
    """Global stream: face vectors query the text tokens (key/value)."""
    q = omni.matrix()
    kv = text.embedding.T
    return _fuse(q, kv, kv, layers, seed, "global", weights, return_attention)


def fuse_local(
    local: LocalGuidance,
    omni: OmniVisualGuidance,
    layers: int = 2,
    seed: int = 0,
    geometry_on: bool = True,
    face_geometry: np.ndarray = None,
    weights=None,
    return_attention: bool = False,
):
    """Local stream: NFoV patch tokens (plus geometry) query the face
    vectors (plus per-face geometry)."""
    geo_q = local.geometry_tokens
    geo_kv = face_geometry
    if geo_kv is None:
        geo_kv = np.zeros((6, local.nfov_tokens.shape[1]))
    if not geometry_on:
        geo_q = np.zeros_like(geo_q)
        geo_kv = np.zeros_like(geo_kv)
    q = local.nfov_tokens + geo_q
    kv = omni.matrix() + geo_kv
    return _fuse(q, kv, kv, layers, seed, "local", weights, return_attention)


# -- bundle assembly ---------------------------------------------------------


@dataclass(frozen=True)
class ConditioningConfig:
    """Knobs for the stub encoders and stream fusion."""

    dim: int = DEFAULT_DIM
    grid: int = DEFAULT_GRID
    face_size: int = DEFAULT_FACE_SIZE
    layers: int = 2
    seed: int = 0
    geometry_channels: int = 4
    global_on: bool = True
    local_on: bool = True
    geometry_on: bool = True


def build_bundle(
    state: Panorama,
    nfov: np.ndarray,
    nfov_mask: np.ndarray,
    view: ViewSpec,
    prompt: str,
    cfg: ConditioningConfig = ConditioningConfig(),
) -> GuidanceBundle:
    """Assemble the per-step guidance bundle.

    Ablation wiring: with the global stream off, the raw text embedding
    stands in for it; with the local stream off it is absent; with geometry
    off the geometry tokens are zeroed on both attention sides.
    """
    text = encode_text(prompt, cfg.dim, cfg.seed)
    omni = encode_omni(state, cfg.dim, cfg.seed, cfg.face_size, cfg.grid)
    if cfg.global_on:
        global_stream = fuse_global(text, omni, cfg.layers, cfg.seed)
    else:
        global_stream = text.embedding.T
    local_stream = None
    if cfg.local_on:
        local = encode_local(
            nfov, nfov_mask, view, cfg.dim, cfg.grid, cfg.seed, cfg.geometry_channels
        )
        fg = encode_face_geometry(cfg.dim, cfg.seed, cfg.geometry_channels, cfg.face_size)
        local_stream = fuse_local(
            local, omni, cfg.layers, cfg.seed, cfg.geometry_on, fg
        )
    return GuidanceBundle(
        global_stream,
        local_stream,
        global_on=cfg.global_on,
        local_on=cfg.local_on,
        geometry_on=cfg.geometry_on,
    )
