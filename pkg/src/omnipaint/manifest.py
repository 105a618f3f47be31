"""Run records and configuration: the persistent, replayable identity of a
generation run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .geometry import ViewSpec


@dataclass(frozen=True)
class StepRecord:
    """One autoregressive step: what ran, with what guidance, and how it went."""

    index: int
    view: ViewSpec
    prompt_in_force: str
    seed: int
    generator_id: str
    known_fraction_after: float
    duration_ms: float
    status: str = "ok"  # "ok" or "failed:<reason>"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["view"] = self.view.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        d = dict(d)
        d["view"] = ViewSpec.from_dict(d["view"])
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    """Engine configuration for one run. Defaults follow the 90-degree
    square input setup with 45-degree strides."""

    pano_width: int = 1024
    view_fov: float = 90.0
    view_size: int = 128
    stride_lon: float = 45.0
    stride_lat: float = 45.0
    min_overlap: float = 0.25
    base_seed: int = 0
    attention_layers: int = 2
    embed_dim: int = 64
    patch_grid: int = 8
    omni_face_size: int = 64
    geometry_channels: int = 4
    conditioning_seed: int = 0
    global_on: bool = True
    local_on: bool = True
    geometry_on: bool = True
    generator: str = "reference"  # "reference" or an http(s) endpoint URL
    remote_timeout: float = 30.0
    remote_retries: int = 3
    remote_backoff: float = 0.25

    def __post_init__(self):
        if self.pano_width % 2 or self.pano_width < 8:
            raise ConfigError(
                f"pano_width must be even and >= 8, got {self.pano_width}"
            )
        if not (0.0 < self.view_fov <= 120.0):
            raise ConfigError(f"view_fov must lie in (0, 120], got {self.view_fov}")
        if self.view_size < 8:
            raise ConfigError(f"view_size must be >= 8, got {self.view_size}")
        if not (0.0 < self.min_overlap <= 0.9):
            raise ConfigError(f"min_overlap must lie in (0, 0.9], got {self.min_overlap}")
        if not (0.0 < self.stride_lon < self.view_fov):
            raise ConfigError("stride_lon must be positive and below view_fov")
        if not (0.0 < self.stride_lat < self.view_fov):
            raise ConfigError("stride_lat must be positive and below view_fov")
        if self.geometry_channels not in (2, 4):
            raise ConfigError("geometry_channels must be 2 or 4")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class RunManifest:
    """Ordered step records plus everything needed to replay the run."""

    run_id: str
    created_at: str
    config: RunConfig
    initial_view: ViewSpec
    input_sha256: str
    plan: dict  # serialized TraversalPlan
    cursor: int = 0
    generation: int = 0
    complete: bool = False
    steps: list = field(default_factory=list)  # list[StepRecord]
    prompt_history: list = field(default_factory=list)  # list[(step, prompt)]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "config": self.config.to_dict(),
            "initial_view": self.initial_view.to_dict(),
            "input_sha256": self.input_sha256,
            "plan": self.plan,
            "cursor": self.cursor,
            "generation": self.generation,
            "complete": self.complete,
            "steps": [s.to_dict() for s in self.steps],
            "prompt_history": [list(p) for p in self.prompt_history],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(
            run_id=d["run_id"],
            created_at=d["created_at"],
            config=RunConfig.from_dict(d["config"]),
            initial_view=ViewSpec.from_dict(d["initial_view"]),
            input_sha256=d["input_sha256"],
            plan=d["plan"],
            cursor=d["cursor"],
            generation=d["generation"],
            complete=d["complete"],
            steps=[StepRecord.from_dict(s) for s in d["steps"]],
            prompt_history=[tuple(p) for p in d["prompt_history"]],
        )

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls.from_dict(json.loads(text))

    @property
    def current_prompt(self) -> str:
        return self.prompt_history[-1][1] if self.prompt_history else ""
