"""HTTP API for steering runs: the surface the browser client consumes.

Endpoints::

    POST   /runs                    multipart image + config JSON -> {run_id}
    GET    /runs/{id}               manifest JSON
    GET    /runs/{id}/preview.png   current state, <=1024 wide, unknown as checkerboard
    GET    /runs/{id}/mask.png      current known mask
    POST   /runs/{id}/step          JSON overrides -> StepRecord
    POST   /runs/{id}/auto          {"steps": N | "all"} -> NDJSON StepRecords
    DELETE /runs/{id}               abort -> {"aborted": true}

Exactly one step executes at a time per run: concurrent step/auto requests
are answered 409, never queued. Reads are lock-free against the last
committed state. Preview downsampling: image by block mean, mask by center
sample, both by the same integer factor; unknown preview pixels render as
a 16 px checkerboard of 0.45/0.70 gray.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, UploadFile
from fastapi.responses import JSONResponse, Response, StreamingResponse

from . import pngio
from .errors import (
    ConfigError,
    OmnipaintError,
    StateError,
    SteeringError,
)
from .geometry import ViewSpec
from .manifest import RunConfig
from .pipeline import Run, make_generator

PREVIEW_MAX_WIDTH = 1024
CHECKER_TILE = 16
CHECKER_DARK = 0.45
CHECKER_LIGHT = 0.70


def preview_scale_factor(width: int) -> int:
    """Integer downsample factor bringing a pano width under the cap."""
    factor = 1
    while width // factor > PREVIEW_MAX_WIDTH:
        factor *= 2
    return factor


def downsample_preview(image: np.ndarray, mask: np.ndarray, factor: int):
    """Block-mean the image, center-sample the mask (documented contract)."""
    if factor == 1:
        return image, mask
    h, w = mask.shape
    hh, ww = h // factor, w // factor
    img = image[: hh * factor, : ww * factor].reshape(
        hh, factor, ww, factor, image.shape[2]
    ).mean(axis=(1, 3))
    msk = mask[factor // 2 :: factor, factor // 2 :: factor][:hh, :ww]
    return img, msk


def checkerboard_preview(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Render unknown pixels as a checkerboard; known pixels pass through."""
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    checker = np.where(
        ((yy // CHECKER_TILE) + (xx // CHECKER_TILE)) % 2 == 0,
        CHECKER_DARK,
        CHECKER_LIGHT,
    )
    out = image.copy()
    out[~mask] = checker[~mask][:, None]
    return out


class RunHandle:
    """Registry entry: a run, its single-writer lock, and its abort flag."""

    def __init__(self, run: Run):
        self.run = run
        self.lock = threading.Lock()
        self.abort = threading.Event()


def create_app(data_dir, generator_factory=None) -> FastAPI:
    """Build the service.

    ``generator_factory(config, cancel_event)`` overrides generator
    construction; tests inject slow or flaky generators through it.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="omnipaint", version="0.1.0")
    registry: dict[str, RunHandle] = {}
    registry_lock = threading.Lock()

    if generator_factory is None:
        generator_factory = lambda config, cancel: make_generator(config, cancel)

    def get_handle(run_id: str) -> RunHandle | None:
        with registry_lock:
            handle = registry.get(run_id)
            if handle is not None:
                return handle
            run_dir = data_dir / run_id
            if (run_dir / "manifest.json").exists():
                handle = RunHandle(Run.load(run_dir))
                registry[run_id] = handle
                return handle
        return None

    def error(status: int, message: str, **extra):
        return JSONResponse({"error": message, **extra}, status_code=status)

    def parse_overrides(handle: RunHandle, body: dict):
        prompt = body.get("prompt")
        seed = body.get("seed")
        view = None
        if body.get("view") is not None:
            v = body["view"]
            cfg = handle.run.manifest.config
            view = ViewSpec(
                float(v["lon"]),
                float(v.get("lat", 0.0)),
                float(v.get("fov_deg", cfg.view_fov)),
                int(v.get("width", cfg.view_size)),
                int(v.get("height", cfg.view_size)),
            )
        return prompt, view, seed

    @app.post("/runs", status_code=201)
    def create_run(image: UploadFile, config: str = Form("{}")):
        try:
            raw = json.loads(config)
        except json.JSONDecodeError as exc:
            return error(422, f"config is not valid JSON: {exc}")
        try:
            view_dict = raw.pop("view", None)
            prompt = raw.pop("prompt", "")
            run_id = raw.pop("run_id", None)
            cfg = RunConfig.from_dict(raw)
            if view_dict is None:
                view = ViewSpec(0.0, 0.0, cfg.view_fov, cfg.view_size, cfg.view_size)
            else:
                view = ViewSpec(
                    float(view_dict.get("lon", 0.0)),
                    float(view_dict.get("lat", 0.0)),
                    float(view_dict.get("fov_deg", cfg.view_fov)),
                    int(view_dict.get("width", cfg.view_size)),
                    int(view_dict.get("height", cfg.view_size)),
                )
            png = image.file.read()
            run_id = run_id or uuid.uuid4().hex[:12]
            run = Run.init(
                data_dir / run_id, png, view, cfg, prompt=prompt, run_id=run_id
            )
        except (ConfigError, OmnipaintError) as exc:
            return error(422, str(exc))
        with registry_lock:
            registry[run_id] = RunHandle(run)
        return {"run_id": run_id}

    @app.get("/runs/{run_id}")
    def get_manifest(run_id: str):
        handle = get_handle(run_id)
        if handle is None:
            return error(404, f"unknown run {run_id}")
        return handle.run.manifest.to_dict()

    @app.get("/runs/{run_id}/preview.png")
    def get_preview(run_id: str):
        handle = get_handle(run_id)
        if handle is None:
            return error(404, f"unknown run {run_id}")
        state = handle.run.state
        factor = preview_scale_factor(state.width)
        img, msk = downsample_preview(state.image, state.mask, factor)
        png = pngio.encode_png(checkerboard_preview(img, msk))
        return Response(png, media_type="image/png")

    @app.get("/runs/{run_id}/mask.png")
    def get_mask(run_id: str):
        handle = get_handle(run_id)
        if handle is None:
            return error(404, f"unknown run {run_id}")
        return Response(
            pngio.encode_mask_png(handle.run.state.mask), media_type="image/png"
        )

    @app.post("/runs/{run_id}/step")
    def post_step(run_id: str, body: dict = None):
        handle = get_handle(run_id)
        if handle is None:
            return error(404, f"unknown run {run_id}")
        body = body or {}
        if not handle.lock.acquire(blocking=False):
            return error(409, "another step is in flight")
        try:
            handle.abort.clear()  # an explicit step resumes an aborted run
            prompt, view, seed = parse_overrides(handle, body)
            generator = generator_factory(handle.run.manifest.config, handle.abort)
            record = handle.run.step(
                prompt=prompt, view=view, seed=seed, generator=generator
            )
            return record.to_dict()
        except SteeringError as exc:
            hint = None
            if exc.hint is not None:
                hint = {"lon": exc.hint[0], "lat": exc.hint[1]}
            return error(422, str(exc), hint=hint)
        except StateError as exc:
            return error(409, str(exc))
        except (ConfigError, OmnipaintError, KeyError, ValueError, TypeError) as exc:
            return error(422, str(exc))
        finally:
            handle.lock.release()

    @app.post("/runs/{run_id}/auto")
    def post_auto(run_id: str, body: dict = None):
        handle = get_handle(run_id)
        if handle is None:
            return error(404, f"unknown run {run_id}")
        body = body or {}
        steps = body.get("steps", "all")
        if steps == "all":
            limit = None
        else:
            try:
                limit = int(steps)
            except (TypeError, ValueError):
                return error(422, f"steps must be an integer or 'all', got {steps!r}")
        if not handle.lock.acquire(blocking=False):
            return error(409, "another step is in flight")
        handle.abort.clear()

        def stream():
            # The run lock is held for the whole sequence so concurrent
            # steps stay rejected, and released when the stream closes.
            try:
                generator = generator_factory(handle.run.manifest.config, handle.abort)
                for record in handle.run.auto(
                    steps=limit, generator=generator, stop_event=handle.abort
                ):
                    yield json.dumps(record.to_dict()) + "\n"
            finally:
                handle.lock.release()

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.delete("/runs/{run_id}")
    def delete_run(run_id: str):
        # Abort: in-flight auto-stepping stops at the next step boundary.
        # The handle stays registered so its step lock remains authoritative;
        # a later explicit step request resumes the run.
        handle = get_handle(run_id)
        if handle is None:
            return error(404, f"unknown run {run_id}")
        handle.abort.set()
        return {"aborted": True}

    return app


def serve(port: int, data_dir, host: str = "127.0.0.1") -> None:
    """Run the steering API under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(data_dir), host=host, port=port, log_level="warning")
