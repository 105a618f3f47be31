"""Run lifecycle: init, stepping, persistence, export and replay.

Crash safety relies on a single commit point. Every committed state lives
in an immutable per-generation directory::

    run/
      manifest.json            <- commit point (atomic rename)
      input.png                <- seed NFoV image
      generations/000007/      <- state.png, mask.png, state.json
      steps/000007.png         <- completed working view of step 7

A step writes its generation directory and step artifact first (fsynced),
then atomically replaces manifest.json, which is the only file the loader
trusts. Killing the process anywhere leaves the directory loadable as
either the pre-step or the post-step state, never a mix.

Replaying a manifest re-executes its recorded (view, prompt, seed) chain;
with a deterministic generator this reproduces the final state bit for
bit because the canvas itself is quantized to the PNG lattice.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
import uuid
from datetime import datetime, timezone
from pathlib import Path

from . import pngio
from .canvas import Panorama, init_from_nfov
from .errors import (
    ConfigError,
    GeneratorError,
    ProtocolError,
    StateError,
    TransportError,
)
from .generator import ReferenceGenerator, derive_seed, step_full
from .geometry import ViewSpec, equirect_to_cubemap
from .manifest import RunConfig, RunManifest, StepRecord
from .remote import RemoteGenerator
from .scheduler import TraversalPlan, next_view, plan_traversal, replan_from

ENDPOINT_ENV = "OMNIPAINT_GENERATOR_ENDPOINT"
_PERSIST_DELAY_ENV = "OMNIPAINT_PERSIST_DELAY"  # test hook: stretch the commit window


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write-temp-then-rename in the target directory, fsynced."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.tmp.")
    try:
        os.write(fd, data)
        os.fsync(fd)
        os.close(fd)
        os.replace(tmp, path)
    except Exception:
        try:
            os.close(fd)
        except OSError:
            pass
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def make_generator(config: RunConfig, cancel_event=None):
    """Resolve the configured generator; the endpoint env var wins."""
    endpoint = os.environ.get(ENDPOINT_ENV) or config.generator
    if endpoint == "reference":
        return ReferenceGenerator()
    return RemoteGenerator(
        endpoint,
        timeout=config.remote_timeout,
        retries=config.remote_retries,
        backoff=config.remote_backoff,
        cancel_event=cancel_event,
    )


class Run:
    """One persistent generation run rooted at a directory."""

    def __init__(self, run_dir: Path, manifest: RunManifest, state: Panorama):
        self.dir = Path(run_dir)
        self.manifest = manifest
        self.state = state
        self.plan = TraversalPlan.from_dict(manifest.plan)

    # -- creation / loading ---------------------------------------------

    @classmethod
    def init(
        cls,
        run_dir,
        input_png: bytes,
        view: ViewSpec,
        config: RunConfig,
        prompt: str = "",
        run_id: str = None,
    ) -> "Run":
        """Create the run directory, seed the canvas and commit step 0."""
        run_dir = Path(run_dir)
        if (run_dir / "manifest.json").exists():
            raise StateError(f"{run_dir} already holds a run")
        nfov = pngio.decode_png(input_png)
        if nfov.shape[:2] != (view.height, view.width):
            raise ConfigError(
                f"input image is {nfov.shape[1]}x{nfov.shape[0]} but the view "
                f"raster is {view.width}x{view.height}"
            )
        if not (0.0 < view.fov_deg <= 120.0):
            raise ConfigError(f"view fov must lie in (0, 120], got {view.fov_deg}")

        state = init_from_nfov(nfov, view, config.pano_width)
        plan = plan_traversal(
            view,
            config.pano_width,
            config.stride_lon,
            config.stride_lat,
            config.min_overlap,
        )
        manifest = RunManifest(
            run_id=run_id or uuid.uuid4().hex[:12],
            created_at=datetime.now(timezone.utc).isoformat(),
            config=config,
            initial_view=view,
            input_sha256=hashlib.sha256(input_png).hexdigest(),
            plan=plan.to_dict(),
            cursor=0,
            generation=0,
            complete=state.known_fraction == 1.0,
            steps=[],
            prompt_history=[(0, prompt)],
        )
        run_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(run_dir / "input.png", input_png)
        run = cls(run_dir, manifest, state)
        run._write_generation(0)
        run._commit()
        return run

    @classmethod
    def load(cls, run_dir) -> "Run":
        run_dir = Path(run_dir)
        mpath = run_dir / "manifest.json"
        if not mpath.exists():
            raise StateError(f"no run at {run_dir}")
        manifest = RunManifest.from_json(mpath.read_text())
        gen_dir = run_dir / "generations" / f"{manifest.generation:06d}"
        state = pngio.load_panorama(gen_dir / "state.png", gen_dir / "mask.png")
        return cls(run_dir, manifest, state)

    # -- persistence ------------------------------------------------------

    def _generation_dir(self, generation: int) -> Path:
        return self.dir / "generations" / f"{generation:06d}"

    def _write_generation(self, generation: int) -> None:
        gen_dir = self._generation_dir(generation)
        gen_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(gen_dir / "state.png", pngio.encode_png(self.state.image))
        atomic_write_bytes(gen_dir / "mask.png", pngio.encode_mask_png(self.state.mask))
        meta = json.dumps(
            {
                "known_fraction": self.state.known_fraction,
                "width": self.state.width,
                "height": self.state.height,
            }
        )
        atomic_write_bytes(gen_dir / "state.json", meta.encode())

    def _commit(self) -> None:
        delay = float(os.environ.get(_PERSIST_DELAY_ENV, "0") or 0)
        if delay > 0:
            time.sleep(delay)
        atomic_write_bytes(self.dir / "manifest.json", self.manifest.to_json().encode())

    # -- stepping ---------------------------------------------------------

    @property
    def complete(self) -> bool:
        return self.manifest.complete

    def _resolve_view(self, override: ViewSpec = None):
        """Pick the next view; a steering override replaces the plan."""
        if override is not None:
            new_plan = replan_from(self.state, override, self.plan)
            return override, new_plan, 1
        nxt = next_view(self.plan, self.state, self.manifest.cursor)
        if nxt is None:
            raise StateError("run is already complete")
        idx, view = nxt
        return view, None, idx + 1

    def step(self, prompt: str = None, view: ViewSpec = None, seed: int = None,
             generator=None) -> StepRecord:
        """Execute one autoregressive step and commit it atomically.

        A generator failure is committed as a failed StepRecord with the
        state untouched. Prompt overrides apply to this and later steps.
        """
        if self.manifest.complete:
            raise StateError("run is already complete")
        index = len(self.manifest.steps) + 1
        chosen_view, new_plan, new_cursor = self._resolve_view(view)
        if prompt is not None and prompt != self.manifest.current_prompt:
            self.manifest.prompt_history.append((index, prompt))
        prompt_in_force = self.manifest.current_prompt
        step_seed = seed if seed is not None else derive_seed(
            self.manifest.config.base_seed, index
        )
        if generator is None:
            generator = make_generator(self.manifest.config)

        t0 = time.perf_counter()
        try:
            new_state, record, completed = step_full(
                self.state,
                chosen_view,
                prompt_in_force,
                step_seed,
                generator,
                self.manifest.config,
                index,
            )
        except (GeneratorError, TransportError, ProtocolError) as exc:
            record = StepRecord(
                index=index,
                view=chosen_view,
                prompt_in_force=prompt_in_force,
                seed=step_seed,
                generator_id=getattr(generator, "generator_id", "unknown"),
                known_fraction_after=self.state.known_fraction,
                duration_ms=(time.perf_counter() - t0) * 1e3,
                status=f"failed:{exc}",
            )
            self.manifest.steps.append(record)
            self._commit()
            return record

        self.state = new_state
        if new_plan is not None:
            self.plan = new_plan
            self.manifest.plan = new_plan.to_dict()
        self.manifest.cursor = new_cursor
        self.manifest.generation = index
        self.manifest.steps.append(record)
        self.manifest.complete = new_state.known_fraction == 1.0

        self._write_generation(index)
        steps_dir = self.dir / "steps"
        steps_dir.mkdir(exist_ok=True)
        atomic_write_bytes(steps_dir / f"{index:06d}.png", pngio.encode_png(completed))
        self._commit()
        return record

    def auto(self, steps=None, generator=None, stop_event=None):
        """Step until complete (or ``steps`` executed), yielding records."""
        done = 0
        if generator is None:
            generator = make_generator(self.manifest.config)
        while not self.manifest.complete:
            if steps is not None and done >= steps:
                return
            if stop_event is not None and stop_event.is_set():
                return
            yield self.step(generator=generator)
            done += 1

    # -- export -----------------------------------------------------------

    def export(self, out_path) -> dict:
        """Write the final equirect PNG, cubemap faces and a manifest copy."""
        if not self.manifest.complete:
            raise StateError(
                f"run incomplete (known fraction {self.state.known_fraction:.4f})"
            )
        out_path = Path(out_path)
        out_path.mkdir(parents=True, exist_ok=True)
        pano_file = out_path / "panorama.png"
        atomic_write_bytes(pano_file, pngio.encode_png(self.state.image))
        face_size = max(8, self.state.width // 4)
        cube = equirect_to_cubemap(self.state.image, face_size)
        faces = {}
        for f, img in cube.faces.items():
            fpath = out_path / f"face_{f}.png"
            atomic_write_bytes(fpath, pngio.encode_png(img))
            faces[f] = str(fpath)
        atomic_write_bytes(out_path / "manifest.json", self.manifest.to_json().encode())
        return {"panorama": str(pano_file), "faces": faces}


def replay(run_dir, generator=None) -> Panorama:
    """Re-execute a run's recorded steps from its input image.

    With a deterministic generator the result is bitwise identical to the
    persisted final state.
    """
    run_dir = Path(run_dir)
    manifest = RunManifest.from_json((run_dir / "manifest.json").read_text())
    input_png = (run_dir / "input.png").read_bytes()
    nfov = pngio.decode_png(input_png)
    state = init_from_nfov(nfov, manifest.initial_view, manifest.config.pano_width)
    if generator is None:
        generator = make_generator(manifest.config)
    for record in manifest.steps:
        if not record.ok:
            continue
        state, _, _ = step_full(
            state,
            record.view,
            record.prompt_in_force,
            record.seed,
            generator,
            manifest.config,
            record.index,
        )
    return state
