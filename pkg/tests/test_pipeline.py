"""Run lifecycle: init, stepping, persistence, replay, export, crash safety."""

import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from omnipaint import pngio
from omnipaint.canvas import init_from_nfov
from omnipaint.errors import ConfigError, StateError, SteeringError
from omnipaint.generator import ReferenceGenerator
from omnipaint.geometry import ViewSpec
from omnipaint.manifest import RunConfig, RunManifest
from omnipaint.pipeline import Run, replay

VIEW = ViewSpec(0, 0, 90, 128, 128)


@pytest.fixture()
def seed_png(seed_nfov):
    return pngio.encode_png(seed_nfov)


def small_config(**kw):
    return RunConfig(pano_width=256, **kw)


class TestRunInit:
    def test_init_roundtrips_state(self, tmp_path, seed_png, seed_nfov):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config(), prompt="p")
        loaded = Run.load(tmp_path / "r")
        assert np.array_equal(loaded.state.image, run.state.image)
        assert np.array_equal(loaded.state.mask, run.state.mask)
        ref = init_from_nfov(pngio.decode_png(seed_png), VIEW, 256)
        assert np.array_equal(loaded.state.image, ref.image)

    def test_training_resolution_accepted(self, tmp_path, seed_png):
        # 4096x2048 is a supported canvas size.
        run = Run.init(
            tmp_path / "big", seed_png, VIEW, RunConfig(pano_width=4096), prompt=""
        )
        assert run.state.width == 4096

    def test_odd_pano_width_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(pano_width=255)

    def test_input_view_size_mismatch_rejected(self, tmp_path, seed_png):
        with pytest.raises(ConfigError):
            Run.init(
                tmp_path / "r", seed_png, ViewSpec(0, 0, 90, 64, 64), small_config()
            )

    def test_run_dir_collision_rejected(self, tmp_path, seed_png):
        Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        with pytest.raises(StateError):
            Run.init(tmp_path / "r", seed_png, VIEW, small_config())


class TestRunStep:
    def test_prompt_override_recorded_and_used(self, tmp_path, seed_png):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config(), prompt="first")
        gen = ReferenceGenerator()
        for _ in range(4):
            run.step(generator=gen)
        rec = run.step(prompt="second prompt", generator=gen)
        assert rec.prompt_in_force == "second prompt"
        assert (5, "second prompt") in [tuple(p) for p in run.manifest.prompt_history]
        rec6 = run.step(generator=gen)
        assert rec6.prompt_in_force == "second prompt"

    def test_failed_generator_leaves_state_unchanged(self, tmp_path, seed_png):
        from omnipaint.errors import GeneratorError

        class Exploding:
            generator_id = "exploding"

            def outpaint(self, req):
                raise GeneratorError("boom")

        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        gen_dir = run.dir / "generations" / "000000"
        before = (gen_dir / "state.png").read_bytes()
        rec = run.step(generator=Exploding())
        assert rec.status.startswith("failed:")
        assert run.manifest.generation == 0
        assert (gen_dir / "state.png").read_bytes() == before
        loaded = Run.load(run.dir)
        assert np.array_equal(loaded.state.image, run.state.image)
        assert loaded.manifest.steps[-1].status.startswith("failed:")
        # The run continues past the failure.
        rec2 = run.step(generator=ReferenceGenerator())
        assert rec2.ok and rec2.index == 2

    def test_run_to_completion_within_plan_budget(self, tmp_path, seed_png):
        # DERIVED: plan-length oracle; 26 planned views bound the ok steps.
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        records = list(run.auto())
        assert all(r.ok for r in records)
        assert len(records) <= 26
        assert run.state.known_fraction == 1.0
        assert run.manifest.complete
        fractions = [r.known_fraction_after for r in records]
        assert all(b > a for a, b in zip(fractions, fractions[1:]))
        indices = [r.index for r in records]
        assert indices == list(range(1, len(records) + 1))

    def test_step_after_completion_rejected(self, tmp_path, seed_png):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        list(run.auto())
        with pytest.raises(StateError):
            run.step()

    def test_view_override_steers_and_replans(self, tmp_path, seed_png):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        user = ViewSpec(60.0, 15.0, 90, 128, 128)
        rec = run.step(view=user)
        assert rec.view == user
        assert ViewSpec.from_dict(run.manifest.plan["views"][0]) == user
        list(run.auto())
        assert run.state.known_fraction == 1.0

    def test_view_override_on_known_area_raises(self, tmp_path, seed_png):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        with pytest.raises(SteeringError):
            run.step(view=VIEW)


class TestReplay:
    def test_replay_reproduces_final_state_bitwise(self, tmp_path, seed_png):
        run = Run.init(
            tmp_path / "r", seed_png, VIEW, small_config(base_seed=9), prompt="replay"
        )
        for _ in run.auto():
            pass
        final = replay(tmp_path / "r")
        assert np.array_equal(final.image, run.state.image)
        assert np.array_equal(final.mask, run.state.mask)

    def test_replay_with_prompt_edits_and_seeds(self, tmp_path, seed_png):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config(), prompt="a")
        gen = ReferenceGenerator()
        run.step(generator=gen)
        run.step(prompt="b", generator=gen, seed=123)
        for _ in run.auto():
            pass
        final = replay(tmp_path / "r")
        assert np.array_equal(final.image, run.state.image)


class TestExport:
    def test_export_requires_completion(self, tmp_path, seed_png):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        with pytest.raises(StateError):
            run.export(tmp_path / "out")

    def test_export_deterministic_and_roundtrippable(self, tmp_path, seed_png):
        import oracles
        from omnipaint.geometry import Cubemap, cubemap_to_equirect

        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        list(run.auto())
        run.export(tmp_path / "out1")
        run.export(tmp_path / "out2")
        a = (tmp_path / "out1" / "panorama.png").read_bytes()
        b = (tmp_path / "out2" / "panorama.png").read_bytes()
        assert a == b
        faces = {
            f: pngio.load_image(tmp_path / "out1" / f"face_{f}.png")
            for f in "FLBRUD"
        }
        back = cubemap_to_equirect(Cubemap(faces), 256)
        assert oracles.psnr(back, run.state.image) >= 35.0

    def test_initial_pixels_survive_to_export(self, tmp_path, seed_png):
        run = Run.init(tmp_path / "r", seed_png, VIEW, small_config())
        init_state = Run.load(tmp_path / "r").state
        list(run.auto())
        run.export(tmp_path / "out")
        final = pngio.load_image(tmp_path / "out" / "panorama.png")
        assert np.array_equal(final[init_state.mask], init_state.image[init_state.mask])


def _load_consistent(run_dir: Path) -> RunManifest:
    """Loading must always succeed and agree with the referenced state."""
    run = Run.load(run_dir)
    manifest = run.manifest
    gen_dir = run_dir / "generations" / f"{manifest.generation:06d}"
    assert gen_dir.exists()
    meta = json.loads((gen_dir / "state.json").read_text())
    assert meta["known_fraction"] == run.state.known_fraction
    if manifest.steps and manifest.steps[-1].ok:
        assert manifest.steps[-1].known_fraction_after == run.state.known_fraction
    return manifest


class TestCrashSafety:
    def test_kill9_mid_run_leaves_consistent_directory(self, tmp_path, seed_png):
        # Run `auto` in a subprocess with a stretched commit window and
        # SIGKILL it at staggered offsets; the directory must load as a
        # clean pre- or post-step state every time.
        run_dir = tmp_path / "r"
        Run.init(run_dir, seed_png, VIEW, small_config())
        script = (
            "from omnipaint.pipeline import Run\n"
            f"run = Run.load({str(run_dir)!r})\n"
            "list(run.auto())\n"
        )
        env = dict(os.environ, OMNIPAINT_PERSIST_DELAY="0.05")
        observed = set()
        for delay in (0.4, 0.9, 1.5):
            proc = subprocess.Popen(
                [sys.executable, "-c", script],
                env=env,
                cwd=str(tmp_path),
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
            )
            time.sleep(delay)
            if proc.poll() is None:
                os.kill(proc.pid, signal.SIGKILL)
                proc.wait()
            manifest = _load_consistent(run_dir)
            observed.add(manifest.generation)
            if manifest.complete:
                break
        assert observed, "at least one kill must have been observed"
        # Finish the run from whatever survived; it must complete cleanly.
        run = Run.load(run_dir)
        if not run.manifest.complete:
            list(run.auto())
        assert run.state.known_fraction == 1.0
