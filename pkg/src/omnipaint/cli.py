"""Command-line entry points for the run lifecycle.

Exit codes: 0 ok, 2 config error, 3 generator error, 4 state error.
The OMNIPAINT_GENERATOR_ENDPOINT environment variable overrides the
configured generator endpoint.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    GeneratorError,
    GeometryError,
    NumericError,
    PlanningError,
    ProtocolError,
    SchedulingError,
    StateError,
    SteeringError,
    TransportError,
)
from .geometry import ViewSpec
from .manifest import RunConfig
from .pipeline import Run

EXIT_CONFIG = 2
EXIT_GENERATOR = 3
EXIT_STATE = 4

_CONFIG_ERRORS = (ConfigError, DimensionError, GeometryError, PlanningError, NumericError)
_GENERATOR_ERRORS = (GeneratorError, TransportError, ProtocolError, ContractError)
_STATE_ERRORS = (StateError, SchedulingError, SteeringError)


def _run(fn):
    try:
        fn()
    except _CONFIG_ERRORS as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except _GENERATOR_ERRORS as exc:
        click.echo(f"generator error: {exc}", err=True)
        sys.exit(EXIT_GENERATOR)
    except _STATE_ERRORS as exc:
        click.echo(f"state error: {exc}", err=True)
        sys.exit(EXIT_STATE)


@click.group()
def main():
    """Autoregressive 360-degree panorama outpainting."""


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--yaw", type=float, default=0.0, help="view center longitude, degrees")
@click.option("--pitch", type=float, default=0.0, help="view center latitude, degrees")
@click.option("--fov", type=float, default=90.0)
@click.option("--pano-width", type=int, default=1024)
@click.option("--prompt", type=str, default="")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--generator", type=str, default="reference")
def init(input_path, yaw, pitch, fov, pano_width, prompt, out_dir, seed, generator):
    """Start a run from a narrow-field-of-view seed image."""

    def go():
        png = Path(input_path).read_bytes()
        w, h = _png_size(png)
        view = ViewSpec(yaw, pitch, fov, w, h)
        config = RunConfig(
            pano_width=pano_width,
            view_fov=fov,
            view_size=w,
            base_seed=seed,
            generator=generator,
        )
        run = Run.init(out_dir, png, view, config, prompt=prompt)
        click.echo(
            f"initialized run {run.manifest.run_id} at {out_dir} "
            f"(known fraction {run.state.known_fraction:.4f})"
        )

    _run(go)


def _png_size(png: bytes):
    import io

    from PIL import Image

    with Image.open(io.BytesIO(png)) as im:
        return im.size


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--prompt", type=str, default=None)
@click.option("--yaw", type=float, default=None)
@click.option("--pitch", type=float, default=None)
@click.option("--seed", type=int, default=None)
def step(run_dir, prompt, yaw, pitch, seed):
    """Execute one outpainting step (optionally steered)."""

    def go():
        run = Run.load(run_dir)
        view = None
        if yaw is not None or pitch is not None:
            cfg = run.manifest.config
            view = ViewSpec(
                yaw or 0.0, pitch or 0.0, cfg.view_fov, cfg.view_size, cfg.view_size
            )
        record = run.step(prompt=prompt, view=view, seed=seed)
        click.echo(
            f"step {record.index}: {record.status} "
            f"known_fraction={record.known_fraction_after:.4f}"
        )
        if not record.ok:
            sys.exit(EXIT_GENERATOR)

    _run(go)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--steps", default="all", help="number of steps or 'all'")
def auto(run_dir, steps):
    """Step repeatedly until the panorama is complete."""

    def go():
        limit = None if steps == "all" else int(steps)
        run = Run.load(run_dir)
        failed = False
        for record in run.auto(steps=limit):
            click.echo(
                f"step {record.index}: {record.status} "
                f"known_fraction={record.known_fraction_after:.4f}"
            )
            if not record.ok:
                failed = True
                break
        if failed:
            sys.exit(EXIT_GENERATOR)
        click.echo(f"complete: {run.manifest.complete}")

    _run(go)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def export(run_dir, out_path):
    """Write the final equirect PNG, cubemap faces, and manifest copy."""

    def go():
        run = Run.load(run_dir)
        paths = run.export(out_path)
        click.echo(f"exported {paths['panorama']}")

    _run(go)


@main.command()
@click.option("--port", type=int, default=8360)
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--host", type=str, default="127.0.0.1")
def serve(port, data_dir, host):
    """Serve the steering HTTP API."""

    def go():
        from .service import serve as _serve

        _serve(port, data_dir, host)

    _run(go)


if __name__ == "__main__":
    main()
