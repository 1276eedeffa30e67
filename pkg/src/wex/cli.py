"""Command line surface: run the pipeline on a scene directory, then render,
validate, or export what it produced.

Every flag mirrors a RunConfig field and can also be set through the
environment as WEX_<FIELD> (flags win over the environment, which wins over
defaults). Scene state lives under ``--scenes-dir/<scene>/``.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import __version__, pipeline
from .backends import BackendSuite, remote_suite
from .manifest import STAGE1, STAGE2, STAGE3, STAGES, ManifestError, RunConfig
from .pipeline import LockError, SceneLayout, StageError

logger = logging.getLogger(__name__)

DEFAULTS = RunConfig()


def _normalize_endpoint(value: str | None) -> str | None:
    return None if value in (None, "", "oracle") else value


def suite_for(endpoint_flag: str | None, config: RunConfig) -> BackendSuite:
    """Pick backends: the CLI flag wins, then the scene's recorded endpoint,
    then the built-in synthetic oracle."""
    target = endpoint_flag if endpoint_flag is not None else config.endpoint
    target = _normalize_endpoint(target)
    if target is None:
        from .oracle import OracleConfig, oracle_suite

        return oracle_suite(OracleConfig(fov_deg=config.fov_deg, seed=config.seed))
    return remote_suite(target)


def scene_argument(fn):
    fn = click.option("--scenes-dir", default="scenes", envvar="WEX_SCENES_DIR",
                      show_default=True, type=click.Path(file_okay=False),
                      help="Directory holding all scenes.")(fn)
    return click.argument("scene")(fn)


def endpoint_option(fn):
    return click.option("--endpoint", default=None, envvar="WEX_ENDPOINT",
                        help="Backend server URL; 'oracle' forces the built-in "
                             "synthetic world. Defaults to the scene's recorded "
                             "choice, or the oracle for new scenes.")(fn)


def config_options(fn):
    opts = [
        click.option("--prompt-base", default=DEFAULTS.prompt_base,
                     show_default=True, envvar="WEX_PROMPT_BASE",
                     help="Scene description shared by every generation prompt."),
        click.option("--view-prefixes", multiple=True,
                     default=DEFAULTS.view_prefixes, envvar="WEX_VIEW_PREFIXES",
                     help="Four prompt prefixes, one per seed wall."),
        click.option("--inpaint-prompt", default=None, envvar="WEX_INPAINT_PROMPT",
                     help="Prompt for hole filling (defaults to --prompt-base)."),
        click.option("--resolution", type=int, default=DEFAULTS.resolution,
                     show_default=True, envvar="WEX_RESOLUTION"),
        click.option("--fov-deg", type=float, default=DEFAULTS.fov_deg,
                     show_default=True, envvar="WEX_FOV_DEG"),
        click.option("--seed", type=int, default=DEFAULTS.seed,
                     show_default=True, envvar="WEX_SEED"),
        click.option("--zoom-frames", type=int, default=DEFAULTS.zoom_frames,
                     show_default=True, envvar="WEX_ZOOM_FRAMES"),
        click.option("--rotate-frames", type=int, default=DEFAULTS.rotate_frames,
                     show_default=True, envvar="WEX_ROTATE_FRAMES"),
        click.option("--elevate-frames", type=int, default=DEFAULTS.elevate_frames,
                     show_default=True, envvar="WEX_ELEVATE_FRAMES"),
        click.option("--batch-size", type=int, default=DEFAULTS.batch_size,
                     show_default=True, envvar="WEX_BATCH_SIZE",
                     help="Most frames one video call may target."),
        click.option("--anchor-stride", type=int, default=DEFAULTS.anchor_stride,
                     show_default=True, envvar="WEX_ANCHOR_STRIDE"),
        click.option("--max-dynamic", type=int, default=DEFAULTS.max_dynamic,
                     show_default=True, envvar="WEX_MAX_DYNAMIC",
                     help="Scene-memory frames added to the eight scaffold conditions."),
        click.option("--opposite-deg", type=float, default=DEFAULTS.opposite_deg,
                     show_default=True, envvar="WEX_OPPOSITE_DEG"),
        click.option("--collision-threshold", type=float,
                     default=DEFAULTS.collision_threshold, show_default=True,
                     envvar="WEX_COLLISION_THRESHOLD"),
        click.option("--crop-fraction", type=float, default=DEFAULTS.crop_fraction,
                     show_default=True, envvar="WEX_CROP_FRACTION"),
        click.option("--gaussian-count", type=int, default=DEFAULTS.gaussian_count,
                     show_default=True, envvar="WEX_GAUSSIAN_COUNT"),
        click.option("--optimize-steps", type=int, default=DEFAULTS.optimize_steps,
                     show_default=True, envvar="WEX_OPTIMIZE_STEPS"),
        click.option("--lambda-l1", type=float, default=DEFAULTS.lambda_l1,
                     show_default=True, envvar="WEX_LAMBDA_L1"),
        click.option("--lambda-ssim", type=float, default=DEFAULTS.lambda_ssim,
                     show_default=True, envvar="WEX_LAMBDA_SSIM"),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return endpoint_option(fn)


def build_config(params: dict) -> RunConfig:
    return RunConfig(
        prompt_base=params["prompt_base"],
        view_prefixes=tuple(params["view_prefixes"]),
        inpaint_prompt=params["inpaint_prompt"],
        resolution=params["resolution"],
        fov_deg=params["fov_deg"],
        seed=params["seed"],
        zoom_frames=params["zoom_frames"],
        rotate_frames=params["rotate_frames"],
        elevate_frames=params["elevate_frames"],
        batch_size=params["batch_size"],
        anchor_stride=params["anchor_stride"],
        max_dynamic=params["max_dynamic"],
        opposite_deg=params["opposite_deg"],
        collision_threshold=params["collision_threshold"],
        crop_fraction=params["crop_fraction"],
        gaussian_count=params["gaussian_count"],
        optimize_steps=params["optimize_steps"],
        lambda_l1=params["lambda_l1"],
        lambda_ssim=params["lambda_ssim"],
        endpoint=_normalize_endpoint(params["endpoint"]),
    )


def _run(layout: SceneLayout, stages: tuple, endpoint: str | None,
         config: RunConfig | None) -> dict:
    factory = lambda cfg: suite_for(endpoint, cfg)  # noqa: E731
    try:
        return pipeline.run_stages(layout, stages, factory, config=config)
    except (StageError, LockError, ManifestError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
@click.version_option(__version__, prog_name="wex")
@click.option("--quiet", "-q", is_flag=True, help="Only warnings and errors.")
def main(quiet: bool) -> None:
    """Turn a text prompt into a navigable Gaussian-splat scene."""
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="[%(levelname).1s] %(message)s", stream=sys.stderr)


@main.command()
@scene_argument
@config_options
def run(scene: str, scenes_dir: str, endpoint: str | None, **params) -> None:
    """Run all three stages (resumes where a previous run stopped)."""
    layout = SceneLayout(Path(scenes_dir) / scene)
    params["endpoint"] = endpoint
    manifest = _run(layout, STAGES, endpoint, build_config(params))
    click.echo(f"scene {scene!r} complete: "
               f"{manifest['stages'][STAGE3]['gaussian_count']} Gaussians in "
               f"{manifest['stages'][STAGE3]['export_path']}")


@main.command()
@scene_argument
@config_options
def stage1(scene: str, scenes_dir: str, endpoint: str | None, **params) -> None:
    """Build the eight-view panoramic scaffold."""
    layout = SceneLayout(Path(scenes_dir) / scene)
    params["endpoint"] = endpoint
    manifest = _run(layout, (STAGE1,), endpoint, build_config(params))
    click.echo(f"stage1 complete: {len(manifest['stages'][STAGE1]['frames'])} frames")


@main.command()
@scene_argument
@endpoint_option
def stage2(scene: str, scenes_dir: str, endpoint: str | None) -> None:
    """Generate the 32 video trajectories (configuration comes from the manifest)."""
    layout = SceneLayout(Path(scenes_dir) / scene)
    manifest = _run(layout, (STAGE2,), endpoint, None)
    record = manifest["stages"][STAGE2]
    click.echo(f"stage2 complete: {len(record['trajectories'])} trajectories, "
               f"{len(record['failures'])} failed")


@main.command()
@scene_argument
@endpoint_option
def stage3(scene: str, scenes_dir: str, endpoint: str | None) -> None:
    """Reconstruct and export the Gaussian-splat scene."""
    layout = SceneLayout(Path(scenes_dir) / scene)
    manifest = _run(layout, (STAGE3,), endpoint, None)
    record = manifest["stages"][STAGE3]
    click.echo(f"stage3 complete: {record['gaussian_count']} Gaussians in "
               f"{record['export_path']}")


@main.command()
@scene_argument
@click.argument("camera_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, type=click.Path(file_okay=False),
              help="Output directory [default: <scene>/renders].")
@click.option("--gt-dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Ground-truth PNGs to score renders against (same file names).")
def render(scene: str, scenes_dir: str, camera_path: str, out: str | None,
           gt_dir: str | None) -> None:
    """Render the exported splat along a JSON camera path."""
    layout = SceneLayout(Path(scenes_dir) / scene)
    out_dir = Path(out) if out is not None else layout.path("renders")
    try:
        poses = pipeline.load_camera_path(camera_path)
        with pipeline.scene_lock(layout):
            report = pipeline.render_path(layout, poses, out_dir, gt_dir=gt_dir)
    except (LockError, ManifestError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"rendered {report['count']} images to {out_dir}")
    if "mean_ssim" in report:
        mean_psnr = report["mean_psnr"]
        click.echo(f"mean PSNR {'inf' if mean_psnr is None else f'{mean_psnr:.2f}'}  "
                   f"mean SSIM {report['mean_ssim']:.4f}")


@main.command()
@scene_argument
def validate(scene: str, scenes_dir: str) -> None:
    """Check manifest invariants, file presence, poses, and collision records."""
    layout = SceneLayout(Path(scenes_dir) / scene)
    violations = pipeline.validate_scene(layout)
    for v in violations:
        click.echo(f"{v['check']}: {v['where']}: {v['message']}")
    if violations:
        raise click.ClickException(f"{len(violations)} violation(s)")
    click.echo("no violations")


@main.command()
@scene_argument
@click.argument("dest", type=click.Path(dir_okay=False))
def export(scene: str, scenes_dir: str, dest: str) -> None:
    """Copy the exported splat PLY to DEST (verifies it parses first)."""
    layout = SceneLayout(Path(scenes_dir) / scene)
    try:
        count = pipeline.export_scene(layout, dest)
    except (ManifestError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"exported {count} Gaussians to {dest}")
