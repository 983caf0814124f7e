"""Command-line interface: batch generation, record replay, and the HTTP service."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline
from .errors import ConfigurationError, TrajectoryError
from .geometry import CameraPose
from .metrics import sequence_consistency
from .records import SessionRecord, config_from_dict, png_bytes_to_image
from .service import default_backend_factory
from .trajectory import TrajectoryEntry, load_trajectory

EXIT_BACKEND_ERROR = 3


def _positive(ctx, param, value):
    if value is not None and value <= 0:
        raise click.BadParameter("must be a positive integer")
    return value


@click.group()
def main():
    """Perpetual flythrough synthesis by warping diffusion latents."""


@main.command()
@click.option("--prompt", help="Text prompt to generate the starting frame from.")
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False),
              help="Starting frame image (PNG/JPEG); alternative to --prompt.")
@click.option("--trajectory", "trajectory_path", type=click.Path(exists=True, dir_okay=False),
              help="Trajectory JSON file; default is straight forward motion.")
@click.option("--frames", type=int, callback=_positive, default=None,
              help="Number of frames to generate.")
@click.option("--t1", type=int, default=21, show_default=True)
@click.option("--t2", type=int, default=441, show_default=True)
@click.option("--sigma", type=float, default=20.0, show_default=True,
              help="Low-band radius of the frequency split ('inf' warps everything).")
@click.option("--lambda", "lam", type=float, default=300.0, show_default=True,
              help="Feature-correspondence guidance weight.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--backend", type=click.Choice(["mock", "mock_attention", "pretrained"]),
              default="mock", show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--metrics", "with_metrics", is_flag=True,
              help="Write adjacent-frame PSNR/SSIM reports.")
@click.option("--size", type=int, default=32, show_default=True,
              help="Image size for mock sessions (pixels, square).")
@click.option("--step-size", type=float, default=0.15, show_default=True,
              help="Forward motion per frame when no trajectory file is given.")
@click.option("--dump-latents", is_flag=True, help="Also write raw float32 latent dumps.")
@click.option("--no-ddpm-forward", is_flag=True,
              help="Ablation: skip the re-noising jump and denoise from t1 directly.")
def generate(prompt, image_path, trajectory_path, frames, t1, t2, sigma, lam, seed,
             backend, out_dir, with_metrics, size, step_size, dump_latents,
             no_ddpm_forward):
    """Generate a flythrough and write a session record directory."""
    if (prompt is None) == (image_path is None):
        raise click.UsageError("provide exactly one of --prompt or --image")
    if frames is None and trajectory_path is None:
        frames = 8

    if trajectory_path is not None:
        entries = load_trajectory(trajectory_path)
        if frames is not None:
            entries = entries[:frames]
    else:
        pose = CameraPose(np.eye(3), np.array([0.0, 0.0, -step_size]))
        entries = [TrajectoryEntry(pose=pose)] * frames

    config = pipeline.PipelineConfig(
        t1=t1, t2=t2, sigma=sigma, guidance_lambda=lam, seed=seed,
        latent_shape=(4, size, size), ddpm_forward=not no_ddpm_forward,
    )
    try:
        suite = default_backend_factory(backend, config)
    except ConfigurationError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(EXIT_BACKEND_ERROR)

    if image_path is not None:
        source_input = png_bytes_to_image(Path(image_path).read_bytes())
        source = {"type": "image"}
    else:
        source_input = prompt
        source = {"type": "prompt", "prompt": prompt}

    try:
        session = pipeline.init_session(source_input, config, suite)
    except ConfigurationError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(EXIT_BACKEND_ERROR)

    record = SessionRecord.create(out_dir, config, source, backend)
    record.write_frame(0, session.current_image)
    images = [session.current_image]
    for i, entry in enumerate(entries):
        try:
            frame = pipeline.step(session, entry.pose, entry.prompt, entry.overrides)
        except Exception as exc:  # noqa: BLE001
            click.echo(f"step {i} failed: {exc}", err=True)
            sys.exit(1)
        record.write_frame(session.frame_index, frame.image)
        record.append_log(entry, info={"hole_fraction": frame.hole_fraction})
        if dump_latents:
            record.write_latent(session.frame_index,
                                suite.autoencoder.encode(frame.image))
        images.append(frame.image)
        click.echo(f"frame {session.frame_index}: hole_fraction={frame.hole_fraction:.3f}")

    if with_metrics:
        report = sequence_consistency(images)
        (Path(out_dir) / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (Path(out_dir) / "metrics.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        click.echo(f"mean PSNR {report.mean_psnr_db:.2f} dB, mean SSIM {report.mean_ssim:.4f}")
    click.echo(f"wrote {len(images)} frames to {out_dir}")


@main.command()
@click.argument("record_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Where to write the replayed record (default: verify only).")
def replay(record_dir, out_dir):
    """Re-run a recorded trajectory and verify frames reproduce byte-for-byte."""
    record = SessionRecord(record_dir)
    snapshot = record.load_snapshot()
    config = config_from_dict(snapshot["config"])
    entries = record.load_entries()
    try:
        suite = default_backend_factory(snapshot["backend"], config)
    except ConfigurationError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(EXIT_BACKEND_ERROR)

    if snapshot["source"]["type"] == "prompt":
        source_input = snapshot["source"]["prompt"]
    else:
        source_input = record.read_frame(0)
    session = pipeline.init_session(source_input, config, suite)

    out_record = SessionRecord.create(out_dir, config, snapshot["source"],
                                      snapshot["backend"]) if out_dir else None
    if out_record:
        out_record.write_frame(0, session.current_image)

    mismatches = 0
    from .records import image_to_png_bytes

    if image_to_png_bytes(session.current_image) != record.frame_path(0).read_bytes():
        mismatches += 1
    try:
        frames = pipeline.run_trajectory(session, entries)
    except TrajectoryError as exc:
        click.echo(f"replay failed at frame {exc.frame_index}: {exc.cause}", err=True)
        sys.exit(1)
    for i, frame in enumerate(frames, start=1):
        if out_record:
            out_record.write_frame(i, frame.image)
            out_record.append_log(entries[i - 1])
        if image_to_png_bytes(frame.image) != record.frame_path(i).read_bytes():
            mismatches += 1
            click.echo(f"frame {i} differs", err=True)
    if mismatches:
        click.echo(f"replay diverged on {mismatches} frame(s)", err=True)
        sys.exit(1)
    click.echo(f"replay reproduced all {len(frames) + 1} frames byte-for-byte")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for session records (default: ./latentflight-sessions).")
def serve(host, port, store_dir):
    """Run the HTTP session service."""
    from .service import serve as run_service

    run_service(host=host, port=port, store_dir=store_dir)


if __name__ == "__main__":
    main()
