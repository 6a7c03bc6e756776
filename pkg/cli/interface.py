import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import typer
from pydantic import ValidationError

from stereolift.config import Settings, load_settings
from stereolift.correspondence import write_warp_dump
from stereolift.database.index import ingest_manifest
from stereolift.engine.errors import ConfigError, DataError, StereoliftError
from stereolift.engine.executor import FrameExecutor
from stereolift.harness.metrics import evaluate, mean_report
from stereolift.harness.sweep import sweep_candidates
from stereolift.imaging.io import (
    read_depth,
    read_image,
    write_depth,
    write_depth_visualization,
    write_image,
    write_mask,
)
from stereolift.imaging.raster import Raster, resize_bilinear, resize_depth
from stereolift.models import BaselineKind, DepthDomain, InitScheme, StereoFormat
from stereolift.motion import segment_clip, write_homographies_csv
from stereolift.orchestrator import DepthPipeline
from stereolift.resource_guard import SolveMemoryGuard
from stereolift.stereo import compose_anaglyph, compose_interlaced, compose_side_by_side

app = typer.Typer(help="Stereolift: depth transfer and 2D-to-3D conversion")
logger = logging.getLogger("Stereolift.CLI")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

ConfigOpt = typer.Option(None, "--config", help="JSON config mirroring the flags; flags win.")
JobsOpt = typer.Option(None, "--jobs", help="Worker threads for per-frame jobs.")
LogLevelOpt = typer.Option(None, "--log-level")
StrictOpt = typer.Option(None, "--strict/--no-strict", help="Fail (exit 4) when a solve does not converge.")


def _settings(config: Optional[Path], **overrides: Any) -> Settings:
    return load_settings(config, overrides)


def _guarded(action: Callable[[], None]):
    """Map library errors onto exit codes."""
    try:
        action()
    except StereoliftError as e:
        typer.secho(f"❌ {type(e).__name__}: {e}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=e.exit_code)
    except ValidationError as e:
        typer.secho(f"❌ Invalid data: {e}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=DataError.exit_code)


def _list_frames(path: Path) -> List[Path]:
    if path.is_dir():
        frames = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not frames:
            raise DataError(f"no images in {path}")
        return frames
    if not path.exists():
        raise DataError(f"input not found: {path}")
    return [path]


def _parse_range(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as e:
        raise ConfigError(f"range must look like LO:HI, got '{text}'") from e
    return lo, hi


@app.command()
def ingest(
    manifest: Path = typer.Option(..., "--manifest", help="JSON list of clips."),
    out: Path = typer.Option(..., "--out", help="Index directory."),
    width: Optional[int] = typer.Option(None, "--width"),
    height: Optional[int] = typer.Option(None, "--height"),
    domain: Optional[DepthDomain] = typer.Option(None, "--domain"),
    config: Optional[Path] = ConfigOpt,
    jobs: Optional[int] = JobsOpt,
    log_level: Optional[str] = LogLevelOpt,
    strict: Optional[bool] = StrictOpt,
):
    """Build a database index from a manifest of RGBD clips."""
    def run():
        s = _settings(config, working_width=width, working_height=height, domain=domain,
                      jobs=jobs, log_level=log_level, strict=strict)
        typer.secho(f"--- INGEST {manifest} ---", fg=typer.colors.CYAN, bold=True)
        index = ingest_manifest(
            manifest, out,
            working_resolution=(s.WORKING_WIDTH, s.WORKING_HEIGHT),
            domain=s.DOMAIN,
            blocks=s.FLOW_BLOCKS,
            gist_size=s.GIST_SIZE,
            executor=FrameExecutor(max_concurrent=s.JOBS),
        )
        typer.secho(f"Indexed {len(index.records)} frames from {len(index.clip_ids)} clips.", fg=typer.colors.GREEN)
    _guarded(run)


@app.command()
def infer(
    index: Path = typer.Option(..., "--index"),
    input: Path = typer.Option(..., "--input", help="Image file or directory of clip frames."),
    out: Path = typer.Option(..., "--out"),
    k: Optional[int] = typer.Option(None, "--k"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    beta: Optional[float] = typer.Option(None, "--beta"),
    gamma: Optional[float] = typer.Option(None, "--gamma"),
    nu: Optional[float] = typer.Option(None, "--nu"),
    eta: Optional[float] = typer.Option(None, "--eta"),
    domain: Optional[DepthDomain] = typer.Option(None, "--domain"),
    init: Optional[InitScheme] = typer.Option(None, "--init"),
    rising_weight: Optional[bool] = typer.Option(None, "--rising-flow-weight/--no-rising-flow-weight"),
    parallax: Optional[bool] = typer.Option(None, "--parallax/--no-parallax", help="Clip has camera translation (disables the motion term)."),
    exclude_clip: Optional[str] = typer.Option(None, "--exclude-clip"),
    baseline: Optional[BaselineKind] = typer.Option(None, "--baseline"),
    warp_dump: bool = typer.Option(False, "--warp-dump"),
    convergence_log: Optional[Path] = typer.Option(None, "--convergence-log"),
    config: Optional[Path] = ConfigOpt,
    jobs: Optional[int] = JobsOpt,
    log_level: Optional[str] = LogLevelOpt,
    strict: Optional[bool] = StrictOpt,
):
    """Infer metric depth for an image or a clip."""
    def run():
        s = _settings(
            config, k=k, alpha=alpha, beta=beta, gamma=gamma, nu=nu, eta=eta, domain=domain, init=init,
            rising_flow_weight=rising_weight, parallax=parallax,
            convergence_log=str(convergence_log) if convergence_log else None,
            jobs=jobs, log_level=log_level, strict=strict,
        )
        paths = _list_frames(input)
        pipeline = DepthPipeline.from_index_dir(s, index)
        frames = [read_image(p) for p in paths]

        if baseline is not None:
            depths = [pipeline.baseline(baseline, f, exclude_clip=exclude_clip) for f in frames]
            clip = None
        else:
            clip = pipeline.infer_clip(frames, exclude_clip=exclude_clip)
            depths = clip.depths

        out.mkdir(parents=True, exist_ok=True)
        for t, (path, depth) in enumerate(zip(paths, depths)):
            write_depth(out / path.stem, depth)
            write_depth_visualization(out / f"{path.stem}_vis.png", depth)
            if warp_dump and clip is not None:
                for j, warp in enumerate(clip.per_frame[t].warps):
                    write_warp_dump(out / f"{path.stem}_warp{j}.slwd", warp)
        if clip is not None:
            r = clip.result
            typer.echo(f"Objective {r.initial_objective:.4e} -> {r.trace[-1]:.4e} in {r.iterations} IRLS steps")
        typer.secho(f"Wrote {len(depths)} depth map(s) to {out}", fg=typer.colors.GREEN)
    _guarded(run)


@app.command()
def segment(
    clip: Path = typer.Option(..., "--clip", help="Directory of frames."),
    out: Path = typer.Option(..., "--out"),
    tau: Optional[float] = typer.Option(None, "--tau"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    config: Optional[Path] = ConfigOpt,
    jobs: Optional[int] = JobsOpt,
    log_level: Optional[str] = LogLevelOpt,
    strict: Optional[bool] = StrictOpt,
):
    """Segment moving objects in a clip without camera translation."""
    def run():
        s = _settings(config, tau=tau, ransac_seed=seed, jobs=jobs, log_level=log_level, strict=strict)
        paths = _list_frames(clip)
        pipeline = DepthPipeline(s)
        frames = [pipeline.prepare(read_image(p)) for p in paths]
        result = segment_clip(frames, s.motion_config())
        for i, m in enumerate(result.masks):
            write_mask(out / f"mask_{i:04d}.png", m)
        write_homographies_csv(out / "homographies.csv", result.homographies)
        low = sum(not e.confident for e in result.homographies)
        if low:
            typer.secho(f"⚠️ {low} frame(s) fell back to the identity homography", fg=typer.colors.YELLOW)
        typer.secho(f"Wrote {len(result.masks)} masks to {out}", fg=typer.colors.GREEN)
    _guarded(run)


@app.command()
def stereo(
    depth: Path = typer.Option(..., "--depth", help="Directory of <stem>.pfm depth maps."),
    input: Path = typer.Option(..., "--input", help="Image file or directory with matching stems."),
    out: Path = typer.Option(..., "--out"),
    wmax: Optional[float] = typer.Option(None, "--wmax"),
    lam: Optional[float] = typer.Option(None, "--lambda"),
    mu: Optional[float] = typer.Option(None, "--mu"),
    window_shift: Optional[bool] = typer.Option(None, "--window-shift/--no-window-shift"),
    format: StereoFormat = typer.Option(StereoFormat.ANAGLYPH, "--format"),
    config: Optional[Path] = ConfigOpt,
    jobs: Optional[int] = JobsOpt,
    log_level: Optional[str] = LogLevelOpt,
    strict: Optional[bool] = StrictOpt,
):
    """Render stereo views from images and inferred depth."""
    def run():
        s = _settings(config, wmax=wmax, **{"lambda": lam}, mu=mu, window_shift=window_shift,
                      jobs=jobs, log_level=log_level, strict=strict)
        paths = _list_frames(input)
        depths, frames = [], []
        for p in paths:
            pfm = depth / f"{p.stem}.pfm"
            if not pfm.exists():
                raise DataError(f"no depth for {p.name} (expected {pfm})")
            d = read_depth(pfm)
            h, w = d.shape
            depths.append(d)
            frames.append(resize_bilinear(read_image(p), w, h, anti_alias=True))
        pipeline = DepthPipeline(s)
        pairs = pipeline.synthesize(frames, depths)
        compose = {
            StereoFormat.ANAGLYPH: compose_anaglyph,
            StereoFormat.SBS: compose_side_by_side,
            StereoFormat.INTERLACED: compose_interlaced,
        }[format]
        for p, pair in zip(paths, pairs):
            write_image(out / f"{p.stem}_{format.value}.png", compose(pair))
        typer.secho(f"Wrote {len(pairs)} {format.value} frame(s) to {out}", fg=typer.colors.GREEN)
    _guarded(run)


@app.command("eval")
def evaluate_cmd(
    pred: Path = typer.Option(..., "--pred", help="Directory of predicted <stem>.pfm."),
    truth: Path = typer.Option(..., "--truth", help="Directory of ground truth <stem>.pfm or .png."),
    report: Path = typer.Option(..., "--report"),
    rescale: Optional[str] = typer.Option(None, "--rescale", help="LO:HI, e.g. 1:81"),
    config: Optional[Path] = ConfigOpt,
    jobs: Optional[int] = JobsOpt,
    log_level: Optional[str] = LogLevelOpt,
    strict: Optional[bool] = StrictOpt,
):
    """Score predicted depth against ground truth (rel, log10, RMS)."""
    def run():
        s = _settings(config, jobs=jobs, log_level=log_level, strict=strict)
        rng = _parse_range(rescale) if rescale else s.rescale_range()
        per_image: Dict[str, Dict[str, Any]] = {}
        reports = []
        for p in sorted(pred.glob("*.pfm")):
            candidates = [truth / f"{p.stem}{ext}" for ext in (".pfm", ".png")]
            gt_path = next((c for c in candidates if c.exists()), None)
            if gt_path is None:
                logger.warning(f"No ground truth for {p.stem}; skipped")
                continue
            d = read_depth(p)
            g = read_depth(gt_path)
            if g.shape != d.shape:
                g = resize_depth(g, d.shape[1], d.shape[0])
            r = evaluate(d, g, rng)
            per_image[p.stem] = r.model_dump()
            reports.append(r)
        if not reports:
            raise DataError(f"no prediction/truth pairs found under {pred} and {truth}")
        summary = mean_report(reports)
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(json.dumps({"mean": summary.model_dump(), "images": per_image}, indent=2))
        typer.echo(f"rel {summary.rel:.4f}  log10 {summary.log10:.4f}  rms {summary.rms:.4f}  ({len(reports)} images)")
    _guarded(run)


@app.command()
def sweep(
    index: Path = typer.Option(..., "--index"),
    ks: str = typer.Option("1,3,5,7,9", "--ks", help="Comma-separated candidate counts."),
    report: Path = typer.Option(..., "--report"),
    queries: int = typer.Option(10, "--queries", help="Number of database frames used as hold-one-out queries."),
    rescale: Optional[str] = typer.Option(None, "--rescale"),
    config: Optional[Path] = ConfigOpt,
    jobs: Optional[int] = JobsOpt,
    log_level: Optional[str] = LogLevelOpt,
    strict: Optional[bool] = StrictOpt,
):
    """Error as a function of the number of candidates K (hold-one-clip-out)."""
    def run():
        s = _settings(config, jobs=jobs, log_level=log_level, strict=strict)
        try:
            k_values = [int(v) for v in ks.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"--ks must be integers, got '{ks}'") from e
        pipeline = DepthPipeline.from_index_dir(s, index)
        records = pipeline.index.records
        picks = np.linspace(0, len(records) - 1, num=min(queries, len(records))).round().astype(int)
        q = [(records[i].image, records[i].depth, records[i].clip_id) for i in sorted(set(picks))]
        results = sweep_candidates(pipeline, q, k_values, _parse_range(rescale) if rescale else s.rescale_range())
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(json.dumps({str(k): r.model_dump() for k, r in results.items()}, indent=2))
        for k, r in results.items():
            typer.echo(f"K={k:<3d} rel {r.rel:.4f}  log10 {r.log10:.4f}  rms {r.rms:.4f}")
    _guarded(run)


@app.command()
def doctor(
    config: Optional[Path] = ConfigOpt,
    jobs: Optional[int] = JobsOpt,
    log_level: Optional[str] = LogLevelOpt,
    strict: Optional[bool] = StrictOpt,
):
    """Print resolved settings and memory headroom."""
    def run():
        s = _settings(config, jobs=jobs, log_level=log_level, strict=strict)
        typer.secho("--- STEREOLIFT DIAGNOSTICS ---", fg=typer.colors.CYAN, bold=True)
        typer.echo(json.dumps(s.model_dump(mode="json"), indent=2))
        typer.echo(json.dumps(SolveMemoryGuard(s.MEMORY_FRACTION).headroom(3 * s.K + 5), indent=2))
    _guarded(run)


if __name__ == "__main__":
    app()
