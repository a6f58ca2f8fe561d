"""
Command Line Interface for landmarkbias.

Subcommands cover scheme inspection, heatmap generation, evaluation reports,
directional error scatter, lambda estimation, fit-lab experiments and the
gradient-check suite. Output goes through Rich; library logging is routed to a
RichHandler on stderr.
"""

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import click
import numpy as np
from rich import box
from rich.align import Align
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table
from rich.text import Text

from . import __version__
from .exceptions import InputError, LandmarkError
from .fitlab import (
    FitConfig,
    estimate_lambda,
    fit_heatmap_logits,
    gen_synthetic,
    lambda_strategy,
    run_bias_experiment,
    standard_synth_config,
)
from .formats import (
    experiment_document,
    lambda_document,
    load_experiment_config,
    read_lambda_file,
    read_records,
    write_heatmap,
    write_json,
    write_pgm_channels,
    write_report_csv,
    write_report_json,
    write_scatter_csv,
    write_traces_csv,
)
from .gradcheck import run_gradcheck
from .heatmap import HeatmapGeometry, apply_e2p, fuse_point_edge, gen_edge_heatmap, gen_point_heatmap
from .loss import AWingConfig, CompositeWeights
from .metrics import DEFAULT_THRESHOLDS, NORM_KINDS, error_scatter, evaluate, join_samples
from .scheme import BUILTIN_SCHEMES, LandmarkScheme, PointSet, dump_scheme, e2p_matrix, load_scheme

console = Console()
err_console = Console(stderr=True)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2


def print_success(message: str):
    """Print a success message with rich styling."""
    console.print(f"✅ {message}", style="bold green")


def print_error(message: str):
    """Print an error message with rich styling."""
    err_console.print(f"❌ {message}", style="bold red")


def print_warning(message: str):
    """Print a warning message with rich styling."""
    console.print(f"⚠️  {message}", style="bold yellow")


def print_info(message: str):
    """Print an info message with rich styling."""
    console.print(f"ℹ️  {message}", style="bold blue")


def print_header(title: str, subtitle: Optional[str] = None):
    """Print a styled header."""
    text = Text(title, style="bold magenta")
    if subtitle:
        text.append(f"\n{subtitle}", style="dim")
    console.print(Panel(Align.center(text), box=box.DOUBLE))


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


def _fail(message: str, error: Exception):
    print_error(f"{message}: {error}")
    raise click.ClickException(str(error))


def resolve_scheme(value: str) -> LandmarkScheme:
    """A built-in scheme name or a path to a JSON scheme file."""
    if value in BUILTIN_SCHEMES:
        return BUILTIN_SCHEMES[value]()
    path = Path(value)
    if not path.exists():
        raise click.BadParameter(
            f"not a built-in scheme ({', '.join(BUILTIN_SCHEMES)}) or an existing file", param_hint="--scheme"
        )
    return load_scheme(path.read_text(encoding="utf-8"))


def _load_config(path: Optional[str]) -> Optional[Dict]:
    if path is None:
        return None
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise click.BadParameter(f"invalid JSON: {e.msg} (line {e.lineno})", param_hint="--config")
    if not isinstance(doc, dict):
        raise click.BadParameter("must hold a JSON object keyed by subcommand", param_hint="--config")
    return doc


def _spinner() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True,
    )


scheme_option = click.option(
    "--scheme",
    "scheme_name",
    default="300w",
    show_default=True,
    help="Built-in scheme name or scheme JSON file",
)
gt_option = click.option(
    "--gt",
    required=True,
    type=click.Path(exists=True),
    help="Annotations: JSON-lines file or directory of .pts files",
)
pred_option = click.option(
    "--pred", required=True, type=click.Path(exists=True, dir_okay=False), help="Predictions JSON-lines file"
)
norm_option = click.option(
    "--norm",
    type=click.Choice(NORM_KINDS),
    default="interocular",
    show_default=True,
    help="Normalization distance",
)


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON defaults keyed by subcommand; explicit flags win")
@click.option("--verbose", is_flag=True, help="Log library progress at DEBUG level")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], verbose: bool):
    """
    📐 Landmark geometry toolkit

    Anisotropic direction loss, point-edge heatmaps, directional error metrics
    and a desk-scale fitting lab.
    """
    setup_logging(verbose)
    ctx.default_map = _load_config(config_path)


# --- scheme ------------------------------------------------------------------


@cli.group()
def scheme():
    """Inspect landmark schemes."""


@scheme.command("show")
@scheme_option
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Write the scheme JSON to this file")
@click.option(
    "--format", "output_format", type=click.Choice(["table", "json"]), default="table", show_default=True
)
def scheme_show(scheme_name: str, output: Optional[str], output_format: str):
    """Show a scheme's edges and E2P coverage."""
    try:
        s = resolve_scheme(scheme_name)
    except LandmarkError as e:
        _fail("Could not load scheme", e)

    document = dump_scheme(s)
    if output:
        path = Path(output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(document, encoding="utf-8")
        print_success(f"Scheme saved to {output}")
    if output_format == "json":
        click.echo(document, nl=False)
        return

    print_header(f"📐 Scheme {s.name}", f"{s.n_points} landmarks, {s.n_edges} edges")
    table = Table(box=box.ROUNDED, border_style="cyan")
    table.add_column("#", justify="right")
    table.add_column("Edge", style="bold cyan")
    table.add_column("Vertices", overflow="fold")
    table.add_column("Closed", justify="center")
    for j, edge in enumerate(s.edges):
        table.add_row(str(j), edge.name, " ".join(map(str, edge.vertices)), "yes" if edge.closed else "no")
    console.print(table)
    uncovered = np.flatnonzero(e2p_matrix(s).entries.sum(axis=1) == 0)
    if uncovered.size:
        print_warning(f"Landmarks on no edge: {', '.join(map(str, uncovered))}")
    else:
        print_info("Every landmark lies on at least one edge")


# --- heatmap -----------------------------------------------------------------


@cli.group()
def heatmap():
    """Generate heatmap targets."""


@heatmap.command("gen")
@scheme_option
@gt_option
@click.option("--id", "record_id", help="Record to render (default: first id in sorted order)")
@click.option(
    "--kind", type=click.Choice(["point", "edge", "point_edge"]), default="point_edge", show_default=True
)
@click.option("--output", "-o", required=True, type=click.Path(), help="Output path stem for .bin/.json")
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--stride", type=float, default=4.0, show_default=True, help="Image-to-heatmap scale")
@click.option("--sigma", type=float, default=1.5, show_default=True, help="Point Gaussian sigma")
@click.option("--edge-width", type=float, default=1.0, show_default=True, help="Edge falloff width")
@click.option("--pgm-dir", type=click.Path(file_okay=False), help="Also export each channel as PGM here")
def heatmap_gen(scheme_name, gt, record_id, kind, output, width, height, stride, sigma, edge_width, pgm_dir):
    """Render point, edge or point-edge heatmaps for one annotated face."""
    try:
        s = resolve_scheme(scheme_name)
        geom = HeatmapGeometry(
            width=width, height=height, stride=stride, sigma_point=sigma, edge_width=edge_width
        )
        records = read_records(gt, s.n_points)
        if not records:
            raise InputError(f"no records in {gt}")
        key = record_id if record_id is not None else sorted(records)[0]
        if key not in records:
            raise InputError(f"no record with id {key!r}")
        truth = PointSet(records[key], unit="image")

        if kind == "point":
            hm = gen_point_heatmap(s, truth, geom)
        elif kind == "edge":
            hm = gen_edge_heatmap(s, truth, geom)
        else:
            edges = apply_e2p(gen_edge_heatmap(s, truth, geom), e2p_matrix(s))
            hm = fuse_point_edge(gen_point_heatmap(s, truth, geom), edges)

        binary, sidecar = write_heatmap(output, hm)
        print_success(f"{hm.n_channels} {kind} channel(s) of {key!r} written to {binary} and {sidecar}")
        if pgm_dir:
            paths = write_pgm_channels(pgm_dir, hm, prefix=f"{key}_{kind}")
            print_info(f"{len(paths)} PGM file(s) written to {pgm_dir}")
    except (LandmarkError, FileNotFoundError) as e:
        _fail("Heatmap generation failed", e)


# --- evaluation ----------------------------------------------------------------


def _samples(scheme_name: str, gt: str, pred: str, norm: str):
    s = resolve_scheme(scheme_name)
    with _spinner() as progress:
        progress.add_task("Reading annotations and predictions...", total=None)
        annotations = read_records(gt, s.n_points)
        predictions = read_records(pred, s.n_points)
    return s, join_samples(predictions, annotations, s, norm)


def _fmt(value: Optional[float], suffix: str = "%") -> str:
    return "undefined" if value is None else f"{value:.4f}{suffix}"


@cli.command("eval")
@scheme_option
@gt_option
@pred_option
@norm_option
@click.option("--threshold", "thresholds", type=float, multiple=True, default=DEFAULT_THRESHOLDS,
              show_default=True, help="FR/AUC threshold in percent (repeatable)")
@click.option("--report", required=True, type=click.Path(dir_okay=False), help="EvalReport JSON output")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Per-edge CSV output")
def eval_command(scheme_name, gt, pred, norm, thresholds, report, csv_path):
    """Evaluate predictions: NME, FR, AUC, directional NME and per-edge table."""
    try:
        s, samples = _samples(scheme_name, gt, pred, norm)
        result = evaluate(samples, s, thresholds=thresholds, norm=norm)
        write_report_json(report, result)
        if csv_path:
            write_report_csv(csv_path, result)
    except (LandmarkError, FileNotFoundError) as e:
        _fail("Evaluation failed", e)

    summary = Table(show_header=False, box=box.ROUNDED, border_style="cyan")
    summary.add_row("Samples", str(result.n_samples))
    summary.add_row("NME", _fmt(result.nme))
    summary.add_row("NME normal", _fmt(result.nme_normal))
    summary.add_row("NME tangent", _fmt(result.nme_tangent))
    summary.add_row("Bias rate", _fmt(result.bias_rate))
    for t in result.fr:
        summary.add_row(f"FR@{t:g}%", f"{result.fr[t]:.4f}")
        summary.add_row(f"AUC@{t:g}%", f"{result.auc[t]:.4f}")
    console.print(Panel(summary, title=f"[bold cyan]Evaluation ({norm})[/bold cyan]"))
    print_success(f"Report saved to {report}")


@cli.command("bias-report")
@scheme_option
@gt_option
@pred_option
@norm_option
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False), help="Scatter CSV output")
def bias_report(scheme_name, gt, pred, norm, output):
    """Export normalized (e_normal, e_tangent) offsets per landmark and sample."""
    try:
        s, samples = _samples(scheme_name, gt, pred, norm)
        scatter = error_scatter(samples, s)
        write_scatter_csv(output, scatter)
    except (LandmarkError, FileNotFoundError) as e:
        _fail("Bias report failed", e)

    table = Table(box=box.ROUNDED, border_style="cyan")
    table.add_column("Edge", style="bold cyan")
    table.add_column("mean |e_n|", justify="right")
    table.add_column("mean |e_t|", justify="right")
    for j, edge in enumerate(s.edges):
        idx = s.edge_points(j)
        table.add_row(
            edge.name,
            f"{np.mean(np.abs(scatter.e_normal[:, idx])):.5f}",
            f"{np.mean(np.abs(scatter.e_tangent[:, idx])):.5f}",
        )
    console.print(table)
    print_success(f"{len(scatter.ids)} sample(s) x {s.n_points} landmarks written to {output}")


@cli.command("estimate-lambda")
@scheme_option
@gt_option
@pred_option
@norm_option
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False), help="Lambda JSON output")
def estimate_lambda_command(scheme_name, gt, pred, norm, output):
    """Estimate per-landmark lambda = a/b from the error ellipses."""
    try:
        s, samples = _samples(scheme_name, gt, pred, norm)
        estimate = estimate_lambda(error_scatter(samples, s))
        write_json(output, lambda_document(estimate))
    except (LandmarkError, FileNotFoundError) as e:
        _fail("Lambda estimation failed", e)

    n_bad = int(estimate.degenerate.sum())
    if n_bad:
        print_warning(f"{n_bad} landmark(s) have a degenerate error ellipse")
    print_info(
        f"lambda range {estimate.lam.min():.3f} .. {estimate.lam.max():.3f}, "
        f"median {np.median(estimate.lam):.3f}"
    )
    print_success(f"Lambdas saved to {output}")


# --- fit lab ---------------------------------------------------------------------


def _bias_experiment(
    experiment, lambdas, seeds, sigma_normal, sigma_tangent, k, faces, lr, max_iters, workers, strategy=None
):
    synth_overrides = dict(
        sigma_normal=sigma_normal, sigma_tangent=sigma_tangent, k_annotations=k, n_faces=faces
    )
    fit_overrides = dict(learning_rate=lr, max_iters=max_iters)
    seed_list: Sequence[int] = tuple(range(seeds))
    if experiment:
        cfg = load_experiment_config(experiment)
        synth_overrides.update(cfg.synthetic)
        fit_overrides.update(cfg.fit)
        lambdas, seed_list, workers = cfg.lambdas, cfg.seeds, cfg.workers
    synth = standard_synth_config(**synth_overrides)
    fit = replace(FitConfig(path="coordinate"), **fit_overrides)
    per_landmark = None
    if strategy:
        per_landmark = lambda base: lambda_strategy(synth.scheme, strategy, base=base)  # noqa: E731

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task("Fitting seeds...", total=len(seed_list))
        result = run_bias_experiment(
            synth, fit, lambdas=lambdas, seeds=seed_list, workers=workers,
            on_seed=lambda _: progress.advance(task), strategy=per_landmark,
        )
    return result


@cli.command()
@click.option("--path", "fit_path", type=click.Choice(["coordinate", "heatmap"]), default="coordinate",
              show_default=True, help="Coordinate bias experiment or heatmap-path fit")
@click.option("--lambda", "lambdas", type=float, multiple=True, default=(1.0, 2.0), show_default=True,
              help="Lambda values to compare (repeatable)")
@click.option("--seeds", type=int, default=20, show_default=True, help="Seeds 0..n-1")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the heatmap-path face")
@click.option("--sigma-normal", type=float, default=0.15, show_default=True)
@click.option("--sigma-tangent", type=float, default=0.3, show_default=True)
@click.option("--k", type=int, default=8, show_default=True, help="Annotations per face")
@click.option("--faces", type=int, default=32, show_default=True, help="Faces per seed")
@click.option("--lr", type=float, help="Learning rate (default depends on --path)")
@click.option("--max-iters", type=int, help="Iteration budget (default depends on --path)")
@click.option("--workers", type=int, default=1, show_default=True, help="Seed worker threads")
@click.option("--strategy", type=click.Choice(["uniform", "contour", "ellipse"]),
              help="Per-landmark lambda; uniform and contour take each --lambda as the base value")
@click.option("--lambda-file", type=click.Path(exists=True, dir_okay=False),
              help="estimate-lambda output used by --strategy ellipse (heatmap path)")
@click.option("--supervise-attention", is_flag=True, help="Learn the point-edge mask with AWing supervision")
@click.option("--alpha", type=float, default=10.0, show_default=True, help="Edge AWing weight")
@click.option("--beta", type=float, default=10.0, show_default=True, help="Point AWing weight")
@click.option("--experiment", type=click.Path(exists=True, dir_okay=False), help="Experiment config JSON")
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="JSON summary output")
@click.option("--traces", type=click.Path(dir_okay=False), help="Loss trace CSV output (coordinate path)")
def fit(fit_path, lambdas, seeds, seed, sigma_normal, sigma_tangent, k, faces, lr, max_iters, workers,
        strategy, lambda_file, supervise_attention, alpha, beta, experiment, output, traces):
    """Run a fit-lab experiment on synthetic faces."""
    if lambda_file and strategy != "ellipse":
        raise click.UsageError("--lambda-file is only read by --strategy ellipse")
    if fit_path == "coordinate":
        if strategy == "ellipse":
            raise click.UsageError(
                "--strategy ellipse fixes lambda per landmark and has no base value to compare; "
                "use it with --path heatmap"
            )
        print_header("🧪 Bias experiment", "Smooth ADL1 coordinate fits on tangent-biased annotations")
        try:
            result = _bias_experiment(
                experiment, lambdas, seeds, sigma_normal, sigma_tangent, k, faces, lr, max_iters, workers,
                strategy,
            )
            if output:
                write_json(output, experiment_document(result))
            if traces:
                write_traces_csv(traces, result)
        except (LandmarkError, FileNotFoundError) as e:
            _fail("Experiment failed", e)

        table = Table(box=box.ROUNDED, border_style="green")
        for column in ("lambda", "NME", "NME normal", "NME tangent", "bias rate"):
            table.add_column(column, justify="right")
        for lam in result.outcomes:
            table.add_row(
                f"{lam:g}",
                *(_fmt(result.median(lam, m)) for m in ("nme", "nme_normal", "nme_tangent", "bias_rate")),
            )
        console.print(Panel(table, title="[bold green]Medians over seeds[/bold green]"))
        lams = list(result.outcomes)
        if len(lams) >= 2:
            wins = result.normal_wins(lams[-1], lams[0])
            n_seeds = len(result.outcomes[lams[0]])
            print_info(f"lambda {lams[-1]:g} beats {lams[0]:g} on normal NME in {wins}/{n_seeds} seeds")
        if output:
            print_success(f"Summary saved to {output}")
        return

    print_header("🧪 Heatmap-path fit", "Free landmark heatmaps through the point-edge mask")
    try:
        synth = standard_synth_config(seed=seed, n_faces=1, k_annotations=1)
        targets = gen_synthetic(synth).truth[0]
        if strategy == "ellipse":
            if not lambda_file:
                raise click.UsageError("--strategy ellipse needs --lambda-file from estimate-lambda")
            lam = read_lambda_file(lambda_file, synth.scheme.n_points)
        elif strategy:
            lam = lambda_strategy(synth.scheme, strategy, base=lambdas[-1])
        else:
            lam = lambdas[-1]
        cfg = FitConfig(
            lam=lam, path="heatmap", learning_rate=lr, max_iters=max_iters, seed=seed,
            supervise_attention=supervise_attention,
            weights=CompositeWeights(alpha_edge=alpha, beta_point=beta), awing=AWingConfig(),
        )
        with _spinner() as progress:
            progress.add_task("Optimizing heatmaps...", total=None)
            result = fit_heatmap_logits(targets, synth.scheme, HeatmapGeometry(), cfg)
    except LandmarkError as e:
        _fail("Heatmap fit failed", e)

    dist = np.linalg.norm(result.points - targets, axis=-1)
    within = float(np.mean(dist <= 0.25))
    print_info(f"{result.iterations} iterations, final loss {result.trace[-1]:.6g}")
    print_success(f"{within:.1%} of landmarks decoded within 0.25 px (max error {dist.max():.4f} px)")
    if output:
        write_json(output, {
            "decoded": result.points.tolist(),
            "targets": targets.tolist(),
            "iterations": result.iterations,
            "final_loss": result.trace[-1],
            "within_quarter_px": within,
        })
        print_success(f"Summary saved to {output}")


# --- gradient check ------------------------------------------------------------------


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tolerance", type=float, default=1e-5, show_default=True, help="Maximum relative error")
def gradcheck(seed: int, tolerance: float):
    """Check every analytic gradient against central finite differences."""
    try:
        with _spinner() as progress:
            progress.add_task("Running finite-difference checks...", total=None)
            results = run_gradcheck(seed=seed, tolerance=tolerance)
    except LandmarkError as e:
        _fail("Gradient check could not run", e)

    table = Table(box=box.ROUNDED, border_style="cyan")
    table.add_column("Check", style="bold")
    table.add_column("Coords", justify="right")
    table.add_column("Rel. error", justify="right")
    table.add_column("", justify="center")
    for r in results:
        table.add_row(r.name, str(r.n_coords), f"{r.rel_error:.2e}", "✅" if r.passed else "❌")
    console.print(table)

    failed = [r.name for r in results if not r.passed]
    if failed:
        print_error(f"Gradient check failed: {', '.join(failed)}")
        raise click.ClickException(f"{len(failed)} gradient check(s) above tolerance {tolerance:g}")
    print_success(f"All {len(results)} gradient checks within {tolerance:g}")


def run(argv: Optional[List[str]] = None) -> int:
    """
    Run the CLI and return its exit code: 0 on success, 1 on a validation error,
    2 on a usage error.
    """
    try:
        code = cli.main(args=argv, prog_name="landmarkbias", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except LandmarkError as e:
        print_error(str(e))
        return EXIT_VALIDATION
    except click.Abort:
        return EXIT_VALIDATION
    return code if isinstance(code, int) else EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
