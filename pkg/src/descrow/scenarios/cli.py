"""Command-line front door for the demo scripts and benchmarks."""
from __future__ import annotations

import json
import tempfile
from pathlib import Path

import click


@click.group()
def main():
    """Run bundled sharing scenarios and benchmarks."""


@main.command()
@click.argument("scenario", type=click.Choice(["fraud", "health", "ads", "patterns"]))
@click.option("--data-dir", type=click.Path(), default=None,
              help="Escrow data directory (default: a fresh temp dir).")
@click.option("--seed", type=int, default=None, help="Override the data seed.")
def run(scenario, data_dir, seed):
    """Run one scenario end to end and print its outcomes as JSON."""
    base = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix=f"{scenario}-"))
    base.mkdir(parents=True, exist_ok=True)
    kwargs = {"seed": seed} if seed is not None else {}
    if scenario == "fraud":
        from .fraud import run_script
        out = run_script(base, **kwargs)
    elif scenario == "health":
        from .healthcare import run_script
        out = run_script(base, **kwargs)
    elif scenario == "ads":
        from .admatch import run_script
        out = run_script(base, **kwargs)
    else:
        from .patterns import run_all
        out = run_all(base)
    click.echo(json.dumps(out, indent=2, sort_keys=True, default=str))


@main.command()
@click.argument("workload", type=click.Choice(["intermediates", "shortcircuit"]))
@click.option("--sizes", default=None,
              help="Comma-separated sizes: rows per platform (intermediates) "
                   "or total MB (shortcircuit).")
@click.option("--runs", type=int, default=None, help="Calls/repeats per size.")
@click.option("--model", type=click.Choice(["lr", "mlp"]), default="lr",
              help="Estimator for the intermediates workload.")
@click.option("--epochs", type=int, default=40,
              help="Training epochs for the shortcircuit workload.")
@click.option("--out", type=click.Path(), default=None,
              help="Report path (default: <workload>-report.json).")
@click.option("--seed", type=int, default=7)
def bench(workload, sizes, runs, model, epochs, out, seed):
    """Run a benchmark and write a JSON report plus a CSV sibling."""
    from . import bench as bench_mod

    out_path = Path(out) if out else Path(f"{workload}-report.json")
    if workload == "intermediates":
        size_list = [int(s) for s in (sizes or "50000,200000").split(",")]
        report = bench_mod.bench_intermediates(
            size_list, runs=runs or 5, model=model, seed=seed)
    else:
        size_list = [float(s) for s in (sizes or "20,60,200").split(",")]
        report = bench_mod.bench_shortcircuit(
            size_list, runs=runs or 2, epochs=epochs, seed=seed)
    path = report.write(out_path)
    click.echo(json.dumps(report.summary, indent=2, sort_keys=True))
    click.echo(f"report written to {path} (+ {path.with_suffix('.csv')})")


if __name__ == "__main__":
    main()
