"""Command line: ``intervgap run | validate | simulate``.

Exit codes: 0 success, 1 an estimate or decomposition failed (the report
is still written), 2 a config, schema or data error.
"""

from __future__ import annotations

import logging
import sys

import click

from . import pipeline
from .errors import IntervgapError

EXIT_FAILED = 1
EXIT_INVALID = 2


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.version_option(package_name="artifact", prog_name="intervgap")
def main(verbose: bool) -> None:
    """Disparity decompositions with interventional effects."""
    _setup_logging(verbose)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
def validate(config_path: str) -> None:
    """Check a config, the data header and the queries without estimating."""
    diags = pipeline.validate(config_path)
    for d in diags:
        click.echo(str(d), err=True)
    if any(d.level == "error" for d in diags):
        sys.exit(EXIT_INVALID)
    click.echo("ok")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: output.dir of the config).")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the config seed.")
@click.option("--workers", type=click.IntRange(min=1), default=None,
              help="Bootstrap worker processes; results do not depend on it.")
@click.option("--debug-dumps", is_flag=True, help="Write per-replicate draw summaries.")
def run(config_path, out, seed, workers, debug_dumps) -> None:
    """Estimate every query and decomposition of a config."""
    try:
        result = pipeline.run(config_path, out, seed, workers, debug_dumps)
    except IntervgapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    click.echo(pipeline.summarize(result))
    click.echo(f"wrote {', '.join(p.name for p in result.files)} to {result.out_dir}")
    if result.failed:
        click.echo(f"failed: {', '.join(result.failed)}", err=True)
        sys.exit(EXIT_FAILED)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--n", "n", required=True, type=int, help="Number of rows.")
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output table path.")
def simulate(config_path, n, seed, out) -> None:
    """Sample a synthetic dataset and write its true effects alongside."""
    try:
        data_path, truth_path = pipeline.simulate(config_path, n, seed, out)
    except IntervgapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    click.echo(f"wrote {data_path} and {truth_path}")


if __name__ == "__main__":
    main()
