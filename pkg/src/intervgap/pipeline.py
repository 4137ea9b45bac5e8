"""Config-driven runs: validate, run and simulate.

These functions do the work behind the ``intervgap`` command; they raise
:class:`~intervgap.errors.SchemaError` (or another
:class:`~intervgap.errors.IntervgapError`) for bad configs and data, and
record estimation failures in the report instead of raising.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path


from . import config as config_mod
from . import report as rep
from .data import (
    APPROACH3_KINDS,
    CounterfactualGroup,
    CounterfactualQuery,
    InterventionSpec,
    ObservedGroup,
    group_stats,
    ingest,
    read_header,
    resolve_binary,
    write_table,
)
from .errors import IntervgapError, SchemaError
from .gcomp import Sweep, bootstrap
from .oaxaca import decompose_classic, decompose_ob_m

logger = logging.getLogger(__name__)

# assumptions under which each kind has its causal reading
CAUSAL_FLAGS = ("consistency", "positivity", "A1", "A2", "A3", "exogeneity")
OBSERVED_FLAGS = ("consistency", "positivity", "A2")
NATURAL_FLAGS = ("A4_no_L", "A5_no_LM_interaction")


@dataclass(frozen=True)
class Diagnostic:
    level: str          # "error" or "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.message}"


def missing_assumptions(kind: str, asserted) -> list[str]:
    """Flags a query's causal reading needs but the ledger does not assert."""
    asserted = set(asserted)
    need = OBSERVED_FLAGS if kind in APPROACH3_KINDS else CAUSAL_FLAGS
    missing = [f for f in need if f not in asserted]
    if kind in ("NIE", "NDE") and not asserted & set(NATURAL_FLAGS):
        missing.append("A4_no_L or A5_no_LM_interaction")
    return missing


def check(cfg: config_mod.AnalysisConfig, base: Path | None = None) -> list[Diagnostic]:
    """Every problem a run would hit before reading data values."""
    diags = []
    err = lambda msg: diags.append(Diagnostic("error", msg))  # noqa: E731
    try:
        roles = cfg.roles.build()
    except IntervgapError as exc:
        err(f"roles: {exc}")
        return diags
    path = cfg.data_path(base)
    if not path.exists():
        err(f"data file {path} not found")
    else:
        try:
            header = read_header(path)
        except (OSError, UnicodeDecodeError, StopIteration) as exc:
            err(f"cannot read the header of {path}: {exc}")
        else:
            wanted = list(roles.all_columns) + [f.column for f in cfg.data.filters]
            missing = [c for c in dict.fromkeys(wanted) if c not in header]
            if missing:
                err(f"columns not found in {path.name}: {missing}")
    for qc in cfg.queries:
        try:
            q = qc.build()
            members = q.members() if isinstance(q, Sweep) else [(q.name, q)]
            for _, m in members:
                m.validate(roles)
        except IntervgapError as exc:
            err(f"query {qc.name!r}: {exc}")
            continue
        lacking = missing_assumptions(qc.kind, cfg.assumptions)
        if lacking:
            diags.append(Diagnostic(
                "warning",
                f"query {qc.name!r} ({qc.kind}) has its causal reading only under "
                f"{', '.join(lacking)}, which the assumption ledger does not assert "
                "(the assumptions are cumulative: consistency and positivity, then "
                "mediator-outcome ignorability, then exposure exogeneity, then A4 or A5)"))
    for dc in cfg.decompositions:
        if dc.mediator not in roles.mediators:
            err(f"decomposition {dc.name!r}: {dc.mediator!r} is not a declared mediator")
    return diags


def validate(config_path) -> list[Diagnostic]:
    """Diagnostics for a config file; never raises for config problems."""
    try:
        cfg = config_mod.parse(config_path)
    except SchemaError as exc:
        return [Diagnostic("error", part.strip()) for part in str(exc).split(";")]
    return check(cfg, Path(config_path).parent)


# ---------------------------------------------------------------------------
# run


@dataclass
class RunResult:
    report: dict
    out_dir: Path
    failed: list = field(default_factory=list)
    files: list = field(default_factory=list)


def _config_echo(cfg: config_mod.AnalysisConfig) -> dict:
    echo = cfg.model_dump(mode="json")
    # run details that must not change the report bytes
    echo["settings"].pop("workers")
    echo.pop("output")
    return echo


def run(config_path, out=None, seed: int | None = None, workers: int | None = None,
        debug_dumps: bool = False) -> RunResult:
    """Execute every query and decomposition of a config and write the outputs.

    Raises
    ------
    SchemaError
        The config is invalid (exit code 2 at the command line).
    IntervgapError
        The data cannot be used (unreadable values, an empty group).
    """
    started = time.time()
    config_path = Path(config_path)
    cfg = config_mod.parse(config_path)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    base = config_path.parent
    diags = check(cfg, base)
    errors = [d.message for d in diags if d.level == "error"]
    if errors:
        raise SchemaError("; ".join(errors))
    for d in diags:
        logger.warning(d.message)

    roles = cfg.roles.build()
    data = ingest(cfg.data_path(base), roles, [f.build() for f in cfg.data.filters])
    roles = resolve_binary(roles, data)
    stats = group_stats(data, roles)
    settings = cfg.settings.build(cfg.seed, workers)
    out_dir = Path(out) if out is not None else base / cfg.output.dir
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_dir = str(out_dir / "debug") if debug_dumps else None

    queries = [q.build() for q in cfg.queries]
    analysis = bootstrap(data, roles, queries, settings, dump_dir)
    estimates = {k: v.to_dict() for k, v in analysis.estimates.items()}
    for q, qc in zip(queries, cfg.queries):
        names = [n for n, _ in q.members()] if isinstance(q, Sweep) else [q.name]
        lacking = missing_assumptions(qc.kind, cfg.assumptions)
        for n in names:
            estimates[n]["assumptions_not_asserted"] = lacking
    failed = sorted(k for k, v in analysis.estimates.items() if not v.ok)

    ledger = cfg.ledger()
    decomps = {}
    for dc in cfg.decompositions:
        fn = decompose_ob_m if dc.flavor == "ob_m" else decompose_classic
        try:
            decomps[dc.name] = fn(data, roles, dc.mediator, ledger=ledger).to_dict()
        except IntervgapError as exc:
            decomps[dc.name] = {"error": f"{type(exc).__name__}: {exc}"}
            failed.append(dc.name)

    sweeps = {q.name: [n for n, _ in q.members()] for q in queries if isinstance(q, Sweep)}
    echo = _config_echo(cfg)
    report = {
        "schema_version": rep.SCHEMA_VERSION,
        "software": rep.software(),
        "fingerprints": {
            "config": rep.fingerprint(rep.to_json(echo)),
            "data": rep.file_fingerprint(cfg.data_path(base)),
        },
        "config": echo,
        "seed": cfg.seed,
        "data": {"n_rows": data.n_rows, "dropped_rows": data.dropped_count,
                 "binary_columns": list(roles.binary or ())},
        "group_stats": stats.to_dict(),
        "assumptions": list(ledger.asserted()),
        "models": analysis.models,
        "estimates": estimates,
        "sweeps": sweeps,
        "decompositions": decomps,
        "positivity": {k: v.positivity_rate for k, v in analysis.estimates.items()},
        "failures": sorted(failed),
    }

    files = []
    formats = cfg.output.formats
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(rep.to_json(report))
        files.append(path)
    if "tsv" in formats:
        for name, members in sweeps.items():
            sweep = next(q for q in queries if isinstance(q, Sweep) and q.name == name)
            rows = rep.sweep_rows(zip(sweep.mediators, (estimates[m] for m in members)))
            path = out_dir / f"sweep_{name}.tsv"
            rep.write_table(path, rows)
            files.append(path)
        comp = rep.component_rows(estimates)
        if comp:
            path = out_dir / "components.tsv"
            rep.write_table(path, comp, rep.COMPONENT_COLUMNS)
            files.append(path)
    meta = {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "wall_clock_seconds": round(time.time() - started, 3),
        "workers": settings.workers,
        "seed": cfg.seed,
        "config_path": str(config_path),
        "out_dir": str(out_dir),
    }
    (out_dir / "run_meta.json").write_text(rep.to_json(meta))
    return RunResult(report, out_dir, sorted(failed), files)


# ---------------------------------------------------------------------------
# simulate


def default_truth_queries(roles) -> list[CounterfactualQuery]:
    """TE plus IIE, IE and IE_obs for all mediators jointly and one at a time."""
    meds = roles.mediators
    qs = [CounterfactualQuery("TE", None, "whole", 1, "TE")]
    blocks = [("all", meds)] + ([(m, (m,)) for m in meds] if len(meds) > 1 else [])
    for label, block in blocks:
        cf = InterventionSpec(block, CounterfactualGroup(0))
        qs.append(CounterfactualQuery("IIE", cf, "whole", 1, f"IIE[{label}]"))
        qs.append(CounterfactualQuery("IE", cf, "whole", 1, f"IE[{label}]"))
        obs = InterventionSpec(block, ObservedGroup(0))
        qs.append(CounterfactualQuery("IE_obs", obs, "exposed", None, f"IE_obs[{label}]"))
    return qs


def truth_values(model, queries) -> dict:
    """True values of ``queries`` for a DiscreteSCM or a ParametricDGP."""
    from .oracle import DiscreteSCM, counterfactual_truth, enumerate_identified
    from .oracle.scm import _Calc

    scm = model
    if not isinstance(model, DiscreteSCM):
        try:
            scm = model.to_scm()
        except IntervgapError:
            scm = None
    out = {}
    if scm is not None:
        calc = _Calc(scm)
        out["disparity"] = {"value": calc.mean_y(1) - calc.mean_y(0), "method": "enumeration"}
        for q in queries:
            try:
                out[q.name] = {"value": counterfactual_truth(scm, q),
                               "identified": enumerate_identified(scm, q),
                               "method": "enumeration"}
            except IntervgapError as exc:
                out[q.name] = {"value": None, "error": str(exc)}
        return out
    for q in queries:
        try:
            out[q.name] = {"value": model.structural_truth(q), "method": "structural simulation"}
        except IntervgapError as exc:
            out[q.name] = {"value": None, "error": str(exc)}
    return out


def simulate(dgp_config_path, n: int, seed: int | None, out_path) -> tuple[Path, Path]:
    """Write a synthetic dataset and a ``.truth.json`` sidecar next to it."""
    cfg = config_mod.parse_dgp(dgp_config_path)
    model = cfg.build()
    seed = cfg.seed if seed is None else seed
    data = model.sample(n, seed) if hasattr(model, "sample") else model.generate(n, seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_table(out_path, data)
    roles = model.roles()
    queries = [qc.build() for qc in cfg.truth] or default_truth_queries(roles)
    if any(isinstance(q, Sweep) for q in queries):
        queries = [m for q in queries for _, m in (q.members() if isinstance(q, Sweep) else [(q.name, q)])]
    for q in queries:
        q.validate(roles)
    sidecar = {
        "schema_version": rep.SCHEMA_VERSION,
        "n": n,
        "seed": seed,
        "model": model.to_dict(),
        "truth": truth_values(model, queries),
    }
    if hasattr(model, "path_products"):
        sidecar["path_products"] = model.path_products()
    truth_path = out_path.with_name(out_path.name + ".truth.json")
    truth_path.write_text(rep.to_json(sidecar))
    return out_path, truth_path


def summarize(result: RunResult) -> str:
    """Short plain-text summary for the terminal."""
    lines = []
    stats = result.report["group_stats"]
    lines.append(f"disparity E[Y|A=1] - E[Y|A=0] = {stats['disparity']:.6g}")
    for name, e in sorted(result.report["estimates"].items()):
        if e.get("error"):
            lines.append(f"{name}: FAILED ({e['error']})")
            continue
        ci = e.get("ci")
        ci_txt = f" [{ci[0]:.4g}; {ci[1]:.4g}]" if ci and ci[0] is not None else ""
        lines.append(f"{name}: {e['point']:.6g}{ci_txt} ({e['percent_of_gap']:.1f}% of gap)")
    return "\n".join(lines)


__all__ = ["Diagnostic", "RunResult", "check", "run", "simulate", "validate",
           "default_truth_queries", "truth_values", "summarize"]
