import numpy as np
import pytest

from intervgap.data import Dataset, RoleMap


@pytest.fixture
def write_file(tmp_path):
    """Write text to a file under tmp_path and return its path."""
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return p
    return _write


def make_roles(**kw):
    base = dict(exposure="A", outcome="Y", mediators=("M",), covariates=("C",), confounders=())
    base.update(kw)
    return RoleMap(**base)


def toy_dataset(n=400, seed=0):
    """Binary A and M, continuous C and Y."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=n)
    a = (rng.random(n) < 0.5).astype(float)
    m = (rng.random(n) < 0.3 + 0.3 * a).astype(float)
    y = 1.0 + 0.5 * c + 0.7 * m - 0.4 * a + rng.normal(size=n)
    return Dataset({"A": a, "Y": y, "C": c, "M": m})


MINIMAL_CONFIG = """\
version: 1
seed: 11
data: {path: data.tsv}
roles: {exposure: A, outcome: Y, mediators: [M], covariates: [C]}
settings: {z_draws: 5, b_bootstrap: %(b)d}
assumptions: [consistency, positivity, A2]
queries:
  - name: align
    kind: IE_obs
    target: [M]
    source: {type: pooled}
  - name: single
    kind: IE_obs
    population: whole
    sweep: [M]
    source: {type: pooled}
decompositions:
  - {name: ob, flavor: ob_m, mediator: M}
output: {dir: out}
"""


@pytest.fixture
def analysis_dir(tmp_path):
    """Directory holding a toy data.tsv; returns a writer for config.yaml."""
    from intervgap.data import write_table

    write_table(tmp_path / "data.tsv", toy_dataset(600, 0))

    def _config(text=None, b=3):
        p = tmp_path / "config.yaml"
        p.write_text(text if text is not None else MINIMAL_CONFIG % {"b": b})
        return p
    return _config


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def _log(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)
        return ok
    return _log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
