import pytest
from hypothesis import given, settings, strategies as st

from intervgap import config
from intervgap.data import CounterfactualQuery, FixConstant, Pooled
from intervgap.errors import SchemaError
from intervgap.gcomp import Sweep

from conftest import MINIMAL_CONFIG


def test_parse_builds_queries_and_settings():
    cfg = config.parse(MINIMAL_CONFIG % {"b": 7})
    q, sweep = [qc.build() for qc in cfg.queries]
    assert isinstance(q, CounterfactualQuery) and q.intervention.source == Pooled()
    assert isinstance(sweep, Sweep) and sweep.mediators == ("M",)
    s = cfg.settings.build(cfg.seed)
    assert (s.z_draws, s.b_bootstrap, s.seed) == (5, 7, 11)
    assert cfg.settings.build(cfg.seed, workers=3).workers == 3
    assert cfg.ledger().A2 and not cfg.ledger().A3


def test_dump_parse_round_trip():
    cfg = config.parse(MINIMAL_CONFIG % {"b": 2})
    assert config.parse(config.dump(cfg)) == cfg


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 500), st.integers(0, 50),
       st.dictionaries(st.sampled_from(["M1", "M2"]), st.floats(-5, 5, allow_nan=False), min_size=1))
def test_round_trip_property(seed, z, b, values):
    text = f"""
version: 1
seed: {seed}
data: {{path: x.tsv}}
roles: {{exposure: A, outcome: Y, mediators: [M1, M2]}}
settings: {{z_draws: {z}, b_bootstrap: {b}}}
queries:
  - name: q
    kind: IE_obs
    target: {sorted(values)}
    source: {{type: fix_constant, values: {values}}}
"""
    cfg = config.parse(text)
    assert config.parse(config.dump(cfg)) == cfg
    assert cfg.queries[0].build().intervention.source == FixConstant(values)


@pytest.mark.parametrize("old, new, message", [
    ("seed: 11\n", "", "seed"),
    ("z_draws: 5", "z_draws: 0", "z_draws"),
    ("b_bootstrap: 3", "b_bootstrap: -1", "b_bootstrap"),
])
def test_missing_or_invalid_values(old, new, message):
    with pytest.raises(SchemaError, match=message):
        config.parse((MINIMAL_CONFIG % {"b": 3}).replace(old, new))


def test_unknown_keys_are_errors():
    with pytest.raises(SchemaError, match="z_drawz"):
        config.parse((MINIMAL_CONFIG % {"b": 3}).replace("z_draws", "z_drawz"))


def test_unknown_source_type():
    with pytest.raises(SchemaError, match="source"):
        config.parse((MINIMAL_CONFIG % {"b": 3}).replace("type: pooled}", "type: magic}", 1))


def test_target_and_sweep_are_exclusive():
    text = (MINIMAL_CONFIG % {"b": 3}).replace("    sweep: [M]\n", "    sweep: [M]\n    target: [M]\n")
    with pytest.raises(SchemaError, match="either target or sweep"):
        config.parse(text)


def test_duplicate_names_and_unknown_flags():
    text = (MINIMAL_CONFIG % {"b": 3}).replace("name: single", "name: align")
    with pytest.raises(SchemaError, match="duplicate"):
        config.parse(text)
    text = (MINIMAL_CONFIG % {"b": 3}).replace("A2]", "A9]")
    with pytest.raises(SchemaError, match="A9"):
        config.parse(text)


def test_not_yaml_and_not_a_mapping():
    with pytest.raises(SchemaError, match="YAML"):
        config.parse("version: [1\n")
    with pytest.raises(SchemaError, match="mapping"):
        config.parse("- 1\n- 2\n")


def test_bundled_application_config_parses():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    cfg = config.parse(root / "application.yaml")
    names = [q.name for q in cfg.queries]
    assert names == ["align_to_control", "align_single_to_control",
                     "align_to_pooled", "align_single_to_pooled"]
    dgp = config.parse_dgp(root / "application_dgp.yaml")
    assert dgp.build().roles().mediators[-1] == "M10"


def test_dgp_needs_exactly_one_model():
    with pytest.raises(SchemaError, match="exactly one"):
        config.parse_dgp("version: 1\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(SchemaError, match="cannot read"):
        config.parse(tmp_path / "absent.yaml")
