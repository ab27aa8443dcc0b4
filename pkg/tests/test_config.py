import copy

import numpy as np
import pytest
import yaml

from vml_lab.config import ConfigError, bundled_config, dump_config, load_config, parse_config

BASE = {
    "schema_version": 1,
    "run_id": "t",
    "prior": {"weights": [1.0], "means": [[0.0, 0.0, 0.0]], "variances": [1.0]},
    "operator": {"kind": "mask", "dims": 3, "keep": [0, 2]},
    "measurement": {"y": [0.5, -0.5]},
    "solver": {"sigma_y": 0.1},
}


def with_(path, value):
    raw = copy.deepcopy(BASE)
    node = raw
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    if value is None:
        node.pop(keys[-1])
    else:
        node[keys[-1]] = value
    return raw


def test_base_config_parses_with_defaults():
    cfg = parse_config(BASE)
    assert cfg.operator.shape == (2, 3)
    assert cfg.solver.schedule.num_steps == 20 and cfg.solver.num_inner == 50
    assert cfg.seeds == [0]


@pytest.mark.parametrize(
    "path,value,field",
    [
        ("schema_version", 2, "schema_version"),
        ("operator.keep", [0, 3], "operator.keep"),
        ("operator.dims", 4, "operator.dims"),
        ("measurement.y", [1.0], "measurement.y"),
        ("measurement.synthesize", {"x_true": [0.0, 0.0, 0.0], "seed": 1}, "measurement"),
        ("prior.means", [[0.0, 0.0]], "operator.dims"),
        ("operator.kind", "fft", "operator.kind"),
        ("solver.variant", "fancy", "solver.variant"),
        ("solver.num_inner", 0, "solver.num_inner"),
        ("schedule.sigma_min", 500.0, "schedule"),
        ("solver.paste", True, "solver.paste"),
    ],
)
def test_field_level_errors(path, value, field):
    raw = with_(path, value)
    if path == "solver.paste":
        raw["operator"] = {"kind": "dense", "matrix": np.eye(3).tolist()}
        raw["measurement"] = {"y": [0.0, 0.0, 0.0]}
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert info.value.field.startswith(field)


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({**BASE, "extra": 1})


def test_sigma_y_zero_is_floored_with_note():
    cfg = parse_config(with_("solver.sigma_y", 0.0))
    assert cfg.solver.sigma_y == 1e-9
    assert any("floored" in n for n in cfg.notes)


def test_synthesis_is_deterministic():
    raw = with_("measurement", {"synthesize": {"x_true": [1.0, 2.0, 3.0], "seed": 4}})
    a, b = parse_config(raw), parse_config(raw)
    assert np.array_equal(a.y, b.y)
    assert np.allclose(a.y, [1.0, 3.0], atol=0.5)


def test_resolved_config_round_trips():
    cfg = parse_config(with_("solver.sigma_y", 0.0))
    again = parse_config(yaml.safe_load(dump_config(cfg.resolved)))
    assert again.resolved == cfg.resolved
    assert again.solver == cfg.solver


def test_seed_override_and_seed_lists():
    raw = with_("solver.seeds", [3, 4, 5])
    assert parse_config(raw).seeds == [3, 4, 5]
    assert parse_config(raw, seed_override=9).seeds == [9]
    with pytest.raises(ConfigError):
        parse_config(with_("solver.seeds", [1, 1]))


def test_latent_requires_matching_decoder():
    raw = with_("solver.variant", "latent")
    with pytest.raises(ConfigError, match="decoder"):
        parse_config(raw)
    raw["decoder"] = {"kind": "affine", "matrix": [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]}
    raw["operator"] = {"kind": "mask", "dims": 4, "keep": [0, 3]}
    cfg = parse_config(raw)
    assert cfg.decoder.output_dim == 4


def test_block_and_blur_operators_with_threshold():
    raw = copy.deepcopy(BASE)
    raw["prior"] = {"weights": [1.0], "means": [[0.0] * 16], "variances": [1.0]}
    raw["operator"] = {"kind": "separable_blur", "dims": [4, 4], "width": 3, "tau": 0.2}
    raw["measurement"] = {"y": [0.0] * 16}
    cfg = parse_config(raw)
    assert not cfg.operator.direct and cfg.operator.rank < 16
    raw["operator"] = {"kind": "block_average", "dims": [4, 4], "block": 2}
    raw["measurement"] = {"y": [0.0] * 4}
    assert parse_config(raw).operator.shape == (4, 16)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("prior: [unclosed")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)


def test_bundled_configs_load():
    assert load_config(bundled_config("bimodal_inpaint")).prior.dim == 2
    assert load_config(bundled_config("concentration_densities")).densities is not None
