import pytest

from elastlab.config import load, loads, validate
from elastlab.errors import ConfigError

DHOM = """
kind = "dhom"
[model]
a = [1.0, 4.0]
b = [1.0, 1.0]
w0_sq = [0.5, 2.0]
w_star = [1.0, 2.0]
[distance]
x_prime = [-1.0, 1.0]
[[pairs]]
x = [1.0, -1.0]
x_prime = [1.0, 1.2]
"""


def test_minimal_dhom_defaults():
    cfg = loads(DHOM)
    assert cfg.kind == "dhom" and cfg.seeds == list(range(20))
    assert cfg["model"]["theta"] == 0.001
    assert cfg["curve"]["t_stop"] == 1000.0
    assert cfg.pairs[0]["id"] == "pair0"


@pytest.mark.parametrize("kind", ["lastlayer", "mlp-regress", "mlp-classify", "verify"])
def test_kind_only_configs(kind):
    assert validate({"kind": kind}).kind == kind


def test_int_promotes_to_float():
    assert loads(DHOM.replace("a = [1.0, 4.0]", "a = [1, 4]"))["model"]["a"] == [1.0, 4.0]


@pytest.mark.parametrize("raw,location", [
    ({}, "kind"),
    ({"kind": "spline"}, "kind"),
    ({"kind": "lastlayer", "colour": 1}, "colour"),
    ({"kind": "lastlayer", "model": {"thetta": 1.0}}, "model.thetta"),
    ({"kind": "lastlayer", "model": {"theta": -1.0}}, "model.theta"),
    ({"kind": "lastlayer", "model": {"theta": "fast"}}, "model.theta"),
    ({"kind": "lastlayer", "model": {"steps": 1.5}}, "model.steps"),
    ({"kind": "lastlayer", "seeds": []}, "seeds"),
    ({"kind": "lastlayer", "seeds": [1, 1]}, "seeds"),
    ({"kind": "lastlayer", "model": {"settings": [[10, 0]]}}, "model.settings[0]"),
    ({"kind": "lastlayer", "pair": {"test": [5, 0]}}, "pair.test"),
    ({"kind": "mlp-regress", "probes": {"near": 5.0, "far": 4.0}}, "probes.far"),
    ({"kind": "mlp-classify", "train": {"k": 500}}, "train.k"),
    ({"kind": "mlp-classify", "train": {"optimizer": "rmsprop"}}, "train.optimizer"),
    ({"kind": "relu", "model": {"w_star": [1.0]}}, "pairs"),
])
def test_errors_name_location(raw, location):
    with pytest.raises(ConfigError) as info:
        validate(raw)
    assert info.value.location == location


@pytest.mark.parametrize("old,new,location", [
    ("x_prime = [1.0, 1.2]", "x_prime = [1.0]", "pairs[0].x_prime"),
    ("w0_sq = [0.5, 2.0]", "w0_sq = [0.5, 5.0]", "model.w0_sq[1]"),
    ("w_star = [1.0, 2.0]", "w_star = [1.0]", "model.w_star"),
    ("b = [1.0, 1.0]", "b = [1.0]", "model.b"),
])
def test_dhom_cross_checks(old, new, location):
    with pytest.raises(ConfigError) as info:
        loads(DHOM.replace(old, new))
    assert info.value.location == location


def test_duplicate_pair_ids():
    text = DHOM + '\n[[pairs]]\nid = "pair0"\nx = [1.0, 1.0]\nx_prime = [2.0, 2.0]\n'
    with pytest.raises(ConfigError, match="unique"):
        loads(text)


def test_distance_needs_x_prime():
    with pytest.raises(ConfigError) as info:
        loads(DHOM.replace("x_prime = [-1.0, 1.0]", "enabled = true"))
    assert info.value.location == "distance.x_prime"


def test_bad_toml():
    with pytest.raises(ConfigError, match="not valid TOML"):
        loads("kind = ", source="broken.toml")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "missing.toml")


def test_load_roundtrip(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(DHOM)
    cfg = load(path)
    assert cfg.source == str(path)
