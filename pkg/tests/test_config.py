import json

import pytest

from voxmotion import config as cfgmod
from voxmotion.errors import FormatError, InvariantError
from voxmotion.losses import LossWeights
from voxmotion.synthdata import TaskId


def test_full_profile_matches_paper_constants():
    c = cfgmod.profile("full")
    assert c.dims == (48, 48, 48) and c.sigma == 3.0 and c.T == 40
    assert c.steps == 500_000 and c.batch == 32 and c.lr == 3e-5
    assert c.N == 1000 and c.ddim_steps == 50
    assert c.weights == LossWeights(0.1, 0.1, 0.1, 1.0)
    assert c.mix == "1:1:1"


def test_desk_profile_overrides_are_explicit():
    d = cfgmod.profile("desk")
    assert d.dims == (16, 16, 16) and d.T == 8 and d.K == 8 and d.batch == 16
    full = cfgmod.profile("full").to_dict()
    changed = {k for k, v in d.to_dict().items() if full[k] != v}
    assert changed == set(cfgmod.DESK_OVERRIDES)
    assert d.steps <= 20_000
    assert d.model_config().spec == d.spec
    with pytest.raises(InvariantError):
        cfgmod.profile("huge")


def test_dump_load_round_trip(tmp_path):
    c = cfgmod.profile("desk").replace(seed=5, lr=1e-3)
    cfgmod.dump(c, tmp_path / "c.json")
    assert cfgmod.load(tmp_path / "c.json") == c
    doc = json.loads((tmp_path / "c.json").read_text())
    assert all(not isinstance(v, dict) for v in doc.values())


def test_resolve_precedence(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"profile": "desk", "steps": 77, "lr": 0.5}))
    c = cfgmod.resolve(None, tmp_path / "c.json", {"lr": 0.25, "batch": None})
    assert c.profile == "desk" and c.steps == 77 and c.lr == 0.25 and c.batch == 16
    assert cfgmod.resolve("full").dims == (48, 48, 48)


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"volume": {"dims": [4, 4, 4]}}, [1, 2], {"T": "eight"}])
def test_bad_config_files(tmp_path, doc):
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises((FormatError, InvariantError)):
        cfgmod.load(tmp_path / "c.json")


def test_unreadable_config(tmp_path):
    (tmp_path / "c.json").write_text("{oops")
    with pytest.raises(FormatError):
        cfgmod.load(tmp_path / "c.json")


def test_parse_mix():
    assert cfgmod.parse_mix("1:2:0") == {TaskId.HUMAN_HUMAN: 1, TaskId.HUMAN_OBJECT: 2, TaskId.HUMAN_SCENE: 0}
    for bad in ("1:1", "a:b:c", "0:0:0", "-1:1:1"):
        with pytest.raises(InvariantError):
            cfgmod.parse_mix(bad)


def test_invalid_values():
    with pytest.raises(InvariantError):
        cfgmod.profile("desk").replace(sigma=0)
    with pytest.raises(InvariantError):
        cfgmod.profile("desk").replace(batch=0)
