from pathlib import Path

import pytest

from config import load_config, parse_config
from errors import ConfigError
from kg_core import Direction

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _doc(**experiment):
    base = {"env": "overcooked_lite", "method": "random", "updates": ["v1.2.1"]}
    base.update(experiment)
    return {"experiment": base}


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        config = load_config(path)
        assert len(config.seeds) == 20, path.name
        assert config.output_dir == CONFIGS / ".." / "out" / config.env


def test_klpeg_config_values():
    config = load_config(CONFIGS / "overcooked_klpeg.toml")
    assert config.method == "klpeg"
    assert config.updates == ("v1.2.1", "v1.2.2", "v1.2.3")
    assert config.traversal.max_hops == 3
    assert config.traversal.direction == Direction.BOTH
    assert config.timing == "off"
    assert config.gateway_label == "mock"


def test_provider_table_names_the_gateway():
    config = load_config(CONFIGS / "overcooked_klpeg_http.toml")
    provider = config.providers["openai"]
    assert provider.id == "openai"
    assert provider.native_tools is True
    assert config.gateway_label == "gpt-4o"


def test_defaults():
    config = parse_config(_doc(), base_dir=Path("/tmp/exp"))
    assert config.seeds == tuple(range(1, 21))
    assert config.output_dir == Path("/tmp/exp/out")
    assert config.ga.population_size == 50
    assert config.curiosity.eval_interval == 1000


@pytest.mark.parametrize("doc", [
    {**_doc(), "plugins": {}},
    _doc(env="tetris"),
    _doc(method="manual"),
    _doc(updates=[]),
    _doc(seeds=[]),
    _doc(timing="cpu"),
    _doc(workers=0),
    _doc(colour="blue"),
    {**_doc(), "ga": {"population_size": 1}},
    {**_doc(), "ga": {"generation": 3}},
    {**_doc(), "curiosity": {"beta": -1}},
    {**_doc(), "traversal": {"direction": "sideways"}},
    {**_doc(), "traversal": {"max_hops": -1}},
    {**_doc(), "gateway": {"provider": "openai"}},
    {**_doc(), "random": {"max_steps": 0}},
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[experiment\nenv = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)
