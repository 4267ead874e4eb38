import pytest

from desknmt.config import ToolkitConfig, dump_config, load_config, parse_config
from desknmt.errors import ConfigError
from desknmt.toydata import TOY_CONFIG, toy_config


def test_defaults():
    cfg = ToolkitConfig()
    m = cfg.model_config(100, 200)
    assert (m.num_layers, m.d_model, m.num_heads, m.d_ff) == (6, 512, 8, 2048)
    assert cfg.train.effective_batch_size == 384
    assert cfg.batch.increments == (500_000, 1_000_000, 1_000_000, 500_000)
    assert cfg.tokenizer.num_merges == 50_000


def test_parse_sections_and_comments():
    cfg = parse_config(
        "# comment\n"
        "model.d_model = 16   # inline\n"
        "model.num_heads = 2\n"
        "train.max_steps = 1e3\n"
        "batch.increments = 10, 20\n"
        "batch.shuffle = no\n"
        "experiment.levels = 0,2\n"
        "experiment.tokenizations = subword\n"
        "reverse.model.num_layers = 1\n"
        "reverse.train.lr_scale = 0.5\n"
    )
    assert cfg.model["d_model"] == 16 and cfg.train.max_steps == 1000
    assert cfg.batch.increments == (10, 20) and cfg.batch.shuffle is False
    assert cfg.experiment.levels == (0, 2) and cfg.experiment.tokenizations == ("subword",)
    assert cfg.model_config(5, 5, reverse=True).num_layers == 1
    assert cfg.train_config(reverse=True).lr_scale == 0.5
    assert cfg.train_config().lr_scale == ToolkitConfig().train.lr_scale


@pytest.mark.parametrize("text", [
    "model.nope = 1\n",
    "whatever = 1\n",
    "model.d_model 16\n",
    "train.max_steps = many\n",
    "batch.shuffle = maybe\n",
    "experiment.precision = f16\n",
    "experiment.split_side = left\n",
    "experiment.tokenizations = char\n",
    "experiment.levels = 7\n",
    "batch.scale = 0\n",
    "model.d_model = 10\nmodel.num_heads = 3\n",
    "train.micro_batch_size = 5\ntrain.effective_batch_size = 12\n",
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_round_trip():
    for cfg in (ToolkitConfig(), toy_config(), parse_config("reverse.model.d_model = 64\nbatch.scale = 0.25\n")):
        assert parse_config(dump_config(cfg)) == cfg


def test_overrides():
    cfg = toy_config().with_overrides(scale=0.5, seed=7, precision="f32")
    assert cfg.batch.scale == 0.5 and cfg.experiment.seed == 7 and cfg.experiment.precision == "f32"
    assert cfg.train_config().seed == 7
    with pytest.raises(ConfigError):
        cfg.with_overrides(scale=-1)


def test_load(tmp_path):
    (tmp_path / "c.cfg").write_text(TOY_CONFIG)
    assert load_config(tmp_path / "c.cfg") == toy_config()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
