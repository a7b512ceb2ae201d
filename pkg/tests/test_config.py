import pytest

from ra3c.config import ConfigError, RunConfig, describe_defaults, dump_config, load_config, parse_config
from ra3c.reward import RewardKind
from ra3c.trainer import RespawnStrategy


def test_empty_file_gives_defaults():
    assert parse_config("", env={}) == RunConfig()
    assert parse_config("# only a comment\n\n", env={}) == RunConfig()


def test_values_and_comments():
    cfg = parse_config("gamma = 0.95  # discount\nworkers=2\nreward = angle_only\nmax_steps = 200_000\n", env={})
    assert cfg.gamma == 0.95 and cfg.workers == 2 and cfg.max_steps == 200_000
    assert cfg.trainer().reward is RewardKind.ANGLE_ONLY


def test_gamma_out_of_range_names_constraint():
    with pytest.raises(ConfigError, match=r"gamma.*0 <= gamma < 1"):
        parse_config("gamma = 1.5", env={})


@pytest.mark.parametrize("text, fragment", [
    ("colour = red", "line 1: unknown key 'colour'"),
    ("seed = 1\nseed = 2", "line 2: duplicate key 'seed'"),
    ("\n\njust words", "line 3: expected 'key = value'"),
    ("workers = two", "line 1: workers: expected int"),
    ("workers = 0", "workers"),
    ("respawn = sometimes", "respawn"),
    ("schedule = random", "schedule"),
    ("jitter = 2", "jitter"),
])
def test_errors_carry_location(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, env={})
    assert fragment in str(exc.value)


def test_dump_load_roundtrip(tmp_path):
    cfg = RunConfig(gamma=0.9, respawn="random_checkpoint", tracks="gen:1:800:0.3,gen:2:900:0.1", lr=1e-3,
                    workers=3, out_dir="x/y")
    path = tmp_path / "run.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path, env={}) == cfg
    assert cfg.trainer().respawn is RespawnStrategy.RANDOM_CHECKPOINT
    assert cfg.track_specs() == ["gen:1:800:0.3", "gen:2:900:0.1"]


def test_environment_overrides_seed():
    assert parse_config("seed = 3", env={"RA3C_SEED": "17"}).seed == 17
    with pytest.raises(ConfigError):
        parse_config("", env={"RA3C_SEED": "abc"})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.cfg")


def test_defaults_documented():
    text = describe_defaults()
    for name in RunConfig.__dataclass_fields__:
        assert f"  {name} = " in text
