import textwrap

import pytest

from posbias.config import load_config, parse_config
from posbias.errors import ConfigError
from posbias.rankers import RankerKind

BASE = """\
seed: 3
world:
  n_items: 20
  n_segments: 2
  relevance: {family: exponential_tail, scale: 0.3}
loop:
  n_iterations: 2
  sessions_per_iteration: 1000
  slate_length: 4
variants:
  - {name: naive, policy: naive_ctr}
  - name: pa
    policy: position_aware
    l2_sweep: [0.1, 1e-3]
"""


def write(tmp_path, text):
    path = tmp_path / "exp.yaml"
    path.write_text(textwrap.dedent(text))
    return path


def test_loads_with_defaults(tmp_path):
    cfg = load_config(write(tmp_path, BASE))
    assert cfg.seed == 3 and cfg.metric_ks == (4,) and cfg.metric_xs == (0.1, 0.5)
    assert [v.name for v in cfg.variants] == ["naive", "pa"]
    assert cfg.variants[1].policy is RankerKind.POSITION_AWARE
    assert cfg.variants[1].l2_sweep == [0.1, 0.001]
    assert cfg.propensity == {"enabled": False, "sessions": 50_000, "max_iter": 200, "tol": 1e-6}
    loop = cfg.loop_config(cfg.variants[0])
    assert loop.n_candidates == 4 and loop.seed == 3 and loop.window == "previous"


@pytest.mark.parametrize(
    "old, new, line, needle",
    [
        ("  slate_length: 4", "  slate_length: 4\n  colour: red", 10, "unknown key 'loop.colour'"),
        ("  n_items: 20", "  n_items: 2.5", 3, "world.n_items"),
        ("  slate_length: 4", "  slate_length: 40", 9, "slate_length 40 exceeds n_items 20"),
        ("  n_iterations: 2", "  n_iterations: 0", 7, ">= 1"),
        ("policy: naive_ctr}", "policy: bandit}", 11, "unknown ranker kind"),
        ("  - {name: naive, policy: naive_ctr}", "  - {name: pa, policy: naive_ctr}", 12, "duplicate variant"),
        ("    l2_sweep: [0.1, 1e-3]", "    l2_sweep: [0.1, -1.0]", 14, "nonnegative"),
    ],
)
def test_errors_name_the_line(tmp_path, old, new, line, needle):
    assert old in BASE
    path = write(tmp_path, BASE.replace(old, new))
    with pytest.raises(ConfigError) as info:
        load_config(path)
    message = str(info.value)
    assert message.startswith(f"{path}:{line}:"), message
    assert needle in message


def test_unknown_top_level_key(tmp_path):
    with pytest.raises(ConfigError, match=r":1: unknown key 'sed'"):
        load_config(write(tmp_path, "sed: 1\n" + BASE))


def test_invalid_yaml_reports_line(tmp_path):
    with pytest.raises(ConfigError, match=r"exp.yaml:\d+: invalid YAML"):
        load_config(write(tmp_path, BASE + "  - {name: x\n"))


def test_missing_sections(tmp_path):
    with pytest.raises(ConfigError, match="variants"):
        load_config(write(tmp_path, BASE.split("variants:")[0]))
    with pytest.raises(ConfigError, match="empty"):
        load_config(write(tmp_path, ""))


def test_metric_k_beyond_slate(tmp_path):
    with pytest.raises(ConfigError, match="k=6 exceeds slate_length 4"):
        load_config(write(tmp_path, BASE + "metrics: {k: [6]}\n"))


def test_hyperparams_checked(tmp_path):
    text = BASE.replace("    l2_sweep: [0.1, 1e-3]", "    hyperparams: {epochs: 5, l2: 1}")
    with pytest.raises(ConfigError, match="hyperparams"):
        load_config(write(tmp_path, text))
    text = BASE.replace("policy: naive_ctr}", "policy: naive_ctr, hyperparams: {epochs: 3}}")
    with pytest.raises(ConfigError, match="takes no hyperparameters"):
        load_config(write(tmp_path, text))


def test_sweep_needs_position_aware(tmp_path):
    text = BASE.replace("policy: naive_ctr}", "policy: naive_ctr, l2_sweep: [0.1]}")
    with pytest.raises(ConfigError, match="position_aware only"):
        load_config(write(tmp_path, text))


def test_select_variants(tmp_path):
    cfg = load_config(write(tmp_path, BASE))
    assert [v.name for v in cfg.select(["pa"]).variants] == ["pa"]
    assert len(cfg.variants) == 2
    with pytest.raises(ConfigError, match="unknown variant"):
        cfg.select(["nope"])


def test_round_trip_revalidates(tmp_path):
    cfg = load_config(write(tmp_path, BASE + "metrics: {k: [2, 4], x: [0.5], ecs_interpolate: true}\n"))
    again = parse_config(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.ecs_interpolate and again.metric_ks == (2, 4)


def test_traffic_must_sum_to_one(tmp_path):
    text = BASE.replace("  slate_length: 4", "  slate_length: 4\n  traffic: [0.5, 0.6]")
    with pytest.raises(ConfigError, match="sum to 1"):
        load_config(write(tmp_path, text))
