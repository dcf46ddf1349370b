"""Config parsing tests: defaults, strict key checking, dotted overrides,
and workload resolution."""

import json

import pytest

from servesim.config import (
    ConfigError,
    apply_overrides,
    config_from_dict,
    default_config,
    load_config_file,
    resolve_trace,
)
from servesim.workload import pair_arrivals_with_sizes, synthesize, write_trace


def test_default_config_shape():
    cfg = default_config()
    assert cfg.seed == 0
    assert cfg.workload.synth.duration_s == 180.0
    assert cfg.workload.synth.mean_qps == 2.0
    assert cfg.cluster.n_servers == 1
    assert cfg.cluster.engine.policy == "fcfs"
    assert cfg.cluster.balancer.name == "random"
    assert cfg.sweep_factors == [1.0]
    assert cfg.policies is None and cfg.balancers is None


def test_empty_dict_gives_defaults():
    cfg = config_from_dict({})
    assert cfg == default_config()


def test_top_seed_flows_into_synth_and_cluster():
    cfg = config_from_dict({"seed": 7})
    assert cfg.seed == 7
    assert cfg.workload.synth.seed == 7
    assert cfg.cluster.seed == 7


def test_explicit_seeds_win_over_top_seed():
    cfg = config_from_dict(
        {"seed": 7, "workload": {"synth": {"seed": 1}}, "cluster": {"seed": 2}}
    )
    assert cfg.workload.synth.seed == 1
    assert cfg.cluster.seed == 2


@pytest.mark.parametrize(
    "raw, fragment",
    [
        ({"bogus": 1}, "top-level"),
        ({"cluster": {"bogus": 1}}, "cluster"),
        ({"cluster": {"engine": {"bogus": 1}}}, "engine"),
        ({"cluster": {"balancer": {"bogus": 1}}}, "balancer"),
        ({"workload": {"synth": {"bogus": 1}}}, "synth"),
        ({"workload": {"synth": {"prompt_dist": {"bogus": 1}}}}, "prompt_dist"),
    ],
)
def test_unknown_keys_rejected_at_every_level(raw, fragment):
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict(raw)


@pytest.mark.parametrize(
    "raw",
    [
        {"cluster": {"engine": {"policy": "sjf"}}},
        {"cluster": {"engine": {"alpha": -0.5}}},
        {"cluster": {"engine": {"c": 1.5}}},
        {"cluster": {"engine": {"profile": "gpt-17"}}},
        {"cluster": {"engine": {"max_tokens_per_batch": 0}}},
        {"cluster": {"engine": {"pool_blocks": "many"}}},
        {"cluster": {"engine": {"cost": {"latency_s": 1.0}}}},
        {"cluster": {"balancer": {"name": "least_conn"}}},
        {"cluster": {"balancer": {"poll_interval_s": 0}}},
        {"cluster": {"balancer": {"beta_prior": 0.9}}},
        {"cluster": {"balancer": {"beta_fixed": 0.5}}},
        {"cluster": {"n_servers": 0}},
        {"policies": []},
        {"policies": ["fcfs", "fcfs"]},
        {"policies": ["fcfs", "sjf"]},
        {"balancers": ["rr", "nearest"]},
        {"sweep_factors": []},
        {"sweep_factors": [1.0, -2.0]},
    ],
)
def test_invalid_values_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_workload_needs_exactly_one_source():
    with pytest.raises(ConfigError, match="exactly one"):
        config_from_dict({"workload": {}})
    with pytest.raises(ConfigError, match="exactly one"):
        config_from_dict(
            {"workload": {"synth": {"duration_s": 1}, "combined": "trace.csv"}}
        )
    with pytest.raises(ConfigError, match="together"):
        config_from_dict({"workload": {"arrivals": "a.csv"}})


def test_apply_overrides_parses_json_values():
    raw = apply_overrides(
        {},
        [
            "seed=5",
            "cluster.n_servers=4",
            "cluster.engine.alpha=0.25",
            "cluster.engine.max_running=null",
            'cluster.engine.cost={"overhead_s": 0.01}',
            "policies=[\"fcfs\", \"larry\"]",
            "cluster.engine.profile=llama3-70b",
        ],
    )
    assert raw["seed"] == 5
    assert raw["cluster"]["n_servers"] == 4
    assert raw["cluster"]["engine"]["alpha"] == 0.25
    assert raw["cluster"]["engine"]["max_running"] is None
    assert raw["cluster"]["engine"]["cost"] == {"overhead_s": 0.01}
    assert raw["policies"] == ["fcfs", "larry"]
    # not valid JSON, kept as a bare string
    assert raw["cluster"]["engine"]["profile"] == "llama3-70b"


def test_apply_overrides_does_not_mutate_input():
    base = {"cluster": {"n_servers": 1}}
    apply_overrides(base, ["cluster.n_servers=8"])
    assert base["cluster"]["n_servers"] == 1


def test_apply_overrides_rejects_malformed_items():
    with pytest.raises(ConfigError, match="key=value"):
        apply_overrides({}, ["seed"])
    with pytest.raises(ConfigError, match="non-empty"):
        apply_overrides({}, ["=3"])


def test_load_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 9}))
    assert load_config_file(path) == {"seed": 9}
    with pytest.raises(ConfigError, match="cannot read"):
        load_config_file(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config_file(bad)


def test_resolve_trace_synth_matches_direct_call():
    cfg = config_from_dict({"workload": {"synth": {"duration_s": 10, "seed": 4}}})
    assert resolve_trace(cfg) == synthesize(cfg.workload.synth)


def test_resolve_trace_combined_file(tmp_path):
    entries = synthesize(config_from_dict({"seed": 2}).workload.synth)[:20]
    path = tmp_path / "trace.csv"
    write_trace(path, entries, "combined")
    cfg = config_from_dict({"workload": {"combined": str(path)}})
    assert resolve_trace(cfg) == entries


def test_resolve_trace_pairs_arrivals_with_sizes(tmp_path):
    arrivals = [0.0, 0.5, 1.25, 3.0]
    sizes = [(100, 10), (200, 20), (300, 30)]
    a_path, s_path = tmp_path / "a.csv", tmp_path / "s.csv"
    write_trace(a_path, arrivals, "arrivals")
    write_trace(s_path, sizes, "sizes")
    cfg = config_from_dict(
        {"seed": 11, "workload": {"arrivals": str(a_path), "sizes": str(s_path)}}
    )
    assert resolve_trace(cfg) == pair_arrivals_with_sizes(arrivals, sizes, 11)
