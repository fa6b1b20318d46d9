import json

import pytest

from backparse.config import ABLATIONS, ConfigError, RunConfig, ablation_config, desk_config


def test_default_snapshot():
    cfg = RunConfig()
    assert cfg.loss.node == 0.01 and cfg.loss.edge == 0.1
    assert cfg.decode.beam == 5 and cfg.decode.len_penalty == 0.6
    m = cfg.model
    assert (m.layers, m.d, m.heads, m.d_r, m.ffn_size) == (6, 512, 8, 64, 2048)
    assert (m.attention_dropout, m.residual_dropout) == (0.3, 0.1)
    assert m.enable_node and m.enable_edge and m.enable_integration and m.share_relation_embeddings
    assert m.node_loss_kind == "CE" and m.max_path_len == 4
    o = cfg.optim
    assert (o.lr_factor, o.beta1, o.beta2, o.eps, o.clip_norm) == (0.5, 0.9, 0.98, 1e-9, 1.0)
    # desk-scale values; the published ones are one override away
    assert (o.warmup, cfg.train.batch_tokens, cfg.train.steps) == (400, 512, 5000)
    paper = cfg.replace(**{"optim.warmup": 16000, "train.batch_tokens": 2048})
    assert paper.optim.warmup == 16000


def test_unknown_and_mistyped_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": {"depth": 3}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"extra": 1})
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"model.nope": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": {"layers": "six"}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": {"enable_node": 1}})


def test_validation():
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"model.heads": 7})
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"loss.node": -1.0})
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"decode.beam": 0})


def test_round_trip(tmp_path):
    cfg = desk_config(**{"train.seed": 9, "model.node_loss_kind": "MSE"})
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    assert RunConfig.load(path) == cfg
    assert RunConfig.from_dict(json.loads(cfg.dumps())) == cfg
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)


def test_ablation_configs():
    assert len(ABLATIONS) == 7
    base = desk_config()
    flags = {
        name: (c.model.enable_node, c.model.enable_edge, c.model.enable_integration)
        for name in ABLATIONS
        for c in [ablation_config(base, name)]
    }
    assert flags["baseline"] == (False, False, False)
    assert flags["+both (int.)"] == (True, True, True)
    assert len(set(flags.values())) == 7
    assert ablation_config(base, "+node (int.)").model.n_slots == 2
    assert ablation_config(base, "+both (int.)").model.n_slots == 3
    with pytest.raises(ConfigError):
        ablation_config(base, "nope")
