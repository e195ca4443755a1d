from __future__ import annotations

import json

import numpy as np
import pytest

from secure_stn.config import ConfigError, load_config, parse_config, preset_path


def test_presets_load():
    for name in ("scenario", "fig2_tau_p", "fig3_tau_s"):
        cfg = load_config(preset_path(name))
        assert cfg.scenario.p_th == 60.0
    assert load_config(preset_path("scenario")).command == "solve"
    fig2 = load_config(preset_path("fig2_tau_p"))
    assert fig2.command == "sweep"
    assert fig2.sweep.grid == (0.5, 1.0, 1.5, 2.0, 2.5)
    assert fig2.sweep.n_trials == 100
    fig3 = load_config(preset_path("fig3_tau_s"))
    np.testing.assert_allclose(2 ** np.array(fig3.sweep.grid), [2, 4, 6, 8, 10])


def test_defaults_from_empty_document():
    cfg = parse_config({})
    assert cfg.seed == 0 and cfg.robust is None and cfg.sweep is None
    assert cfg.links.sat_e.beam_angle_deg == 0.8


def test_link_override_keeps_other_fields():
    cfg = parse_config({"links": {"ter_e": {"aod_deg": 35.0}}})
    assert cfg.links.ter_e.aod_deg == 35.0
    assert cfg.links.ter_e.angle_spread_deg == 5.0
    assert cfg.links.ter_e.n_antennas == cfg.scenario.n_s


def test_robust_eps_e_defaults_to_eps_p():
    cfg = parse_config({"robust": {"eps_p": 0.1}})
    assert (cfg.robust.eps_p, cfg.robust.eps_e) == (0.1, 0.1)


def test_explicit_channels():
    one = {"re": [1.0], "im": [0.5]}
    doc = {
        "scenario": {"n_t": 1, "n_s": 1, "n_r": 1},
        "channels": {"h_p": one, "h_s": [0.2], "H_e": [[0.3]], "g_p": one, "g_s": [1.0], "G_e": {"re": [[0.4]]}},
    }
    cfg = parse_config(doc)
    assert cfg.channels.h_p[0] == 1.0 + 0.5j
    assert cfg.channels.G_e.shape == (1, 1)


@pytest.mark.parametrize("doc,needle", [
    ({"bogus": 1}, "unknown key"),
    ({"scenario": {"n_t": 0}}, "scenario"),
    ({"scenario": {"power": 3}}, "unknown key"),
    ({"links": {"sat_x": {}}}, "links"),
    ({"links": {"ter_p": {"n_antennas": 3}}}, "links.ter_p"),
    ({"robust": {"eps_e": 0.1}}, "eps_p"),
    ({"robust": {"eps_p": -0.1}}, "eps_p"),
    ({"seed": -1}, "seed"),
    ({"seed": True}, "seed"),
    ({"sweep": {"axis": "tau_p", "grid": [1.0]}}, "n_trials"),
    ({"sweep": {"axis": "tau_p", "grid": [2.0, 1.0], "n_trials": 1}}, "strictly increasing"),
    ({"sweep": {"axis": "tau_p", "grid": [1.0], "n_trials": 1}, "robust": {"eps_p": 0.1}}, "solve runs only"),
    ({"channels": {"h_p": [1.0]}}, "missing"),
    ({"output": 3}, "output"),
    ({"search": {"grid_points": 1}}, "grid_points"),
])
def test_rejects(doc, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(doc, source="cfg.json")


def test_channel_dimension_mismatch():
    doc = {"channels": {k: [1.0] for k in ("h_p", "h_s", "g_p", "g_s")} | {"H_e": [[1.0]], "G_e": [[1.0]]}}
    with pytest.raises(ConfigError, match="n_t, n_s, n_r"):
        parse_config(doc)


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n}\n')
    with pytest.raises(ConfigError, match=r"bad\.json:3:1"):
        load_config(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.json")


def test_unknown_preset():
    with pytest.raises(ConfigError, match="available"):
        preset_path("fig9")


def test_with_seed_updates_sweep(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"seed": 1, "sweep": {"axis": "tau_p", "grid": [1.0], "n_trials": 1}}))
    cfg = load_config(p).with_seed(9)
    assert cfg.seed == 9 and cfg.sweep.seed == 9
