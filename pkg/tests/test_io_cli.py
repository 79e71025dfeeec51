import json
import struct

import numpy as np
import pytest

from antibunch import cli, tagfile
from antibunch.config import AnalysisConfig, config_from_dict, load_config
from antibunch.errors import (
    BadMagicError,
    ConfigError,
    NonMonotoneError,
    TagFileError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from antibunch.scenarios import resolve
from antibunch.streams import DetectorModel, SourceConfig, TagStream, simulate

SMALL_SOURCE = {
    "source_kind": "antibunched",
    "pair_rate": 200.0,
    "duration": 0.5,
    "seed": 7,
    "detector": {"efficiency": [1.0, 1.0], "jitter_sigma": 5e-11, "dark_rate": 100.0, "dead_time": 2e-8},
}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


# -- tag files ------------------------------------------------------------------


def test_tag_round_trip(tmp_path):
    a, b = simulate(SourceConfig("pairs", pair_rate=1e4, duration=0.5, seed=1,
                                 detector=DetectorModel(0.5, 75e-12, 100.0, 0.0)))
    for s in (a, b, TagStream.single_channel([], 0, 1000)):
        path = tmp_path / "x.qtag"
        tagfile.write_tags(path, s)
        raw = path.read_bytes()
        back = tagfile.read_tags(path)
        assert back == s
        assert tagfile.encode_tags(back) == raw


def test_tag_header_layout():
    raw = tagfile.encode_tags(TagStream.single_channel([5, 9], 3, 100))
    assert raw[:4] == bytes([0x51, 0x54, 0x41, 0x47])
    assert struct.unpack("<IQQ", raw[4:24]) == (1, 2, 100)
    assert struct.unpack("<QII", raw[24:40]) == (5, 3, 0)
    assert len(raw) == 24 + 2 * 16


def _raw():
    return bytearray(tagfile.encode_tags(TagStream.single_channel([5, 9, 12], 0, 100)))


def test_bad_magic():
    raw = _raw()
    raw[:4] = b"XXXX"
    with pytest.raises(BadMagicError):
        tagfile.decode_tags(bytes(raw))


def test_unsupported_version():
    raw = _raw()
    raw[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError):
        tagfile.decode_tags(bytes(raw))


def test_truncated_and_count_mismatch():
    raw = _raw()
    with pytest.raises(TruncatedFileError):
        tagfile.decode_tags(bytes(raw[:-3]))
    with pytest.raises(TruncatedFileError):
        tagfile.decode_tags(bytes(raw[:10]))
    raw[8:16] = struct.pack("<Q", 4)
    with pytest.raises(TruncatedFileError):
        tagfile.decode_tags(bytes(raw))


def test_non_monotone():
    raw = _raw()
    raw[24:32] = struct.pack("<Q", 50)
    with pytest.raises(NonMonotoneError):
        tagfile.decode_tags(bytes(raw))


def test_timestamp_beyond_duration():
    raw = _raw()
    raw[16:24] = struct.pack("<Q", 10)
    with pytest.raises(TagFileError):
        tagfile.decode_tags(bytes(raw))


def test_error_kinds_are_distinct():
    kinds = {BadMagicError, UnsupportedVersionError, NonMonotoneError, TruncatedFileError}
    assert len(kinds) == 4 and all(issubclass(k, TagFileError) for k in kinds)


def test_atomic_write_leaves_no_temporaries(tmp_path):
    tagfile.atomic_write(tmp_path / "sub" / "a.txt", "hello")
    assert (tmp_path / "sub" / "a.txt").read_text() == "hello"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]


# -- config ------------------------------------------------------------------------


def test_config_unknown_keys_named():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"scenario": "fig4", "bogus": 1})
    with pytest.raises(ConfigError, match="source.detector"):
        config_from_dict({"scenario": "simulate", "source": {**SMALL_SOURCE, "detector": {"gain": 2}}})
    with pytest.raises(ConfigError, match="analysis"):
        config_from_dict({"scenario": "analyze", "analysis": {"bins": 3}})


def test_config_required_and_invalid_fields():
    with pytest.raises(ConfigError, match="scenario"):
        config_from_dict({})
    with pytest.raises(ConfigError, match="scenario"):
        config_from_dict({"scenario": "fig9"})
    with pytest.raises(ConfigError, match="source"):
        config_from_dict({"scenario": "simulate"})
    with pytest.raises(ConfigError, match="format_version"):
        config_from_dict({"scenario": "fig4", "format_version": 2})
    with pytest.raises(ConfigError, match="bin_width_ps"):
        AnalysisConfig(bin_width_ps=333, max_lag_ps=50_100)
    with pytest.raises(ConfigError, match="duration"):
        config_from_dict({"scenario": "simulate", "source": {**SMALL_SOURCE, "duration": -1}})


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_reproduce_partial_source_override():
    cfg = config_from_dict({"scenario": "fig4", "source": {"duration": 2.0, "detector": {"dark_rate": 0.0}}})
    source, analysis = resolve(cfg)
    assert source.duration == 2.0 and source.detector.dark_rate == 0.0
    assert source.detector.jitter_sigma == 50e-12
    assert analysis.bin_width_ps == 200
    with pytest.raises(ConfigError):
        resolve(config_from_dict({"scenario": "fig4", "source": {"source_kind": "pairs"}}))


# -- CLI ------------------------------------------------------------------------------


def test_cli_simulate_then_analyze(tmp_path, capsys):
    cfg = _write(tmp_path / "sim.json", {"scenario": "simulate", "source": SMALL_SOURCE})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "sim")]) == 0
    summary = json.loads((tmp_path / "sim" / "simulate_summary.json").read_text())
    assert summary["format_version"] == 1 and summary["all_pass"]
    a = tmp_path / "sim" / "ch0.qtag"
    b = tmp_path / "sim" / "ch1.qtag"
    acfg = _write(tmp_path / "an.json", {"scenario": "analyze", "analysis": {"fit": "none"}})
    assert cli.main(["analyze", str(a), str(b), "--config", acfg, "--out", str(tmp_path / "an")]) == 0
    lines = (tmp_path / "an" / "histogram.csv").read_text().splitlines()
    assert lines[0] == "lag_ps,counts" and len(lines) == 1 + 501


def test_cli_seed_override_changes_output(tmp_path):
    cfg = _write(tmp_path / "sim.json", {"scenario": "simulate", "source": SMALL_SOURCE})
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s1")])
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s2"), "--seed", "99"])
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s3"), "--threads", "2"])
    ch0 = [(tmp_path / d / "ch0.qtag").read_bytes() for d in ("s1", "s2", "s3")]
    assert ch0[0] != ch0[1] and ch0[0] == ch0[2]


def test_cli_fock_is_byte_reproducible(tmp_path):
    for d in ("f1", "f2"):
        assert cli.main(["fock", "--out", str(tmp_path / d)]) == 0
    for name in ("fock_sweep.csv", "fock_sweep_summary.json"):
        assert (tmp_path / "f1" / name).read_bytes() == (tmp_path / "f2" / name).read_bytes()
    rows = (tmp_path / "f1" / "fock_sweep.csv").read_text().splitlines()
    assert rows[0] == "alpha,eta,g2_exact,g2_perturbative,c2_abs" and len(rows) == 1 + 3 * 41


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["simulate"]) == 1
    assert cli.main(["reproduce"]) == 1
    assert cli.main(["bogus"]) == 1
    assert cli.main(["analyze", str(tmp_path / "missing.qtag"), str(tmp_path / "missing.qtag")]) == 1
    bad = tmp_path / "bad.qtag"
    bad.write_bytes(b"XXXX" + bytes(20))
    assert cli.main(["analyze", str(bad), str(bad)]) == 1
    cfg = _write(tmp_path / "c.json", {"scenario": "simulate", "source": {**SMALL_SOURCE, "oops": 1}})
    assert cli.main(["simulate", "--config", cfg]) == 1
    assert "oops" in capsys.readouterr().err
    # a valid config whose run fails at runtime (event cap exceeded)
    big = {**SMALL_SOURCE, "source_kind": "coherent", "coherent_rate": 1e9, "duration": 100.0}
    cfg = _write(tmp_path / "big.json", {"scenario": "simulate", "source": big})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_cli_reproduce_config_scenario(tmp_path):
    cfg = _write(tmp_path / "r.json", {
        "scenario": "path_ent",
        "source": {"duration": 1.0},
        "output_dir": str(tmp_path / "pe"),
    })
    assert cli.main(["reproduce", "--config", cfg]) == 0
    summary = json.loads((tmp_path / "pe" / "path_ent_summary.json").read_text())
    assert set(summary) == {"format_version", "scenario", "parameters", "results", "checks", "all_pass"}
    assert all(set(c) == {"value", "threshold", "pass"} for c in summary["checks"].values())
    assert cli.main(["reproduce", "fig4", "--config", cfg]) == 1


def test_histogram_csv_counts_match_summary(tmp_path):
    """Pass/fail flags are recomputable from the emitted tables."""
    cfg = _write(tmp_path / "r.json", {"scenario": "path_ent", "source": {"duration": 1.0}})
    cli.main(["reproduce", "--config", cfg, "--out", str(tmp_path)])
    summary = json.loads((tmp_path / "path_ent_summary.json").read_text())
    data = np.loadtxt(tmp_path / "path_ent_hist_flipped.csv", delimiter=",", skiprows=1)
    lag, counts = data[:, 0], data[:, 1]
    zero = counts[lag == 0][0] / counts[np.abs(lag) > 25_000].mean()
    assert zero == pytest.approx(summary["results"]["flipped"]["zero_lag_ratio"], rel=1e-12)
