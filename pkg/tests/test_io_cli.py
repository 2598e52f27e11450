import json
import textwrap

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smcstab import cli
from smcstab.config import load_config, load_model
from smcstab.errors import ConfigError
from smcstab.exact import variance_series_discrete
from smcstab.io import read_series_csv, variance_series_rows, write_records_csv, write_series_csv
from smcstab.models import DiscreteHmm, LinearGaussianModel
from smcstab.smc import run_filter
from smcstab.functions import indicator

TWO_STATE = """
kind: discrete
m: 2
k: 2
q: [[0.9, 0.1], [0.2, 0.8]]
g: [[0.8, 0.2], [0.3, 0.7]]
chi: stationary
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


@pytest.fixture
def model_file(tmp_path):
    return write(tmp_path, "model.yaml", TWO_STATE)


def config(tmp_path, body):
    return write(tmp_path, "cfg.yaml", body)


def test_minimal_stability_config_gets_defaults(tmp_path, model_file):
    cfg = load_config(config(tmp_path, """
        command: stability
        model: model.yaml
        source: {kind: hmm}
        N: 100
        n_max: 50
        h: indicator(0)
    """))
    assert cfg.M == 500
    assert cfg.thresholds.level == 0.95 and cfg.thresholds.ratio_max == 3.0
    assert cfg.model == model_file.resolve()


def test_all_violations_reported(tmp_path, model_file):
    with pytest.raises(ConfigError) as info:
        load_config(config(tmp_path, """
            command: stability
            model: model.yaml
            source: {kind: hmm}
            N: 0
            M: 0
            n_max: 50
            h: indicator(0)
        """))
    text = " ".join(info.value.violations)
    assert "N:" in text and "M:" in text and len(info.value.violations) == 2


def test_unknown_key_suggests_nearest(tmp_path, model_file):
    with pytest.raises(ConfigError) as info:
        load_config(config(tmp_path, """
            command: forgetting
            model: model.yaml
            source: {kind: hmm}
            n_maxx: 50
            chi_a: [0.5, 0.5]
            chi_b: [0.1, 0.9]
        """))
    msgs = info.value.violations
    assert any("'n_maxx'" in m and "did you mean 'n_max'" in m and "line 5" in m for m in msgs)
    assert any(m.startswith("n_max: required") for m in msgs)


def test_yaml_parse_error_has_line(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(config(tmp_path, "command: lp\nN: [1, 2\nM: 3\n"))
    assert "line" in info.value.violations[0]


@given(st.dictionaries(st.sampled_from(["command", "N", "M", "n_max", "h", "source", "p", "bogus", "thresholds"]),
                       st.one_of(st.integers(-3, 3), st.text(max_size=5), st.none(), st.lists(st.integers(), max_size=2))))
def test_validation_never_crashes(tmp_path_factory, data):
    import yaml

    path = tmp_path_factory.mktemp("cfg") / "c.yaml"
    path.write_text(yaml.safe_dump(data))
    try:
        load_config(path)
    except ConfigError as exc:
        assert exc.violations


def test_model_loading(tmp_path, model_file):
    model = load_model(model_file)
    assert isinstance(model, DiscreteHmm)
    np.testing.assert_allclose(model.chi, [2 / 3, 1 / 3])
    bad = write(tmp_path, "bad.yaml", "kind: lgss\ndx: 1\ndu: 1\ndy: 1\na: [[1.0, 0.0]]\nr: [[1.0]]\nb: [[1.0]]\ns: [[1.0]]\ninit_mean: [0.0]\ninit_cov: [[1.0]]\n")
    with pytest.raises(ConfigError) as info:
        load_model(bad)
    assert "a: expected shape (1, 1)" in info.value.violations[0]
    good = write(tmp_path, "good.yaml", "kind: lgss\ndx: 1\ndu: 1\ndy: 1\na: [[0.5]]\nr: [[1.0]]\nb: [[1.0]]\ns: [[1.0]]\ninit_mean: [0.0]\ninit_cov: [[1.0]]\n")
    assert isinstance(load_model(good), LinearGaussianModel)


def test_empty_series_writes_header_only(tmp_path):
    path = tmp_path / "e.csv"
    write_series_csv(path, [], ["time", "value"])
    assert path.read_text() == "time,value\n"


def test_arity_mismatch_fails_before_writing(tmp_path):
    path = tmp_path / "x.csv"
    with pytest.raises(ValueError):
        write_series_csv(path, [[1, 2.0], [2]], ["time", "value"])
    assert not path.exists()
    with pytest.raises(ValueError):
        write_series_csv(path, {"time": [1, 2], "value": [1.0]}, ["time", "value"])
    assert not path.exists()


def test_variance_series_round_trip_is_bit_exact(tmp_path, two_state):
    vs = variance_series_discrete(two_state, [0, 1, 1, 0, 1, 0, 0], np.array([1.0, 0.0]))
    schema, rows = variance_series_rows(vs)
    path = tmp_path / "vs.csv"
    write_series_csv(path, rows, schema)
    header, cols = read_series_csv(path)
    assert header == list(schema)
    assert np.array_equal(np.array(cols["sigma2"]), vs.sigma2)
    assert np.array_equal(np.array(cols["sigma2_filter"][:-1]), vs.sigma2_filter)
    assert np.isnan(cols["sigma2_filter"][-1])


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), max_size=20))
def test_float_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "f.csv"
    write_series_csv(path, [[v] for v in values], ["value"])
    _, cols = read_series_csv(path)
    assert [float(v) for v in cols["value"]] == values


def test_records_csv_layout(tmp_path, two_state):
    rec = run_filter(two_state, [0, 1], 20, 0, [indicator(0)])
    path = tmp_path / "r.csv"
    write_records_csv(path, [rec])
    header, cols = read_series_csv(path)
    assert header == ["replicate", "time", "estimator", "function", "value"]
    assert cols["estimator"].count("pred") == 3 and cols["estimator"].count("filt") == 2 and cols["estimator"].count("loglik") == 2


def test_write_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as info:
        write_series_csv(blocker / "sub" / "x.csv", [], ["a"])
    assert "file" in str(info.value)


# CLI


def test_cli_config_error_exit_code(tmp_path, model_file, capsys):
    path = config(tmp_path, "command: stability\nmodel: model.yaml\nN: 0\n")
    assert cli.main(["stability", "--config", str(path)]) == 2
    assert "N: must be an integer >= 1" in capsys.readouterr().err


def test_cli_command_mismatch(tmp_path, model_file):
    path = config(tmp_path, "command: loglik-rate\nmodel: model.yaml\nsource: {kind: hmm}\nn_max: 20\n")
    assert cli.main(["forgetting", "--config", str(path)]) == 2


def test_cli_missing_config_and_bad_args(tmp_path):
    assert cli.main(["lp", "--config", str(tmp_path / "none.yaml")]) == 2
    assert cli.main(["nonsense", "--config", "x"]) == 2


def test_cli_forgetting_pass(tmp_path, model_file):
    path = config(tmp_path, """
        command: forgetting
        model: model.yaml
        source: {kind: hmm, seed: 3}
        n_max: 200
        chi_a: [0.99, 0.01]
        chi_b: [0.01, 0.99]
    """)
    assert cli.main(["forgetting", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["forgetting_pass"] is True and summary["slope"] < 0


def test_cli_experiment_failure_exit_code(tmp_path, model_file):
    path = config(tmp_path, """
        command: lp
        model: model.yaml
        source: {kind: fixed, values: [0, 1, 0]}
        time: 3
        p: 2
        N_grid: [10]
        M: 20
        h: indicator(0)
        thresholds: {lp_tolerance: 0.000001}
    """)
    assert cli.main(["lp", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


def test_cli_runs_are_byte_identical(tmp_path, model_file):
    path = config(tmp_path, """
        command: filter
        model: model.yaml
        source: {kind: hmm, seed: 1}
        N: 200
        n_max: 30
        h: [indicator(0), indicator(1)]
        base_seed: 12
    """)
    for d in ("a", "b"):
        assert cli.main(["filter", "--config", str(path), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()
    assert cli.main(["filter", "--config", str(path), "--out", str(tmp_path / "c"), "--seed", "13"]) == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() != (tmp_path / "c" / "records.csv").read_bytes()


def test_cli_simulate_and_verify(tmp_path, model_file):
    sim = config(tmp_path, "command: simulate\nmodel: model.yaml\nn_max: 25\nbase_seed: 2\n")
    assert cli.main(["simulate", "--config", str(sim), "--out", str(tmp_path / "s")]) == 0
    header, cols = read_series_csv(tmp_path / "s" / "trajectory.csv")
    assert header == ["time", "x0", "y0"] and len(cols["time"]) == 25
    ver = write(tmp_path, "v.yaml", """
        command: verify
        model: model.yaml
        source: {kind: hmm}
        n_max: 100
        verify: {d_boxes: [[0, 1], [0, 1]], bogus: 1}
    """)
    assert cli.main(["verify", "--config", str(ver), "--out", str(tmp_path / "v")]) == 2
    ver.write_text(ver.read_text().replace(", bogus: 1", ""))
    assert cli.main(["verify", "--config", str(ver), "--out", str(tmp_path / "v")]) == 0
    assert "[stationary-frequency]\nstatus = pass" in (tmp_path / "v" / "assumptions.txt").read_text()
