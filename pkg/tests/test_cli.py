import csv
import io
import json
import subprocess
import sys

import pytest

from fairdiv import cli
from fairdiv.acceptance import DETERMINISM_CONFIGS
from fairdiv.cli import (
    BASE_COLUMNS,
    ConfigError,
    EXTRA_COLUMNS,
    main,
    parse_config,
    parse_config_text,
)


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _table(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def _footer(text):
    return dict(line[2:].split("=", 1) for line in text.splitlines() if line.startswith("# "))


def test_valid_config_text():
    cfg = parse_config("n=2\nm=4\nseed=7\nsubcommand=rr\n")
    assert (cfg.n, cfg.m, cfg.seed, cfg.subcommand) == (2, 4, 7, "rr")


def test_missing_seed_and_subcommand():
    with pytest.raises(ConfigError, match="seed required"):
        parse_config("subcommand=rr\n")
    with pytest.raises(ConfigError, match="subcommand required"):
        parse_config("seed=1\n")


@pytest.mark.parametrize(
    "text,field",
    [
        ("trials=0", "trials"),
        ("delta=0.9", "delta"),
        ("C=0.2", "C"),
        ("p=1.5", "p"),
        ("noise=gaussian", "noise"),
        ("order=0,0", "order"),
    ],
)
def test_invalid_values_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(f"subcommand=rr\nseed=1\n{text}\n")


def test_config_syntax_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed=1\nbogus\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("colour=red\n")
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("# note\n\nn=two\n")


def test_rr_zero_noise_satisfies_bound(capsys):
    code, out, _ = _run(["rr", "--seed", "3", "--n", "3", "--m", "12"], capsys)
    assert code == 0
    rows = _table(out)
    assert list(rows[0]) == list(BASE_COLUMNS + EXTRA_COLUMNS["rr"])
    assert rows[0]["bound_satisfied"] == "true"
    assert float(rows[0]["max_envy_true"]) <= 1.0
    assert _footer(out)["hard_checks"] == "pass"


def test_same_seed_gives_identical_files(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["lp", "--seed", "5", "--n", "3", "--m", "8", "--trials", "3", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("sub", sorted(DETERMINISM_CONFIGS))
def test_every_subcommand_is_deterministic(sub, capsys):
    argv = [sub, "--seed", "11"]
    for key, val in DETERMINISM_CONFIGS[sub].items():
        argv += [f"--{key.replace('_', '-')}", str(val)]
    first = _run(argv, capsys)
    second = _run(argv, capsys)
    assert first[0] == 0
    assert first[1] == second[1]


def test_verify_statcheck_reports_no_violations(capsys):
    code, out, _ = _run(["verify-statcheck", "--seed", "0"], capsys)
    assert code == 0
    row = _table(out)[0]
    assert row["fail_events"] == "0" and row["bound_satisfied"] == "true"


def test_json_output(capsys):
    code, out, _ = _run(["mhr", "--seed", "2", "--n", "4", "--m", "40", "--trials", "2", "--json"], capsys)
    doc = json.loads(out)
    assert code == 0
    assert doc["subcommand"] == "mhr" and len(doc["rows"]) == 2
    assert doc["columns"] == list(BASE_COLUMNS + EXTRA_COLUMNS["mhr"])
    assert 0.0 <= doc["summary"]["success_frequency"] <= 1.0


def test_timings_column_only_on_request(capsys):
    _, plain, _ = _run(["rr", "--seed", "1"], capsys)
    _, timed, _ = _run(["rr", "--seed", "1", "--timings"], capsys)
    assert "seconds" not in plain.splitlines()[0]
    assert timed.splitlines()[0].endswith(",seconds")


def test_config_file_and_flag_precedence(tmp_path, capsys):
    conf = tmp_path / "exp.cfg"
    conf.write_text("# experiment\nsubcommand=welfare\nseed=4\nn=3\nm=9\ntrials=2\n")
    code, out, err = _run(["rr", "--config", str(conf), "--m", "6"], capsys)
    assert code == 0
    assert "overrides" in err
    rows = _table(out)
    assert len(rows) == 2 and "eps_realized" in rows[0]


def test_config_error_exit_code(tmp_path, capsys):
    code, _, err = _run(["rr", "--trials", "0", "--seed", "1"], capsys)
    assert code == 2 and "trials" in err
    code, _, err = _run(["rr"], capsys)
    assert code == 2 and "seed required" in err
    code, _, _ = _run(["rr", "--seed", "1", "--config", str(tmp_path / "missing.cfg")], capsys)
    assert code == 2


def test_hard_failure_exit_code(monkeypatch, capsys):
    def broken(cfg, rng):
        return dict(max_envy_true=5.0, max_envy_observed=5.0, bound_value=1.0,
                    bound_satisfied=False, fail_events=0, eps_realized=0.0), False

    monkeypatch.setitem(cli.TRIALS, "rr", broken)
    code, out, err = _run(["rr", "--seed", "1"], capsys)
    assert code == 1
    assert _footer(out)["hard_checks"] == "fail"
    assert "hard invariant" in err


def test_thread_count_does_not_change_output(monkeypatch, capsys):
    argv = ["online-envy", "--seed", "8", "--n", "3", "--m", "20", "--eps", "0.1", "--trials", "4"]
    monkeypatch.setenv("FAIRDIV_THREADS", "1")
    serial = _run(argv, capsys)[1]
    monkeypatch.setenv("FAIRDIV_THREADS", "3")
    parallel = _run(argv, capsys)[1]
    assert serial == parallel


def test_bad_thread_setting(monkeypatch, capsys):
    monkeypatch.setenv("FAIRDIV_THREADS", "many")
    assert _run(["rr", "--seed", "1"], capsys)[0] == 2


def test_lowerbound_and_lp_hard_checks(capsys):
    code, out, _ = _run(["rr-lowerbound", "--seed", "1", "--n", "3", "--m", "9", "--eps", "0.2", "--trials", "3"], capsys)
    assert code == 0
    for row in _table(out):
        assert float(row["max_envy_true"]) >= 2 * 0.2 * 9 / 3 - 1e-9


def test_module_entry_point(tmp_path):
    out = tmp_path / "r.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "fairdiv.cli", "balance", "--seed", "2", "--n", "4", "--m", "50", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.read_text().startswith(",".join(BASE_COLUMNS + EXTRA_COLUMNS["balance"]))
