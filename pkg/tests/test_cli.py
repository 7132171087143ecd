import json

import numpy as np
import pytest

from radcem.cli import build_parser, main, parse_config
from radcem.errors import InvalidArgument

SMALL = ["--nx", "12", "--Nx", "3", "--period", "0.3333333333333333", "--contrast", "1000",
         "--basis", "3", "--layers", "1", "--T", "0.01", "--dt", "0.002", "--paths", "2",
         "--noise-n", "4"]


def test_gen_field_periodic(tmp_path, capsys):
    out = tmp_path / "k.txt"
    assert main(["gen-field", "--nx", "16", "--period", "0.25", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "16 16" and len(lines) == 257
    assert "contrast=100000" in capsys.readouterr().out


def test_gen_field_no_inclusions(tmp_path):
    out = tmp_path / "k.txt"
    assert main(["gen-field", "--nx", "8", "--field", "inclusions", "--inclusions", "0",
                 "--out", str(out)]) == 0
    assert set(out.read_text().splitlines()[1:]) == {"1.0"}


def test_bad_period_exit_code(tmp_path, capsys):
    code = main(["gen-field", "--nx", "100", "--period", "0.125", "--out", str(tmp_path / "k")])
    assert code == 2
    assert "period" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("nx = 12\nlayres = 3\n")
    assert main(["run", "--config", str(cfg), "--dry-run"]) == 2
    assert "layres" in capsys.readouterr().err


def test_config_types_and_sweep_table():
    kwargs, sweep = parse_config({"nx": 20, "contrast": 100, "snapshots": [0.01],
                                  "sweep": {"layer_list": [1, 2]}})
    assert kwargs == {"nx": 20, "contrast": 100.0, "snapshots": (0.01,)}
    assert sweep["layer_list"] == [1, 2]
    with pytest.raises(InvalidArgument, match="nx"):
        parse_config({"nx": "twelve"})
    with pytest.raises(InvalidArgument, match="sweep.size"):
        parse_config({"sweep": {"size": [1]}})


def test_dry_run_prints_config(capsys):
    assert main(["run", "--dry-run"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["config"]["nx"] == 100 and info["resolved_layers"] == 4
    assert info["n_ms"] == 600 and info["n_f"] == 9801 and info["time_steps"] == 100


def test_deterministic_run(tmp_path):
    out = tmp_path / "o"
    args = ["run", *SMALL, "--paths", "1", "--noise-n", "0", "--out", str(out),
            "--snapshots", "0.004,0.01"]
    assert main(args) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"]["noise_n"] == 0 and meta["config"]["paths"] == 1
    assert (out / "snapshot_coarse_t0.004.txt").exists()
    first = (out / "mean_coarse.txt").read_bytes()
    assert main(args) == 0
    assert (out / "mean_coarse.txt").read_bytes() == first


def test_field_file_round_trip(tmp_path):
    field = tmp_path / "k.txt"
    assert main(["gen-field", *SMALL, "--field", "inclusions", "--inclusions", "2",
                 "--out", str(field)]) == 0
    assert main(["run", *SMALL, "--field", "inclusions", "--inclusions", "2",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["run", *SMALL, "--field-file", str(field), "--out", str(tmp_path / "b")]) == 0
    for name in ("mean_fine.txt", "mean_coarse.txt", "errors.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_threads_flag_gives_identical_files(tmp_path):
    for t in ("1", "2"):
        assert main(["run", *SMALL, "--threads", t, "--out", str(tmp_path / t)]) == 0
    for name in ("mean_fine.txt", "mean_coarse.txt", "errors.csv", "metadata.json"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


@pytest.mark.parametrize("kind, values, rows", [("layers", "0,1", 2), ("basis", "2,3", 2),
                                                ("energy-series", "2", 6),
                                                ("contrast", "10,1000", 6)])
def test_sweeps_write_csv(tmp_path, kind, values, rows):
    assert main(["sweep", kind, *SMALL, "--values", values, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / f"sweep_{kind}.csv").read_text().splitlines()
    assert len(lines) == rows + 1


def test_truncation_sweep(tmp_path, capsys):
    assert main(["sweep", "truncation", "--nx", "6", "--Nx", "3", "--field", "constant",
                 "--T", "0.1", "--dt", "0.003125", "--paths", "2", "--values", "1,2",
                 "--out", str(tmp_path)]) == 0
    assert "mc slope" in capsys.readouterr().out
    assert len((tmp_path / "sweep_truncation.csv").read_text().splitlines()) == 4


def test_noise_and_compare(tmp_path, capsys):
    assert main(["noise", "--paths", "2", "--noise-n", "4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "noise_path_1.csv").exists()
    assert main(["run", *SMALL, "--out", str(tmp_path / "r")]) == 0
    r = tmp_path / "r"
    assert main(["compare", str(r / "mean_coarse.txt"), str(r / "mean_fine.txt")]) == 0
    assert "relative_l2=" in capsys.readouterr().out


def test_missing_field_file_exit_code(tmp_path):
    assert main(["run", *SMALL, "--field-file", str(tmp_path / "nope.txt")]) == 1


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for cmd in ("gen-field", "run", "sweep", "noise", "compare"):
        assert cmd in text
