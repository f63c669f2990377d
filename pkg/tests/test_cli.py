import csv
import io

import pytest

from secaggplus import cli
from secaggplus.cli import CSV_COLUMNS, EXIT_ABORT, EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, WALL_CLOCK_COLUMNS, main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def strip_clock(rows):
    return [{k: v for k, v in r.items() if k not in WALL_CLOCK_COLUMNS} for r in rows]


def test_simulate_deterministic(tmp_path, capsys):
    out = tmp_path / "run.csv"
    args = ["simulate", "--clients", "20", "--vector-size", "1000", "--seed", "7", "--csv", str(out)]
    assert main(args) == EXIT_OK
    assert main(args) == EXIT_OK
    rows = read_csv(out)
    assert list(rows[0]) == CSV_COLUMNS
    assert len(rows) == 2 and strip_clock(rows[:1]) == strip_clock(rows[1:])
    assert rows[0]["status"] == "ok" and rows[0]["survivors"] == "20"
    assert "aggregate checksum" in capsys.readouterr().out


def test_simulate_dropouts(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code = main(
        ["simulate", "--clients", "40", "--vector-size", "50", "--share-num", "9", "--threshold", "5",
         "--dropout-frac", "0.05", "--dropout-stage", "2", "--csv", str(out)]
    )
    assert code == EXIT_OK
    (row,) = read_csv(out)
    assert len(row["dropped_ids"].split()) == 2 and row["survivors"] == "38"
    assert "dropped after stage 2" in capsys.readouterr().out


def test_simulate_config_error(capsys):
    assert main(["simulate", "--clients", "4", "--threshold", "26"]) == EXIT_CONFIG
    assert "threshold" in capsys.readouterr().err


def test_simulate_config_file(tmp_path, capsys):
    conf = tmp_path / "p.conf"
    conf.write_text("share_num=3\nthreshold=2\nmin_num=1\n")
    out = tmp_path / "r.csv"
    # flags override file values
    assert main(["simulate", "--clients", "6", "--vector-size", "4", "--config", str(conf),
                 "--threshold", "3", "--csv", str(out)]) == EXIT_OK
    (row,) = read_csv(out)
    assert (row["share_num"], row["threshold"]) == ("3", "3")
    conf.write_text("share_num=lots\n")
    assert main(["simulate", "--config", str(conf)]) == EXIT_CONFIG


def test_simulate_abort_exit_code(capsys):
    code = main(["simulate", "--clients", "6", "--vector-size", "3", "--share-num", "6", "--threshold", "5",
                 "--min-num", "1", "--dropout-frac", "0.5", "--dropout-stage", "1"])
    assert code == EXIT_ABORT
    assert "aborted" in capsys.readouterr().out


def test_sweep_clients_constant_bytes(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--axis", "clients", "--values", "10,20,40", "--vector-size", "1000",
                 "--share-num", "9", "--threshold", "5", "--csv", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert [r["axis_value"] for r in rows] == ["10", "20", "40"]
    assert len({r["client_bytes"] for r in rows}) == 1


def test_sweep_vector_linear_bytes(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--axis", "vector_size", "--values", "1000,2000,3000", "--clients", "10",
                 "--share-num", "5", "--threshold", "3", "--csv", str(out)]) == EXIT_OK
    b = [int(r["client_bytes"]) for r in read_csv(out)]
    assert b[1] - b[0] == b[2] - b[1] == 8 * 1000


def test_sweep_dropouts_raise_server_prg(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--axis", "clients", "--values", "20,40", "--vector-size", "200", "--share-num", "9",
                 "--threshold", "5", "--dropout-frac", "0,0.05", "--dropout-stage", "2", "--csv", str(out)]) == EXIT_OK
    rows = read_csv(out)
    for n in ("20", "40"):
        clean, dropped = (int(r["prg_elements_server"]) for r in rows if r["axis_value"] == n)
        assert dropped > clean


def test_sweep_records_failures_and_continues(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--axis", "clients", "--values", "3,8", "--vector-size", "5",
                 "--share-num", "5", "--threshold", "3", "--csv", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert rows[0]["status"] == "config_error" and rows[1]["status"] == "ok"


def test_sweep_parallel_matches_serial(tmp_path):
    common = ["sweep", "--axis", "clients", "--values", "5,7", "--vector-size", "20", "--repetitions", "2"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(common + ["--csv", str(a)]) == EXIT_OK
    assert main(common + ["--csv", str(b), "--jobs", "2"]) == EXIT_OK
    assert strip_clock(read_csv(a)) == strip_clock(read_csv(b))


def test_sweep_values_must_increase(capsys):
    assert main(["sweep", "--axis", "clients", "--values", "20,10"]) == EXIT_CONFIG


def test_sweep_to_stdout(capsys):
    assert main(["sweep", "--axis", "vector_size", "--values", "3", "--clients", "3"]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 and rows[0]["vector_size"] == "3"


def test_verify_passes(capsys):
    assert main(["verify", "--max-n", "4", "--instances", "40"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_verify_detects_sign_flip(capsys):
    assert main(["verify", "--max-n", "3", "--instances", "20", "--inject-fault", "sign-flip"]) == EXIT_VERIFY
    captured = capsys.readouterr()
    assert "FAIL mask cancellation" in captured.out and "residue" in captured.out
    assert "reproduce with --seed" in captured.err


def test_verify_single_client_check():
    from secaggplus.verify import check_single_client

    (result,) = check_single_client()
    assert result.passed, result.detail


def test_make_inputs_reproducible():
    a = cli.make_inputs(4, 3, 3.0, 2, seed=1)
    b = cli.make_inputs(4, 3, 3.0, 2, seed=1)
    assert all((x == y).all() and wx == wy for (x, wx), (y, wy) in zip(a, b))


@pytest.mark.parametrize("argv", [["simulate", "--clients", "x"], ["bogus"]])
def test_bad_arguments_exit(argv):
    with pytest.raises(SystemExit):
        main(argv)
