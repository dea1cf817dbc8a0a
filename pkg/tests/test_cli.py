import pytest

from lteloc.cli import EXIT_INVALID, EXIT_OK, EXIT_RUN_ERROR, main
from lteloc.scenario import BUNDLED, bundled_path


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    for n in BUNDLED:
        assert n in out


def test_validate_bundled_and_bad(tmp_path, capsys):
    assert main(["validate", *BUNDLED]) == EXIT_OK
    bad = tmp_path / "bad.scn"
    bad.write_text(bundled_path("e2e_lab").read_text().replace("[attacker]", "[attacker]\nlaser = 1"))
    assert main(["validate", "e2e_lab", str(bad)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert f"{bad}:" in err and "laser" in err


def test_run_unknown_scenario():
    assert main(["run", "no_such_thing"]) == EXIT_INVALID


def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "repeater_table5", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert "selected=ue" in capsys.readouterr().out
    assert (tmp_path / "repeater_table5_s3_metrics.csv").exists()


def test_run_error_exit_code(tmp_path):
    text = bundled_path("e2e_lab").read_text().replace("point_settle_ms = 600",
                                                       "point_settle_ms = 600\nsweep_timeout_ms = 5")
    p = tmp_path / "short.scn"
    p.write_text(text)
    assert main(["run", str(p)]) == EXIT_RUN_ERROR


def test_batch(tmp_path, capsys):
    rc = main(["batch", "table1_power_vs_distance", "--seeds", "1,2", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    assert (tmp_path / "table1_power_vs_distance_batch.csv").exists()
    assert "success_rate=1.000" in capsys.readouterr().out


def test_batch_empty_seeds_is_run_error():
    assert main(["batch", "table1_power_vs_distance", "--seeds", ""]) == EXIT_RUN_ERROR


def test_bad_arguments_exit():
    with pytest.raises(SystemExit):
        main(["run"])
    with pytest.raises(SystemExit):
        main(["batch", "e2e_lab", "--axis", "gravity"])
