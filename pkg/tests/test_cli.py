import pytest

from cbcast.cli import main
from cbcast.simnet import run_scenario
from cbcast.scenario import load_scenario

from conftest import DATA


def test_golden_trace_is_byte_identical(tmp_path):
    out = tmp_path / "t.trace"
    assert main(["--scenario", str(DATA / "golden.scn"), "--trace-out", str(out)]) == 0
    assert out.read_bytes() == (DATA / "golden.trace").read_bytes()


def test_simulate_and_check(tmp_path):
    verdicts = tmp_path / "v.tsv"
    rc = main(["--scenario", str(DATA / "golden.scn"), "--check", "--verdict-out", str(verdicts)])
    assert rc == 0
    lines = verdicts.read_text().splitlines()
    assert len(lines) == 8 and all("\tPASS\t" in line for line in lines)


def test_check_existing_trace(tmp_path, capsys):
    assert main(["--trace", str(DATA / "golden.trace")]) == 0
    assert "causal_order\tPASS" in capsys.readouterr().out


def test_corrupted_trace_fails(tmp_path):
    lines = (DATA / "golden.trace").read_text().splitlines(keepends=True)
    bad = tmp_path / "bad.trace"
    bad.write_text("".join(l for l in lines if "\tdeliver\t" not in l or "\tp03\t" not in l))
    assert main(["--trace", str(bad), "--verdict-out", str(tmp_path / "v")]) == 1
    assert "FAIL" in (tmp_path / "v").read_text()


def test_seed_override_changes_trace(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["--scenario", str(DATA / "golden.scn"), "--seed", "1", "--trace-out", str(a)])
    main(["--scenario", str(DATA / "golden.scn"), "--seed", "2", "--trace-out", str(b)])
    assert a.read_text() != b.read_text()
    assert "seed=1 " in a.read_text().splitlines()[0]


@pytest.mark.parametrize(
    "text",
    [
        "roster = A B\nat 1 halt A\n",
        "roster = A B C\nat 2 remove C\ndrop-notification A 1\n",  # notification lost at a process that never halts
        "not a scenario\n",
    ],
)
def test_bad_scenario_exit_2(tmp_path, text):
    sc = tmp_path / "bad.scn"
    sc.write_text(text)
    assert main(["--scenario", str(sc)]) == 2


def test_unreadable_inputs_exit_2(tmp_path):
    assert main(["--scenario", str(tmp_path / "missing.scn")]) == 2
    assert main(["--trace", str(tmp_path / "missing.trace")]) == 2
    junk = tmp_path / "junk.trace"
    junk.write_text("hello\n")
    assert main(["--trace", str(junk)]) == 2
    assert main(["--scenario", str(DATA / "golden.scn"), "--max-ticks", "0"]) == 2


def test_generate(tmp_path):
    assert main(["--generate", "3", "--seed", "4", "--out-dir", str(tmp_path)]) == 0
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["gen0000.scn", "gen0001.scn", "gen0002.scn"]
    for f in tmp_path.iterdir():
        assert run_scenario(load_scenario(f)).status == "quiescent"


def test_sources_are_exclusive():
    with pytest.raises(SystemExit):
        main(["--scenario", "a", "--trace", "b"])


def test_shipped_example_runs_clean(capsys):
    from pathlib import Path

    example = Path(__file__).parents[1] / "scenarios" / "basic.scn"
    assert main(["--scenario", str(example), "--check", "--trace-out", "/dev/null"]) == 0
