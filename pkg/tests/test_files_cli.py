import json

import numpy as np
import pytest

from infoseek import __version__
from infoseek.agents import sample_population, simulate_population
from infoseek.cli import main
from infoseek.files import (
    TRIAL_COLUMNS,
    ValidationError,
    check_subject_coverage,
    import_external,
    load_config,
    read_subjects,
    read_trials,
    write_subjects,
    write_trials,
)
from infoseek.game import Task


@pytest.fixture(scope="module")
def population():
    profs = sample_population(np.random.default_rng(0), 12)
    return profs, simulate_population(profs, [Task.MAX, Task.MIN], 10, seed=0)


def test_trials_round_trip(tmp_path, population):
    _, recs = population
    path = tmp_path / "t.csv"
    write_trials(path, recs)
    back, report = read_trials(path)
    assert back == recs and report.rows_skipped == 0
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.splitlines()[0].decode() == ",".join(TRIAL_COLUMNS)


def test_trials_derived_fields_recomputed(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(",".join(TRIAL_COLUMNS) + "\ns1,max,t1,3,4,2,5,A1;B2;A2;B1,S;S;S;GA,812.5\n")
    (r,), _ = read_trials(path)
    assert r.n_moves == 4 and r.correct and r.score == 5 and r.decision_time_ms == 812.5


def test_bad_row_names_line_and_column(tmp_path, population):
    _, recs = population
    path = tmp_path / "t.csv"
    write_trials(path, recs[:3])
    lines = path.read_text().splitlines()
    cells = lines[2].split(",")
    cells[3] = "11"
    lines[2] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError) as exc:
        read_trials(path)
    assert exc.value.problems[0][:2] == (3, "a1")
    kept, report = read_trials(path, strict=False)
    assert len(kept) == 2 and report.rows_skipped == 1


def test_illegal_action_sequence_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(",".join(TRIAL_COLUMNS) + "\ns1,max,t1,3,4,2,5,A1;B2;A2;B1,S;GA;S,\n")
    with pytest.raises(ValidationError) as exc:
        read_trials(path)
    assert exc.value.problems[0][1] == "actions"


def test_subjects_round_trip(tmp_path, population):
    profs, recs = population
    path = tmp_path / "s.csv"
    write_subjects(path, profs)
    assert read_subjects(path) == profs
    check_subject_coverage(recs, profs)
    with pytest.raises(ValidationError):
        check_subject_coverage(recs, profs[1:])
    dup = tmp_path / "dup.csv"
    text = path.read_text().splitlines()
    dup.write_text("\n".join(text + [text[1]]) + "\n")
    with pytest.raises(ValidationError):
        read_subjects(dup)


def test_import_identity_is_byte_equal(tmp_path, population):
    _, recs = population
    src = tmp_path / "src.csv"
    write_trials(src, recs)
    out = tmp_path / "out.csv"
    report = import_external(src, {}, out)
    assert out.read_bytes() == src.read_bytes() and report.rows_written == len(recs)


def test_import_renamed_columns(tmp_path, population):
    _, recs = population
    canon = tmp_path / "canon.csv"
    write_trials(canon, recs[:5])
    rename = {"subject_id": "participant", "task": "condition", "actions": "choices"}
    lines = canon.read_text().splitlines()
    header = [rename.get(c, c) for c in lines[0].split(",")]
    body = [ln.replace(",max,", ",MaxProd,").replace(",min,", ",MinProd,").replace("GA", "left").replace("GB", "right")
            for ln in lines[1:]]
    src = tmp_path / "ext.csv"
    src.write_text("\n".join([",".join(header)] + body) + "\n")
    mapping = {"columns": {"subject_id": "participant", "task": "condition", "actions": "choices"},
               "values": {"task": {"MaxProd": "max", "MinProd": "min"}, "actions": {"left": "GA", "right": "GB"}}}
    out = tmp_path / "out.csv"
    import_external(src, mapping, out)
    assert out.read_bytes() == canon.read_bytes()


def test_import_missing_required_column(tmp_path, population):
    _, recs = population
    src = tmp_path / "src.csv"
    write_trials(src, recs[:2])
    lines = [",".join(ln.split(",")[:8] + ln.split(",")[9:]) for ln in src.read_text().splitlines()]
    src.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="actions"):
        import_external(src, {}, tmp_path / "o.csv")


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  lr: 0.01\n  momentum: 0.9\n")
    with pytest.raises(ValidationError, match="momentum"):
        load_config(p)
    p.write_text("seed: 4\ntrain:\n  lr: 0.01\n")
    cfg = load_config(p, {"seed": 9})
    assert cfg["seed"] == 9 and cfg["train"]["lr"] == 0.01 and cfg["train"]["patience"] == 3


# ---------------------------------------------------------------------------
# command line


def test_cli_usage_error(capsys):
    assert main_exit(["no-such-command"]) == 1
    assert "usage" in capsys.readouterr().err


def main_exit(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_cli_end_to_end(tmp_path, capsys):
    d = tmp_path / "data"
    assert main(["gen-data", "--n-subjects", "30", "--trials-per-task", "10", "--seed", "5", "--out", str(d), "--quiet"]) == 0
    echoed = json.loads((d / "effective_config.json").read_text())
    assert echoed["tool_version"] == __version__ and echoed["config"]["seed"] == 5

    fits = []
    for name in ("f1", "f2"):
        out = tmp_path / name
        assert main(["fit", "--trials", str(d / "trials.csv"), "--variant", "subj", "--task", "max",
                     "--seed", "1", "--out", str(out), "--quiet"]) == 0
        fits.append((out / "checkpoint.json").read_bytes())
        assert (out / "training_log.csv").exists()
    assert fits[0] == fits[1]

    capsys.readouterr()
    ck = tmp_path / "f1" / "checkpoint.json"
    assert main(["eval", "--checkpoint", str(ck), "--trials", str(tmp_path / "f1" / "split_validation.csv")]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("nll=") and 0 < float(line[4:]) < 1.0

    assert main(["simulate", "--checkpoint", str(ck), "--trials", str(d / "trials.csv"), "--out",
                 str(tmp_path / "sim"), "--quiet"]) == 0
    assert (tmp_path / "sim" / "subject_metrics.csv").exists()

    tables = []
    for name in ("a1", "a2"):
        out = tmp_path / name
        assert main(["analyze", "--trials", str(d / "trials.csv"), "--subjects", str(d / "subjects.csv"),
                     "--checkpoint", str(ck), "--out", str(out), "--quiet"]) == 0
        tables.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    assert tables[0] == tables[1]
    assert {"framing.csv", "approach_max.csv", "reject_min.csv", "metrics_correlation.csv",
            "median_split_approach.csv"} <= set(tables[0])


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(",".join(TRIAL_COLUMNS) + "\ns,max,t,11,1,1,1,A1;A2;B1;B2,GA,\n")
    ck = tmp_path / "nope.json"
    ck.write_text("{}")
    assert main(["eval", "--checkpoint", str(ck), "--trials", str(bad)]) == 2
    assert main(["fit", "--trials", str(bad), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert main(["gradcheck", "--graphs", "3", "--probes", "10"]) == 0
    assert "max_rel_error=" in capsys.readouterr().out


def test_cli_gradcheck_failure_exit(monkeypatch):
    import infoseek.cli as cli
    from infoseek.nn import GradCheckReport

    monkeypatch.setattr(cli, "grad_check", lambda *a, **k: GradCheckReport(1, 0.5, []))
    assert main(["gradcheck", "--graphs", "1"]) == 3
