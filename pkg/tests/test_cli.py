import csv

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import SR, faded, make_wav_bytes, tone, white_noise
from soundmem.cli import main
from soundmem.features import FeatureTable
from soundmem.experiment import scores_from_csv


@pytest.fixture
def runner():
    return CliRunner()


def write_synthetic_table(path, pool, seed=0, n_high=12, n_low=12):
    rng = np.random.default_rng(seed)
    cols = [f"hl_{i}" for i in range(n_high)] + [f"ll_{i}" for i in range(n_low)]
    table = FeatureTable(cols)
    for sid in pool:
        table.add_row(sid, {c: float(rng.standard_normal()) for c in cols})
    table.to_csv(path)
    return cols


def test_simulate_score_reliability_report_flow(tmp_path, runner):
    events = tmp_path / "events.jsonl"
    r = runner.invoke(main, [
        "simulate", "--pool-size", "90", "--games", "120", "--seed", "3",
        "--out", str(events),
    ])
    assert r.exit_code == 0, r.output
    assert events.exists()

    scores_csv = tmp_path / "scores.csv"
    r = runner.invoke(main, ["score", "--events", str(events), "--out", str(scores_csv)])
    assert r.exit_code == 0, r.output
    scores = scores_from_csv(scores_csv)
    assert len(scores) > 50

    r = runner.invoke(main, [
        "reliability", "--events", str(events), "--splits", "3", "--seed", "1",
        "--out", str(tmp_path / "rel.csv"),
    ])
    assert r.exit_code == 0, r.output
    assert "memorability mean rho" in r.output
    rel_rows = list(csv.DictReader(open(tmp_path / "rel.csv")))
    assert len(rel_rows) == 3

    report_csv = tmp_path / "hist.csv"
    r = runner.invoke(main, ["report", "--events", str(events), "--out", str(report_csv)])
    assert r.exit_code == 0, r.output
    rows = list(csv.DictReader(open(report_csv)))
    assert {row["metric"] for row in rows} == {"memorability", "confusability"}
    assert len(rows) == 40  # 20 bins per metric


def test_simulate_deterministic(tmp_path, runner):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        r = runner.invoke(main, [
            "simulate", "--pool-size", "80", "--games", "10", "--seed", "9", "--out", str(out),
        ])
        assert r.exit_code == 0, r.output
    assert a.read_text() == b.read_text()


def test_extract_features_cli(tmp_path, runner):
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    (audio_dir / "beep.wav").write_bytes(make_wav_bytes(faded(tone(440.0, 1.2))[None, :]))
    (audio_dir / "hiss.wav").write_bytes(make_wav_bytes(faded(white_noise(1.2, seed=1))[None, :]))
    ratings = tmp_path / "ratings.csv"
    ratings.write_text(
        "sound_id,Hcu,imageability,imageability_std,familiarity,familiarity_std,"
        "valence,arousal,arousal_std,location_embedding_density\n"
        "beep,1.5,3.0,0.5,4.0,0.3,2.0,3.0,0.4,0.7\n",
        encoding="utf-8",
    )
    out = tmp_path / "features.csv"
    dump = tmp_path / "maps"
    r = runner.invoke(main, [
        "extract-features", "--audio-dir", str(audio_dir), "--ratings", str(ratings),
        "--out", str(out), "--dump-salience", str(dump),
    ])
    assert r.exit_code == 0, r.output
    table = FeatureTable.from_csv(out)
    assert set(table.ids) == {"beep", "hiss"}
    assert table.value("beep", "hcu") == pytest.approx(1.5)
    assert table.value("hiss", "hcu") is None
    pgms = sorted(p.name for p in dump.glob("*.pgm"))
    assert len(pgms) == 6
    assert (dump / "beep_intensity.pgm").read_bytes()[:2] == b"P5"


def test_shapley_cli(tmp_path, runner):
    pool = [f"sound_{i:04d}" for i in range(90)]
    events = tmp_path / "events.jsonl"
    r = runner.invoke(main, [
        "simulate", "--pool-size", "90", "--games", "150", "--seed", "4", "--out", str(events),
    ])
    assert r.exit_code == 0, r.output
    scores_csv = tmp_path / "scores.csv"
    runner.invoke(main, ["score", "--events", str(events), "--out", str(scores_csv)])
    features_csv = tmp_path / "features.csv"
    write_synthetic_table(features_csv, pool, seed=5)
    out = tmp_path / "importance.csv"
    r = runner.invoke(main, [
        "shapley", "--features", str(features_csv), "--scores", str(scores_csv),
        "--target", "normalized", "--iters", "40", "--seed", "2", "--out", str(out),
    ])
    assert r.exit_code == 0, r.output
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == ["feature", "individual_r2", "shapley_delta_r2"]
    assert len(rows) == 24


def test_context_eval_cli(tmp_path, runner):
    pool = [f"sound_{i:04d}" for i in range(90)]
    events = tmp_path / "events.jsonl"
    r = runner.invoke(main, [
        "simulate", "--pool-size", "90", "--games", "400", "--seed", "6", "--out", str(events),
    ])
    assert r.exit_code == 0, r.output
    features_csv = tmp_path / "features.csv"
    write_synthetic_table(features_csv, pool, seed=7)
    out = tmp_path / "grid.csv"
    r = runner.invoke(main, [
        "context-eval", "--events", str(events), "--features", str(features_csv),
        "--k", "1,5", "--seed", "3", "--top-high", "6", "--top-low", "6", "--out", str(out),
    ])
    assert r.exit_code == 0, r.output
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 10  # five variants for each context length
    assert {row["context_k"] for row in rows} == {"1", "5"}
