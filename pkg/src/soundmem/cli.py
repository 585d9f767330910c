"""Command-line entry points for the experiment platform and analysis stack."""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click
import numpy as np

from . import context as context_mod
from . import events as events_mod
from .audio import decode_audio
from .experiment import PlanConfig, scores_from_csv, scores_to_csv_text, split_rank_reliability
from .features import FeatureTable, build_feature_table, ingest_high_level
from .salience import write_pgm
from .service import ServiceConfig, create_app, load_pool_manifest
from .simulant import SimulantProfile, simulate_games
from .stats import Dataset, RegressorConfig, shapley_importance


@click.group()
def main() -> None:
    """Auditory memory game platform and analysis toolkit."""


def _load_accepted(events_path: str):
    replayed = events_mod.replay_events(events_path)
    accepted = events_mod.accepted_sessions(replayed)
    finished = events_mod.sessions_from_replay(replayed, only_finished=True)
    return replayed, finished, accepted


@main.command()
@click.option("--listen-addr", envvar="LISTEN_ADDR", default="127.0.0.1:8000", show_default=True)
@click.option("--audio-dir", envvar="AUDIO_DIR", type=click.Path(exists=True, file_okay=False))
@click.option("--event-log", envvar="EVENT_LOG_PATH", required=True, type=click.Path())
@click.option("--pool-manifest", envvar="POOL_MANIFEST", required=True, type=click.Path(exists=True))
@click.option("--target-pairs", type=int, default=None, help="fix the target pair count per round")
@click.option("--base-seed", type=int, default=0, show_default=True)
def serve(listen_addr, audio_dir, event_log, pool_manifest, target_pairs, base_seed) -> None:
    """Run the live experiment HTTP service."""
    import uvicorn

    host, _, port = listen_addr.partition(":")
    plan_cfg = PlanConfig()
    if target_pairs is not None:
        plan_cfg.n_target_pairs = target_pairs
    config = ServiceConfig(
        pool_manifest=load_pool_manifest(pool_manifest),
        event_log_path=event_log,
        audio_dir=audio_dir,
        plan_cfg=plan_cfg,
        base_seed=base_seed,
    )
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port or 8000))


@main.command()
@click.option("--pool-manifest", type=click.Path(exists=True), default=None)
@click.option("--pool-size", type=int, default=None, help="synthetic pool of this many ids")
@click.option("--games", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--target-pairs", type=int, default=2, show_default=True)
@click.option("--vigilance", type=float, default=1.0, show_default=True)
@click.option("--recall-range", default="0.1,0.9", show_default=True)
@click.option("--confuse-range", default="0.0,0.4", show_default=True)
def simulate(pool_manifest, pool_size, games, seed, out, target_pairs, vigilance, recall_range, confuse_range) -> None:
    """Simulate games and write them in the live event-log format."""
    if pool_manifest:
        pool = list(load_pool_manifest(pool_manifest))
    elif pool_size:
        pool = [f"sound_{i:04d}" for i in range(pool_size)]
    else:
        raise click.UsageError("need --pool-manifest or --pool-size")
    r_lo, r_hi = (float(v) for v in recall_range.split(","))
    c_lo, c_hi = (float(v) for v in confuse_range.split(","))
    profile = SimulantProfile.planted(pool, seed, (r_lo, r_hi), (c_lo, c_hi), vigilance)
    plan_cfg = PlanConfig(n_target_pairs=target_pairs)
    game_list = simulate_games(pool, profile, games, seed, plan_cfg)
    events_mod.write_events(events_mod.events_from_games(game_list), out)
    click.echo(f"wrote {games} games to {out}")


@main.command("extract-features")
@click.option("--audio-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ratings", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--dump-salience", type=click.Path(file_okay=False), default=None,
              help="write per-clip PGM images of the salience maps here")
def extract_features(audio_dir, ratings, out, dump_salience) -> None:
    """Decode every WAV in a directory and write the merged feature table."""
    from .audio import log_compress, resample_clip, stft_magnitude
    from .salience import salience_maps

    clips = []
    for path in sorted(Path(audio_dir).glob("*.wav")):
        clips.append(decode_audio(path.read_bytes(), clip_id=path.stem))
    ingest = ingest_high_level(ratings) if ratings else None
    table = build_feature_table(clips, ingest)
    table.to_csv(out)
    if dump_salience:
        dump_dir = Path(dump_salience)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for clip in clips:
            try:
                maps = salience_maps(log_compress(stft_magnitude(resample_clip(clip))))
            except Exception:  # noqa: BLE001 - dump is best-effort diagnostics
                continue
            for name, mat in maps.channels().items():
                write_pgm(mat, dump_dir / f"{clip.id}_{name}.pgm")
    if ingest and ingest.errors:
        for err in ingest.errors:
            click.echo(f"ratings line {err.line}: {err.reason}", err=True)
    if table.errors:
        for sid, reason in table.errors.items():
            click.echo(f"extraction failed for {sid}: {reason}", err=True)
    click.echo(f"wrote {len(table)} rows to {out}")


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def score(events_path, out) -> None:
    """Score sounds from the event log (accepted sessions only)."""
    from .experiment import score_sounds

    _, finished, accepted = _load_accepted(events_path)
    scores = score_sounds(accepted)
    Path(out).write_text(scores_to_csv_text(scores), encoding="utf-8")
    click.echo(
        f"{len(finished)} finished sessions, {len(accepted)} accepted, {len(scores)} sounds -> {out}"
    )


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--splits", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def reliability(events_path, splits, seed, out) -> None:
    """Split-rank reliability of the normalized and confusability scores."""
    _, _, accepted = _load_accepted(events_path)
    result = split_rank_reliability(accepted, n_splits=splits, seed=seed)
    click.echo(f"memorability mean rho:  {result.memorability_mean:.4f}")
    click.echo(f"confusability mean rho: {result.confusability_mean:.4f}")
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["split", "memorability_rho", "confusability_rho"])
            for i, (m, c) in enumerate(zip(result.memorability_rhos, result.confusability_rhos)):
                writer.writerow([i, repr(m), repr(c)])


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--target", type=click.Choice(["normalized", "confusability"]), default="normalized",
              show_default=True)
@click.option("--iters", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--kind", type=click.Choice(["rbf_kernel_ridge", "epsilon_svr"]),
              default="rbf_kernel_ridge", show_default=True)
@click.option("--out", required=True, type=click.Path())
def shapley(features_path, scores_path, target, iters, seed, kind, out) -> None:
    """Sampled Shapley feature importance against a score column."""
    table = FeatureTable.from_csv(features_path)
    scores = scores_from_csv(scores_path)
    rows, ys = [], []
    for sid in table.ids:
        s = scores.get(sid)
        if s is None:
            continue
        y = s.normalized if target == "normalized" else s.c10
        if y is None:
            continue
        row = table.row(sid)
        if any(row[c] is None for c in table.columns):
            continue
        rows.append([float(row[c]) for c in table.columns])
        ys.append(y)
    if not rows:
        raise click.ClickException("no complete rows joining features with scores")
    ds = Dataset(np.array(rows), np.array(ys), list(table.columns))
    report = shapley_importance(ds, iterations=iters, seed=seed, cfg=RegressorConfig(kind=kind))
    report.to_csv(out)
    click.echo(f"{len(rows)} rows, {len(report.entries)} features -> {out}")


@main.command("context-eval")
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--k", "k_values", default="1,5", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--top-high", type=int, default=25, show_default=True)
@click.option("--top-low", type=int, default=25, show_default=True)
@click.option("--rank-by", type=click.Choice(["individual_r2", "shapley_delta_r2"]),
              default="individual_r2", show_default=True)
@click.option("--out", required=True, type=click.Path())
def context_eval(events_path, features_path, k_values, seed, top_high, top_low, rank_by, out) -> None:
    """Run the per-game context experiment grid from an event log."""
    from .experiment import score_sounds

    table = FeatureTable.from_csv(features_path)
    _, _, accepted = _load_accepted(events_path)
    scores = score_sounds(accepted)
    targets = {s: sc.normalized for s, sc in scores.items() if sc.normalized is not None}
    top50 = context_mod.select_top_features(
        table, targets, n_high=top_high, n_low=top_low, rank_by=rank_by, seed=seed
    )
    ks = [int(v) for v in k_values.split(",")]
    true_sets = {k: context_mod.build_game_examples(accepted, table, k) for k in ks}
    noise_sets = {
        k: context_mod.noise_baseline_examples(true_sets[k], table, seed + k) for k in ks
    }
    grid = context_mod.run_experiment_grid(true_sets, noise_sets, top50, cv_seed=seed)
    grid.to_csv(out)
    for row in grid.rows:
        click.echo(f"k={row.context_k} {row.feature_set}: {row.accuracy:.3f} (n={row.n_examples})")


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--bins", type=int, default=20, show_default=True)
def report(events_path, out, bins) -> None:
    """Histogram CSV of the per-sound raw memorability and confusability scores."""
    from .experiment import score_sounds

    _, _, accepted = _load_accepted(events_path)
    scores = score_sounds(accepted)
    m_vals = np.array([s.m for s in scores.values() if s.m is not None])
    c_vals = np.array([s.c10 for s in scores.values() if s.c10 is not None])
    edges = np.linspace(0.0, 1.0, bins + 1)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "bin_start", "bin_end", "count"])
        for name, vals in (("memorability", m_vals), ("confusability", c_vals)):
            counts, _ = np.histogram(vals, bins=edges)
            for i, n in enumerate(counts):
                writer.writerow([name, repr(float(edges[i])), repr(float(edges[i + 1])), int(n)])
    click.echo(
        f"memorability mean {m_vals.mean():.3f} over {m_vals.size} sounds; "
        f"confusability mean {c_vals.mean():.3f} over {c_vals.size} sounds"
    )


if __name__ == "__main__":
    sys.exit(main())
