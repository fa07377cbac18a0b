"""
Run directories: run.json, samples.csv, the K̂ snapshots, one trajectory CSV
per episode and a human-readable report.txt.
"""

import os

import pandas as pd
from tabulate import tabulate

try:
    from .errors import RunArtifactError
    from .experiment import EpisodeLog, RunRecord, StepLog
    from .gp_learner import Hyperparameters, Sample
    from .grid_utils import QSet
    from .logger import NullLogger
    from .set_io import atomic_write_text, format_float, load_set, read_json, save_set, write_csv, write_json
except ImportError:
    from errors import RunArtifactError
    from experiment import EpisodeLog, RunRecord, StepLog
    from gp_learner import Hyperparameters, Sample
    from grid_utils import QSet
    from logger import NullLogger
    from set_io import atomic_write_text, format_float, load_set, read_json, save_set, write_csv, write_json

RUN_SCHEMA_VERSION = 1


def _columns(prefix, n):
    return [f"{prefix}_{d}" for d in range(n)]


def _floats(values):
    return [format_float(v) for v in values]


def samples_header(state_dim, action_dim):
    return ["episode", "step"] + _columns("state", state_dim) + _columns("action", action_dim) + ["label", "feasible"]


def trajectory_header(state_dim, action_dim):
    return (
        ["episode", "step"]
        + _columns("state", state_dim)
        + _columns("nominal", action_dim)
        + _columns("action", action_dim)
        + ["feasible", "nominal_allowed", "failed"]
        + _columns("next_state", state_dim)
    )


def _dims(record):
    grid = record.khat_initial.grid
    return len(grid.state_axes), len(grid.action_axes)


def _khat_files(record):
    files = {"khat_initial": "khat_initial.json", "khat_final": "khat_final.json"}
    for b in range(len(record.khat_batches)):
        files[f"khat_batch_{b}"] = f"khat_batch_{b}.json"
    return files


def run_payload(record, metrics=None):
    """Everything in run.json; no timestamps, so reruns are byte-identical."""
    return {
        "schema_version": RUN_SCHEMA_VERSION,
        "config": record.config,
        "seeds": [{"state": list(s.state), "action": list(s.action), "label": s.label} for s in record.seeds],
        "hyperparameters": [h.to_dict() for h in record.hyperparameters],
        "episodes": [
            {
                "episode": e.episode,
                "batch": e.batch,
                "initial_state": list(e.initial_state),
                "length": len(e),
                "failed": e.failed,
                "trajectory": f"trajectories/episode_{e.episode:03d}.csv",
            }
            for e in record.episodes
        ],
        "total_samples": record.total_samples,
        "files": _khat_files(record),
        "metrics": metrics,
    }


def save_run(record, run_dir, metrics=None, logger=None):
    if logger is None:
        logger = NullLogger()
    state_dim, action_dim = _dims(record)

    sample_rows = []
    for s in record.steps:
        sample_rows.append(
            [s.episode, s.step] + _floats(s.state) + _floats(s.action) + [format_float(s.label), int(s.feasible)]
        )
    write_csv(os.path.join(run_dir, "samples.csv"), samples_header(state_dim, action_dim), sample_rows)

    for episode in record.episodes:
        rows = [
            [s.episode, s.step]
            + _floats(s.state)
            + _floats(s.nominal_action)
            + _floats(s.action)
            + [int(s.feasible), int(s.nominal_allowed), int(s.failed)]
            + _floats(s.next_state)
            for s in episode.steps
        ]
        path = os.path.join(run_dir, "trajectories", f"episode_{episode.episode:03d}.csv")
        write_csv(path, trajectory_header(state_dim, action_dim), rows)

    files = _khat_files(record)
    save_set(os.path.join(run_dir, files["khat_initial"]), record.khat_initial, {"stage": "initial"})
    save_set(os.path.join(run_dir, files["khat_final"]), record.khat_final, {"stage": "final"})
    for b, khat in enumerate(record.khat_batches):
        save_set(os.path.join(run_dir, files[f"khat_batch_{b}"]), khat, {"stage": f"batch {b}"})

    write_json(os.path.join(run_dir, "run.json"), run_payload(record, metrics))
    if metrics is not None:
        write_run_report(os.path.join(run_dir, "report.txt"), record, metrics)
    logger.info(f"Saved run with {record.total_samples} samples to {run_dir}")


def _load_qset(path):
    lattice, _ = load_set(path)
    if not isinstance(lattice, QSet):
        raise RunArtifactError(f"{path} does not hold a state-action set")
    return lattice


def _read_trajectory(path, state_dim, action_dim):
    if not os.path.exists(path):
        raise RunArtifactError(f"missing file: {path}")
    try:
        # round_trip parsing reloads the repr-formatted floats exactly
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise RunArtifactError(f"cannot parse {path}: {e}") from e
    expected = trajectory_header(state_dim, action_dim)
    if list(frame.columns) != expected:
        raise RunArtifactError(f"{path} has columns {list(frame.columns)}, expected {expected}")

    def pick(row, prefix, n):
        return tuple(float(row[c]) for c in _columns(prefix, n))

    return tuple(
        StepLog(
            episode=int(row["episode"]),
            step=int(row["step"]),
            state=pick(row, "state", state_dim),
            nominal_action=pick(row, "nominal", action_dim),
            action=pick(row, "action", action_dim),
            feasible=bool(row["feasible"]),
            nominal_allowed=bool(row["nominal_allowed"]),
            failed=bool(row["failed"]),
            next_state=pick(row, "next_state", state_dim),
        )
        for _, row in frame.iterrows()
    )


def load_run(run_dir):
    """Rebuild a RunRecord; the stored metrics are returned alongside it."""
    payload = read_json(os.path.join(run_dir, "run.json"))
    if payload.get("schema_version") != RUN_SCHEMA_VERSION:
        raise RunArtifactError(f"unsupported run schema in {run_dir}")
    try:
        files = payload["files"]
        khat_initial = _load_qset(os.path.join(run_dir, files["khat_initial"]))
        batch_keys = sorted((k for k in files if k.startswith("khat_batch_")), key=lambda k: int(k.rsplit("_", 1)[1]))
        khat_batches = tuple(_load_qset(os.path.join(run_dir, files[k])) for k in batch_keys)
        state_dim, action_dim = len(khat_initial.grid.state_axes), len(khat_initial.grid.action_axes)
        episodes = tuple(
            EpisodeLog(
                episode=int(e["episode"]),
                batch=int(e["batch"]),
                initial_state=tuple(float(x) for x in e["initial_state"]),
                steps=_read_trajectory(os.path.join(run_dir, e["trajectory"]), state_dim, action_dim),
            )
            for e in payload["episodes"]
        )
        record = RunRecord(
            config=payload["config"],
            episodes=episodes,
            hyperparameters=tuple(Hyperparameters.from_dict(h) for h in payload["hyperparameters"]),
            khat_initial=khat_initial,
            khat_batches=khat_batches,
            seeds=tuple(Sample(s["state"], s["action"], s["label"]) for s in payload["seeds"]),
        )
    except KeyError as e:
        raise RunArtifactError(f"run.json in {run_dir} lacks field {e}") from e
    if not khat_batches:
        raise RunArtifactError(f"run in {run_dir} has no K̂ snapshots")
    final = _load_qset(os.path.join(run_dir, files["khat_final"]))
    if final != record.khat_final:
        raise RunArtifactError("khat_final.json differs from the last batch snapshot")
    return record, payload.get("metrics")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _fmt(value):
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


METRIC_ROWS = (
    ("total_samples", "Samples"),
    ("total_episodes", "Episodes"),
    ("failure_count", "Failures"),
    ("last_failure_episode", "Last failure episode"),
    ("nominal_allowed_steps", "Nominal action allowed"),
    ("infeasible_steps", "Infeasible steps"),
    ("deviation_max", "Deviation max (%)"),
    ("deviation_mean", "Deviation mean (%)"),
    ("underestimate", "Underestimate of Q_V (%)"),
    ("coverage", "Coverage of Q_V (%)"),
    ("overreach", "Overreach into Q_crit (%)"),
    ("khat_count", "K̂ cells"),
    ("viable_count", "Q_V cells"),
    ("critical_count", "Q_crit cells"),
    ("admissible", "Admissible"),
)


def metrics_table(metrics):
    rows = [[label, _fmt(metrics.get(key))] for key, label in METRIC_ROWS if key in metrics]
    return tabulate(rows, headers=["Metric", "Value"], tablefmt="github")


def batches_table(metrics):
    batches = metrics.get("batches", [])
    if not batches:
        return ""
    keys = [k for k in ("batch", "khat_count", "underestimate", "overreach", "deviation_max", "deviation_mean") if k in batches[0]]
    return tabulate([[_fmt(b[k]) for k in keys] for b in batches], headers=keys, tablefmt="github")


def write_run_report(report_path, record, metrics):
    lines = [
        "--------------------------------------------------",
        "Constraint Learning Run",
        f"Model: {record.config.get('model')}",
        f"Policy: {record.config.get('policy', {}).get('kind')}",
        f"Seed: {record.config.get('seed')}",
        "",
        metrics_table(metrics),
        "",
        "Per-batch K̂:",
        batches_table(metrics),
        "",
        "Episodes:",
        tabulate(
            [[e.episode, e.batch, _fmt(e.initial_state[0]), len(e), "failed" if e.failed else "ok"] for e in record.episodes],
            headers=["episode", "batch", "start", "steps", "end"],
            tablefmt="github",
        ),
        "--------------------------------------------------",
    ]
    atomic_write_text(report_path, "\n".join(lines) + "\n")


def print_run_summary(metrics, title="RUN SUMMARY"):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)
    for key, label in METRIC_ROWS:
        if key in metrics:
            print(f"{label}: {_fmt(metrics[key])}")
    print("=" * 60)


def write_sweep_report(report_path, rows):
    """rows: one dict of headline metrics per seed."""
    headers = ["seed", "total_samples", "failure_count", "deviation_mean", "deviation_max", "underestimate", "overreach", "admissible", "status"]
    table = [[_fmt(row.get(h)) for h in headers] for row in rows]
    atomic_write_text(report_path, tabulate(table, headers=headers, tablefmt="github") + "\n")
