"""CSV and SVG export.  Output is byte-for-byte reproducible for a given result."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..detection import AlarmStats  # noqa: E402
from ..dynamics import Trajectory  # noqa: E402

FLOAT_FMT = "{:.10g}"
SVG_META = {"Date": None, "Creator": None}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else FLOAT_FMT.format(float(v))
    return str(v)


def trajectory_header(n: int) -> List[str]:
    return (
        ["t"]
        + [f"x{i}" for i in range(n)]
        + [f"x_a{i}" for i in range(n)]
        + [f"s{i}" for i in range(n)]
        + ["resid_norm", "chi2_alarm", "cusum_alarm"]
    )


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _csv(rows: Iterable[list], header: List[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def trajectory_csv(traj: Optional[Trajectory], n: int) -> str:
    """Rows for t = 0..len-1 of the attacked loop (residual and alarms as the detector saw them)."""
    header = trajectory_header(n)
    if traj is None or traj.x.shape[0] == 0:
        return _csv([], header)
    T = traj.x.shape[0]
    resid = traj.resid_a if traj.resid_a is not None else np.full(T, np.nan)
    alarms = traj.alarms_a or {}
    chi = alarms.get("chi2", np.zeros(T, dtype=bool))
    cus = alarms.get("cusum", np.zeros(T, dtype=bool))
    rows = (
        [t, *traj.x[t], *traj.x_a[t], *traj.s[t], resid[t], bool(chi[t]), bool(cus[t])] for t in range(T)
    )
    return _csv(rows, header)


def alarm_csv(stats: AlarmStats) -> str:
    rows = ([t, fa, td] for t, (fa, td) in enumerate(zip(stats.per_step_fa, stats.per_step_td)))
    return _csv(rows, ["t", "fa_rate", "td_rate"])


def runs_csv(runs: List[dict]) -> str:
    if not runs:
        return ""
    header = list(runs[0])
    return _csv(([r[k] for k in header] for r in runs), header)


def _svg(fig) -> str:
    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "stealthsim", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata=SVG_META)
    plt.close(fig)
    return buf.getvalue()


def state_svg(traj: Trajectory, index: int, label: str, bound: Optional[float] = None) -> str:
    t = traj.t * traj.dt
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(t, np.abs(traj.x[:, index]), color="tab:blue", lw=1.2, label="attack-free")
    ax.plot(t, np.abs(traj.x_a[:, index]), color="tab:red", lw=1.2, label="attacked")
    if bound is not None:
        ax.axhline(bound, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(f"|{label}|")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _svg(fig)


def residual_svg(traj: Trajectory) -> str:
    t = traj.t * traj.dt
    fig, ax = plt.subplots(figsize=(6, 3.2))
    if traj.resid is not None:
        ax.plot(t, traj.resid, color="tab:blue", lw=0.8, label="attack-free")
        ax.plot(t, traj.resid_a, color="tab:red", lw=0.8, alpha=0.8, label="attacked")
        ax.legend(frameon=False)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("residual norm")
    fig.tight_layout()
    return _svg(fig)


def alarm_svg(stats: dict) -> str:
    fig, axes = plt.subplots(1, max(len(stats), 1), figsize=(6 * max(len(stats), 1) / 1.5, 3.2), squeeze=False)
    for ax, (kind, st) in zip(axes[0], sorted(stats.items())):
        t = np.arange(len(st.per_step_fa))
        ax.plot(t, st.per_step_fa, color="tab:blue", lw=0.8, label="false alarm")
        ax.plot(t, st.per_step_td, color="tab:red", lw=0.8, alpha=0.8, label="true alarm")
        ax.set_title(kind)
        ax.set_xlabel("step")
        ax.set_ylabel("alarm rate")
        ax.set_ylim(0, max(0.2, float(np.max(st.per_step_td)) * 1.1))
        ax.legend(frameon=False)
    fig.tight_layout()
    return _svg(fig)


STATE_LABELS = {"pendulum": ("theta", 0), "vehicle": ("y", 1)}


def export(result, fmt: str, out_dir, run: int = 0) -> List[str]:
    """Write ``csv`` or ``svg`` artefacts of a campaign; returns the file manifest."""
    if fmt not in ("csv", "svg"):
        raise ValueError(f"unknown export format {fmt!r}; valid: ['csv', 'svg']")
    out = Path(out_dir)
    bt = result.batch
    traj = bt.run(run) if bt is not None and bt.n_runs > run else None
    files: List[Path] = []
    if fmt == "csv":
        n = bt.x.shape[2] if bt is not None else 0
        files.append(_write(out / "trajectory.csv", trajectory_csv(traj, n)))
        for kind, st in sorted(result.alarm_stats.items()):
            files.append(_write(out / f"alarms_{kind}.csv", alarm_csv(st)))
        files.append(_write(out / "runs.csv", runs_csv(result.runs)))
        files.append(_write(out / "config.json", result.config.to_json() + "\n"))
    else:
        if traj is None:
            return []
        label, idx = STATE_LABELS.get(result.config.case, ("x0", 0))
        bound = 0.5 if result.config.case == "pendulum" else 1.0
        files.append(_write(out / "state.svg", state_svg(traj, idx, label, bound)))
        files.append(_write(out / "residual.svg", residual_svg(traj)))
        if result.alarm_stats:
            files.append(_write(out / "alarms.svg", alarm_svg(result.alarm_stats)))
    manifest = [str(p) for p in files]
    result.manifest.extend(m for m in manifest if m not in result.manifest)
    return manifest
