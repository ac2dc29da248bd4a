"""Lambda / gamma sweeps, the tradeoff table and plot data.

Sweep CSV columns (one row per trained model, then one row per baseline):

    mode             precoding | reconstruction | joint | csit
    method           learned for trained models; mrt, zf or random for baselines
    lambda, gamma    tradeoff weights (empty for baselines)
    estimated_bits   per user, entropy-model estimate at pseudo-quantized latents
    realized_bits    per user, mean range-coded payload length
    header_bits      per user, fixed bitstream header
    sum_rate         precoder head on decoded feedback (CSIT rate for baselines)
    sum_rate_pseudo  precoder head on pseudo-quantized feedback
    mse              channel reconstruction error
    sum_rate_mrt_hat MRT computed on the reconstructed channel
    sum_rate_zf_hat  ZF computed on the reconstructed channel
    seed             training seed (also the initialization seed)
    testset_seed     seed of the evaluation channels
    checkpoint_id    CRC-32 of the checkpoint file
    status           ok, or the error that stopped this point

Unused metrics are left empty. Overhead columns of baseline rows hold ``NA``.
Floats are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .channel import SystemConfig
from .checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from .errors import CheckpointError, CSIFeedbackError
from .system import FeedbackSystem, active_heads, mode_name
from .trainer import TEST_SET_SIZE, EvalMetrics, Trainer, TrainingConfig, evaluate, evaluate_baseline

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_GAMMAS = (1.0, 3.0, 10.0)
BASELINES = ("mrt", "zf", "random")
NA = "NA"

COLUMNS = ("mode", "method", "lambda", "gamma", "estimated_bits", "realized_bits",
           "header_bits", "sum_rate", "sum_rate_pseudo", "mse", "sum_rate_mrt_hat",
           "sum_rate_zf_hat", "seed", "testset_seed", "checkpoint_id", "status")
PLOT_COLUMNS = ("series", "bits_per_user", "sum_rate", "lambda", "gamma")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


@dataclass(frozen=True)
class SweepPoint:
    lam: float
    gamma: float

    @property
    def mode(self) -> str:
        return mode_name(self.lam, self.gamma)

    @property
    def tag(self) -> str:
        return f"lam{self.lam:g}_gamma{self.gamma:g}"


def grid(lambdas=DEFAULT_LAMBDAS, gammas=DEFAULT_GAMMAS) -> list[SweepPoint]:
    """Precoding-oriented points (gamma = 0) then reconstruction-oriented (lambda = 0)."""
    return [SweepPoint(float(l), 0.0) for l in lambdas] + \
           [SweepPoint(0.0, float(g)) for g in gammas]


def metrics_row(point: SweepPoint, metrics: EvalMetrics | None, seed: int, testset_seed: int,
                ckpt: str | None, status: str = "ok") -> dict:
    row = {c: None for c in COLUMNS}
    row.update(mode=point.mode, method="learned", seed=seed, testset_seed=testset_seed,
               checkpoint_id=ckpt, status=status)
    row["lambda"], row["gamma"] = point.lam, point.gamma
    if metrics is not None:
        for name in ("estimated_bits", "realized_bits", "header_bits", "sum_rate",
                     "sum_rate_pseudo", "mse", "sum_rate_mrt_hat", "sum_rate_zf_hat"):
            row[name] = getattr(metrics, name)
    return row


def baseline_row(config: SystemConfig, method: str, testset_seed: int, n_test: int) -> dict:
    row = {c: None for c in COLUMNS}
    row.update(mode="csit", method=method, testset_seed=testset_seed, status="ok",
               estimated_bits=NA, realized_bits=NA, header_bits=NA)
    row["sum_rate"] = evaluate_baseline(config, method, testset_seed, n_test)
    return row


def train_point(system_config: SystemConfig, training: TrainingConfig, point: SweepPoint,
                out_dir: Path, resume: bool = True, progress=None) -> tuple[Trainer, str]:
    """Train one grid point, reusing a finished checkpoint when ``resume`` is set."""
    tcfg = dataclasses.replace(training, lam=point.lam, gamma=point.gamma,
                               checkpoint_path=f"{point.tag}.ckpt")
    path = out_dir / tcfg.checkpoint_path
    if resume and path.exists():
        try:
            trainer = load_checkpoint(path, system_config)
            if trainer.config == tcfg and trainer.step >= tcfg.total_batches:
                log.info("reusing %s", path)
                return trainer, checkpoint_id(path.read_bytes())
        except CheckpointError as exc:
            log.warning("ignoring unusable checkpoint %s: %s", path, exc)
    trainer = Trainer(FeedbackSystem(system_config), tcfg)
    trainer.run(log_path=out_dir / f"{point.tag}.log.csv", progress=progress)
    return trainer, save_checkpoint(trainer, path)


def run_point(system_config: SystemConfig, training: TrainingConfig, point: SweepPoint,
              out_dir: Path, testset_seed: int, n_test: int, resume: bool = True) -> dict:
    """Train and evaluate one point; failures become a row with a status message."""
    try:
        trainer, ident = train_point(system_config, training, point, out_dir, resume)
        metrics = evaluate(trainer.system, testset_seed, n_test,
                           heads=active_heads(point.lam, point.gamma))
    except CSIFeedbackError as exc:
        log.error("sweep point %s failed: %s", point.tag, exc)
        return metrics_row(point, None, training.rng_seed, testset_seed, None,
                           status=f"failed: {type(exc).__name__}: {exc}")
    return metrics_row(point, metrics, training.rng_seed, testset_seed, ident)


def run_sweep(system_config: SystemConfig, training: TrainingConfig, points: list[SweepPoint],
              out_dir, testset_seed: int = 1234, n_test: int = TEST_SET_SIZE,
              jobs: int = 1, resume: bool = True) -> list[dict]:
    """Train and evaluate every point, add baselines, write ``sweep.csv`` and ``plot_data.csv``.

    Every point uses the same seeds. With ``jobs > 1`` points train in
    separate processes; rows keep grid order either way.
    """
    if not points:
        raise ValueError("sweep needs at least one point")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(system_config, training, p, out_dir, testset_seed, n_test, resume) for p in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_point, *zip(*args)))
    else:
        rows = [run_point(*a) for a in args]
    rows += [baseline_row(system_config, m, testset_seed, n_test) for m in BASELINES]
    write_csv(out_dir / "sweep.csv", rows, COLUMNS)
    write_csv(out_dir / "plot_data.csv", plot_rows(rows), PLOT_COLUMNS)
    return rows


def rows_to_csv(rows: list[dict], columns=COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns=COLUMNS):
    Path(path).write_text(rows_to_csv(rows, columns))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def pareto_front(points: list[tuple[float, float]]) -> list[int]:
    """Indices of points not dominated in (fewer bits, higher rate), sorted by bits.

    A point is dominated when another has bits <= and rate >= with at least
    one strict inequality.
    """
    keep = []
    for i, (x, y) in enumerate(points):
        dominated = any((x2 <= x and y2 >= y) and (x2 < x or y2 > y)
                        for j, (x2, y2) in enumerate(points) if j != i)
        if not dominated:
            keep.append(i)
    return sorted(keep, key=lambda i: points[i])


def _curves(rows: list[dict]) -> dict[str, list[dict]]:
    curves: dict[str, list[dict]] = {}
    for row in rows:
        if row.get("status") != "ok" or row.get("mode") == "csit":
            continue
        x = row.get("estimated_bits")
        for series, key in (("precoding", "sum_rate"), ("reconstruction_mrt", "sum_rate_mrt_hat"),
                            ("reconstruction_zf", "sum_rate_zf_hat")):
            if series == "precoding" and row["mode"] != "precoding":
                continue
            if series != "precoding" and row["mode"] != "reconstruction":
                continue
            if row.get(key) in (None, ""):
                continue
            curves.setdefault(series, []).append(
                {"series": series, "bits_per_user": float(x), "sum_rate": float(row[key]),
                 "lambda": row["lambda"], "gamma": row["gamma"]})
    return curves


def plot_rows(rows: list[dict]) -> list[dict]:
    """Pareto-filtered (bits/user, sum rate) points per method plus flat CSIT lines."""
    out = []
    xs = []
    for series, pts in _curves(rows).items():
        front = pareto_front([(p["bits_per_user"], p["sum_rate"]) for p in pts])
        out += [pts[i] for i in front]
        xs += [p["bits_per_user"] for p in pts]
    lo, hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    for row in rows:
        if row.get("mode") == "csit" and row.get("status") == "ok":
            for x in (lo, hi):
                out.append({"series": f"csit_{row['method']}", "bits_per_user": x,
                            "sum_rate": float(row["sum_rate"]), "lambda": None, "gamma": None})
    return out


def low_overhead_comparison(rows: list[dict]) -> dict | None:
    """Lowest-overhead precoding point vs the reconstruction+ZF point nearest in overhead."""
    curves = _curves(rows)
    prec, zf = curves.get("precoding"), curves.get("reconstruction_zf")
    if not prec or not zf:
        return None
    p = min(prec, key=lambda r: r["bits_per_user"])
    z = min(zf, key=lambda r: (abs(r["bits_per_user"] - p["bits_per_user"]), r["bits_per_user"]))
    return {"precoding": p, "reconstruction_zf": z,
            "holds": p["sum_rate"] >= z["sum_rate"], "curves": curves}


def write_tradeoff_warning(path, comparison: dict):
    """Record a failed low-overhead expectation together with both curves."""
    p, z = comparison["precoding"], comparison["reconstruction_zf"]
    lines = [
        "WARNING: low-overhead expectation not met",
        f"precoding-oriented point: {p['bits_per_user']:.6g} bits/user, "
        f"sum rate {p['sum_rate']:.6g} (lambda={p['lambda']})",
        f"reconstruction+ZF point:  {z['bits_per_user']:.6g} bits/user, "
        f"sum rate {z['sum_rate']:.6g} (gamma={z['gamma']})",
        "",
    ]
    pts = [r for series in ("precoding", "reconstruction_zf")
           for r in comparison["curves"].get(series, [])]
    Path(path).write_text("\n".join(lines) + "\n" + rows_to_csv(pts, PLOT_COLUMNS))
