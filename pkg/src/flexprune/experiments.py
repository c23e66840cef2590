"""Experiment orchestration: sweeps over technique, pruning factor, and
delta, with deterministic CSV outputs and curve emission.

A sweep cell is one (technique, rho, delta, seed) combination. Cells are
fully independent: each builds its own network and consumes its own RNG
streams, so removing a cell never changes another row, and a rerun with
the same configuration reproduces every output byte for byte. Timing
numbers in the result table come from the analytic split-learning model,
never from wall clocks, for exactly that reason.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .errors import ConstraintError, FlexPruneError, InputError
from .models import build_cnn
from .splitsim import ComputeModel, EpochTimeBreakdown, LinkModel, epoch_time, time_to_accuracy
from .training import Dataset, SynthSpec, TrainConfig, load_idx, run_protocol, synth_dataset

DEFAULT_RHO_GRID = [round(0.1 * i, 1) for i in range(9)]      # 0.0 .. 0.8
DEFAULT_DELTA_GRID = [round(0.1 * i, 1) for i in range(11)]   # 0.0 .. 1.0
CURVE_KINDS = ("accuracy_vs_rho", "time_vs_target", "accuracy_vs_delta")


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    techniques: list[str] = field(default_factory=lambda: ["magnitude", "relevance", "flexrel"])
    rhos: list[float] = field(default_factory=lambda: list(DEFAULT_RHO_GRID))
    deltas: list[float] = field(default_factory=lambda: list(DEFAULT_DELTA_GRID))
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    accuracy_targets: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])
    dataset: dict = field(default_factory=lambda: {"kind": "synth"})
    model: dict = field(default_factory=dict)
    link: LinkModel = field(default_factory=LinkModel)
    compute: ComputeModel = field(default_factory=ComputeModel)
    dataset_seed: int = 100
    workers: int = 1

    def __post_init__(self):
        if not (self.techniques and self.rhos and self.seeds):
            raise InputError("sweep lists must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise InputError("sweep seeds must be distinct")


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        raw = json.load(f)
    kwargs = {}
    if "train" in raw:
        kwargs["train"] = TrainConfig(**raw["train"])
    if "link" in raw:
        kwargs["link"] = LinkModel(**raw["link"])
    if "compute" in raw:
        kwargs["compute"] = ComputeModel(**raw["compute"])
    for key in (
        "techniques", "rhos", "deltas", "seeds", "accuracy_targets",
        "dataset", "model", "dataset_seed", "workers",
    ):
        if key in raw:
            kwargs[key] = raw[key]
    return ExperimentConfig(**kwargs)


def make_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = dict(config.dataset)
    kind = ds.pop("kind", "synth")
    if kind == "synth":
        return synth_dataset(SynthSpec(**ds), config.dataset_seed)
    if kind == "idx":
        train = load_idx(ds["train_images"], ds["train_labels"])
        test = load_idx(ds["test_images"], ds["test_labels"])
        return train, test
    raise InputError(f"unknown dataset kind {kind!r}")


def make_model(config: ExperimentConfig, seed: int):
    spec = dict(config.model)
    if "size" in config.dataset:
        spec.setdefault("image_size", config.dataset["size"])
    if "classes" in config.dataset:
        spec.setdefault("classes", config.dataset["classes"])
    return build_cnn(seed=seed, **spec)


@dataclass
class ResultRow:
    technique: str
    rho: float
    delta: float | None
    seed: int
    status: str = "ok"
    message: str = ""
    final_accuracy: float = 0.0
    best_accuracy: float = 0.0
    achieved_fraction: float = 0.0
    total_time_s: float = 0.0
    total_bytes: int = 0
    targets: list[dict] = field(default_factory=list)

    def key(self):
        return (self.technique, self.rho, -1.0 if self.delta is None else self.delta, self.seed)


def cell_breakdowns(config, net_dense, net_final, technique, accuracies, n_train):
    """Per-epoch analytic breakdowns: dense-phase epochs use the unpruned
    MAC/payload counts, pruned-phase epochs the post-pruning ones; the
    relevance charge lands once, in the scoring epoch."""
    tc = config.train
    batches = math.ceil(n_train / tc.batch_size)
    scoring = min(tc.scoring_batch_size, n_train)
    out = []
    for e in range(1, tc.epochs_dense + tc.epochs_pruned + 1):
        net = net_dense if e <= tc.epochs_dense else net_final
        out.append(
            epoch_time(
                net,
                config.link,
                config.compute,
                tc.batch_size,
                batches,
                epoch=e,
                technique=technique,
                is_scoring_epoch=(e == tc.epochs_dense),
                scoring_samples=scoring,
            )
        )
    assert len(out) == len(accuracies)
    return out


def run_cell(config: ExperimentConfig, technique: str, rho: float, delta: float | None, seed: int) -> ResultRow:
    row = ResultRow(technique, rho, delta, seed)
    train, test = make_datasets(config)
    tc = replace(
        config.train,
        technique=technique,
        rho=rho,
        delta=config.train.delta if delta is None else delta,
        seed=seed,
    )
    net = make_model(config, seed)
    net_dense = make_model(config, seed)  # unpruned twin for dense-phase accounting
    try:
        result = run_protocol(net, train, test, tc)
    except ConstraintError as exc:
        row.status = "failed"
        row.message = str(exc)
        return row

    accs = [m.accuracy for m in result.log]
    row.final_accuracy = accs[-1]
    row.best_accuracy = max(accs)
    row.achieved_fraction = result.plan.achieved_fraction if result.plan else 0.0

    breakdowns = cell_breakdowns(config, net_dense, net, technique, accs, len(train))
    row.total_time_s = sum(bd.total for bd in breakdowns)
    row.total_bytes = sum(bd.bytes_up + bd.bytes_down for bd in breakdowns)
    for target in config.accuracy_targets:
        tta = time_to_accuracy(accs, breakdowns, target)
        upto = breakdowns if not tta.reached else breakdowns[: tta.epoch]
        entry = {"target": target, "reached": tta.reached}
        if tta.reached:
            entry.update(
                seconds=tta.seconds,
                bytes=tta.cumulative_bytes,
                t_device=sum(b.t_device_compute for b in upto),
                t_server=sum(b.t_server_compute for b in upto),
                t_up=sum(b.t_uplink for b in upto),
                t_down=sum(b.t_downlink for b in upto),
                t_rel=sum(b.t_relevance for b in upto),
            )
        row.targets.append(entry)
    return row


def _cell_args(config: ExperimentConfig):
    cells = []
    for technique in config.techniques:
        deltas = config.deltas if technique == "flexrel" else [None]
        for rho in config.rhos:
            for delta in deltas:
                for seed in config.seeds:
                    cells.append((technique, rho, delta, seed))
    return cells


def _run_cell_star(args):
    return run_cell(*args)


def run_sweep(config: ExperimentConfig, out_dir) -> list[ResultRow]:
    """Run every sweep cell; partial rows are flushed to
    results_partial.csv as cells finish, the sorted final table to
    results.csv."""
    os.makedirs(out_dir, exist_ok=True)
    cells = _cell_args(config)
    partial_path = os.path.join(out_dir, "results_partial.csv")
    rows: list[ResultRow] = []
    with open(partial_path, "w", newline="") as partial:
        writer = csv.writer(partial)
        writer.writerow(_result_header(config.accuracy_targets))
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                for row in pool.map(_run_cell_star, [(config,) + c for c in cells]):
                    rows.append(row)
                    writer.writerow(_result_record(row, config.accuracy_targets))
                    partial.flush()
        else:
            for cell in cells:
                row = run_cell(config, *cell)
                rows.append(row)
                writer.writerow(_result_record(row, config.accuracy_targets))
                partial.flush()
    rows.sort(key=ResultRow.key)
    write_results_csv(rows, config.accuracy_targets, os.path.join(out_dir, "results.csv"))
    return rows


def _fmt(value: float) -> str:
    return repr(float(value))


def _result_header(targets: list[float]) -> list[str]:
    header = [
        "technique", "rho", "delta", "seed", "status", "message",
        "final_accuracy", "best_accuracy", "achieved_fraction",
        "total_time_s", "total_bytes",
    ]
    for t in targets:
        header += [
            f"tt{t}_reached", f"tt{t}_seconds", f"tt{t}_bytes",
            f"tt{t}_t_device", f"tt{t}_t_server", f"tt{t}_t_up", f"tt{t}_t_down", f"tt{t}_t_rel",
        ]
    return header


def _result_record(row: ResultRow, targets: list[float]) -> list:
    rec = [
        row.technique,
        _fmt(row.rho),
        "n/a" if row.delta is None else _fmt(row.delta),
        row.seed,
        row.status,
        row.message,
        _fmt(row.final_accuracy),
        _fmt(row.best_accuracy),
        _fmt(row.achieved_fraction),
        _fmt(row.total_time_s),
        row.total_bytes,
    ]
    for entry in row.targets:
        if entry["reached"]:
            rec += [
                "yes", _fmt(entry["seconds"]), entry["bytes"],
                _fmt(entry["t_device"]), _fmt(entry["t_server"]),
                _fmt(entry["t_up"]), _fmt(entry["t_down"]), _fmt(entry["t_rel"]),
            ]
        else:
            rec += ["no", "", "", "", "", "", "", ""]
    if not row.targets:
        rec += ["", "", "", "", "", "", "", ""] * len(targets)
    return rec


def write_results_csv(rows: list[ResultRow], targets: list[float], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_result_header(targets))
        for row in rows:
            writer.writerow(_result_record(row, targets))


def read_results_csv(path) -> tuple[list[dict], list[float]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    targets = []
    for name in reader.fieldnames or []:
        if name.startswith("tt") and name.endswith("_reached"):
            targets.append(float(name[2 : -len("_reached")]))
    return rows, targets


# ---------------------------------------------------------------- curve files

def _mean(vals):
    return sum(vals) / len(vals)


def _group(rows, keyfun):
    groups: dict = {}
    for r in rows:
        groups.setdefault(keyfun(r), []).append(r)
    return groups


def emit_curves(rows: list[dict], kind: str, out_dir, targets: list[float] | None = None) -> str:
    """Write one gnuplot-friendly CSV for the requested curve family."""
    if kind not in CURVE_KINDS:
        raise InputError(f"kind must be one of {CURVE_KINDS}")
    os.makedirs(out_dir, exist_ok=True)
    ok = [r for r in rows if r["status"] == "ok"]
    path = os.path.join(out_dir, f"{kind}.csv")
    if kind == "accuracy_vs_rho":
        _emit_accuracy_vs_rho(ok, path)
    elif kind == "time_vs_target":
        _emit_time_vs_target(ok, targets or [], path)
    else:
        _emit_accuracy_vs_delta(ok, path)
    return path


def _require(rows, what):
    if not rows:
        raise InputError(f"result table has no rows covering {what}")


def _emit_accuracy_vs_rho(rows, path):
    """Mean/min/max accuracy over seeds per (technique, rho); the flexrel
    curve takes, at each rho, the delta with the best mean accuracy."""
    _require(rows, "accuracy_vs_rho")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["technique", "rho", "delta", "mean_accuracy", "min_accuracy", "max_accuracy"])
        for technique in sorted({r["technique"] for r in rows}):
            trows = [r for r in rows if r["technique"] == technique]
            for rho, group in sorted(_group(trows, lambda r: float(r["rho"])).items()):
                if technique == "flexrel":
                    by_delta = _group(group, lambda r: r["delta"])
                    scored = {
                        d: _mean([float(r["final_accuracy"]) for r in g])
                        for d, g in by_delta.items()
                    }
                    best = max(sorted(scored), key=lambda d: scored[d])
                    group, delta = by_delta[best], best
                else:
                    delta = "n/a"
                accs = [float(r["final_accuracy"]) for r in group]
                writer.writerow(
                    [technique, _fmt(rho), delta, _fmt(_mean(accs)), _fmt(min(accs)), _fmt(max(accs))]
                )


def _emit_time_vs_target(rows, targets, path):
    """Stacked mean time components per (technique, accuracy target)."""
    _require(rows, "time_vs_target")
    if not targets:
        raise InputError("time_vs_target needs the accuracy-target list")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["technique", "target", "reached_cells", "total_cells",
             "t_device", "t_server", "t_up", "t_down", "t_rel", "total", "bytes"]
        )
        for technique in sorted({r["technique"] for r in rows}):
            trows = [r for r in rows if r["technique"] == technique]
            for target in targets:
                reached = [r for r in trows if r[f"tt{target}_reached"] == "yes"]
                # per technique/target: best (shortest-time) cell per seed
                best_by_seed = {}
                for r in reached:
                    s = r["seed"]
                    t = float(r[f"tt{target}_seconds"])
                    if s not in best_by_seed or t < float(best_by_seed[s][f"tt{target}_seconds"]):
                        best_by_seed[s] = r
                chosen = list(best_by_seed.values())
                if not chosen:
                    writer.writerow([technique, _fmt(target), 0, len(trows)] + [""] * 7)
                    continue
                comps = {
                    name: _mean([float(r[f"tt{target}_{name}"]) for r in chosen])
                    for name in ("t_device", "t_server", "t_up", "t_down", "t_rel")
                }
                total = sum(comps.values())
                nbytes = _mean([float(r[f"tt{target}_bytes"]) for r in chosen])
                writer.writerow(
                    [technique, _fmt(target), len(reached), len(trows)]
                    + [_fmt(comps[n]) for n in ("t_device", "t_server", "t_up", "t_down", "t_rel")]
                    + [_fmt(total), _fmt(nbytes)]
                )


def _emit_accuracy_vs_delta(rows, path):
    """Accuracy as a function of delta per rho; flexrel rows carry the
    sweep, magnitude/relevance rows stand in for the delta=0/1 endpoints.
    The best delta per rho is starred."""
    flex = [r for r in rows if r["technique"] == "flexrel"]
    _require(flex, "accuracy_vs_delta (no flexrel rows)")
    endpoints = {"0.0": "magnitude", "1.0": "relevance"}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rho", "delta", "mean_accuracy", "min_accuracy", "max_accuracy", "best"])
        for rho, group in sorted(_group(flex, lambda r: float(r["rho"])).items()):
            by_delta = _group(group, lambda r: float(r["delta"]))
            for dval, tech in endpoints.items():
                if float(dval) not in by_delta:
                    stand_in = [
                        r for r in rows
                        if r["technique"] == tech and float(r["rho"]) == rho
                    ]
                    if stand_in:
                        by_delta[float(dval)] = stand_in
            means = {
                d: _mean([float(r["final_accuracy"]) for r in g]) for d, g in by_delta.items()
            }
            best = max(sorted(means), key=lambda d: means[d])
            for d in sorted(by_delta):
                accs = [float(r["final_accuracy"]) for r in by_delta[d]]
                writer.writerow(
                    [_fmt(rho), _fmt(d), _fmt(_mean(accs)), _fmt(min(accs)), _fmt(max(accs)),
                     "*" if d == best else ""]
                )
