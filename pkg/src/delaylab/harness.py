"""Command-line harness: training sweeps, verification suites, transfer and plots.

Outputs land in ``<out>/<experiment>/`` where ``<out>`` defaults to the
``DELAYLAB_OUT`` environment variable (or ``./runs``). Every file carries the
config hash, seeds and package version in its header, and reruns with the
same inputs produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import statistics
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import CHECKS, Arm, ConfigError, ExperimentConfig, learner_configs, load_config
from .delay import DelayConfig, InitMode, Regime
from .env_core import GridConfig, TinyMdpSpec, make_env
from .equiv import (DomainMode, TabularPolicy, Verdict, check_additivity, check_augmented_sufficiency,
                    check_cold_start_inclusion, check_distribution_equivalence, check_mixed_reduction,
                    enumerate_distribution, replay_sweep, write_report)
from .learn import QTable, greedy_return, run_training

CSV_FIELDS = ("experiment", "variant", "regime", "seed", "episode", "eval_return")
AGG_FIELDS = ("experiment", "variant", "regime", "episode", "mean", "std", "n")
OUT_ENV = "DELAYLAB_OUT"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class SchemaError(ValueError):
    pass


def output_root(out: str | None = None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or "runs")


def _header(cfg: ExperimentConfig, seeds: Sequence[int], **extra) -> dict:
    return {"experiment": cfg.name, "config_hash": cfg.config_hash, "seeds": ",".join(map(str, seeds)),
            "version": __version__, **extra}


def _header_lines(header: dict) -> str:
    return "".join(f"# {k}={v}\n" for k, v in header.items())


# ---------------------------------------------------------------------------
# Q-table persistence


def save_qtables(path: Path, qtables: Sequence[QTable], header: dict) -> None:
    doc = {"header": header,
           "agents": [{"n_actions": q.n_actions, "table": {k: q.table[k] for k in sorted(q.table)}}
                      for q in qtables]}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_qtables(path: str | Path) -> tuple[list[QTable], dict]:
    doc = json.loads(Path(path).read_text())
    if "header" not in doc or "agents" not in doc:
        raise SchemaError(f"{path} is not a Q-table file")
    tables = []
    for agent in doc["agents"]:
        q = QTable(int(agent["n_actions"]))
        q.table = {k: [float(x) for x in v] for k, v in agent["table"].items()}
        tables.append(q)
    return tables, doc["header"]


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class _Job:
    cfg: ExperimentConfig
    arm: Arm
    seed: int
    episodes: int


def _train_one(job: _Job):
    cfg, arm = job.cfg, job.arm
    res = run_training(lambda: make_env(cfg.env), arm.delay, learner_configs(cfg, arm), job.episodes,
                       seed=job.seed, eval_every=cfg.eval_every)
    return arm.label, job.seed, res.curve, res.qtables


def train(cfg: ExperimentConfig, out: str | Path | None = None, seeds: Sequence[int] | None = None,
          full: bool = False, jobs: int = 1, arms: Sequence[str] | None = None) -> Path:
    """Train every arm for every seed; write curves, aggregates and Q-tables."""
    seeds = tuple(seeds) if seeds else cfg.seeds
    chosen = [cfg.arm(a) for a in arms] if arms else list(cfg.arms)
    episodes = cfg.episodes_for(full)
    work = [_Job(cfg, arm, s, episodes) for arm in chosen for s in seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_one, work))
    else:
        results = [_train_one(j) for j in work]
    order = {a.label: i for i, a in enumerate(chosen)}
    results.sort(key=lambda r: (order[r[0]], r[1]))

    root = output_root(out) / cfg.name
    (root / "qtables").mkdir(parents=True, exist_ok=True)
    header = _header(cfg, seeds, episodes=episodes)
    rows = []
    for label, seed, curve, qtables in results:
        arm = cfg.arm(label)
        for episode, value in curve:
            rows.append((cfg.name, arm.variant_label, label, seed, episode, value))
        qheader = {**_header(cfg, [seed]), "env_hash": cfg.env_hash, "seed": seed, "variant": arm.variant_label,
                   "regime": label, "delays": list(arm.delay.delays), "episodes": episodes}
        save_qtables(root / "qtables" / f"{label}_seed{seed}.json", qtables, qheader)
    write_curves(root / "curves.csv", rows, header)
    write_aggregate(root / "aggregate.csv", rows, header)
    return root


def write_curves(path: Path, rows, header: dict) -> None:
    buf = io.StringIO()
    buf.write(_header_lines(header))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r[0], r[1], r[2], r[3], r[4], repr(float(r[5]))])
    path.write_text(buf.getvalue())


def aggregate_rows(rows) -> list[tuple]:
    groups: dict[tuple, list[float]] = defaultdict(list)
    order: list[tuple] = []
    for exp, variant, regime, _seed, episode, value in rows:
        key = (exp, variant, regime, int(episode))
        if key not in groups:
            order.append(key)
        groups[key].append(float(value))
    out = []
    for key in order:
        vals = groups[key]
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out.append((*key, statistics.fmean(vals), std, len(vals)))
    return out


def write_aggregate(path: Path, rows, header: dict) -> None:
    buf = io.StringIO()
    buf.write(_header_lines(header))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGG_FIELDS)
    for exp, variant, regime, episode, mean, std, n in aggregate_rows(rows):
        w.writerow([exp, variant, regime, episode, repr(mean), repr(std), n])
    path.write_text(buf.getvalue())


def read_curves(path: str | Path) -> tuple[list[tuple], dict]:
    header, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            header[k] = v
        elif line.strip():
            lines.append(line)
    if not lines:
        return [], header
    reader = csv.reader(lines)
    fields = tuple(next(reader))
    if fields != CSV_FIELDS:
        raise SchemaError(f"{path}: expected columns {','.join(CSV_FIELDS)}, got {','.join(fields)}")
    rows = [(r[0], r[1], r[2], int(r[3]), int(r[4]), float(r[5])) for r in reader]
    return rows, header


# ---------------------------------------------------------------------------
# verification


def _n_actions(env) -> int | tuple[int, ...]:
    return tuple(env.action_counts) if isinstance(env, TinyMdpSpec) else 5


def _tiny_spec(cfg: ExperimentConfig) -> TinyMdpSpec:
    if isinstance(cfg.env, TinyMdpSpec):
        return cfg.env
    return load_config("tiny_mdp").env


def run_checks(cfg: ExperimentConfig, checks: Sequence[str] | None = None, lifo: bool = False) -> list[Verdict]:
    """Run the named checks; ``lifo`` corrupts the AD action buffers (mutation test)."""
    v = cfg.verify
    checks = tuple(checks) if checks else v.checks
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {list(CHECKS)}")
    env = cfg.env
    grid = env if isinstance(env, GridConfig) else GridConfig(grid_size=4)
    delays = v.tiny_delays if isinstance(env, TinyMdpSpec) else v.delays
    n = _n_actions(env)
    out: list[Verdict] = []
    for check in CHECKS:
        if check not in checks:
            continue
        if check == "isomorphism":
            out.append(replay_sweep(env, delays, v.policies, range(v.seeds), n,
                                    discipline="lifo" if lifo else "fifo"))
        elif check == "enumeration":
            spec = _tiny_spec(cfg)
            pol = TabularPolicy.random(tuple(spec.action_counts), 0)
            out.append(check_distribution_equivalence(spec, pol, v.tiny_delays))
        elif check == "mixed":
            spec = _tiny_spec(cfg)
            pol = TabularPolicy.random(tuple(spec.action_counts), 1)
            res = check_mixed_reduction(spec, v.mixed_regimes, v.mixed_delays, pol)
            res.detail = f"tiny MDP {tuple(v.mixed_regimes)} k={tuple(v.mixed_delays)}: {res.detail}"
            out.append(res)
            small = replace(grid, grid_size=4, wall_column=None, bottleneck_gap=None, start_positions=None,
                            target_positions=None) if grid.grid_size != 4 else grid
            for regimes in (("AD", "AD"), ("OD", "AD")):
                res = check_mixed_reduction(small, regimes, v.delays, TabularPolicy.random(5, 2),
                                            range(v.mixed_grid_seeds))
                res.detail = f"4x4 grid {regimes} k={tuple(v.delays)}: {res.detail}"
                out.append(res)
        elif check == "additivity":
            target = env if isinstance(env, TinyMdpSpec) else grid
            for split in v.additive_splits:
                splits = tuple(tuple(split) for _ in range(2 if isinstance(target, GridConfig)
                                                            else target.n_agents))
                out.append(check_additivity(target, splits, TabularPolicy.random(n, 3), range(v.seeds)))
        elif check == "cold-start":
            target = env if isinstance(env, TinyMdpSpec) else grid
            out.append(check_cold_start_inclusion(target, delays, v.cold_policies).as_verdict())
        elif check == "sufficiency":
            base = GridConfig(grid_size=v.sufficiency_grid, wall_enabled=grid.wall_enabled)
            ti = check_augmented_sufficiency(base, v.sufficiency_delays, v.sufficiency_horizon)
            verdict = ti.as_verdict(expect=True)
            verdict.detail = f"TransitionIndependent: {verdict.detail}"
            out.append(verdict)
            coupled = replace(base, coupling_mode="Coupled", collision_radius=1.0)
            co = check_augmented_sufficiency(coupled, v.sufficiency_delays, v.sufficiency_horizon)
            verdict = co.as_verdict(expect=False)
            verdict.detail = f"Coupled: {verdict.detail}"
            out.append(verdict)
    return out


def verify(cfg: ExperimentConfig, out: str | Path | None = None, checks: Sequence[str] | None = None,
           lifo: bool = False) -> tuple[bool, Path, list[Verdict]]:
    verdicts = run_checks(cfg, checks, lifo)
    root = output_root(out) / cfg.name
    root.mkdir(parents=True, exist_ok=True)
    path = root / ("verify_report_lifo.json" if lifo else "verify_report.json")
    write_report(verdicts, path, _header(cfg, cfg.seeds, lifo=lifo))
    return all(v.passed for v in verdicts), path, verdicts


# ---------------------------------------------------------------------------
# transfer


@dataclass
class TransferResult:
    source_return: float
    returns: list[float]
    target: DelayConfig

    @property
    def mean(self) -> float:
        return statistics.fmean(self.returns) if self.returns else float("nan")


def transfer(cfg: ExperimentConfig, qtables: Sequence[QTable], header: dict, regimes: Sequence[str],
             init_mode: str = "WarmStart", episodes: int | None = None) -> TransferResult:
    """Deploy greedy tables under a target regime; WarmStart seeds the buffers with the same greedy policy."""
    if header.get("env_hash") != cfg.env_hash:
        raise SchemaError("Q-table was trained on a different environment configuration")
    delays = tuple(header.get("delays", ()))
    if len(regimes) != len(delays):
        raise SchemaError(f"target needs {len(delays)} regimes, got {len(regimes)}")
    sample = next((k for q in qtables for k in q.table), None)
    if sample is not None and "|" not in sample:
        raise SchemaError("Q-table keys are not augmented-state keys")
    source = DelayConfig(delays, (Regime.OD,) * len(delays))
    target = DelayConfig(delays, tuple(Regime(r) for r in regimes), init_mode=InitMode(init_mode))
    factory = lambda: make_env(cfg.env)  # noqa: E731
    episodes = cfg.eval_episodes if episodes is None else episodes
    src = greedy_return(factory, source, qtables)
    returns = [greedy_return(factory, target, qtables) for _ in range(episodes)]
    return TransferResult(src, returns, target)


def write_transfer(path: Path, cfg: ExperimentConfig, header: dict, label: str, res: TransferResult) -> None:
    h = {**_header(cfg, [header.get("seed", 0)]), "source": header.get("regime"), "target": label,
         "source_return": repr(res.source_return), "mean_return": repr(res.mean)}
    rows = [(cfg.name, header.get("variant", ""), label, header.get("seed", 0), e + 1, r)
            for e, r in enumerate(res.returns)]
    write_curves(path, rows, h)


# ---------------------------------------------------------------------------
# plotting


class PlotError(ValueError):
    pass


def smooth(values: Sequence[float], window: int) -> list[float]:
    """Trailing moving average; ``window=1`` returns the values unchanged."""
    if window <= 1:
        return list(values)
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def plot(csv_paths: Sequence[str | Path], out: str | Path, window: int = 100) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    for p in csv_paths:
        rows.extend(read_curves(p)[0])
    if not rows:
        raise PlotError("no curve rows to plot")
    by_exp: dict[str, list] = defaultdict(list)
    for r in rows:
        by_exp[r[0]].append(r)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for exp, exp_rows in by_exp.items():
        fig, ax = plt.subplots(figsize=(7, 4))
        curves: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
        labels: list[str] = []
        for _, _variant, regime, _seed, episode, value in exp_rows:
            if regime not in curves:
                labels.append(regime)
            curves[regime][episode].append(value)
        for regime in labels:
            pts = sorted(curves[regime].items())
            xs = [e for e, _ in pts]
            means = smooth([statistics.fmean(v) for _, v in pts], window)
            stds = smooth([statistics.pstdev(v) for _, v in pts], window)
            ax.plot(xs, means, label=regime)
            ax.fill_between(xs, [m - s for m, s in zip(means, stds)], [m + s for m, s in zip(means, stds)],
                            alpha=0.2)
        ax.set_xlabel("episode")
        ax.set_ylabel("greedy return")
        ax.set_title(exp)
        ax.legend()
        fig.tight_layout()
        path = out / f"{exp}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# enumeration


def enumerate_report(cfg: ExperimentConfig, policy_seed: int = 0, gamma=Fraction(9, 10)) -> dict:
    spec = _tiny_spec(cfg)
    pol = TabularPolicy.random(tuple(spec.action_counts), policy_seed, DomainMode.FULL_HISTORY)
    k = cfg.verify.tiny_delays
    doc = {"delays": list(k), "policy_seed": policy_seed, "regimes": {}}
    for regime in (Regime.OD, Regime.AD):
        dist = enumerate_distribution(spec, pol, k, regime, InitMode.WARM)
        doc["regimes"][regime.value] = {
            "trajectories": len(dist),
            "total_mass": str(dist.total()),
            "expected_returns": {n: str(v) for n, v in dist.expected_returns(gamma).items()},
        }
    doc["equal"] = len({json.dumps(r, sort_keys=True) for r in doc["regimes"].values()}) == 1
    return doc


# ---------------------------------------------------------------------------
# CLI


def _seeds(text: str | None) -> list[int] | None:
    if not text:
        return None
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delaylab", description="Delayed multi-agent RL laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML file or preset name")
        sp.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")

    t = sub.add_parser("train", help="train every arm of a config")
    common(t)
    t.add_argument("--seeds", help="comma list or ranges, e.g. 0,1,5-9")
    t.add_argument("--full", action="store_true", help="use the full episode count")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--arms", help="comma list of arm labels")

    v = sub.add_parser("verify", help="run equivalence checks")
    common(v)
    v.add_argument("--checks", help=f"comma list from {','.join(CHECKS)}")
    v.add_argument("--lifo", action="store_true", help="corrupt AD buffers to LIFO (mutation test)")

    x = sub.add_parser("transfer", help="deploy trained Q-tables under another regime")
    common(x)
    x.add_argument("--qtables", required=True, help="Q-table JSON written by train")
    x.add_argument("--regime", default="AD", help="target regime for every agent, or comma list")
    x.add_argument("--init", default="WarmStart", choices=[m.value for m in InitMode])
    x.add_argument("--episodes", type=int, help="evaluation episodes (default from config, 300)")

    g = sub.add_parser("plot", help="plot learning curves from CSV files")
    g.add_argument("csv", nargs="+")
    g.add_argument("--out", required=True, help="directory for images")
    g.add_argument("--window", type=int, default=100)

    e = sub.add_parser("enumerate", help="exact OD/AD trajectory laws of a tiny MDP")
    common(e)
    e.add_argument("--policy-seed", type=int, default=0)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command == "plot":
            for path in plot(args.csv, args.out, args.window):
                print(path)
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "train":
            arms = args.arms.split(",") if args.arms else None
            root = train(cfg, args.out, _seeds(args.seeds), args.full, args.jobs, arms)
            print(root / "curves.csv")
            return EXIT_OK
        if args.command == "verify":
            checks = args.checks.split(",") if args.checks else None
            ok, path, verdicts = verify(cfg, args.out, checks, args.lifo)
            for vd in verdicts:
                print(f"{'PASS' if vd.passed else 'FAIL'} {vd.check}: {vd.detail}")
            print(path)
            return EXIT_OK if ok else EXIT_FAIL
        if args.command == "transfer":
            tables, header = load_qtables(args.qtables)
            regimes = args.regime.split(",")
            if len(regimes) == 1:
                regimes = regimes * len(tables)
            res = transfer(cfg, tables, header, regimes, args.init, args.episodes)
            label = f"{'+'.join(regimes)}-{args.init}"
            root = output_root(args.out) / cfg.name
            root.mkdir(parents=True, exist_ok=True)
            path = root / f"transfer_{'_'.join(regimes)}_{args.init}.csv"
            write_transfer(path, cfg, header, label, res)
            print(f"source {res.source_return!r} target mean {res.mean!r} over {len(res.returns)} episodes")
            print(path)
            return EXIT_OK
        if args.command == "enumerate":
            doc = enumerate_report(cfg, args.policy_seed)
            root = output_root(args.out) / cfg.name
            root.mkdir(parents=True, exist_ok=True)
            path = root / "enumeration.json"
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
            print(json.dumps(doc, indent=2, sort_keys=True))
            return EXIT_OK if doc["equal"] else EXIT_FAIL
    except (ConfigError, SchemaError, PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
