"""Experiment plumbing: configs, seeding, record files, sweeps, self-checks and the CLI.

Seeding: a master seed ``m`` yields the game-generation stream
``SeedSequence([m, 0])`` and the stream of run ``i`` as ``SeedSequence([m, 1, i])``.
Both are pure functions of integers, so results do not depend on worker count,
scheduling or platform.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .equilibrium import CCE_TOL, cce_violation, find_cce, matrix_game_value
from .game import GameConfig, KernelMixtureGame, generate_random_game, load_game, save_game
from .kernels import VARIANTS, GramState
from .learner import RunConfig, run

EXP_FORMAT = "kmg-exp-v1"
SUMMARY_FORMAT = "kmg-summary-v1"
THEORETICAL = "theoretical"
SCALED = "scaled"
RECORD_HEADER = ("episode", "duality_gap", "cum_regret", "vbar1", "vlow1", "beta_t",
                 "info_gain_mean", "clip_count", "v_best_max", "v_best_min", "lp_pivots")
INT_COLUMNS = {"episode", "clip_count", "lp_pivots"}
SWEEP_AXES = {"T": "episodes", "beta_scale": "beta_scale", "iota": "iota",
              "d": "feature_dim", "H": "horizon"}
CANONICAL_GAME = GameConfig(n_states=3, n_actions=2, horizon=3, feature_dim=6)


class ConfigError(ValueError):
    pass


class RecordError(ValueError):
    pass


def game_seed(master_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, 0])


def run_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, 1, index])


def canonical_game(master_seed: int = 0, iota: float = 0.0) -> KernelMixtureGame:
    """The small reference game used by the acceptance checks."""
    cfg = dataclasses.replace(CANONICAL_GAME, iota=iota)
    return generate_random_game(cfg, np.random.default_rng(game_seed(master_seed)))


@dataclass
class ExperimentConfig:
    # inline GameConfig fields, or {"path": "..."} for a serialized game
    game: dict = field(default_factory=lambda: dataclasses.asdict(CANONICAL_GAME))
    variant: str = "hoeffding"
    episodes: int = 100
    delta: float = 0.05
    beta_mode: str = THEORETICAL
    beta_scale: float = 1.0
    seeds: list = field(default_factory=lambda: [0])
    master_seed: int = 0
    out_dir: str = "runs"
    iota: float = 0.0
    # summary checkpoints every this many episodes (plus the last one)
    eval_every: int = 100
    workers: int = 1
    gamma_hat: float | None = None
    lam: float | None = None

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not isinstance(self.episodes, int) or self.episodes < 0:
            raise ConfigError("episodes (T) must be a nonnegative integer")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if self.beta_mode not in (THEORETICAL, SCALED):
            raise ConfigError("beta_mode must be 'theoretical' or 'scaled'")
        if self.beta_scale <= 0:
            raise ConfigError("beta_scale must be positive")
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not 0.0 <= self.iota <= 1.0:
            raise ConfigError("iota must lie in [0, 1]")
        if self.eval_every < 1 or self.workers < 1:
            raise ConfigError("eval_every and workers must be >= 1")
        if "path" not in self.game:
            try:
                GameConfig(**self.game).validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad game spec: {exc}") from exc
        return self

    @property
    def effective_beta_scale(self) -> float:
        return 1.0 if self.beta_mode == THEORETICAL else float(self.beta_scale)

    def run_config(self) -> RunConfig:
        return RunConfig(episodes=self.episodes, variant=self.variant, delta=self.delta,
                         beta_scale=self.effective_beta_scale, gamma_hat=self.gamma_hat,
                         iota=self.iota, lam=self.lam)

    def build_game(self) -> KernelMixtureGame:
        if "path" in self.game:
            return load_game(self.game["path"])
        cfg = GameConfig(**{**self.game, "iota": self.iota})
        return generate_random_game(cfg, np.random.default_rng(game_seed(self.master_seed)))

    def to_json(self) -> str:
        return json.dumps({"format": EXP_FORMAT, **dataclasses.asdict(self)}, indent=2)


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    if data.get("format") != EXP_FORMAT:
        raise ConfigError(f"config format must be {EXP_FORMAT!r}")
    data = {k: v for k, v in data.items() if k != "format"}
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "T" in data:
        raise ConfigError("use 'episodes' for T")
    return ExperimentConfig(**data).validate()


# ---------------------------------------------------------------- records

def _fmt(name, value) -> str:
    return str(int(value)) if name in INT_COLUMNS else repr(float(value))


class RecordWriter:
    """Streams episode rows to CSV, flushing after each row."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(RECORD_HEADER)
        self._fh.flush()

    def write(self, row):
        self._writer.writerow([_fmt(n, getattr(row, n)) for n in RECORD_HEADER])
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_record(path, tol: float = 1e-9) -> dict:
    """Load a record CSV as column arrays, checking ordering and prefix sums."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != RECORD_HEADER:
            raise RecordError(f"{path}: unexpected header {header}")
        rows = list(reader)
    cols = {n: np.array([(int if n in INT_COLUMNS else float)(r[i]) for r in rows],
                        dtype=int if n in INT_COLUMNS else float)
            for i, n in enumerate(RECORD_HEADER)}
    n = len(rows)
    if not np.array_equal(cols["episode"], np.arange(1, n + 1)):
        raise RecordError(f"{path}: episodes are not 1..{n} in order")
    if n and np.min(cols["duality_gap"]) < -tol:
        raise RecordError(f"{path}: negative duality gap")
    prefix = np.cumsum(cols["duality_gap"])
    if n and np.max(np.abs(prefix - cols["cum_regret"])) > tol * max(1.0, float(np.max(np.abs(prefix)))):
        raise RecordError(f"{path}: cum_regret is not the prefix sum of duality_gap")
    return cols


def _stderr(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def checkpoints(episodes: int, every: int) -> list[int]:
    pts = list(range(every, episodes + 1, every))
    if episodes and (not pts or pts[-1] != episodes):
        pts.append(episodes)
    return pts


def summarize(records: dict, episodes: int, every: int) -> dict:
    """Aggregate statistics from per-seed record columns keyed by seed."""
    seeds = sorted(records)
    out = {"format": SUMMARY_FORMAT, "episodes": episodes,
           "seeds": ",".join(str(s) for s in seeds)}
    for t in checkpoints(episodes, every):
        vals = [records[s]["cum_regret"][t - 1] for s in seeds]
        out[f"cum_regret_mean@{t}"] = float(np.mean(vals))
        out[f"cum_regret_stderr@{t}"] = _stderr(vals)
    if episodes:
        q = max(episodes // 4, 1)
        last = [records[s]["duality_gap"][-q:].mean() for s in seeds]
        first = [records[s]["duality_gap"][:q].mean() for s in seeds]
        out["first_quartile_gap_mean"] = float(np.mean(first))
        out["last_quartile_gap_mean"] = float(np.mean(last))
        out["last_quartile_gap_stderr"] = _stderr(last)
        t0_gaps = []
        for s in seeds:
            c = records[s]
            t0 = int(np.argmin(c["vbar1"] - c["vlow1"])) + 1
            out[f"t0.seed{s}"] = t0
            out[f"t0_gap.seed{s}"] = float(c["duality_gap"][t0 - 1])
            t0_gaps.append(c["duality_gap"][t0 - 1])
        out["t0_gap_mean"] = float(np.mean(t0_gaps))
        out["t0_gap_stderr"] = _stderr(t0_gaps)
    return out


def _summary_lines(summary: dict) -> list[str]:
    return [f"{k} = {repr(v) if isinstance(v, float) else v}" for k, v in summary.items()]


def _parse_summary_lines(lines) -> dict:
    out = {}
    for line in lines:
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        for conv in (int, float):
            try:
                out[key] = conv(value)
                break
            except ValueError:
                continue
        else:
            out[key] = value
    return out


def write_summary(summary: dict, path) -> None:
    Path(path).write_text("\n".join(_summary_lines(summary)) + "\n")


def read_summary(path) -> dict:
    return _parse_summary_lines(Path(path).read_text().splitlines())


def record_path(out_dir, seed) -> Path:
    return Path(out_dir) / f"seed{seed}.csv"


def models_path(out_dir, seed) -> Path:
    return Path(out_dir) / f"seed{seed}.models.json"


def check_summary_round_trip(out_dir, episodes: int, every: int, seeds) -> bool:
    """Recompute the summary from the record files and compare with the stored one."""
    records = {s: read_record(record_path(out_dir, s)) for s in seeds}
    expected = _parse_summary_lines(_summary_lines(summarize(records, episodes, every)))
    return read_summary(Path(out_dir) / "summary.txt") == expected


def _model_dump(record, seed, error=None) -> dict:
    return {
        "seed": seed,
        "t0": record.t0,
        "t0_gap": record.t0_gap,
        "error": error,
        "models": record.model_stats,
        "variance_checks": [list(v) for v in record.variance_checks],
    }


def run_one(config: ExperimentConfig, seed: int, game: KernelMixtureGame | None = None) -> dict:
    """Run a single seed and write its record and model dump; returns the dump."""
    game = game if game is not None else config.build_game()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    writer = RecordWriter(record_path(out, seed))
    rng = np.random.default_rng(run_seed(config.master_seed, seed))
    partial = []
    try:
        record = run(game, config.run_config(), rng,
                     on_episode=lambda row: (writer.write(row), partial.append(row)))
    except Exception as exc:
        from .learner import RegretRecord
        dump = _model_dump(RegretRecord(rows=partial), seed, error=f"{type(exc).__name__}: {exc}")
        models_path(out, seed).write_text(json.dumps(dump, indent=1))
        raise
    finally:
        writer.close()
    dump = _model_dump(record, seed)
    models_path(out, seed).write_text(json.dumps(dump, indent=1))
    return dump


def _worker(args):
    cfg_dict, seed = args
    cfg = ExperimentConfig(**cfg_dict)
    run_one(cfg, seed)
    return seed


def cmd_run(config: ExperimentConfig, log=print) -> int:
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json() + "\n")
    start = time.perf_counter()
    try:
        if config.workers > 1 and len(config.seeds) > 1:
            jobs = [(dataclasses.asdict(config), s) for s in config.seeds]
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                for seed in pool.map(_worker, jobs):
                    log(f"seed {seed} done")
        else:
            game = config.build_game()
            for seed in config.seeds:
                run_one(config, seed, game)
                log(f"seed {seed} done")
    except Exception as exc:
        log(f"run aborted: {type(exc).__name__}: {exc}")
        return 1
    records = {s: read_record(record_path(out, s)) for s in config.seeds}
    write_summary(summarize(records, config.episodes, config.eval_every), out / "summary.txt")
    log(f"wrote {len(records)} records to {out} in {time.perf_counter() - start:.1f}s")
    return 0


def sweep_configs(config: ExperimentConfig, axis: str, values) -> list:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    cells = []
    for v in values:
        key = SWEEP_AXES[axis]
        if key in ("feature_dim", "horizon"):
            if "path" in config.game:
                raise ConfigError(f"axis {axis} needs an inline game spec")
            cfg = dataclasses.replace(config, game={**config.game, key: int(v)})
        elif key == "episodes":
            cfg = dataclasses.replace(config, episodes=int(v))
        elif key == "beta_scale":
            cfg = dataclasses.replace(config, beta_scale=float(v), beta_mode=SCALED)
        else:
            cfg = dataclasses.replace(config, iota=float(v))
        cfg = dataclasses.replace(cfg, out_dir=str(Path(config.out_dir) / f"{axis}={v}"))
        cells.append((v, cfg.validate()))
    return cells


def cmd_sweep(config: ExperimentConfig, axis: str, values, log=print) -> int:
    try:
        cells = sweep_configs(config, axis, values)
    except ConfigError as exc:
        log(f"error: {exc}")
        return 2
    lines = [f"axis = {axis}"]
    status = 0
    for v, cfg in cells:
        rc = cmd_run(cfg, log=log)
        status = status or rc
        if rc == 0:
            s = read_summary(Path(cfg.out_dir) / "summary.txt")
            lines.append(f"cell {v}: last_quartile_gap_mean = {s.get('last_quartile_gap_mean')}"
                         f" last_quartile_gap_stderr = {s.get('last_quartile_gap_stderr')}"
                         f" cum_regret_mean = {s.get(f'cum_regret_mean@{cfg.episodes}')}")
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(config.out_dir) / "sweep.txt").write_text("\n".join(lines) + "\n")
    return status


# ---------------------------------------------------------- oracle checks

def inject_gram_corruption(state: GramState, scale: float = 1e-3) -> None:
    """Test hook: perturb the stored normalized features without touching raw samples."""
    state._psi[0, 0] += scale
    state._chol = None


def _primal_ridge(X, y, lam, q):
    """Explicit feature-space ridge mean and width for the oracle comparison."""
    d = X.shape[1]
    Lam = lam * np.eye(d) + X.T @ X
    theta = np.linalg.solve(Lam, X.T @ y)
    return float(q @ theta), math.sqrt(max(float(q @ np.linalg.solve(Lam, q)), 0.0))


def _rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def check_dual_primal(rng, n_instances=200, corrupt=None, tol=1e-8):
    worst = 0.0
    for _ in range(n_instances):
        d = int(rng.integers(1, 11))
        t = int(rng.integers(0, 51))
        lam = float(rng.choice([0.5, 1.0, 2.0]))
        X = rng.normal(size=(t, d))
        y = rng.normal(size=t)
        w = rng.uniform(0.5, 2.0, size=t)
        state = GramState(d, lam)
        for i in range(t):
            state.append(X[i], y[i], w[i])
        if corrupt is not None and t > 0:
            corrupt(state)
        Xn, yn = X / w[:, None], y / w
        for _ in range(3):
            q = rng.normal(size=d)
            m_p, w_p = _primal_ridge(Xn, yn, lam, q)
            worst = max(worst, _rel(state.mean_estimate(q), m_p), _rel(state.bonus_width(q), w_p))
    return worst <= tol, f"worst relative error {worst:.2e}"


def check_elliptical_potential(rng, n_instances=50):
    worst = -math.inf
    for _ in range(n_instances):
        d = int(rng.integers(1, 11))
        t = int(rng.integers(1, 201))
        lam = float(rng.choice([0.5, 1.0, 2.0]))
        state = GramState(d, lam)
        for x in rng.normal(size=(t, d)) * rng.uniform(0.1, 3.0):
            state.append(x, 0.0)
        worst = max(worst, state.potential - 2.0 * state.logdet_independent())
    return worst <= 1e-9, f"max(potential - 2 logdet) = {worst:.2e}"


def check_cce_fuzz(rng, n_instances=300, horizon=3.0):
    worst, worst_dist = 0.0, 0.0
    for _ in range(n_instances):
        n = int(rng.integers(2, 9))
        Q1 = rng.uniform(-horizon, horizon, size=(n, n))
        Q2 = Q1 - rng.uniform(0, horizon, size=(n, n)) if rng.random() < 0.5 else \
            rng.uniform(-horizon, horizon, size=(n, n))
        sigma = find_cce(Q1, Q2).sigma
        worst = max(worst, cce_violation(sigma, Q1, Q2))
        worst_dist = max(worst_dist, abs(sigma.sum() - 1.0), float(-sigma.min()))
    ok = worst <= CCE_TOL and worst_dist <= 1e-9
    return ok, f"worst violation {worst:.2e}, distribution error {worst_dist:.2e}"


def check_saddle(rng, n_instances=200):
    worst = 0.0
    for _ in range(n_instances):
        m, n = rng.integers(1, 9, size=2)
        P = rng.uniform(-1, 1, size=(m, n))
        v, p, q = matrix_game_value(P)
        worst = max(worst, abs(float(np.min(p @ P)) - v), abs(float(np.max(P @ q)) - v))
    v, _, _ = matrix_game_value(np.array([[3.0, 0.0], [1.0, 2.0]]))
    ok = worst <= 1e-8 and abs(v - 1.5) <= 1e-9
    return ok, f"worst saddle residual {worst:.2e}, [[3,0],[1,2]] value {v!r}"


def cmd_oracle_check(seed: int = 0, corrupt_gram: bool = False, log=print) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    checks = [
        ("dual-primal", lambda: check_dual_primal(rng, corrupt=inject_gram_corruption if corrupt_gram else None)),
        ("elliptical-potential", lambda: check_elliptical_potential(rng)),
        ("cce-fuzz", lambda: check_cce_fuzz(rng)),
        ("matrix-game-saddle", lambda: check_saddle(rng)),
    ]
    failed = 0
    for name, fn in checks:
        ok, detail = fn()
        failed += not ok
        log(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 1 if failed else 0


# ---------------------------------------------------------- cce-solve I/O

def read_matrix_pair(text: str):
    """Two square matrices, each given as a size line followed by that many rows."""
    tokens = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    mats, i = [], 0
    for _ in range(2):
        if i >= len(tokens) or len(tokens[i]) != 1:
            raise ValueError("expected a line holding the matrix size")
        n = int(tokens[i][0])
        rows = tokens[i + 1:i + 1 + n]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise ValueError(f"expected {n} rows of {n} entries")
        mats.append(np.array(rows, dtype=float))
        i += 1 + n
    if i != len(tokens):
        raise ValueError("trailing content after the second matrix")
    if mats[0].shape != mats[1].shape:
        raise ValueError("matrices must have the same size")
    return mats[0], mats[1]


def format_matrix(M) -> str:
    return f"{M.shape[0]}\n" + "\n".join(" ".join(repr(float(v)) for v in row) for row in M) + "\n"


def cmd_cce_solve(in_path, out_path=None, log=print) -> int:
    try:
        Q1, Q2 = read_matrix_pair(Path(in_path).read_text())
    except (OSError, ValueError) as exc:
        log(f"error: {exc}")
        return 2
    text = format_matrix(find_cce(Q1, Q2).sigma)
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -------------------------------------------------------------------- CLI

def _parse_values(text):
    return [json.loads(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kernelcce")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config (JSON, kmg-exp-v1)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--beta-scale", type=float, help="switch to scaled radii with this factor")
        sp.add_argument("--episodes", "-T", type=int)
        sp.add_argument("--seeds", help="comma-separated run indices")

    common(sub.add_parser("run", help="run the learner for every seed"))
    sw = sub.add_parser("sweep", help="run a grid over one axis")
    common(sw)
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", required=True, help="comma-separated axis values")
    oc = sub.add_parser("oracle-check", help="numerical self-checks")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--corrupt-gram", action="store_true", help=argparse.SUPPRESS)
    cs = sub.add_parser("cce-solve", help="solve a CCE for a pair of payoff matrices")
    cs.add_argument("input")
    cs.add_argument("--out")
    gg = sub.add_parser("gen-game", help="generate and serialize a random game")
    gg.add_argument("--config")
    gg.add_argument("--seed", type=int, default=0)
    gg.add_argument("--out", required=True)
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.variant is not None:
        changes["variant"] = args.variant
    if args.beta_scale is not None:
        changes.update(beta_scale=args.beta_scale, beta_mode=SCALED)
    if args.episodes is not None:
        changes["episodes"] = args.episodes
    if args.seeds is not None:
        changes["seeds"] = [int(s) for s in args.seeds.split(",")]
    return dataclasses.replace(cfg, **changes).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = print
    try:
        if args.command in ("run", "sweep"):
            cfg = load_config(args.config) if args.config else ExperimentConfig()
            cfg = _apply_overrides(cfg, args)
            if args.command == "run":
                return cmd_run(cfg, log=log)
            return cmd_sweep(cfg, args.axis, _parse_values(args.values), log=log)
        if args.command == "oracle-check":
            return cmd_oracle_check(args.seed, args.corrupt_gram, log=log)
        if args.command == "cce-solve":
            return cmd_cce_solve(args.input, args.out, log=log)
        if args.command == "gen-game":
            cfg = load_config(args.config) if args.config else ExperimentConfig()
            cfg = dataclasses.replace(cfg, master_seed=args.seed).validate()
            save_game(cfg.build_game(), args.out)
            log(f"wrote {args.out}")
            return 0
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
