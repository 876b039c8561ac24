"""Command line: ``sparselb run|sweep|exit-times|scaling``.

Experiments are described by JSON files; ``--seed`` and ``--set key=value``
override file values. Data goes to files in ``--out``; progress goes to
standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .approx import ApproxAlgo, ApproxKind
from .comm import CommKind, CommPattern
from .env import EnvConfig, run
from .metrics import (
    CCDF_COLUMNS,
    SUMMARY_COLUMNS,
    ccdf,
    workload_gap,
    write_ccdf_csv,
    write_csv,
    write_trace_jsonl,
)
from .parallel import pmap
from .routing import PolicyBundle, PolicyKind
from .theory import EXIT_TIME_COLUMNS, SCALING_COLUMNS, poisson_exit_times, run_scaling_suite, cell_seed

log = logging.getLogger("sparselb")

SWEEP_CCDF_COLUMNS = ("policy", "x", "load", "seed") + CCDF_COLUMNS

EXIT_INVALID = 2
EXIT_GUARANTEE = 3
EXIT_EXISTS = 4


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line


class GuaranteeError(RuntimeError):
    pass


# -- config loading -----------------------------------------------------------


def _line_of(text: str, key: str | None) -> int:
    if key:
        for n, line in enumerate(text.splitlines(), 1):
            if f'"{key}"' in line:
                return n
    return 1


def load_config(path: Path, overrides: list[str] | None = None, seed: int | None = None) -> tuple[dict, str]:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be an object")
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            cfg[key] = json.loads(value)
        except json.JSONDecodeError:
            cfg[key] = value
    if seed is not None:
        cfg["seed"] = seed
    return cfg, text


_LABEL = re.compile(r"^(rt|dt|et)(?:-(\d+))?\+(basic|msr|msrx|msr-x)$")


@dataclass(frozen=True)
class PolicySpec:
    """A policy descriptor before x (and r) are filled in."""

    kind: str
    comm: str | None = None
    algo: str | None = None
    x: int | None = None
    d: int = 2
    r: float | None = None
    tie_break: str = "random"

    @classmethod
    def parse(cls, raw) -> "PolicySpec":
        if isinstance(raw, str):
            s = raw.strip().lower()
            m = _LABEL.match(s)
            if m:
                comm, x, algo = m.groups()
                return cls("jsaq", comm, "msrx" if algo == "msr-x" else algo, int(x) if x else None)
            if re.fullmatch(r"sq\d+", s):
                return cls("sqd", d=int(s[2:]))
            if s in ("jsq", "rr", "random", "sqd"):
                return cls(s)
            raise ConfigError(f"unknown policy {raw!r}", key="policies")
        if not isinstance(raw, dict):
            raise ConfigError(f"policy must be a string or an object, got {raw!r}", key="policies")
        known = {"kind", "comm", "algo", "x", "d", "r", "tie_break"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown policy fields {sorted(extra)}", key=sorted(extra)[0])
        return cls(**raw)

    @property
    def needs_x(self) -> bool:
        if self.kind != "jsaq" or self.x is not None:
            return False
        return self.comm in ("dt", "et") or self.algo == "msrx" or (self.comm == "rt" and self.r is None)

    def resolve(self, x: int | None, load: float, K: int) -> tuple[PolicyBundle, int | None]:
        if self.kind != "jsaq":
            return PolicyBundle.baseline(self.kind, d=self.d, tie_break=self.tie_break), None
        x = self.x if self.x is not None else x
        if self.comm == "rt":
            r = self.r if self.r is not None else load / (K * x)
            comm = CommPattern.rt(r)
        else:
            comm = CommPattern(CommKind(self.comm), x=x)
        algo = ApproxAlgo.msrx(x) if self.algo == "msrx" else ApproxAlgo(ApproxKind(self.algo))
        return PolicyBundle.jsaq(comm, algo, tie_break=self.tie_break), x


def env_config(cfg: dict, load: float, seed: int) -> EnvConfig:
    service = cfg.get("service") or {}
    if not isinstance(service, dict):
        raise ConfigError("service must be an object with 'law' and optional 'param'", key="service")
    try:
        return EnvConfig(
            K=int(cfg["K"]),
            horizon=cfg["horizon"],
            engine=cfg.get("engine", "slot"),
            load=load,
            rate_profile=cfg.get("rate_profile"),
            service_law=service.get("law"),
            service_param=service.get("param"),
            mu=cfg.get("mu"),
            seed=seed,
            coupled=bool(cfg.get("coupled", False)),
            trace=bool(cfg.get("trace", False)),
            check_invariants=bool(cfg.get("check_invariants", False)),
            workload_stride=int(cfg.get("workload_stride", 1)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]!r}", key=exc.args[0]) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key=_guess_key(str(exc))) from None


def _guess_key(message: str) -> str | None:
    for key in ("load", "horizon", "rate_profile", "mu", "K", "service", "engine"):
        if key in message or key.replace("_", " ") in message:
            return key
    if "law" in message or "requirement" in message or "geometric" in message:
        return "service"
    return None


@dataclass
class ExperimentSpec:
    name: str
    K: int
    loads: list
    policies: list
    x_values: list
    seeds: list
    warmup: int | None
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentSpec":
        for key in ("K", "horizon"):
            if key not in cfg:
                raise ConfigError(f"missing required key {key!r}", key=key)
        if "loads" in cfg:
            loads = cfg["loads"]
        elif "load" in cfg:
            loads = [cfg["load"]]
        elif cfg.get("engine") == "event" and "rate_profile" in cfg:
            loads = [None]
        else:
            raise ConfigError("missing 'load' (or 'loads')", key="load")
        if not isinstance(loads, list) or not loads:
            raise ConfigError("'loads' must be a non-empty list", key="loads")
        raw_policies = cfg.get("policies", [cfg["policy"]] if "policy" in cfg else None)
        if not raw_policies:
            raise ConfigError("missing 'policy' (or 'policies')", key="policy")
        policies = [PolicySpec.parse(p) for p in raw_policies]
        x_values = cfg.get("x_values", [cfg["x"]] if "x" in cfg else [])
        if not isinstance(x_values, list):
            raise ConfigError("'x_values' must be a list", key="x_values")
        if any(p.needs_x for p in policies) and not x_values:
            raise ConfigError("a policy needs x but neither 'x' nor 'x_values' is set", key="x_values")
        for x in x_values:
            if not isinstance(x, int) or x < 1:
                raise ConfigError(f"x values must be integers >= 1, got {x!r}", key="x_values")
        seed = cfg.get("seed", 0)
        reps = cfg.get("replications", 1)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}", key="seed")
        if not isinstance(reps, int) or reps < 1:
            raise ConfigError(f"replications must be a positive integer, got {reps!r}", key="replications")
        warmup = cfg.get("warmup")
        if warmup is not None and (not isinstance(warmup, int) or warmup < 0):
            raise ConfigError("warmup must be a non-negative job count", key="warmup")
        spec = cls(
            name=str(cfg.get("name", "experiment")),
            K=int(cfg["K"]),
            loads=loads,
            policies=policies,
            x_values=list(x_values),
            seeds=[seed + k for k in range(reps)],
            warmup=warmup,
            raw=cfg,
        )
        # validate every cell up front so errors surface before any run
        for _ in spec.cells():
            pass
        return spec

    def cells(self):
        """(EnvConfig, PolicyBundle, x, load) for every grid point, inputs shared per (load, seed)."""
        for load in self.loads:
            for seed in self.seeds:
                env = env_config(self.raw, load, seed)
                for p in self.policies:
                    xs = self.x_values if p.needs_x else [None]
                    for x in xs:
                        try:
                            bundle, used_x = p.resolve(x, load if load is not None else _mean_rate(env), self.K)
                        except (TypeError, ValueError) as exc:
                            raise ConfigError(f"policy {p}: {exc}", key="policies") from None
                        yield env, bundle, used_x, load


def _mean_rate(env: EnvConfig) -> float:
    return env.rate_profile[0][1]


# -- guarantees ----------------------------------------------------------------


def check_guarantees(log_, bundle: PolicyBundle) -> None:
    """Raise if a run broke a guarantee that must hold on every sample path."""
    D = log_.total_departures
    M = log_.total_messages
    kind = bundle.policy.kind
    if kind in (PolicyKind.JSQ, PolicyKind.SQD) and M != D:
        raise GuaranteeError(f"{bundle.label}: {M} messages for {D} departures")
    if kind is PolicyKind.JSAQ and bundle.comm.kind is not CommKind.RT:
        x = bundle.comm.x
        et = bundle.comm.kind is CommKind.ET
        msr = bundle.algo.kind is ApproxKind.MSR
        if (et or not msr) and log_.sup_aq > x - 1:
            raise GuaranteeError(f"{bundle.label}: sup AQ {log_.sup_aq} exceeds {x - 1}")
        if not (et and msr) and M * x > D:
            raise GuaranteeError(f"{bundle.label}: {M} messages exceed D/x = {D}/{x}")
        if log_.bound_violations:
            raise GuaranteeError(f"{bundle.label}: per-server message bound broken {log_.bound_violations} times")
    if log_.workload is not None:
        lo, _ = workload_gap(log_)
        if lo < -1e-9 * max(1.0, abs(lo)):
            raise GuaranteeError(f"workload lower bound broken: gap {lo}")


# -- commands ------------------------------------------------------------------


def _prepare_out(out: Path, names, force: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (out / n).exists()]
    if clash and not force:
        raise FileExistsError(f"{out}: {', '.join(clash)} already exist (use --force to overwrite)")


def _run_cell(args):
    env, bundle, x, load, warmup = args
    result = run(env, bundle)
    check_guarantees(result, bundle)
    row = result.summary_row(x=x, load=load if load is not None else _mean_rate(env), warmup=warmup)
    curve = ccdf(result, warmup)
    return row, curve, result


def cmd_run(args) -> int:
    cfg, text = load_config(args.config, args.set, args.seed)
    spec = _checked_spec(cfg, text, args.config)
    cells = list(spec.cells())
    if len(cells) != 1:
        raise ConfigError(f"run takes exactly one cell, the config describes {len(cells)} (use sweep)", key="policies")
    out = Path(args.out)
    names = ["summary.csv", "ccdf.csv"] + (["trace.jsonl"] if cfg.get("trace") else [])
    _prepare_out(out, names, args.force)
    env, bundle, x, load = cells[0]
    log.info("running %s K=%d load=%s horizon=%s", bundle.label, env.K, load, env.horizon)
    row, curve, result = _run_cell((env, bundle, x, load, spec.warmup))
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [row])
    write_ccdf_csv(out / "ccdf.csv", curve)
    if result.trace is not None:
        write_trace_jsonl(out / "trace.jsonl", result)
    log.info("relative communication %s, sup AQ %s", row["relative_comm"], row["sup_AQ"])
    return 0


def cmd_sweep(args) -> int:
    cfg, text = load_config(args.config, args.set, args.seed)
    spec = _checked_spec(cfg, text, args.config)
    out = Path(args.out)
    _prepare_out(out, ["sweep.csv", "ccdf.csv"], args.force)
    cells = [(env, bundle, x, load, spec.warmup) for env, bundle, x, load in spec.cells()]
    log.info("sweep %s: %d cells on %d worker(s)", spec.name, len(cells), args.threads)
    results = pmap(_sweep_cell, cells, args.threads)
    rows, ccdf_rows = [], []
    for row, curve in results:
        rows.append(row)
        key = {c: row[c] for c in ("policy", "x", "load", "seed")}
        ccdf_rows.extend({**key, "value": v, "tail_prob": p} for v, p in zip(curve.values.tolist(), curve.tail.tolist()))
    digests = {}
    for row in rows:
        digests.setdefault((row["load"], row["seed"]), set()).add(row["stream_digest"])
    if any(len(d) > 1 for d in digests.values()):
        raise GuaranteeError("policies in one (load, seed) cell saw different inputs")
    write_csv(out / "sweep.csv", SUMMARY_COLUMNS, rows)
    write_csv(out / "ccdf.csv", SWEEP_CCDF_COLUMNS, ccdf_rows)
    log.info("wrote %d rows to %s", len(rows), out / "sweep.csv")
    return 0


def _sweep_cell(args):
    row, curve, _ = _run_cell(args)
    return row, curve


def _exit_cell(args):
    mu, y, trials, seed = args
    return poisson_exit_times(mu, y, trials, seed).row()


def _parse_y(text: str) -> list[int]:
    ys: list[int] = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        ys.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    return ys


def cmd_exit_times(args) -> int:
    cfg: dict = {}
    if args.config:
        cfg, _ = load_config(args.config, args.set, None)
    mus = args.mu or cfg.get("mu", [0.5, 1.0, 2.0])
    ys = _parse_y(args.y) if args.y else cfg.get("y", list(range(1, 7)))
    trials = args.trials or cfg.get("trials", 10_000)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out)
    _prepare_out(out, ["exit_times.csv"], args.force)
    cells = [(float(mu), int(y), int(trials), cell_seed(seed, j, int(y))) for j, mu in enumerate(mus) for y in ys]
    log.info("exit times: %d cells x %d trials", len(cells), trials)
    rows = pmap(_exit_cell, cells, args.threads)
    write_csv(out / "exit_times.csv", EXIT_TIME_COLUMNS, rows)
    bad = [r for r in rows if not (r["tau_ok"] and r["sigma_ok"])]
    for r in bad:
        log.warning("bound not met at mu=%s y=%s", r["mu"], r["y"])
    return 0


def cmd_scaling(args) -> int:
    cfg, text = load_config(args.config, args.set, args.seed)
    try:
        for key in ("K", "horizon", "n_values"):
            if key not in cfg:
                raise ConfigError(f"missing required key {key!r}", key=key)
        K = int(cfg["K"])
        mu = cfg.get("mu_bar", 1.0)
        mu = [float(mu)] * K if not isinstance(mu, list) else [float(m) for m in mu]
        profile = cfg.get("rate_profile") or [[0.0, cfg.get("load_bar", sum(mu))]]
        service = cfg.get("service") or {"law": "uniform"}
        base = EnvConfig(
            K=K,
            horizon=float(cfg["horizon"]),
            engine="event",
            rate_profile=profile,
            service_law=service.get("law"),
            service_param=service.get("param"),
            mu=mu,
        )
        policy = PolicySpec.parse(cfg.get("policy", "et-3+msr"))
        bundle, _ = policy.resolve(cfg.get("x"), profile[0][1], K)
        out = Path(args.out)
        _prepare_out(out, ["scaling.csv"], args.force)
        log.info("scaling %s over n=%s, %d replications", bundle.label, cfg["n_values"], cfg.get("replications", 20))
        result = run_scaling_suite(
            base, cfg["n_values"], bundle, int(cfg.get("replications", 20)), int(cfg.get("seed", 0)), args.threads
        )
    except ConfigError as exc:
        raise _anchor(exc, text) from None
    except (TypeError, ValueError) as exc:
        raise _anchor(ConfigError(str(exc), key=_guess_key(str(exc))), text) from None
    write_csv(out / "scaling.csv", SCALING_COLUMNS, result.rows())
    log.info("ssc medians %s; optimality medians %s", result.ssc_median, result.optimality_median)
    return 0


def _anchor(exc: ConfigError, text: str) -> ConfigError:
    if exc.line is None:
        exc.line = _line_of(text, exc.key)
    return exc


def _checked_spec(cfg: dict, text: str, path) -> ExperimentSpec:
    try:
        return ExperimentSpec.from_dict(cfg)
    except ConfigError as exc:
        raise _anchor(exc, text) from None


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparselb", description="Load balancing with sparse communication.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--force", action="store_true", help="overwrite existing output files")
        p.add_argument("--threads", type=int, default=1, help="worker processes for independent cells")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    common(sub.add_parser("run", help="run one cell"))
    common(sub.add_parser("sweep", help="run a grid of loads, policies and x values"))
    p = sub.add_parser("exit-times", help="Poisson exit-time Monte Carlo")
    common(p, config_required=False)
    p.add_argument("--mu", type=float, nargs="+")
    p.add_argument("--y", help="barriers, e.g. 1-6 or 1,3,5")
    p.add_argument("--trials", type=int)
    common(sub.add_parser("scaling", help="diffusion-scaling trend suite"))
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "exit-times": cmd_exit_times, "scaling": cmd_scaling}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        where = f"{args.config}:{exc.line or 1}" if getattr(args, "config", None) else "config"
        print(f"{where}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except GuaranteeError as exc:
        print(f"guarantee violated: {exc}", file=sys.stderr)
        return EXIT_GUARANTEE


if __name__ == "__main__":
    sys.exit(main())
