"""Command-line front end: theory tables, rate optimization, simulation, use case.

Every command writes machine-readable CSV or JSON (``--pretty`` for an aligned
text table). All randomness comes from ``--seed``, which defaults to 0.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import io
import itertools
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Sequence

from . import __version__
from .codes import CodeSpec, ColumnPolicy, Scheme, signaling_overhead
from .optimizer import RateGrid, optimize_rate, optimize_sweep, sim_evaluator, theory_evaluator
from .sim import RELAY_MODES, SimConfig, compare_schemes, iter_trace, simulate
from .theory import ChannelSpec, RankModel, scheme_plr

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

DEFAULT_SEED = 0
USECASE_SNC_RELAY = "forward"

THEORY_COLUMNS = ["scheme", "K", "N", "delta", "L", "plr", "is_upper_bound", "needs_simulation", "per_hop_plr", "probs"]
OPTIMIZE_COLUMNS = [
    "scheme", "N", "delta", "L", "pe_target", "K_star", "rho_star", "plr", "R_star", "iterations", "evaluator",
]
SIMULATE_COLUMNS = [
    "scheme", "K", "N", "delta", "L", "relay_mode", "rounds", "seed", "plr", "plr_se", "R",
    "delivered_fraction", "mean_delay_slots", "mean_delay_ms",
]
USECASE_COLUMNS = [
    "L", "K_pascal", "K_snc", "R_pascal", "R_snc", "rate_gain_pct", "rate_gain_lo", "rate_gain_hi",
    "delay_pascal_slots", "delay_snc_slots", "delay_pascal_ms", "delay_snc_ms", "delay_increase_pct",
    "delay_increase_lo", "delay_increase_hi", "overhead_seeds_pct", "overhead_coefficients_pct",
    "overhead_pascal_pct", "pascal_within_delay", "snc_within_delay",
]


class UsageError(Exception):
    """Invalid combination of arguments; exits with status 2."""


# -- argument types ------------------------------------------------------------


def int_list(text: str) -> list[int]:
    """``4,8,16`` or an inclusive range ``10:100:10``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            lo, hi = bits[0], bits[1]
            step = bits[2] if len(bits) > 2 else 1
            if step < 1 or hi < lo:
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            out.extend(range(lo, hi + 1, step))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def float_list(text: str) -> list[float]:
    out = [float(p) for p in str(text).split(",") if p.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def scheme_list(text: str) -> list[Scheme]:
    try:
        return [Scheme.parse(p) for p in str(text).split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def rank_model_arg(text: str) -> RankModel:
    try:
        return RankModel.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def column_policy_arg(text: str) -> ColumnPolicy:
    try:
        return ColumnPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def bool_arg(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# -- experiment config ---------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Grid axes and run settings after config-file and flag merging."""

    schemes: list[Scheme]
    K_list: list[int] | None
    N_list: list[int]
    delta_list: list[float]
    L_list: list[int]
    pe_list: list[float]
    rounds: int
    seed: int
    m: int
    relay_mode: str | None
    rank_model: RankModel | None
    column_policy: ColumnPolicy
    workers: int
    out: str | None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "ExperimentConfig":
        cfg = cls(
            schemes=args.scheme,
            K_list=args.K,
            N_list=args.N,
            delta_list=args.delta,
            L_list=args.links,
            pe_list=args.pe_target,
            rounds=args.rounds,
            seed=args.seed,
            m=args.m,
            relay_mode=args.relay_mode,
            rank_model=args.rank_model,
            column_policy=args.column_policy,
            workers=args.workers,
            out=args.out,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ("schemes", "N_list", "delta_list", "L_list", "pe_list"):
            if not getattr(self, name):
                raise UsageError(f"axis {name} is empty")
        if self.K_list is not None and not self.K_list:
            raise UsageError("axis K_list is empty")
        if self.rounds < 1:
            raise UsageError("--rounds must be at least 1")
        if self.workers < 1:
            raise UsageError("--workers must be at least 1")
        if any(not 0.0 <= d <= 1.0 for d in self.delta_list):
            raise UsageError("--delta values must lie in [0, 1]")
        if any(L < 1 for L in self.L_list):
            raise UsageError("--links values must be at least 1")
        if any(not 0.0 < p < 1.0 for p in self.pe_list):
            raise UsageError("--pe-target values must lie in (0, 1)")
        if self.out:
            folder = os.path.dirname(os.path.abspath(self.out))
            if not os.path.isdir(folder) or not os.access(folder, os.W_OK):
                raise UsageError(f"output directory {folder} is not writable")

    def spec(self, scheme: Scheme, K: int, N: int) -> CodeSpec:
        try:
            return CodeSpec(scheme, K, N, self.m, self.column_policy)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def relay_for(self, scheme: Scheme) -> str | None:
        mode = self.relay_mode
        if mode is None:
            return None
        if scheme.is_pascal and mode == "recode":
            raise UsageError("--relay-mode recode applies to random schemes only")
        if not scheme.is_pascal and mode == "decode_reencode":
            raise UsageError("--relay-mode decode_reencode applies to Pascal schemes only")
        return mode


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; keys mirror long flag names."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[config]\n" + fh.read())
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    return {k.strip().lstrip("-").replace("-", "_"): v.strip() for k, v in parser["config"].items()}


# -- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, **defaults) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", help="flat key = value file; flags override it")
    g.add_argument("--scheme", type=scheme_list, default=defaults.get("scheme", scheme_list("pascalnc")),
                   help="pascalnc, pascalnc-s, snc, snc-s (comma list)")
    g.add_argument("--K", type=int_list, default=defaults.get("K"), help="generation size(s)")
    g.add_argument("--N", type=int_list, default=defaults.get("N", [16]), help="block length(s): list or a:b:step")
    g.add_argument("--delta", type=float_list, default=defaults.get("delta", [0.05]), help="per-link erasure probability")
    g.add_argument("--links", "--L", dest="links", type=int_list, default=defaults.get("links", [1]),
                   help="number of links in the line network")
    g.add_argument("--pe-target", type=float_list, default=defaults.get("pe_target", [1e-3]), help="PLR target(s)")
    g.add_argument("--rounds", type=int, default=defaults.get("rounds", 10_000), help="Monte Carlo generations")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"master seed (default {DEFAULT_SEED})")
    g.add_argument("--m", type=int, default=8, help="field GF(2^m) exponent")
    g.add_argument("--relay-mode", choices=RELAY_MODES, default=None)
    g.add_argument("--rank-model", type=rank_model_arg, default=None, help="ideal_mds or random_q[:q]")
    g.add_argument("--column-policy", type=column_policy_arg, default=ColumnPolicy(),
                   help="sequential | random[:seed] | optimized[:seed[:budget]]")
    g.add_argument("--workers", type=int, default=1, help="worker processes for simulation")
    g.add_argument("--out", help="output file (default stdout)")
    g.add_argument("--format", choices=("csv", "json"), default=defaults.get("format", "csv"))
    g.add_argument("--pretty", action="store_true", help="aligned text table instead of CSV/JSON")
    g.add_argument("--no-timestamp", action="store_true", help="omit the generated_at field from JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pascalnc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theory", help="closed-form Z distribution and PLR tables")
    _common(p, format="json")
    p.add_argument("--literal", action="store_true",
                   help="scheduled codes: use the unnormalized conditional term (reference only)")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("optimize", help="largest rate meeting a PLR target, per block length")
    _common(p, N=int_list("10:100:10"))
    p.add_argument("--evaluator", choices=("theory", "sim"), default="theory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="Monte Carlo PLR, rate and in-order delay")
    _common(p, format="json")
    p.add_argument("--trace", help="write per-round JSON-lines events to this file")
    p.add_argument("--check-theory", action="store_true",
                   help="single hop: compare with the closed form at 3 standard errors")
    p.add_argument("--slot-ms", type=float, default=4.8, help="slot duration in milliseconds")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("usecase", help="PascalNC-S against SNC, with signaling overhead")
    _common(p, scheme=scheme_list("pascalnc-s"), N=[50], delta=[0.1], links=[6, 10], format="csv")
    p.add_argument("--M", type=int, default=1500, help="packet length in symbols (bytes)")
    p.add_argument("--bitrate-kbps", type=float, default=2500.0, help="flow bit rate in kbit/s")
    p.add_argument("--evaluator", choices=("theory", "sim"), default="sim", help="how K* is chosen")
    p.add_argument("--snc-relay-mode", choices=("forward", "recode"), default=USECASE_SNC_RELAY)
    p.add_argument("--max-delay-ms", type=float, default=None, help="flag schemes whose mean delay exceeds this")
    p.set_defaults(func=cmd_usecase)
    return parser


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        for key, raw in values.items():
            action = known.get(key)
            if action is None or key in ("config", "help", "func"):
                raise UsageError(f"unknown config key {key!r}")
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                try:
                    values[key] = bool_arg(raw)
                except argparse.ArgumentTypeError as exc:
                    raise UsageError(f"config key {key}: {exc}") from None
        # string defaults go through each action's type, so flags still win
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# -- output --------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def to_table(rows: list[dict], columns: list[str]) -> str:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        if isinstance(v, list) and len(v) > 4:
            return f"[{len(v)} values]"
        return _fmt(v)

    cells = [columns] + [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def to_json_doc(command: str, rows: list[dict], args: argparse.Namespace, extra: dict | None = None) -> str:
    doc = {"command": command, "version": __version__, "seed": args.seed}
    if extra:
        doc.update(extra)
    doc["results"] = rows
    if not args.no_timestamp:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit(command: str, rows: list[dict], columns: list[str], args, extra: dict | None = None) -> None:
    if args.pretty:
        text = to_table(rows, columns)
        if extra:
            text = "".join(f"{k}: {_fmt(v)}\n" for k, v in sorted(extra.items())) + text
    elif args.format == "json":
        text = to_json_doc(command, rows, args, extra)
    else:
        text = to_csv(rows, columns)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands ------------------------------------------------------------------


def cmd_theory(args) -> int:
    cfg = ExperimentConfig.from_args(args)
    if cfg.K_list is None:
        raise UsageError("theory needs --K")
    rows = []
    for scheme, N, K, delta, L in itertools.product(cfg.schemes, cfg.N_list, cfg.K_list, cfg.delta_list, cfg.L_list):
        spec = cfg.spec(scheme, K, N)
        relay = cfg.relay_for(scheme)
        res = scheme_plr(spec, ChannelSpec(delta, L), relay, cfg.rank_model, literal=args.literal)
        rows.append(res.to_json())
    emit("theory", rows, THEORY_COLUMNS, args)
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = ExperimentConfig.from_args(args)
    if args.evaluator == "theory" and cfg.relay_mode == "recode" and any(L > 1 for L in cfg.L_list):
        raise UsageError("recode relays have no closed form; use --evaluator sim")
    rows = []
    for scheme, delta, L, pe in itertools.product(cfg.schemes, cfg.delta_list, cfg.L_list, cfg.pe_list):
        relay = cfg.relay_for(scheme)
        base = CodeSpec(scheme, 2, max(3, cfg.N_list[0]), cfg.m, cfg.column_policy)
        sweep = optimize_sweep(
            scheme, cfg.N_list, ChannelSpec(delta, L), pe, args.evaluator, base,
            cfg.rounds, cfg.seed, relay, cfg.rank_model, cfg.workers,
        )
        for r in sweep:
            row = r.csv_row()
            row.update(delta=delta, L=L, pe_target=pe)
            for k in ("rho_star", "plr", "R_star"):
                row[k] = None if row[k] == "NA" else float(row[k])
            for k in ("K_star", "iterations"):
                row[k] = None if row[k] == "NA" else int(row[k])
            if row["evaluator"] == "NA":
                row["evaluator"] = None
            if r.error:
                row["error"] = r.error
            rows.append(row)
    emit("optimize", rows, OPTIMIZE_COLUMNS, args)
    if all(r["K_star"] is None for r in rows):
        return EXIT_INFEASIBLE
    return EXIT_OK


def _sim_config(cfg: ExperimentConfig, scheme: Scheme, K: int, N: int, delta: float, L: int, args) -> SimConfig:
    try:
        return SimConfig(
            cfg.spec(scheme, K, N), ChannelSpec(delta, L), cfg.rounds, cfg.seed,
            cfg.relay_for(scheme), slot_duration_ms=getattr(args, "slot_ms", 4.8), workers=cfg.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_args(args)
    if cfg.K_list is None:
        raise UsageError("simulate needs --K")
    rows = []
    configs = []
    for scheme, N, K, delta, L in itertools.product(cfg.schemes, cfg.N_list, cfg.K_list, cfg.delta_list, cfg.L_list):
        configs.append(_sim_config(cfg, scheme, K, N, delta, L, args))
    failed = False
    for sc in configs:
        row = simulate(sc).to_json()
        if args.check_theory:
            row["theory_check"] = check_theory(sc, row, cfg.rank_model)
            failed |= row["theory_check"].get("pass") is False
        rows.append(row)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for sc in configs:
                for line in iter_trace(sc):
                    fh.write(line + "\n")
    emit("simulate", rows, SIMULATE_COLUMNS, args)
    return EXIT_FAIL if failed else EXIT_OK


def check_theory(config: SimConfig, row: dict, rank_model: RankModel | None) -> dict:
    """Single-hop closed form versus the estimate, at 3 standard errors."""
    if config.channel.L != 1:
        return {"applicable": False, "reason": "closed form is exact only for one hop"}
    theo = scheme_plr(config.code, config.channel, config.relay_mode, rank_model).end_to_end_plr
    se = row["plr_se"]
    z = 0.0 if row["plr"] == theo else (math.inf if se == 0 else (row["plr"] - theo) / se)
    return {"applicable": True, "theory_plr": theo, "z": z, "pass": abs(z) <= 3.0}


def _k_star(spec: CodeSpec, channel: ChannelSpec, pe0: float, kind: str, rounds: int, seed: int,
            relay: str | None, workers: int):
    grid = RateGrid.for_scheme(spec.scheme, spec.N)
    if kind == "theory":
        ev = theory_evaluator(spec, channel, relay)
    else:
        ev = sim_evaluator(spec, channel, rounds, seed, relay, workers)
    return optimize_rate(grid, pe0, ev, kind)


def cmd_usecase(args) -> int:
    cfg = ExperimentConfig.from_args(args)
    if args.M < 1 or args.bitrate_kbps <= 0:
        raise UsageError("--M and --bitrate-kbps must be positive")
    if args.evaluator == "theory" and args.snc_relay_mode == "recode":
        raise UsageError("recode relays have no closed form; use --evaluator sim")
    N, delta, pe0 = cfg.N_list[0], cfg.delta_list[0], cfg.pe_list[0]
    pascal = cfg.schemes[0]
    if not pascal.is_pascal:
        raise UsageError("usecase compares a Pascal scheme against SNC")
    slot_ms = args.M * 8 / args.bitrate_kbps
    rows = []
    for L in cfg.L_list:
        channel = ChannelSpec(delta, L)
        base_p = cfg.spec(pascal, 2, N)
        base_s = CodeSpec(Scheme.SNC, 1, N, cfg.m)
        op = _k_star(base_p, channel, pe0, args.evaluator, cfg.rounds, cfg.seed, None, cfg.workers)
        os_ = _k_star(base_s, channel, pe0, args.evaluator, cfg.rounds, cfg.seed, args.snc_relay_mode, cfg.workers)
        row = {"L": L, "K_pascal": op.K_star, "K_snc": os_.K_star}
        if op.empty or os_.empty:
            rows.append(row)
            continue
        a = SimConfig(base_p.with_K(op.K_star), channel, cfg.rounds, cfg.seed, None, slot_ms, workers=cfg.workers)
        b = SimConfig(base_s.with_K(os_.K_star), channel, cfg.rounds, cfg.seed, args.snc_relay_mode, slot_ms,
                      workers=cfg.workers)
        cmp = compare_schemes(a, b)
        coef = replace(base_s.with_K(os_.K_star), signaling="coefficients")
        row.update(
            R_pascal=cmp.rate_a, R_snc=cmp.rate_b,
            rate_gain_pct=cmp.rate_gain_pct, rate_gain_lo=cmp.rate_gain_ci[0], rate_gain_hi=cmp.rate_gain_ci[1],
            delay_pascal_slots=cmp.delay_a, delay_snc_slots=cmp.delay_b,
            delay_pascal_ms=None if cmp.delay_a is None else cmp.delay_a * slot_ms,
            delay_snc_ms=None if cmp.delay_b is None else cmp.delay_b * slot_ms,
            delay_increase_pct=cmp.delay_increase_pct,
            delay_increase_lo=None if cmp.delay_increase_ci is None else cmp.delay_increase_ci[0],
            delay_increase_hi=None if cmp.delay_increase_ci is None else cmp.delay_increase_ci[1],
            overhead_seeds_pct=signaling_overhead(base_s.with_K(os_.K_star), L, args.M),
            overhead_coefficients_pct=signaling_overhead(coef, L, args.M),
            overhead_pascal_pct=signaling_overhead(base_p.with_K(op.K_star), L, args.M),
        )
        if args.max_delay_ms is not None:
            row["pascal_within_delay"] = row["delay_pascal_ms"] is not None and row["delay_pascal_ms"] <= args.max_delay_ms
            row["snc_within_delay"] = row["delay_snc_ms"] is not None and row["delay_snc_ms"] <= args.max_delay_ms
        rows.append(row)
    extra = {
        "slot_duration_ms": slot_ms, "N": N, "delta": delta, "pe_target": pe0, "M": args.M,
        "pascal_scheme": pascal.value, "snc_relay_mode": args.snc_relay_mode, "evaluator": args.evaluator,
    }
    if args.format != "json" and not args.pretty:
        sys.stderr.write(f"slot duration {slot_ms:g} ms\n")
    emit("usecase", rows, USECASE_COLUMNS, args, extra)
    if all(r.get("K_pascal") is None and r.get("K_snc") is None for r in rows):
        return EXIT_INFEASIBLE
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"pascalnc: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
