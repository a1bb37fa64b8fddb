"""Timeslotted Monte Carlo simulation of a line network of erasure links.

One round is one generation.  The source sends the N generator columns in
order, one per slot.  Every link erases each transmission independently.
Relay disciplines:

* ``decode_reencode`` (Pascal default): decode progressively while the N
  receive slots run, then re-send the same codeword over the next N slots,
  withholding columns that touch unrecovered packets.
* ``forward`` (random default): retransmit each received packet in the
  next slot, unchanged.
* ``recode``: buffer the generation, then send N random combinations of the
  buffer over the next N slots.

Delay: packet j is released in order at the first slot where it and every
earlier packet are recovered.  When the destination's reception window for
the generation closes, packets blocked only by permanently lost
predecessors are released at that closing slot.  Slot 1 is the first source
transmission.

Random streams derive from ``(master_seed, round_index)`` so every round is
reproducible on its own and results do not depend on the worker count.
Erasure draws are indexed by (link, column) and therefore shared across
rates, erasure probabilities and path lengths (common random numbers).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .codes import Code, CodeSpec, Generation, encode, make_code, random_code
from .gf import GF, DecoderState, field_new, mat_mul, span_basis, span_recovered
from .theory import ChannelSpec

DEFAULT_SLOT_MS = 4.8
RELAY_MODES = ("decode_reencode", "forward", "recode")

_ERASURE, _CODE, _RELAY, _DATA = 0, 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    code: CodeSpec
    channel: ChannelSpec = ChannelSpec()
    rounds: int = 10_000
    master_seed: int = 0
    relay_mode: str | None = None
    slot_duration_ms: float = DEFAULT_SLOT_MS
    payload_symbols: int = 0  # 0 tracks coefficients only
    workers: int = 1
    keep_rounds: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")
        mode = self.relay_mode
        if mode is None:
            mode = "decode_reencode" if self.code.scheme.is_pascal else "forward"
        if mode not in RELAY_MODES:
            raise ValueError(f"unknown relay mode {mode!r}")
        if self.code.scheme.is_pascal and mode == "recode":
            raise ValueError("recode relays apply to random schemes only")
        if not self.code.scheme.is_pascal and mode == "decode_reencode":
            raise ValueError("decode_reencode relays apply to Pascal schemes only")
        object.__setattr__(self, "relay_mode", mode)


@dataclass
class RoundOutcome:
    decoded_count_per_hop: list[int]
    delivered_indices: list[int]
    inorder_release_slot: dict[int, int]
    trace: list[dict] = field(default_factory=list)

    @property
    def delay_sum(self) -> int:
        return sum(self.inorder_release_slot.values())


@dataclass
class SimResult:
    plr_hat: float
    plr_se: float
    R_hat: float
    mean_inorder_delay_slots: float | None
    delivered_fraction: float
    rounds: int
    seed: int
    slot_duration_ms: float
    mean_decoded_per_hop: list[float]
    scheme: str = ""
    K: int = 0
    N: int = 0
    L: int = 1
    delta: float = 0.0
    relay_mode: str = ""
    per_round: dict | None = field(default=None, repr=False)

    @property
    def mean_inorder_delay_ms(self) -> float | None:
        if self.mean_inorder_delay_slots is None:
            return None
        return self.mean_inorder_delay_slots * self.slot_duration_ms

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "K": self.K,
            "N": self.N,
            "L": self.L,
            "delta": self.delta,
            "relay_mode": self.relay_mode,
            "rounds": self.rounds,
            "seed": self.seed,
            "plr": self.plr_hat,
            "plr_se": self.plr_se,
            "R": self.R_hat,
            "delivered_fraction": self.delivered_fraction,
            "mean_delay_slots": self.mean_inorder_delay_slots,
            "mean_delay_ms": self.mean_inorder_delay_ms,
            "slot_duration_ms": self.slot_duration_ms,
            "mean_decoded_per_hop": self.mean_decoded_per_hop,
        }


def _rng(config: SimConfig, round_index: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([config.master_seed, round_index, *stream])


class _Receiver:
    """A node's decoder plus in-order release bookkeeping."""

    def __init__(self, gf: GF, K: int, M: int, track_release: bool):
        self.dec = DecoderState(gf, K, M)
        self.K = K
        self.track = track_release
        self.next = 0
        self.release: dict[int, int] = {}
        self.decoded_at: dict[int, int] = {}

    def receive(self, coeff, payload, slot: int) -> list[int]:
        if self.dec.complete:
            return []
        before = self.dec.recovered_mask if self.track else None
        if not self.dec.absorb(coeff, payload if self.dec.M else None):
            return []
        if not self.track:
            return []
        new = np.flatnonzero(self.dec.recovered_mask & ~before).tolist()
        for j in new:
            self.decoded_at[j] = slot
        rec = self.dec._recovered
        while self.next < self.K and rec[self.next]:
            self.release[self.next] = slot
            self.next += 1
        return new

    def close(self, slot: int) -> None:
        rec = self.dec._recovered
        for j in range(self.next, self.K):
            if rec[j] and j not in self.release:
                self.release[j] = slot


def _source_code(config: SimConfig, gf: GF, round_index: int) -> Code:
    spec = config.code
    if spec.scheme.is_pascal:
        return make_code(spec, gf)
    seed = int(_rng(config, round_index, _CODE).integers(2**62))
    return random_code(gf, spec, seed)


def run_round(config: SimConfig, round_index: int, trace: bool = False) -> RoundOutcome:
    """Simulate one generation end to end."""
    spec = config.code
    gf = field_new(spec.m)
    K, N = spec.K, spec.N
    deltas = config.channel.deltas
    L = len(deltas)
    M = config.payload_symbols
    code = _source_code(config, gf, round_index)
    erased = _rng(config, round_index, _ERASURE).random((L, N)) < np.asarray(deltas)[:, None]
    if M:
        X = gf.random((M, K), _rng(config, round_index, _DATA))
        tx = encode(gf, Generation(X, round_index), code)
        payloads = [p.payload for p in tx]
    else:
        X = None
        payloads = [None] * N
    events: list[dict] = []

    # transmissions of the current hop: list of (column t, slot, coeff, payload)
    sending = [(t, t + 1, code.G[:, t], payloads[t]) for t in range(N)]
    start = 1
    decoded_counts: list[int] = []
    mode = config.relay_mode
    for h in range(L):
        last = h == L - 1
        # relays that are not traced only need their final span
        batch = not (last or trace or M)
        received = [s for s in sending if not erased[h, s[0]]]
        if batch:
            basis, pivots = span_basis(gf, [s[2] for s in received], K)
            have = span_recovered(basis, pivots, K)
        else:
            node = _Receiver(gf, K, M, track_release=last or trace)
            for t, slot, coeff, payload in sending:
                if trace:
                    events.append({"round": round_index, "hop": h, "slot": slot, "event": "tx", "packet": t})
                if erased[h, t]:
                    if trace:
                        events.append({"round": round_index, "hop": h, "slot": slot, "event": "erased", "packet": t})
                    continue
                new = node.receive(coeff, payload, slot)
                if trace:
                    for j in new:
                        events.append({"round": round_index, "hop": h, "slot": slot, "event": "decoded", "packet": j})
            have = node.dec._recovered
        if mode == "forward":
            close_slot = N + h
        else:
            close_slot = start + N - 1
        decoded_counts.append(int(have.sum()))
        if last:
            node.close(close_slot)
            break
        if mode == "forward":
            sending = [(t, slot + 1, coeff, payload) for t, slot, coeff, payload in received]
        elif mode == "decode_reencode":
            ok = ~(code.support & ~have[:, None]).any(axis=0)
            start += N
            if M:
                pay = {j: x for j, x in node.dec.recovered()}
                Xr = np.zeros((M, K), dtype=gf.dtype)
                for j, x in pay.items():
                    Xr[:, j] = x
                Y = mat_mul(gf, Xr, code.G)
            sending = [
                (t, start + t, code.G[:, t], Y[:, t] if M else None)
                for t in range(N)
                if ok[t]
            ]
        else:  # recode
            start += N
            if not batch:
                dec = node.dec
                order = np.argsort(dec._pivot_of_row[: dec.rank], kind="stable")
                basis = dec._coef[: dec.rank][order]
            r = basis.shape[0]
            if r == 0:
                sending = []
            else:
                # mixing the pivot-ordered RREF basis keeps both paths identical
                mix = gf.random((N, r), _rng(config, round_index, _RELAY, h))
                newC = mat_mul(gf, mix, basis)
                newP = mat_mul(gf, mix, dec._payload[: dec.rank][order]) if M else None
                sending = [
                    (t, start + t, newC[t], newP[t] if M else None) for t in range(N)
                ]
    delivered = node.dec.recovered_indices()
    if M:
        for j, x in node.dec.recovered():
            if not np.array_equal(x, X[:, j]):
                raise AssertionError(f"round {round_index}: packet {j} recovered with a wrong payload")
    release = {j: s for j, s in node.release.items()}
    if trace:
        for j in sorted(release):
            events.append(
                {"round": round_index, "hop": L - 1, "slot": release[j], "event": "released", "packet": j}
            )
    return RoundOutcome(decoded_counts, delivered, release, events)


# -- aggregation -------------------------------------------------------------


def _run_chunk(config: SimConfig, lo: int, hi: int) -> dict:
    n = hi - lo
    L = config.channel.L
    delivered = np.zeros(n, dtype=np.int64)
    tau_sum = np.zeros(n, dtype=np.int64)
    tau_cnt = np.zeros(n, dtype=np.int64)
    hop = np.zeros((n, L), dtype=np.int64)
    for i, r in enumerate(range(lo, hi)):
        out = run_round(config, r)
        delivered[i] = len(out.delivered_indices)
        tau_sum[i] = out.delay_sum
        tau_cnt[i] = len(out.inorder_release_slot)
        hop[i] = out.decoded_count_per_hop
    return {"delivered": delivered, "tau_sum": tau_sum, "tau_cnt": tau_cnt, "hop": hop}


def _chunks(rounds: int, parts: int) -> Iterator[tuple[int, int]]:
    size = max(1, math.ceil(rounds / parts))
    for lo in range(0, rounds, size):
        yield lo, min(rounds, lo + size)


def _collect(config: SimConfig) -> dict:
    if config.workers <= 1:
        return _run_chunk(config, 0, config.rounds)
    bounds = list(_chunks(config.rounds, config.workers * 4))
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        parts = list(pool.map(_run_chunk, [config] * len(bounds), *zip(*bounds)))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def summarize(config: SimConfig, data: dict) -> SimResult:
    """Aggregate per-round integer tallies (order-independent, exact sums)."""
    K = config.code.K
    n = config.rounds
    lost = K - data["delivered"]
    tot_lost = int(lost.sum())
    plr = tot_lost / (n * K)
    # variance of per-round loss fraction from exact integer sums
    ss = int((lost * lost).sum())
    var = max(0.0, (ss / n - (tot_lost / n) ** 2) / (K * K))
    se = math.sqrt(var / n)
    cnt = int(data["tau_cnt"].sum())
    delay = int(data["tau_sum"].sum()) / cnt if cnt else None
    res = SimResult(
        plr_hat=plr,
        plr_se=se,
        R_hat=config.code.rho * (1.0 - plr),
        mean_inorder_delay_slots=delay,
        delivered_fraction=1.0 - plr,
        rounds=n,
        seed=config.master_seed,
        slot_duration_ms=config.slot_duration_ms,
        mean_decoded_per_hop=[float(x) for x in data["hop"].mean(axis=0)],
        scheme=config.code.scheme.value,
        K=K,
        N=config.code.N,
        L=config.channel.L,
        delta=config.channel.delta,
        relay_mode=config.relay_mode,
    )
    if config.keep_rounds:
        res.per_round = data
    return res


def simulate(config: SimConfig) -> SimResult:
    return summarize(config, _collect(config))


def estimate_plr(config: SimConfig) -> SimResult:
    """PLR at the destination: 1 - delivered / (rounds * K), with standard error."""
    return simulate(config)


def measure_delay(config: SimConfig) -> SimResult:
    """Average in-order delay over delivered packets of all rounds."""
    return simulate(config)


def iter_trace(config: SimConfig) -> Iterator[str]:
    """Per-round event trace as JSON lines."""
    for r in range(config.rounds):
        for ev in run_round(config, r, trace=True).trace:
            yield json.dumps(ev, sort_keys=True)


# -- paired comparison ---------------------------------------------------------


@dataclass
class Comparison:
    rate_a: float
    rate_b: float
    rate_gain_pct: float
    rate_gain_ci: tuple[float, float]
    delay_a: float | None
    delay_b: float | None
    delay_increase_pct: float | None
    delay_increase_ci: tuple[float, float] | None
    result_a: SimResult = field(repr=False)
    result_b: SimResult = field(repr=False)

    def to_json(self) -> dict:
        return {
            "rate_a": self.rate_a,
            "rate_b": self.rate_b,
            "rate_gain_pct": self.rate_gain_pct,
            "rate_gain_ci": list(self.rate_gain_ci),
            "delay_a_slots": self.delay_a,
            "delay_b_slots": self.delay_b,
            "delay_increase_pct": self.delay_increase_pct,
            "delay_increase_ci": list(self.delay_increase_ci) if self.delay_increase_ci else None,
        }


def _ratio_ci(num: list[np.ndarray], den: list[np.ndarray], z: float) -> tuple[float, tuple[float, float]]:
    """Percent change of prod(sum num)/prod(sum den) with a delta-method CI on the log scale."""
    n = len(num[0])
    tot_n = [float(a.sum()) for a in num]
    tot_d = [float(a.sum()) for a in den]
    ratio = math.prod(tot_n) / math.prod(tot_d)
    psi = sum(a / t for a, t in zip(num, tot_n)) - sum(a / t for a, t in zip(den, tot_d))
    se = math.sqrt(float((psi**2).sum()) * n / max(n - 1, 1))
    lo, hi = ratio * math.exp(-z * se), ratio * math.exp(z * se)
    return 100.0 * (ratio - 1.0), (100.0 * (lo - 1.0), 100.0 * (hi - 1.0))


def compare_schemes(config_a: SimConfig, config_b: SimConfig, z: float = 1.96) -> Comparison:
    """Paired-seed rate gain and delay increase of ``a`` relative to ``b``."""
    if config_a.code.N != config_b.code.N or config_a.channel != config_b.channel:
        raise ValueError("compared configurations need the same N and channel")
    if config_a.rounds != config_b.rounds or config_a.master_seed != config_b.master_seed:
        raise ValueError("compared configurations need the same rounds and seed for pairing")
    ra = simulate(replace(config_a, keep_rounds=True))
    rb = simulate(replace(config_b, keep_rounds=True))
    da, db = ra.per_round, rb.per_round
    Ka, Kb = config_a.code.K, config_b.code.K
    # R = (K/N) * delivered/K = delivered/N per round; N is shared
    gain, gain_ci = _ratio_ci([da["delivered"]], [db["delivered"]], z)
    if Ka == Kb and np.array_equal(da["delivered"], db["delivered"]):
        gain_ci = (gain, gain)
    if da["tau_cnt"].sum() and db["tau_cnt"].sum():
        dinc, dinc_ci = _ratio_ci(
            [da["tau_sum"], db["tau_cnt"]], [da["tau_cnt"], db["tau_sum"]], z
        )
        if np.array_equal(da["tau_sum"], db["tau_sum"]) and np.array_equal(da["tau_cnt"], db["tau_cnt"]):
            dinc_ci = (dinc, dinc)
    else:
        dinc, dinc_ci = None, None
    return Comparison(
        ra.R_hat, rb.R_hat, gain, gain_ci,
        ra.mean_inorder_delay_slots, rb.mean_inorder_delay_slots, dinc, dinc_ci, ra, rb,
    )
