"""Closed-form decoded-packet distributions and packet loss rates.

A single hop sends a systematic generation of K information packets plus
N-K coded packets over a memoryless erasure link.  ``Z`` is the number of
the K information packets recovered at the receiving node; the hop's PLR is
``1 - E[Z]/K``.  Multi-hop Pascal codes compose hops with the product bound,
random codes with forwarding relays substitute the end-to-end
survival probability.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codes import CodeSpec, ScheduleSplit, Scheme

LOG_SPACE_ABOVE = 60


# -- channel / rank model types --------------------------------------------------


@dataclass(frozen=True)
class ChannelSpec:
    delta: float = 0.0
    L: int = 1
    per_link: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("a line network needs at least one link")
        if self.per_link is not None:
            object.__setattr__(self, "per_link", tuple(float(d) for d in self.per_link))
            if len(self.per_link) != self.L:
                raise ValueError(f"{len(self.per_link)} per-link deltas for L={self.L}")
        for d in self.deltas:
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"erasure probability {d} outside [0, 1]")

    @property
    def deltas(self) -> tuple[float, ...]:
        return self.per_link if self.per_link is not None else (float(self.delta),) * self.L

    @property
    def p(self) -> float:
        return 1.0 - self.delta


@dataclass(frozen=True)
class RankModel:
    """When does a set of received coded packets fill the missing dimensions?

    ``ideal_mds``: whenever there are at least as many as missing packets.
    ``random_q``: coefficients are uniform over GF(q), so e packets span d
    missing dimensions with probability prod_{j<d} (1 - q^-(e-j)).
    """

    kind: str = "ideal_mds"
    q: int | None = None

    def __post_init__(self):
        if self.kind not in ("ideal_mds", "random_q"):
            raise ValueError(f"unknown rank model {self.kind!r}")
        if self.kind == "random_q" and (self.q is None or self.q < 2):
            raise ValueError("random_q rank model needs q >= 2")

    @classmethod
    def parse(cls, text: "str | RankModel | None", default_q: int = 256) -> "RankModel":
        if isinstance(text, RankModel):
            return text
        if text is None or text == "ideal_mds" or text == "ideal":
            return IDEAL_MDS
        if text.startswith("random_q"):
            _, _, q = text.partition(":")
            return cls("random_q", int(q) if q else default_q)
        raise ValueError(f"unknown rank model {text!r}")

    def __str__(self) -> str:
        return self.kind if self.kind == "ideal_mds" else f"random_q:{self.q}"

    def full_rank(self, d: int, e: int) -> float:
        """Probability that e received coded packets recover d missing dimensions."""
        if d <= 0:
            return 1.0
        if e < d:
            return 0.0
        if self.kind == "ideal_mds":
            return 1.0
        return math.exp(sum(math.log1p(-float(self.q) ** -(e - j)) for j in range(d)))

    def not_full_rank(self, d: int, e: int) -> float:
        if d <= 0:
            return 0.0
        if e < d:
            return 1.0
        if self.kind == "ideal_mds":
            return 0.0
        return -math.expm1(sum(math.log1p(-float(self.q) ** -(e - j)) for j in range(d)))

    def rank_dist(self, d: int, e: int) -> np.ndarray:
        """Distribution of the rank of e coded packets restricted to d unknowns."""
        return self.rank_table(d, e)[e].copy()

    def rank_table(self, d: int, emax: int) -> np.ndarray:
        """Row e (0..emax) is the rank distribution over 0..d of e coded packets."""
        return _rank_table(self, d, emax)

    def full_rank_vec(self, d: int, n: int) -> np.ndarray:
        """full_rank(d, e) for e = 0..n as an array."""
        out = np.zeros(n + 1)
        if d <= 0:
            out[:] = 1.0
            return out
        if d > n:
            return out
        if self.kind == "ideal_mds":
            out[d:] = 1.0
            return out
        S = _log_full_cumsum(self.q, n)
        e = np.arange(d, n + 1)
        out[d:] = np.exp(S[e] - S[e - d])
        return out

    def not_full_rank_vec(self, d: int, n: int) -> np.ndarray:
        out = np.ones(n + 1)
        if d <= 0:
            out[:] = 0.0
            return out
        if d > n:
            return out
        if self.kind == "ideal_mds":
            out[d:] = 0.0
            return out
        S = _log_full_cumsum(self.q, n)
        e = np.arange(d, n + 1)
        out[d:] = -np.expm1(S[e] - S[e - d])
        return out


@functools.lru_cache(maxsize=64)
def _log_full_cumsum(q: int, n: int) -> np.ndarray:
    """S[k] = sum_{i=1..k} log(1 - q^-i), so a d-of-e full-rank factor is exp(S[e] - S[e-d])."""
    terms = np.log1p(-(float(q) ** -np.arange(1, n + 1, dtype=float)))
    S = np.concatenate([[0.0], np.cumsum(terms)])
    S.setflags(write=False)
    return S


@functools.lru_cache(maxsize=1024)
def _rank_table(model: "RankModel", d: int, emax: int) -> np.ndarray:
    T = np.zeros((emax + 1, d + 1))
    T[0, 0] = 1.0
    if model.kind == "ideal_mds":
        for e in range(1, emax + 1):
            T[e, min(d, e)] = 1.0
    else:
        # a new uniform vector leaves the current rank r with probability q^(r-d)
        stay = float(model.q) ** (np.arange(d + 1) - d)
        for e in range(1, emax + 1):
            prev = T[e - 1]
            T[e] = prev * stay
            T[e, 1:] += prev[:-1] * (1.0 - stay[:-1])
    T.setflags(write=False)
    return T


IDEAL_MDS = RankModel("ideal_mds")


def default_rank_model(scheme: Scheme | str, m: int = 8) -> RankModel:
    scheme = Scheme.parse(scheme)
    return IDEAL_MDS if scheme.is_pascal else RankModel("random_q", 1 << m)


# -- binomials ----------------------------------------------------------------


def binom_pmf(n: int, v: int, p: float) -> float:
    if n < 0 or not 0 <= v <= n:
        raise ValueError(f"binom_pmf needs 0 <= v <= n, got n={n}, v={v}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p == 0.0:
        return 1.0 if v == 0 else 0.0
    if p == 1.0:
        return 1.0 if v == n else 0.0
    if n <= LOG_SPACE_ABOVE:
        return math.comb(n, v) * p**v * (1.0 - p) ** (n - v)
    logc = math.lgamma(n + 1) - math.lgamma(v + 1) - math.lgamma(n - v + 1)
    return math.exp(logc + v * math.log(p) + (n - v) * math.log1p(-p))


def binom_tail(n: int, lo: int, p: float) -> float:
    """Pr(V >= lo) for V ~ bin(n, p)."""
    if n < 0 or not 0.0 <= p <= 1.0:
        raise ValueError(f"invalid binomial bin({n}, {p})")
    if lo <= 0:
        return 1.0
    if lo > n:
        return 0.0
    return min(1.0, math.fsum(binom_pmf(n, v, p) for v in range(lo, n + 1)))


@functools.lru_cache(maxsize=4096)
def _pmf_vec(n: int, p: float) -> np.ndarray:
    v = np.array([binom_pmf(n, k, p) for k in range(n + 1)])
    v.setflags(write=False)
    return v


# -- Z distributions ------------------------------------------------------------


@dataclass
class ZDistribution:
    probs: np.ndarray  # index z = 0..K
    scheme: str
    rank_model: str
    K: int
    N: int
    delta: float
    L: int = 1

    @property
    def mean(self) -> float:
        return math.fsum(self.probs * np.arange(self.K + 1))

    @property
    def plr(self) -> float:
        return plr_hop(self)

    @property
    def loss_variance(self) -> float:
        """Variance of the per-generation loss fraction 1 - Z/K."""
        frac = 1.0 - np.arange(self.K + 1) / self.K
        mu = math.fsum(self.probs * frac)
        return max(0.0, math.fsum(self.probs * (frac - mu) ** 2))

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "rank_model": self.rank_model,
            "K": self.K,
            "N": self.N,
            "delta": self.delta,
            "L": self.L,
            "probs": [float(x) for x in self.probs],
            "plr": self.plr,
        }


def _finish(probs: np.ndarray) -> np.ndarray:
    probs = np.clip(probs, 0.0, 1.0)
    probs[0] = max(0.0, 1.0 - math.fsum(probs[1:]))
    return probs


def _coded_success(n: int, p: float, rank_model: RankModel, dmax: int):
    """Arrays over needed dimensions d = 0..dmax: Pr(coded packets recover d) and its complement."""
    pmf = _pmf_vec(n, p)
    ok = np.empty(dmax + 1)
    fail = np.empty(dmax + 1)
    for d in range(dmax + 1):
        if d == 0:
            ok[d], fail[d] = 1.0, 0.0
            continue
        if d > n:
            ok[d], fail[d] = 0.0, 1.0
            continue
        ok[d] = math.fsum(pmf[d:] * rank_model.full_rank_vec(d, n)[d:])
        fail[d] = math.fsum(pmf[:d]) + math.fsum(pmf[d:] * rank_model.not_full_rank_vec(d, n)[d:])
    return np.clip(ok, 0.0, 1.0), np.clip(fail, 0.0, 1.0)


def z_dist_block(K: int, N: int, delta: float, rank_model: RankModel = IDEAL_MDS, L: int = 1) -> ZDistribution:
    """Decoded-packet distribution for the unscheduled systematic code [I | C].

    With U ~ bin(K, p) systematic and E ~ bin(N-K, p) coded arrivals the
    generation decodes iff the coded packets fill the K-U missing
    dimensions; otherwise exactly the U systematic packets are recovered.
    """
    if not 1 <= K < N:
        raise ValueError(f"need 1 <= K < N, got K={K}, N={N}")
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"erasure probability {delta} outside [0, 1]")
    p = 1.0 - delta
    pu = _pmf_vec(K, p)
    ok, fail = _coded_success(N - K, p, rank_model, K)
    probs = np.zeros(K + 1)
    for x in range(K):
        probs[x] = pu[x] * fail[K - x]
    probs[K] = math.fsum(pu[u] * ok[K - u] for u in range(K + 1))
    return ZDistribution(_finish(probs), "block", str(rank_model), K, N, delta, L)


@dataclass
class ScheduledTerms:
    """Intermediate quantities of the two-sub-block recursion (for inspection/tests)."""

    split: ScheduleSplit
    p_z1: np.ndarray  # Pr(Z1 = u1), u1 = 0..K1 (index K1: first sub-block decoded)
    cond: np.ndarray  # cond[u1, x] = Pr(Z = x | Z1 = u1)


def scheduled_terms(
    K: int, N: int, delta: float, rank_model: RankModel = IDEAL_MDS, literal: bool = False
) -> ScheduledTerms:
    """Pr(Z1 = u1) and Pr(Z = x | Z1 = u1) for the two-sub-block code.

    Sub-block 1: K1 systematic then nc1 coded packets over the first K1
    information packets.  Sub-block 2: K2 systematic then nc2 coded packets
    over all K.  If sub-block 1 fails on its own, full decoding needs the
    sub-block 2 coded packets to cover everything still missing.

    The conditional terms weight the sub-block 1 coded-arrival count by its
    distribution *given* that sub-block 1 failed.  ``literal=True`` instead
    uses the unconditioned pmf, which double-counts the failure event and
    no longer matches exhaustive enumeration.
    """
    if K < 2:
        raise ValueError("scheduled code needs K >= 2; use z_dist_block for K = 1")
    if not K < N:
        raise ValueError(f"need K < N, got K={K}, N={N}")
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"erasure probability {delta} outside [0, 1]")
    sp = ScheduleSplit.of(K, N)
    K1, K2, nc1, nc2 = sp.K1, sp.K2, sp.nc1, sp.nc2
    p = 1.0 - delta
    pu1, pu2, pe1 = _pmf_vec(K1, p), _pmf_vec(K2, p), _pmf_vec(nc1, p)
    ok2, fail2 = _coded_success(nc2, p, rank_model, K)

    p_z1 = np.zeros(K1 + 1)
    cond = np.zeros((K1 + 1, K + 1))
    dec1 = 0.0
    for u1 in range(K1 + 1):
        d1 = K1 - u1
        # weight of each sub-block-1 rank rho < d1 (sub-block 1 not decoded)
        R = rank_model.rank_table(d1, nc1)
        ok1 = math.fsum(pe1 * R[:, d1])
        w = np.array([math.fsum(pe1 * R[:, r]) for r in range(d1)]) if d1 else np.zeros(1)
        dec1 += pu1[u1] * ok1
        if d1 == 0:
            continue
        miss = math.fsum(w)
        p_z1[u1] = pu1[u1] * miss
        if miss == 0.0:
            continue
        cw = w if literal else w / miss
        # missing dimensions for each (u2, sub-block 1 rank rho)
        need = K - u1 - np.arange(K2 + 1)[:, None] - np.arange(d1)[None, :]
        full = (ok2[need] * cw).sum(axis=1)
        part = 1.0 - full if literal else (fail2[need] * cw).sum(axis=1)
        cond[u1, u1 : u1 + K2 + 1] = pu2 * part
        cond[u1, K] += math.fsum(pu2 * full)
    p_z1[K1] = dec1
    for u2 in range(K2 + 1):
        if u2 < K2:
            cond[K1, K1 + u2] = pu2[u2] * fail2[K2 - u2]
        cond[K1, K] += pu2[u2] * ok2[K2 - u2]
    return ScheduledTerms(sp, p_z1, cond)


def z_dist_scheduled(
    K: int,
    N: int,
    delta: float,
    rank_model: RankModel = IDEAL_MDS,
    literal: bool = False,
    L: int = 1,
) -> ZDistribution:
    """Decoded-packet distribution for the two-sub-block (scheduled) code.

    x < K1:        Pr(Z=x) = sum_{u1<=x} Pr(Z1=u1) Pr(Z=x | Z1=u1)
    K1 <= x < K:   same sum over u1 < K1, plus the Z1 = K1 term
    x = K:         sum over all u1 including Z1 = K1
    Pr(Z=0) is taken as the complement.
    """
    t = scheduled_terms(K, N, delta, rank_model, literal)
    K1 = t.split.K1
    probs = np.zeros(K + 1)
    for x in range(1, K1):
        probs[x] = math.fsum(t.p_z1[u1] * t.cond[u1, x] for u1 in range(x + 1))
    for x in range(K1, K + 1):
        probs[x] = math.fsum(t.p_z1[u1] * t.cond[u1, x] for u1 in range(K1)) + t.p_z1[K1] * t.cond[K1, x]
    kind = "scheduled-literal" if literal else "scheduled"
    return ZDistribution(_finish(probs), kind, str(rank_model), K, N, delta, L)


def z_dist(scheme: Scheme | str, K: int, N: int, delta: float, rank_model: RankModel | None = None, **kw) -> ZDistribution:
    scheme = Scheme.parse(scheme)
    rank_model = rank_model or default_rank_model(scheme)
    if scheme.scheduled:
        zd = z_dist_scheduled(K, N, delta, rank_model, **kw)
    else:
        zd = z_dist_block(K, N, delta, rank_model, **kw)
    zd.scheme = scheme.value
    return zd


# -- PLR -----------------------------------------------------------------------


def plr_hop(zdist: ZDistribution, K: int | None = None) -> float:
    """1 - E[Z]/K, summed as sum_z Pr(Z=z)(K-z)/K to keep small PLRs accurate."""
    K = zdist.K if K is None else K
    lost = (K - np.arange(K + 1)) / K
    return min(1.0, max(0.0, math.fsum(zdist.probs * lost)))


@dataclass
class PlrResult:
    per_hop_plr: list[float]
    end_to_end_plr: float | None
    is_upper_bound: bool
    needs_simulation: bool = False
    scheme: str = ""
    K: int = 0
    N: int = 0
    delta: float = 0.0
    L: int = 1
    probs: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "K": self.K,
            "N": self.N,
            "delta": self.delta,
            "L": self.L,
            "probs": self.probs,
            "per_hop_plr": self.per_hop_plr,
            "plr": self.end_to_end_plr,
            "is_upper_bound": self.is_upper_bound,
            "needs_simulation": self.needs_simulation,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def plr_line(per_hop: Sequence[float]) -> PlrResult:
    """Product-form bound 1 - prod_i (1 - P_i) for decode-and-forward hops."""
    per_hop = [float(x) for x in per_hop]
    for x in per_hop:
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"per-hop PLR {x} outside [0, 1]")
    # 1 - prod(1 - P_i) via log1p/expm1 so tiny per-hop values survive
    if any(x == 1.0 for x in per_hop):
        e2e = 1.0
    else:
        e2e = -math.expm1(math.fsum(math.log1p(-x) for x in per_hop))
    e2e = max(0.0, e2e, *per_hop)
    return PlrResult(per_hop, min(1.0, e2e), True, L=len(per_hop))


def plr_random_multihop(
    K: int,
    N: int,
    delta: "float | ChannelSpec",
    L: int = 1,
    relay_mode: str = "forward",
    rank_model: RankModel | None = None,
    scheduled: bool = False,
    m: int = 8,
) -> PlrResult:
    """PLR of a random code over L links whose relays forward without decoding.

    Forwarded packets survive the whole path independently with probability
    prod_i (1 - delta_i), so the destination sees a single hop with that
    survival probability.  Recoding relays have no closed form here:
    the result is flagged ``needs_simulation``.
    """
    channel = delta if isinstance(delta, ChannelSpec) else ChannelSpec(delta, L)
    rank_model = rank_model or RankModel("random_q", 1 << m)
    scheme = "snc-s" if scheduled else "snc"
    if relay_mode == "recode" and channel.L > 1:
        return PlrResult([], None, False, True, scheme, K, N, channel.delta, channel.L)
    if relay_mode not in ("forward", "recode"):
        raise ValueError(f"random codes support relay modes forward|recode, not {relay_mode!r}")
    survive = math.prod(1.0 - d for d in channel.deltas)
    d_eff = 1.0 - survive
    fn = z_dist_scheduled if scheduled else z_dist_block
    zd = fn(K, N, d_eff, rank_model, L=channel.L)
    plr = zd.plr
    return PlrResult([plr], plr, False, False, scheme, K, N, channel.delta, channel.L, [float(x) for x in zd.probs])


def scheme_plr(
    spec: CodeSpec,
    channel: ChannelSpec,
    relay_mode: str | None = None,
    rank_model: RankModel | None = None,
    literal: bool = False,
) -> PlrResult:
    """End-to-end closed-form PLR for any scheme over a line network."""
    scheme = spec.scheme
    rank_model = rank_model or default_rank_model(scheme, spec.m)
    if scheme.is_pascal:
        if relay_mode not in (None, "decode_reencode"):
            raise ValueError("Pascal schemes relay by decode_reencode")
        zds = {}
        per_hop = []
        for d in channel.deltas:
            if d not in zds:
                kw = {"literal": literal} if scheme.scheduled else {}
                zds[d] = z_dist(scheme, spec.K, spec.N, d, rank_model, **kw)
            per_hop.append(zds[d].plr)
        res = plr_line(per_hop)
        res.is_upper_bound = channel.L > 1
        res.probs = [float(x) for x in zds[channel.deltas[0]].probs]
    else:
        res = plr_random_multihop(
            spec.K, spec.N, channel, channel.L, relay_mode or "forward", rank_model, scheme.scheduled, spec.m
        )
    res.scheme = scheme.value
    res.K, res.N, res.delta, res.L = spec.K, spec.N, channel.delta, channel.L
    return res


def achievable_rate(rho: float, plr: float) -> float:
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rate {rho} outside (0, 1)")
    if not 0.0 <= plr <= 1.0:
        raise ValueError(f"PLR {plr} outside [0, 1]")
    return rho * (1.0 - plr)


def line_capacity(channel: ChannelSpec) -> float:
    return min(1.0 - d for d in channel.deltas)
