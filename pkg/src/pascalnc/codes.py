"""Pascal-matrix and systematic random linear codes.

Covers Pascal entries and column selection, generator construction for the
four schemes, the source encoder, Pascal decode-and-re-encode relays,
random recoding relays, and signaling overhead.
"""

from __future__ import annotations

import csv
import enum
import functools
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gf import GF, batch_nonsingular, field_new, mat_mul

MDS_EXHAUSTIVE_LIMIT = 100_000
MDS_SAMPLES = 100_000


class Scheme(str, enum.Enum):
    PASCALNC = "pascalnc"
    PASCALNC_S = "pascalnc-s"
    SNC = "snc"
    SNC_S = "snc-s"

    @property
    def is_pascal(self) -> bool:
        return self in (Scheme.PASCALNC, Scheme.PASCALNC_S)

    @property
    def scheduled(self) -> bool:
        return self in (Scheme.PASCALNC_S, Scheme.SNC_S)

    @classmethod
    def parse(cls, value: "str | Scheme") -> "Scheme":
        if isinstance(value, Scheme):
            return value
        key = value.strip().lower().replace("_", "-")
        for s in cls:
            if s.value == key:
                return s
        raise ValueError(f"unknown scheme {value!r}; choose from {[s.value for s in cls]}")


@dataclass(frozen=True)
class ColumnPolicy:
    """How Pascal columns are picked: ``sequential``, ``random`` or ``optimized``."""

    kind: str = "sequential"
    seed: int = 0
    budget: int = 8

    def __post_init__(self):
        if self.kind not in ("sequential", "random", "optimized"):
            raise ValueError(f"unknown column policy {self.kind!r}")
        if self.budget < 1:
            raise ValueError("optimized column policy needs budget >= 1")

    @classmethod
    def parse(cls, text: "str | ColumnPolicy") -> "ColumnPolicy":
        """``sequential`` | ``random[:seed]`` | ``optimized[:seed[:budget]]``."""
        if isinstance(text, ColumnPolicy):
            return text
        parts = text.split(":")
        kind = parts[0].strip().lower()
        seed = int(parts[1]) if len(parts) > 1 else 0
        budget = int(parts[2]) if len(parts) > 2 else 8
        return cls(kind, seed, budget)

    def __str__(self) -> str:
        if self.kind == "sequential":
            return "sequential"
        if self.kind == "random":
            return f"random:{self.seed}"
        return f"optimized:{self.seed}:{self.budget}"


@dataclass(frozen=True)
class ScheduleSplit:
    K1: int
    K2: int
    nc1: int
    nc2: int

    @classmethod
    def of(cls, K: int, N: int) -> "ScheduleSplit":
        K1 = -(-K // 2)
        nc1 = -(-(N - K) // 2)
        return cls(K1, K - K1, nc1, N - K - nc1)


@dataclass(frozen=True)
class CodeSpec:
    """Everything needed to rebuild a generator matrix.

    ``coeff_seed`` drives the random coefficients of SNC/SNC-S; Pascal
    schemes ignore it and use ``column_policy`` instead.
    """

    scheme: Scheme
    K: int
    N: int
    m: int = 8
    column_policy: ColumnPolicy = ColumnPolicy()
    signaling: str | None = None
    coeff_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        object.__setattr__(self, "column_policy", ColumnPolicy.parse(self.column_policy))
        if not 1 <= self.K < self.N:
            raise ValueError(f"need 1 <= K < N, got K={self.K}, N={self.N}")
        if self.scheme.scheduled and self.K < 2:
            raise ValueError("scheduled schemes need K >= 2")
        if not 1 <= self.m <= 16:
            raise ValueError("m must be in 1..16")
        if self.scheme.is_pascal and self.N - self.K > (1 << self.m):
            raise ValueError(f"N-K={self.N - self.K} exceeds the {1 << self.m} Pascal columns")
        sig = self.signaling
        if sig is None:
            sig = "none" if self.scheme.is_pascal else "seeds"
        if self.scheme.is_pascal and sig not in ("none", "column_ids"):
            raise ValueError(f"Pascal schemes signal 'none' or 'column_ids', not {sig!r}")
        if not self.scheme.is_pascal and sig not in ("seeds", "coefficients"):
            raise ValueError(f"random schemes signal 'seeds' or 'coefficients', not {sig!r}")
        object.__setattr__(self, "signaling", sig)

    @property
    def rho(self) -> float:
        return self.K / self.N

    @property
    def split(self) -> ScheduleSplit:
        return ScheduleSplit.of(self.K, self.N)

    def with_K(self, K: int) -> "CodeSpec":
        return CodeSpec(self.scheme, K, self.N, self.m, self.column_policy, self.signaling, self.coeff_seed)


@dataclass
class Packet:
    """One coded unit of a generation.

    ``column`` is the position in the generator (= transmission order),
    ``systematic`` the information index for uncoded packets.  ``descriptor``
    is what goes on the wire: a Pascal column id, a ``(seed, seq)`` pair, an
    explicit coefficient tuple, or None.
    """

    generation_id: int
    column: int
    coeff: np.ndarray
    payload: np.ndarray
    systematic: int | None = None
    descriptor: object = None
    tx_slot: int = 0


@dataclass
class Generation:
    X: np.ndarray  # M x K
    id: int = 0

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]


@dataclass
class Code:
    """A built generator plus per-column metadata."""

    spec: CodeSpec
    G: np.ndarray
    systematic: list  # info index per column, None for coded columns
    descriptors: list
    support: np.ndarray = field(repr=False)  # K x N bool, nonzero pattern of G

    @property
    def coded_columns(self) -> list[int]:
        return [t for t, s in enumerate(self.systematic) if s is None]


# -- Pascal matrix -----------------------------------------------------------


@functools.lru_cache(maxsize=64)
def _pascal_rows(q: int, rows: int) -> np.ndarray:
    """First ``rows`` rows of the q x q Pascal matrix mod q (integer recurrence)."""
    P = np.ones((rows, q), dtype=np.int64)
    for i in range(1, rows):
        P[i] = np.cumsum(P[i - 1]) % q
    P.setflags(write=False)
    return P


def pascal_entry(q: int, i: int, j: int) -> int:
    """C(i+j, j) mod q, via entry(i,j) = entry(i-1,j) + entry(i,j-1) mod q."""
    if not (0 <= i < q and 0 <= j < q):
        raise IndexError(f"Pascal index ({i}, {j}) outside 0..{q - 1}")
    return int(_pascal_rows(q, i + 1)[i, j])


def pascal_columns(gf: GF, K: int, col_ids: Sequence[int]) -> np.ndarray:
    """K x len(col_ids) matrix of the first K symbols of the chosen Pascal columns."""
    col_ids = list(col_ids)
    if not col_ids:
        raise ValueError("need at least one column id")
    bad = [c for c in col_ids if not 0 <= c < gf.q]
    if bad:
        raise IndexError(f"Pascal column ids out of range 0..{gf.q - 1}: {bad}")
    if K > gf.q:
        raise IndexError(f"K={K} exceeds Pascal matrix size {gf.q}")
    return _pascal_rows(gf.q, K)[:, col_ids].astype(gf.dtype)


def mds_score(
    gf: GF,
    C: np.ndarray,
    samples: int = MDS_SAMPLES,
    seed: int = 0,
    exhaustive_limit: int = MDS_EXHAUSTIVE_LIMIT,
) -> float:
    """Fraction of K x K column submatrices of [I | C] that are invertible.

    A submatrix with systematic columns S is invertible iff the square minor
    of C on the rows outside S and the chosen coded columns is, so only
    those minors are evaluated.  Exhaustive when C(N, K) <= limit.
    """
    K, n = C.shape
    N = K + n
    total = math.comb(N, K)
    good = 0
    if total <= exhaustive_limit:
        count = 0
        for r in range(0, min(K, n) + 1):
            rows = list(itertools.combinations(range(K), r))
            cols = list(itertools.combinations(range(n), r))
            pairs = len(rows) * len(cols)
            count += pairs
            if r == 0:
                good += pairs
                continue
            ri = np.array(rows)
            ci = np.array(cols)
            for start in range(0, len(ri), max(1, 20000 // len(ci))):
                rr = ri[start : start + max(1, 20000 // len(ci))]
                minors = C[rr[:, None, :, None], ci[None, :, None, :]].reshape(-1, r, r)
                good += int(batch_nonsingular(gf, minors).sum())
        assert count == total
        return good / total
    rng = np.random.default_rng([seed, K, n])
    picks = np.argsort(rng.random((samples, N)), axis=1)[:, :K]
    coded = picks >= K
    rsizes = coded.sum(axis=1)
    good = int((rsizes == 0).sum())
    for r in range(1, min(K, n) + 1):
        sel = np.flatnonzero(rsizes == r)
        if sel.size == 0:
            continue
        chosen = np.sort(picks[sel], axis=1)
        cols = chosen[:, K - r :] - K  # coded picks sort last
        has_sys = np.zeros((sel.size, K), dtype=bool)
        np.put_along_axis(has_sys, chosen[:, : K - r], True, axis=1)
        rows = np.nonzero(~has_sys)[1].reshape(sel.size, r)
        minors = C[rows[:, :, None], cols[:, None, :]]
        good += int(batch_nonsingular(gf, minors).sum())
    return good / samples


def select_columns(
    gf: GF, K: int, count: int, policy: ColumnPolicy | str = "sequential", exclude: Sequence[int] = ()
) -> list[int]:
    """Pascal column ids for ``count`` coded packets; ``exclude`` ids are never used."""
    policy = ColumnPolicy.parse(policy)
    excl = set(exclude)
    pool = [c for c in range(gf.q) if c not in excl]
    if count < 1:
        raise ValueError("need at least one coded column")
    if count > len(pool):
        raise ValueError(f"cannot pick {count} distinct columns from {len(pool)} available")
    return list(_select_cached(gf, K, count, policy, tuple(sorted(excl))))


@functools.lru_cache(maxsize=256)
def _select_cached(gf: GF, K: int, count: int, policy: ColumnPolicy, excl: tuple) -> tuple:
    # ids 1, 2, ... first; column 0 (all ones) last
    pool = np.array([c for c in [*range(1, gf.q), 0] if c not in set(excl)])
    if policy.kind == "sequential":
        return tuple(pool[:count].tolist())
    rng = np.random.default_rng([policy.seed, K, count])
    if policy.kind == "random":
        return tuple(sorted(rng.choice(pool, size=count, replace=False).tolist()))
    candidates = [tuple(pool[:count].tolist())]
    for _ in range(policy.budget):
        candidates.append(tuple(sorted(rng.choice(pool, size=count, replace=False).tolist())))
    best = None
    for cand in candidates:
        score = mds_score(gf, pascal_columns(gf, K, cand), seed=policy.seed)
        key = (-score, cand)
        if best is None or key < best:
            best = key
    return best[1]


# -- generators ----------------------------------------------------------------


def column_layout(spec: CodeSpec) -> tuple[list, list]:
    """Transmission order as (systematic info index or None, coded seq or None) per column."""
    K, N = spec.K, spec.N
    if spec.scheme.scheduled:
        sp = spec.split
        groups = [(range(sp.K1), range(sp.nc1)), (range(sp.K1, K), range(sp.nc1, N - K))]
    else:
        groups = [(range(K), range(N - K))]
    systematic, seqs = [], []
    for info, coded in groups:
        for j in info:
            systematic.append(j)
            seqs.append(None)
        for s in coded:
            systematic.append(None)
            seqs.append(s)
    return systematic, seqs


def random_coefficients(gf: GF, spec: CodeSpec, seed: int | None = None) -> np.ndarray:
    """(N-K) x K coefficient rows of a random scheme, row ``seq`` for coded packet ``seq``.

    Drawn from one stream seeded by ``seed`` (default ``spec.coeff_seed``);
    first-sub-block rows of SNC-S are zero beyond the first K1 entries.
    """
    seed = spec.coeff_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    C = rng.integers(0, gf.q, size=(spec.N - spec.K, spec.K)).astype(gf.dtype)
    if spec.scheme.scheduled:
        sp = spec.split
        C[: sp.nc1, sp.K1 :] = 0
    return C


def random_column(gf: GF, spec: CodeSpec, seq: int, seed: int | None = None) -> np.ndarray:
    """Coefficient vector of coded packet ``seq``, regenerated from (seed, seq)."""
    if not 0 <= seq < spec.N - spec.K:
        raise IndexError(f"coded sequence number {seq} out of range")
    return random_coefficients(gf, spec, seed)[seq]


def pascal_coefficients(gf: GF, spec: CodeSpec) -> tuple[np.ndarray, list[int]]:
    """(N-K) x K coefficient rows and column ids of a Pascal scheme."""
    ids = pascal_column_ids(spec, gf)
    K = spec.K
    C = np.zeros((spec.N - K, K), dtype=gf.dtype)
    if spec.scheme.scheduled:
        sp = spec.split
        C[: sp.nc1, : sp.K1] = pascal_columns(gf, sp.K1, ids[: sp.nc1]).T
        if sp.nc2:
            C[sp.nc1 :] = pascal_columns(gf, K, ids[sp.nc1 :]).T
    else:
        C[:] = pascal_columns(gf, K, ids).T
    return C, ids


def assemble_code(gf: GF, spec: CodeSpec, C: np.ndarray, descriptors: Sequence) -> Code:
    """Place identity and coded columns in transmission order."""
    systematic, seqs = column_layout(spec)
    G = np.zeros((spec.K, spec.N), dtype=gf.dtype)
    desc = []
    for t, (j, s) in enumerate(zip(systematic, seqs)):
        if j is not None:
            G[j, t] = 1
            desc.append(None)
        else:
            G[:, t] = C[s]
            desc.append(descriptors[s])
    G.setflags(write=False)
    return Code(spec, G, systematic, desc, G != 0)


def make_code(spec: CodeSpec, gf: GF | None = None) -> Code:
    gf = gf or field_new(spec.m)
    if gf.m != spec.m:
        raise ValueError("field does not match spec.m")
    return _make_code(spec, gf)


def random_code(gf: GF, spec: CodeSpec, seed: int) -> Code:
    """Uncached random-scheme code for a per-generation coefficient seed."""
    C = random_coefficients(gf, spec, seed)
    desc = [(seed, s) for s in range(spec.N - spec.K)]
    if spec.signaling == "coefficients":
        desc = [tuple(int(v) for v in row) for row in C]
    return assemble_code(gf, spec, C, desc)


@functools.lru_cache(maxsize=512)
def _make_code(spec: CodeSpec, gf: GF) -> Code:
    if spec.scheme.is_pascal:
        C, ids = pascal_coefficients(gf, spec)
        desc = [None if spec.signaling == "none" else int(c) for c in ids]
        return assemble_code(gf, spec, C, desc)
    return random_code(gf, spec, spec.coeff_seed)


def build_generator(spec: CodeSpec, gf: GF | None = None) -> np.ndarray:
    """K x N generator; column order is transmission order."""
    return make_code(spec, gf).G


def pascal_column_ids(spec: CodeSpec, gf: GF | None = None) -> list[int]:
    """Column ids a Pascal spec draws, in generator order."""
    gf = gf or field_new(spec.m)
    if not spec.scheme.is_pascal:
        raise ValueError("column ids exist only for Pascal schemes")
    if spec.scheme.scheduled:
        sp = spec.split
        first = select_columns(gf, sp.K1, sp.nc1, spec.column_policy)
        second = select_columns(gf, spec.K, sp.nc2, spec.column_policy, exclude=first) if sp.nc2 else []
        return first + second
    return select_columns(gf, spec.K, spec.N - spec.K, spec.column_policy)


# -- encoding / relaying ------------------------------------------------------


def encode(gf: GF, gen: Generation, code: Code) -> list[Packet]:
    """X' = X G, one packet per generator column, tx_slot = position (1-based)."""
    G = code.G
    if gen.X.ndim != 2 or gen.X.shape[1] != G.shape[0]:
        raise ValueError(f"generation is {gen.X.shape}, generator has K={G.shape[0]}")
    Y = mat_mul(gf, gen.X, G)
    return [
        Packet(gen.id, t, G[:, t].copy(), Y[:, t].copy(), code.systematic[t], code.descriptors[t], t + 1)
        for t in range(G.shape[1])
    ]


def reencode_pascal(
    gf: GF, code: Code, recovered: Sequence[tuple[int, np.ndarray]], generation_id: int = 0
) -> list[Packet | None]:
    """Relay output for a (partially) decoded generation.

    Same generator as the source; a column is sent only if every packet it
    touches with a nonzero coefficient was recovered.  Withheld columns are
    None (idle slots).
    """
    K, N = code.G.shape
    rec = dict(recovered)
    bad = [j for j in rec if not 0 <= j < K]
    if bad:
        raise IndexError(f"unknown packet indices {bad}")
    have = np.zeros(K, dtype=bool)
    have[list(rec)] = True
    sendable = ~(code.support & ~have[:, None]).any(axis=0)
    M = len(next(iter(rec.values()))) if rec else 0
    X = np.zeros((M, K), dtype=gf.dtype)
    for j, x in rec.items():
        X[:, j] = x
    out: list[Packet | None] = []
    for t in range(N):
        if not sendable[t]:
            out.append(None)
            continue
        col = code.G[:, t]
        payload = gf.combine(col[have], X[:, have].T) if M else np.zeros(0, dtype=gf.dtype)
        out.append(Packet(generation_id, t, col.copy(), payload, code.systematic[t], code.descriptors[t], t + 1))
    return out


def recode_random(gf: GF, buffer: Sequence[Packet], count: int, seed) -> list[Packet]:
    """``count`` uniformly random combinations of the buffered packets."""
    if not buffer:
        raise ValueError("cannot recode an empty buffer")
    rng = np.random.default_rng(seed)
    C = np.stack([p.coeff for p in buffer])
    P = np.stack([p.payload for p in buffer])
    R = gf.random((count, len(buffer)), rng)
    newC = mat_mul(gf, R, C)
    newP = mat_mul(gf, R, P) if P.shape[1] else np.zeros((count, 0), dtype=gf.dtype)
    gid = buffer[0].generation_id
    return [
        Packet(gid, -1, newC[i], newP[i], None, tuple(int(v) for v in newC[i]), 0) for i in range(count)
    ]


def signaling_symbols(spec: CodeSpec, L: int) -> int:
    if spec.scheme.is_pascal:
        if spec.signaling == "none":
            return 0
        return math.ceil(16 / spec.m)  # 2-byte column id
    return L if spec.signaling == "seeds" else spec.K


def signaling_overhead(spec: CodeSpec, L: int, M: int) -> float:
    """Coding overhead in percent of the M-symbol packet."""
    if M <= 0:
        raise ValueError("packet length M must be positive")
    return 100.0 * signaling_symbols(spec, L) / M


# -- CSV export ---------------------------------------------------------------


def generator_csv(G: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(G):
        w.writerow(int(v) for v in row)
    return buf.getvalue()


def read_generator_csv(text: str) -> np.ndarray:
    rows = [list(map(int, r)) for r in csv.reader(io.StringIO(text)) if r]
    return np.array(rows, dtype=np.int64)


def columns_csv(col_ids: Sequence[int]) -> str:
    return "position,column_id\n" + "".join(f"{i},{c}\n" for i, c in enumerate(col_ids))
