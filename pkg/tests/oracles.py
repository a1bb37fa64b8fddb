"""Independent reference implementations used only by the tests.

Nothing here touches the package's tables or elimination code: field
products are carryless multiplies, ranks come from minor expansion or
span enumeration, and loss distributions come from exact enumeration of
erasure patterns with rational arithmetic.
"""

from __future__ import annotations

import functools
import itertools
from fractions import Fraction


def clmul_mod(a: int, b: int, poly: int) -> int:
    """Carryless multiply then reduce modulo ``poly``."""
    m = poly.bit_length() - 1
    r = 0
    for i in range(b.bit_length()):
        if b >> i & 1:
            r ^= a << i
    for d in range(r.bit_length() - 1, m - 1, -1):
        if r >> d & 1:
            r ^= poly << (d - m)
    return r


def det_laplace(A, poly: int) -> int:
    """Determinant by cofactor expansion along the first row (char 2: no signs)."""
    n = len(A)
    if n == 0:
        return 1
    if n == 1:
        return A[0][0]
    total = 0
    for j in range(n):
        if A[0][j] == 0:
            continue
        minor = [row[:j] + row[j + 1 :] for row in A[1:]]
        total ^= clmul_mod(A[0][j], det_laplace(minor, poly), poly)
    return total


def rank_by_minors(A, poly: int) -> int:
    """Largest r with a nonzero r x r minor."""
    rows, cols = len(A), len(A[0]) if A else 0
    for r in range(min(rows, cols), 0, -1):
        for ri in itertools.combinations(range(rows), r):
            for ci in itertools.combinations(range(cols), r):
                sub = [[A[i][j] for j in ci] for i in ri]
                if det_laplace(sub, poly):
                    return r
    return 0


def span(rows, q: int, poly: int) -> set[tuple]:
    """Every vector in the row span, by enumerating all coefficient tuples."""
    K = len(rows[0]) if rows else 0
    out = set()
    for coefs in itertools.product(range(q), repeat=len(rows)):
        v = [0] * K
        for c, row in zip(coefs, rows):
            if c:
                v = [x ^ clmul_mod(c, y, poly) for x, y in zip(v, row)]
        out.add(tuple(v))
    return out


def recovered_by_span(rows, K: int, q: int, poly: int) -> set[int]:
    s = span(rows, q, poly)
    return {j for j in range(K) if tuple(int(i == j) for i in range(K)) in s}


# -- loss-distribution oracle --------------------------------------------------


def _rank_q(rows: list[list[Fraction]]) -> int:
    """Rank over the rationals by plain Gaussian elimination."""
    A = [list(r) for r in rows]
    rank = 0
    cols = len(A[0]) if A else 0
    for c in range(cols):
        piv = next((i for i in range(rank, len(A)) if A[i][c] != 0), None)
        if piv is None:
            continue
        A[rank], A[piv] = A[piv], A[rank]
        for i in range(len(A)):
            if i != rank and A[i][c] != 0:
                f = A[i][c] / A[rank][c]
                A[i] = [x - f * y for x, y in zip(A[i], A[rank])]
        rank += 1
    return rank


def generic_columns(K: int, N: int, scheduled: bool, seed: int = 1) -> list[list[Fraction]]:
    """Generator columns in transmission order with generic rational coefficients.

    Large pseudo-random integers make every square submatrix that can be
    nonsingular actually nonsingular, which is the ideal MDS assumption.
    Block: [I | C]. Scheduled: [I1 C1 I2 C2], C1 touching the first
    ceil(K/2) packets and C2 touching all of them.
    """
    import random

    rnd = random.Random(seed)

    def unit(j):
        return [Fraction(int(i == j)) for i in range(K)]

    def coded(support):
        return [Fraction(rnd.randint(1, 10**9)) if i < support else Fraction(0) for i in range(K)]

    if not scheduled:
        return [unit(j) for j in range(K)] + [coded(K) for _ in range(N - K)]
    K1 = -(-K // 2)
    nc1 = -(-(N - K) // 2)
    return (
        [unit(j) for j in range(K1)]
        + [coded(K1) for _ in range(nc1)]
        + [unit(j) for j in range(K1, K)]
        + [coded(K) for _ in range(N - K - nc1)]
    )


def recovered_count(received: list[list[Fraction]], K: int) -> int:
    """Packets j with e_j in the span of the received columns."""
    if not received:
        return 0
    base = _rank_q(received)
    count = 0
    for j in range(K):
        e = [Fraction(int(i == j)) for i in range(K)]
        if _rank_q(received + [e]) == base:
            count += 1
    return count


@functools.lru_cache(maxsize=None)
def recovery_table(K: int, N: int, scheduled: bool) -> dict[tuple[int, int], int]:
    """Number of erasure patterns with n packets received and z recovered."""
    cols = generic_columns(K, N, scheduled)
    table: dict[tuple[int, int], int] = {}
    for pattern in itertools.product((0, 1), repeat=N):
        got = [c for c, bit in zip(cols, pattern) if bit]
        key = (sum(pattern), recovered_count(got, K))
        table[key] = table.get(key, 0) + 1
    return table


def z_dist_enumerated(K: int, N: int, delta: Fraction, scheduled: bool) -> list[Fraction]:
    """Pr(Z = z) summed exactly over all 2^N erasure patterns."""
    p = 1 - delta
    probs = [Fraction(0)] * (K + 1)
    for (n, z), count in recovery_table(K, N, scheduled).items():
        probs[z] += count * p**n * delta ** (N - n)
    return probs


# -- multi-hop oracle for relays that withhold unsupported columns -------------


def recovered_by_rank(rows, K: int, poly: int) -> frozenset[int]:
    """Packets j whose unit vector lies in the row span (rank test)."""
    if not rows:
        return frozenset()
    r = rank_by_minors(rows, poly)
    unit = lambda j: [int(i == j) for i in range(K)]  # noqa: E731
    return frozenset(j for j in range(K) if rank_by_minors(rows + [unit(j)], poly) == r)


def withholding_line_plr(G, delta: Fraction, L: int, poly: int) -> list[Fraction]:
    """Exact end-to-end PLR after each of L hops.

    Each relay sends column t of G only when every packet with a nonzero
    coefficient in it was recovered; the recovered sets form a Markov chain
    over subsets of the K packets.
    """
    K, N = len(G), len(G[0])
    cols = [[G[i][t] for i in range(K)] for t in range(N)]

    @functools.lru_cache(maxsize=None)
    def step(S: frozenset) -> dict:
        ok = [t for t in range(N) if all(cols[t][i] == 0 or i in S for i in range(K))]
        out: dict = {}
        for pat in itertools.product((0, 1), repeat=len(ok)):
            p = Fraction(1)
            for e in pat:
                p *= delta if e else 1 - delta
            T = recovered_by_rank([cols[t] for t, e in zip(ok, pat) if not e], K, poly)
            out[T] = out.get(T, 0) + p
        return out

    dist = {frozenset(range(K)): Fraction(1)}
    plrs = []
    for _ in range(L):
        nxt: dict = {}
        for S, p in dist.items():
            for T, q in step(S).items():
                nxt[T] = nxt.get(T, 0) + p * q
        dist = nxt
        plrs.append(1 - sum(len(S) * p for S, p in dist.items()) / K)
    return plrs
