"""Arithmetic and dense linear algebra over GF(2^m).

Field elements are plain integers in ``0..q-1``; vectors and matrices are
numpy integer arrays.  Addition is XOR, multiplication goes through
log/antilog tables (plus a full product table when ``m <= 8``).
"""

from __future__ import annotations

import functools
from typing import Iterable

import numpy as np

# Lexicographically smallest primitive polynomial for each degree.
DEFAULT_POLYS = {
    1: 0x3,
    2: 0x7,
    3: 0xB,
    4: 0x13,
    5: 0x25,
    6: 0x43,
    7: 0x83,
    8: 0x11D,
    9: 0x211,
    10: 0x409,
    11: 0x805,
    12: 0x1053,
    13: 0x201B,
    14: 0x402B,
    15: 0x8003,
    16: 0x1002D,
}


class FieldError(ValueError):
    """Invalid field construction or a field-domain violation (e.g. inverse of 0)."""


class SingularMatrixError(FieldError):
    def __init__(self, rank: int, size: int):
        super().__init__(f"matrix is singular: rank {rank} < {size}")
        self.rank = rank


def _poly_str(poly: int) -> str:
    terms = []
    for d in range(poly.bit_length() - 1, -1, -1):
        if poly >> d & 1:
            terms.append("1" if d == 0 else "x" if d == 1 else f"x^{d}")
    return "+".join(terms)


def _poly_mod(a: int, b: int) -> int:
    db = b.bit_length()
    while a.bit_length() >= db:
        a ^= b << (a.bit_length() - db)
    return a


def _find_factor(poly: int, m: int) -> int | None:
    """Smallest nontrivial GF(2) factor of ``poly``, or None if irreducible."""
    for f in range(2, 1 << (m // 2 + 1)):
        if f.bit_length() - 1 > m // 2:
            break
        if _poly_mod(poly, f) == 0:
            return f
    return None


class GF:
    """GF(2^m) with reduction polynomial ``poly``.

    Immutable after construction; share freely between threads.
    """

    def __init__(self, m: int, poly: int | None = None):
        if not 1 <= m <= 16:
            raise FieldError(f"field exponent must be in 1..16, got {m}")
        if poly is None:
            poly = DEFAULT_POLYS[m]
        if poly.bit_length() - 1 != m:
            raise FieldError(f"polynomial {_poly_str(poly)} does not have degree {m}")
        factor = _find_factor(poly, m)
        if factor is not None:
            raise FieldError(
                f"polynomial {_poly_str(poly)} is reducible: divisible by {_poly_str(factor)} "
                f"({factor:#x})"
            )
        self.m = m
        self.q = 1 << m
        self.poly = poly
        self.dtype = np.uint8 if m <= 8 else np.uint16
        self.generator = self._find_generator()
        self._build_tables()

    def __repr__(self) -> str:
        return f"GF(2^{self.m}, poly={self.poly:#x})"

    def __eq__(self, other) -> bool:
        return isinstance(other, GF) and (self.m, self.poly) == (other.m, other.poly)

    def __hash__(self) -> int:
        return hash((self.m, self.poly))

    def __reduce__(self):
        return (field_new, (self.m, self.poly))

    # -- construction ----------------------------------------------------

    def _slow_mul(self, a: int, b: int) -> int:
        r = 0
        while b:
            if b & 1:
                r ^= a
            b >>= 1
            a <<= 1
            if a & self.q:
                a ^= self.poly
        return r

    def _find_generator(self) -> int:
        # For a primitive poly this is 2 (the class of x); irreducible but
        # non-primitive polys fall back to the smallest element of full order.
        order = self.q - 1
        for g in range(2 if self.q > 2 else 1, self.q):
            x, k = g, 1
            while x != 1:
                x = self._slow_mul(x, g)
                k += 1
            if k == order:
                return g
        raise FieldError(f"no generator found for {_poly_str(self.poly)}")  # pragma: no cover

    def _build_tables(self) -> None:
        n = self.q - 1
        exp = np.zeros(2 * n + 1, dtype=np.int64)
        log = np.zeros(self.q, dtype=np.int64)
        x = 1
        for i in range(n):
            exp[i] = x
            log[x] = i
            x = self._slow_mul(x, self.generator)
        exp[n : 2 * n] = exp[:n]
        self.exp_table = exp
        self.log_table = log
        inv = np.zeros(self.q, dtype=np.int64)
        inv[1:] = exp[(n - log[1:]) % n]
        self.inv_table = inv
        if self.m <= 8:
            a = np.arange(self.q)
            prod = exp[(log[a][:, None] + log[a][None, :])]
            prod[0, :] = 0
            prod[:, 0] = 0
            self.mul_table = prod.astype(self.dtype)
        else:
            self.mul_table = None
        for arr in (exp, log, inv):
            arr.setflags(write=False)

    # -- scalar / elementwise arithmetic --------------------------------

    @staticmethod
    def add(a, b):
        return a ^ b

    sub = add

    def mul(self, a, b):
        """Elementwise product; accepts ints or broadcastable arrays."""
        if self.mul_table is not None:
            out = self.mul_table[a, b]
            return int(out) if np.ndim(out) == 0 else out
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        out = np.where(
            (a == 0) | (b == 0), 0, self.exp_table[self.log_table[a] + self.log_table[b]]
        ).astype(self.dtype)
        return int(out) if out.ndim == 0 else out

    def inv(self, a):
        if np.any(np.asarray(a) == 0):
            raise FieldError("zero has no multiplicative inverse")
        out = self.inv_table[a]
        return int(out) if np.ndim(out) == 0 else out.astype(self.dtype)

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def pow(self, a: int, n: int) -> int:
        if a == 0:
            return 0 if n else 1
        return int(self.exp_table[(self.log_table[a] * n) % (self.q - 1)])

    # -- helpers ---------------------------------------------------------

    def asarray(self, data) -> np.ndarray:
        arr = np.asarray(data)
        if arr.size and (arr.min() < 0 or arr.max() >= self.q):
            raise FieldError(f"elements must lie in 0..{self.q - 1}")
        return arr.astype(self.dtype, copy=True)

    def random(self, shape, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.q, size=shape).astype(self.dtype)

    def scale_rows(self, coefs: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """``coefs[i] * rows[i]`` for each row."""
        return self.mul(np.asarray(coefs)[:, None], rows)

    def combine(self, coefs: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Linear combination ``sum_i coefs[i] * rows[i]``."""
        if len(coefs) == 0:
            return np.zeros(rows.shape[1:], dtype=self.dtype)
        return np.bitwise_xor.reduce(self.scale_rows(coefs, rows), axis=0)


@functools.lru_cache(maxsize=None)
def field_new(m: int, poly: int | None = None) -> GF:
    """Cached field constructor."""
    return GF(m, poly)


# -- matrices -------------------------------------------------------------


def identity(gf: GF, n: int) -> np.ndarray:
    return np.eye(n, dtype=gf.dtype)


def mat_mul(gf: GF, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ValueError(f"cannot multiply {A.shape} by {B.shape}")
    if gf.mul_table is not None and A.size * B.shape[1] <= 1 << 22:
        # one table lookup for all partial products, then xor over k
        prods = gf.mul_table[A[:, :, None], B[None, :, :]]
        return np.bitwise_xor.reduce(prods, axis=1) if A.shape[1] else np.zeros(
            (A.shape[0], B.shape[1]), dtype=gf.dtype
        )
    out = np.zeros((A.shape[0], B.shape[1]), dtype=gf.dtype)
    for k in range(A.shape[1]):
        out ^= gf.mul(A[:, k : k + 1], B[k : k + 1, :])
    return out


def rref(gf: GF, A: np.ndarray, aug: np.ndarray | None = None):
    """Reduced row-echelon form by Gauss-Jordan elimination.

    Returns ``(R, pivots)`` or ``(R, aug, pivots)`` when an augmented block
    is given; row operations are mirrored onto ``aug``.
    """
    R = np.array(A, dtype=gf.dtype)
    X = None if aug is None else np.array(aug, dtype=gf.dtype)
    rows, cols = R.shape
    mul = gf.mul_table if gf.mul_table is not None else None
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = R[r:, c].nonzero()[0]
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            R[[r, p]] = R[[p, r]]
            if X is not None:
                X[[r, p]] = X[[p, r]]
        s = int(gf.inv_table[R[r, c]])
        if s != 1:
            R[r] = mul[s, R[r]] if mul is not None else gf.mul(s, R[r])
            if X is not None:
                X[r] = gf.mul(s, X[r])
        col = R[:, c].copy()
        col[r] = 0
        hit = col.nonzero()[0]
        if hit.size:
            f = col[hit][:, None]
            R[hit] ^= mul[f, R[r]] if mul is not None else gf.mul(f, R[r][None, :])
            if X is not None:
                X[hit] ^= gf.mul(f, X[r][None, :])
        pivots.append(c)
        r += 1
    if X is None:
        return R, pivots
    return R, X, pivots


def span_basis(gf: GF, rows, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical basis of a row span: its RREF rows ordered by pivot, and the pivots.

    Scaled unit rows are split off first so that only the residual block
    goes through elimination.
    """
    A = np.asarray(rows, dtype=gf.dtype).reshape(-1, K)
    weight = np.count_nonzero(A, axis=1)
    units = A[weight == 1]
    known = np.zeros(K, dtype=bool)
    known[units.argmax(axis=1)] = True
    free = np.flatnonzero(~known)
    rest = A[weight > 1][:, free]
    rest = rest[rest.any(axis=1)]
    if rest.shape[0] and free.size:
        R, piv = rref(gf, rest)
        R = R[: len(piv)]
        piv = free[piv]
    else:
        R, piv = np.zeros((0, free.size), dtype=gf.dtype), free[:0]
    pivots = np.concatenate([np.flatnonzero(known), piv])
    basis = np.zeros((pivots.size, K), dtype=gf.dtype)
    n_known = int(known.sum())
    basis[np.arange(n_known), pivots[:n_known]] = 1
    basis[n_known:, free] = R
    order = np.argsort(pivots, kind="stable")
    return basis[order], pivots[order]


def span_recovered(basis: np.ndarray, pivots: np.ndarray, K: int) -> np.ndarray:
    """Mask of unit vectors lying in the span of an RREF basis."""
    mask = np.zeros(K, dtype=bool)
    mask[pivots[np.count_nonzero(basis, axis=1) == 1]] = True
    return mask


def mat_rank(gf: GF, A: np.ndarray) -> int:
    A = np.asarray(A)
    if A.size == 0:
        return 0
    return len(rref(gf, A)[1])


def mat_inverse(gf: GF, A: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError(f"inverse needs a square matrix, got {A.shape}")
    R, X, pivots = rref(gf, A, identity(gf, n))
    if len(pivots) < n:
        raise SingularMatrixError(len(pivots), n)
    return X


def batch_nonsingular(gf: GF, mats: np.ndarray) -> np.ndarray:
    """Invertibility flags for a stack of square matrices, shape (B, r, r)."""
    M = np.array(mats, dtype=gf.dtype)
    B, r, r2 = M.shape
    if r != r2:
        raise ValueError("batch_nonsingular needs square matrices")
    ok = np.ones(B, dtype=bool)
    idx = np.arange(B)
    for c in range(r):
        sub = M[:, c:, c]
        has = sub != 0
        ok &= has.any(axis=1)
        p = c + np.argmax(has, axis=1)
        swap = p != c
        if swap.any():
            s = idx[swap]
            tmp = M[s, c].copy()
            M[s, c] = M[s, p[swap]]
            M[s, p[swap]] = tmp
        piv = M[:, c, c].astype(np.int64)
        piv[piv == 0] = 1
        row = gf.mul(gf.inv_table[piv][:, None].astype(gf.dtype), M[:, c, :])
        if c + 1 < r:
            f = M[:, c + 1 :, c]
            M[:, c + 1 :, :] ^= gf.mul(f[:, :, None], row[:, None, :])
    return ok


# -- progressive decoding ----------------------------------------------------


_EMPTY = np.zeros(0, dtype=np.uint8)


class DecoderState:
    """Progressive Gauss-Jordan decoder for one generation.

    Stored rows are kept in reduced row-echelon form (each pivot column is a
    unit column among stored rows), so packet ``j`` is recovered exactly when
    some stored row equals ``e_j``.  Single-owner and not thread-safe.
    """

    def __init__(self, gf: GF, K: int, M: int = 0):
        self.gf = gf
        self.K = K
        self.M = M
        self._coef = np.zeros((K, K), dtype=gf.dtype)
        self._payload = np.zeros((K, M), dtype=gf.dtype)
        self._pivot_of_row = np.zeros(K, dtype=np.int64)
        self._row_of_pivot = np.full(K, -1, dtype=np.int64)
        self._rank = 0
        self._recovered = np.zeros(K, dtype=bool)

    @property
    def rank(self) -> int:
        return self._rank

    @property
    def complete(self) -> bool:
        return self._rank == self.K

    @property
    def pivot_cols(self) -> set[int]:
        return set(self._pivot_of_row[: self._rank].tolist())

    @property
    def reduced_rows(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (self._coef[i].copy(), self._payload[i].copy()) for i in range(self._rank)
        ]

    @property
    def recovered_mask(self) -> np.ndarray:
        return self._recovered.copy()

    def copy(self) -> "DecoderState":
        new = DecoderState.__new__(DecoderState)
        new.__dict__.update(self.__dict__)
        for name in ("_coef", "_payload", "_pivot_of_row", "_row_of_pivot", "_recovered"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def _check(self, coeff, payload):
        if payload is None and not self.M and type(coeff) is np.ndarray and coeff.shape == (self.K,):
            return coeff, _EMPTY
        coeff = np.asarray(coeff)
        if coeff.shape != (self.K,):
            raise ValueError(f"coefficient row must have length {self.K}, got {coeff.shape}")
        if payload is None:
            if self.M:
                raise ValueError(f"payload row of length {self.M} required")
            payload = np.zeros(0, dtype=self.gf.dtype)
        else:
            payload = np.asarray(payload)
            if payload.shape != (self.M,):
                raise ValueError(f"payload row must have length {self.M}, got {payload.shape}")
        return coeff, payload

    def _refresh_recovered(self, rows) -> None:
        piv = self._pivot_of_row[rows]
        unit = np.count_nonzero(self._coef[rows], axis=1) == 1
        self._recovered[piv[unit]] = True

    def absorb(self, coeff, payload=None) -> bool:
        """Add one received row; returns True if it increased the rank."""
        coeff, payload = self._check(coeff, payload)
        if self._rank == self.K:
            return False
        gf = self.gf
        nz = coeff.nonzero()[0]
        if nz.size == 1 and coeff[nz[0]] == 1 and self._row_of_pivot[nz[0]] < 0:
            return self._absorb_unit(int(nz[0]), payload)
        v = coeff.astype(gf.dtype, copy=True)
        x = payload.astype(gf.dtype, copy=True)
        r = self._rank
        if r:
            c = v[self._pivot_of_row[:r]]
            hit = c.nonzero()[0]
            if hit.size:
                v ^= np.bitwise_xor.reduce(gf.mul(c[hit][:, None], self._coef[hit]), axis=0)
                if self.M:
                    x ^= gf.combine(c[hit], self._payload[hit])
        nzv = v.nonzero()[0]
        if nzv.size == 0:
            return False
        p = int(nzv[0])
        s = int(gf.inv_table[v[p]])
        if s != 1:
            v = gf.mul(s, v)
            if self.M:
                x = gf.mul(s, x)
        col = self._coef[:r, p].copy()
        hit = col.nonzero()[0]
        if hit.size:
            self._coef[hit] ^= gf.mul(col[hit][:, None], v[None, :])
            if self.M:
                self._payload[hit] ^= gf.mul(col[hit][:, None], x[None, :])
        self._coef[r] = v
        self._payload[r] = x
        self._pivot_of_row[r] = p
        self._row_of_pivot[p] = r
        self._rank = r + 1
        self._refresh_recovered(np.append(hit, r))
        return True

    def _absorb_unit(self, j: int, payload: np.ndarray) -> bool:
        # e_j with j not yet a pivot: innovative; clear column j elsewhere.
        gf = self.gf
        r = self._rank
        col = self._coef[:r, j].copy()
        hit = col.nonzero()[0]
        if hit.size:
            self._coef[hit, j] = 0
            if self.M:
                self._payload[hit] ^= gf.mul(col[hit][:, None], payload[None, :])
        self._coef[r] = 0
        self._coef[r, j] = 1
        self._payload[r] = payload
        self._pivot_of_row[r] = j
        self._row_of_pivot[j] = r
        self._rank = r + 1
        self._recovered[j] = True
        self._refresh_recovered(hit)
        return True

    def recovered(self) -> list[tuple[int, np.ndarray]]:
        """``(packet_index, payload)`` for every packet in the row span, by index."""
        out = []
        for j in np.flatnonzero(self._recovered):
            out.append((int(j), self._payload[self._row_of_pivot[j]].copy()))
        return out

    def recovered_indices(self) -> list[int]:
        return np.flatnonzero(self._recovered).tolist()


def decoder_absorb(state: DecoderState, coeff_row, payload_row=None) -> tuple[DecoderState, bool]:
    innovative = state.absorb(coeff_row, payload_row)
    return state, innovative


def decoder_recovered(state: DecoderState) -> list[tuple[int, np.ndarray]]:
    return state.recovered()


def batch_decode(gf: GF, coeffs: Iterable, payloads: Iterable | None, K: int):
    """One-shot Gauss-Jordan on a received set: ``{index: payload}`` of recovered packets."""
    C = np.array(list(coeffs), dtype=gf.dtype).reshape(-1, K)
    if payloads is None:
        P = np.zeros((C.shape[0], 0), dtype=gf.dtype)
    else:
        P = np.array(list(payloads), dtype=gf.dtype).reshape(C.shape[0], -1)
    if C.shape[0] == 0:
        return {}
    R, X, pivots = rref(gf, C, P)
    out = {}
    for i, p in enumerate(pivots):
        if np.count_nonzero(R[i]) == 1:
            out[p] = X[i]
    return out
