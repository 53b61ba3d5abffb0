"""LWE-based homomorphic encryption over Z_q with q = w * a.

Two ciphertext forms are supported:

* ``Enc`` (:class:`CipherVec`): ``[(-A s + w m + e) mod q, A]`` for a vector
  message ``m``, shape ``n x (N+1)``.
* ``Enc2`` (:class:`CipherMat`): ``m R + Enc(0)`` for a scalar ``m``, shape
  ``digits_q*(N+1) x (N+1)``, where ``R`` is the power-of-ten gadget matrix.

``Enc2(m1) (*) Enc(m2) = D(Enc(m2)) Enc2(m1)`` decrypts to ``m1*m2`` while the
noise stays below ``w/2``.  Residues live in :mod:`secform.kernels` limb form
so that ``q = 10**22`` arithmetic stays exact without Python big ints in
the inner loops.

Randomness is injected: every sampling function accepts a
``numpy.random.Generator`` (or anything with a compatible ``integers``
method), an integer seed, or ``None`` for OS entropy.  Sampling is not
security grade.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import kernels as K
from .errors import InputNotCanonical, PlaintextOutOfRange, ShapeMismatch, SecformError

_MAX_ACCUM = 2**62


def _is_pow10(x: int) -> bool:
    if x < 1:
        return False
    while x % 10 == 0:
        x //= 10
    return x == 1


def _log10_exact(x: int) -> int:
    return len(str(x)) - 1


def as_rng(rng=None):
    """Return ``rng`` if it already samples, otherwise seed a numpy Generator."""
    if rng is None or isinstance(rng, (int, np.integer, np.random.SeedSequence)):
        return np.random.default_rng(rng)
    return rng


def in_signed_range(b: int, bound: int) -> bool:
    """Membership in [bound] = {b : -bound/2 <= b < bound/2}."""
    return -bound <= 2 * b < bound


@dataclass(frozen=True)
class LweParams:
    """Scheme parameters.  ``a``, ``q`` must be powers of ten with ``a | q``."""

    a: int
    q: int
    r: int
    N: int

    def __post_init__(self):
        for name in ("a", "q", "r", "N"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValueError(f"{name} must be an integer")
        if not (_is_pow10(self.a) and _is_pow10(self.q)):
            raise ValueError("a and q must be integer powers of 10")
        if self.q % self.a != 0 or self.q == self.a:
            raise ValueError("q must be a multiple w*a of a with w >= 10")
        if self.N < 1:
            raise ValueError("secret key length N must be >= 1")
        if not (1 <= self.r < self.w):
            raise ValueError("need 1 <= r < w")
        # exactness of the limb accumulators in kernels.matvec_mod
        if (self.N + 1) * self.n_limbs * (K.LIMB_BASE - 1) ** 2 >= _MAX_ACCUM:
            raise ValueError("N too large for exact int64 limb accumulation")

    @property
    def w(self) -> int:
        return self.q // self.a

    @cached_property
    def digits_q(self) -> int:
        return _log10_exact(self.q)

    @cached_property
    def n_limbs(self) -> int:
        return K.n_limbs(self.digits_q)

    @cached_property
    def top_mod(self) -> int:
        return K.top_modulus(self.digits_q)

    @property
    def error_range(self) -> tuple[int, int]:
        """Half-open integer interval ``[lo, hi)`` realizing the set [r]."""
        return -(self.r // 2), (self.r + 1) // 2

    @property
    def gadget_rows(self) -> int:
        return self.digits_q * (self.N + 1)


DEFAULT_PARAMS = LweParams(a=10**11, q=10**22, r=4, N=30)


@dataclass(frozen=True, eq=False)
class SecretKey:
    s: tuple[int, ...]
    params: LweParams

    def __post_init__(self):
        if len(self.s) != self.params.N:
            raise ShapeMismatch(f"key length {len(self.s)} != N={self.params.N}")
        if any(not (0 <= x < self.params.q) for x in self.s):
            raise InputNotCanonical("key entries must lie in [0, q)")

    @cached_property
    def extended_limbs(self) -> np.ndarray:
        """Limb form of col(1, s)."""
        ext = K.ints_to_limbs((1,) + tuple(self.s), self.params.n_limbs)
        ext.flags.writeable = False
        return ext

    @cached_property
    def limbs(self) -> np.ndarray:
        return self.extended_limbs[1:]

    def __eq__(self, other):
        return isinstance(other, SecretKey) and self.s == other.s and self.params == other.params

    def __hash__(self):
        return hash((self.s, self.params))


class _Cipher:
    form = ""

    def __init__(self, data: np.ndarray, params: LweParams):
        data = np.asarray(data, dtype=np.int64)
        if data.ndim != 3 or data.shape[1] != params.N + 1 or data.shape[2] != params.n_limbs:
            raise ShapeMismatch(f"bad ciphertext limb array shape {data.shape}")
        data.flags.writeable = False
        self.data = data
        self.params = params

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def values(self) -> list[list[int]]:
        """Entries as nested lists of Python ints in [0, q)."""
        flat = K.limbs_to_ints(self.data)
        c = self.params.N + 1
        return [flat[i * c:(i + 1) * c] for i in range(self.rows)]

    def __eq__(self, other):
        return (type(other) is type(self) and self.params == other.params
                and np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"{type(self).__name__}(rows={self.rows}, N={self.params.N}, q=10^{self.params.digits_q})"


class CipherVec(_Cipher):
    """``Enc`` ciphertext, ``n x (N+1)``; column 0 is the masked payload."""

    form = "Enc"

    def row(self, i: int) -> "CipherVec":
        return CipherVec(self.data[i:i + 1], self.params)


class CipherMat(_Cipher):
    """``Enc2`` ciphertext, ``digits_q*(N+1) x (N+1)``."""

    form = "Enc2"

    def __init__(self, data, params):
        super().__init__(data, params)
        if self.rows != params.gadget_rows:
            raise ShapeMismatch(f"Enc2 needs {params.gadget_rows} rows, got {self.rows}")


@dataclass(frozen=True)
class ErrorBudget:
    """Worst-case noise verdict for a homomorphic multiplication."""

    max_abs_injected_error: int
    context: str
    worst_case: Fraction = field(default=Fraction(0))
    limit: Fraction = field(default=Fraction(1, 2))

    @property
    def ok(self) -> bool:
        return self.worst_case < self.limit

    def __bool__(self):
        return self.ok


# ---------------------------------------------------------------------------


def _uniform_residues(rng, shape, params: LweParams) -> np.ndarray:
    # top_mod divides LIMB_BASE, so reducing the top limb keeps the draw uniform on [0, q)
    out = np.asarray(rng.integers(0, K.LIMB_BASE, size=shape + (params.n_limbs,)), dtype=np.int64)
    out[..., -1] %= params.top_mod
    return out


def keygen(params: LweParams, rng=None) -> SecretKey:
    rng = as_rng(rng)
    limbs = _uniform_residues(rng, (params.N,), params)
    return SecretKey(tuple(K.limbs_to_ints(limbs)), params)


def _check_plaintext(m: Sequence[int], params: LweParams) -> list[int]:
    out = [int(x) for x in m]
    for x in out:
        if not in_signed_range(x, params.a):
            raise PlaintextOutOfRange(f"{x} outside [a] for a={params.a}")
    return out


def _encrypt_limbs(m: list[int], sk: SecretKey, rng) -> np.ndarray:
    p = sk.params
    n = len(m)
    A = _uniform_residues(rng, (n, p.N), p)
    lo, hi = p.error_range
    e = np.asarray(rng.integers(lo, hi, size=n), dtype=np.int64)
    payload = np.zeros((n, p.n_limbs), dtype=np.int64)
    nz = [i for i, mi in enumerate(m) if mi]
    if nz:
        payload[nz] = K.ints_to_limbs([(p.w * m[i]) % p.q for i in nz], p.n_limbs)
    # signed error in the lowest limb; sub_mod normalizes
    payload[:, 0] += e
    As = K.matvec_mod(A, sk.limbs, p.top_mod)
    col0 = K.sub_mod(payload, As, p.top_mod)
    return np.concatenate([col0[:, None, :], A], axis=1)


def encrypt(m: Sequence[int] | int, sk: SecretKey, rng=None) -> CipherVec:
    """``Enc(m)``; a scalar ``m`` yields a single-row ciphertext."""
    if np.ndim(m) == 0:
        m = [m]
    m = _check_plaintext(m, sk.params)
    return CipherVec(_encrypt_limbs(m, sk, as_rng(rng)), sk.params)


def phase(C: CipherVec | CipherMat, sk: SecretKey) -> list[int]:
    """Centered representatives of ``C s_bar mod q``, i.e. ``w m + noise``."""
    p = C.params
    raw = K.limbs_to_ints(K.matvec_mod(C.data, sk.extended_limbs, p.top_mod))
    return [v - p.q if 2 * v >= p.q else v for v in raw]


def _round_div(c: int, w: int) -> int:
    # round half away from zero of c / w, exact
    mag = (2 * abs(c) + w) // (2 * w)
    return -mag if c < 0 else mag


def decrypt(C: CipherVec, sk: SecretKey) -> list[int]:
    """Round ``phase / w`` and reduce into ``[a]``.

    The reduction only matters at ``m = -a/2``: a negative noise term pushes
    the phase past ``-q/2`` and the centered value rounds to ``+a/2``.
    """
    w, a = C.params.w, C.params.a
    return [(_round_div(v, w) + a // 2) % a - a // 2 for v in phase(C, sk)]


def add(C1: CipherVec, C2: CipherVec) -> CipherVec:
    if type(C1) is not type(C2) or C1.data.shape != C2.data.shape or C1.params != C2.params:
        raise ShapeMismatch("add needs ciphertexts of equal shape and parameters")
    return type(C1)(K.add_mod(C1.data, C2.data, C1.params.top_mod), C1.params)


def gadget_matrix(params: LweParams) -> np.ndarray:
    """``col(10^0, ..., 10^(digits_q-1)) kron I_(N+1)`` as a Python-int object array."""
    powers = np.array([10**i for i in range(params.digits_q)], dtype=object).reshape(-1, 1)
    eye = np.eye(params.N + 1, dtype=np.int64).astype(object)
    return np.kron(powers, eye)


def digit_decompose(c: Sequence[int], params: LweParams) -> np.ndarray:
    """Base-10 digits of a row vector, least-significant digit block first.

    Output index ``i*(N+1) + j`` holds digit ``i`` of ``c[j]``.
    """
    c = [int(x) for x in c]
    if len(c) != params.N + 1:
        raise ShapeMismatch(f"row vector must have length N+1={params.N + 1}")
    if any(not (0 <= x < params.q) for x in c):
        raise InputNotCanonical("entries must lie in [0, q)")
    return K.digits(K.ints_to_limbs(c, params.n_limbs), params.digits_q)


def encrypt2(m: int, sk: SecretKey, rng=None) -> CipherMat:
    p = sk.params
    (m,) = _check_plaintext([m], p)
    data = _encrypt_limbs([0] * p.gadget_rows, sk, as_rng(rng))
    if m:
        L, C = p.n_limbs, p.N + 1
        rows = np.arange(p.gadget_rows)
        cols = rows % C
        blocks = K.ints_to_limbs([(m * 10**i) % p.q for i in range(p.digits_q)], L)
        data[rows, cols] = K.add_mod(data[rows, cols], np.repeat(blocks, C, axis=0), p.top_mod)
    return CipherMat(data, p)


def mult(M1: CipherMat, c2: CipherVec) -> CipherVec:
    """``M1 (*) c2 = D(c2) M1`` for a single-row ``c2``."""
    if not isinstance(M1, CipherMat) or not isinstance(c2, CipherVec):
        raise ShapeMismatch("mult expects (CipherMat, CipherVec)")
    if c2.rows != 1 or M1.params != c2.params:
        raise ShapeMismatch("mult needs a single-row CipherVec under the same parameters")
    p = M1.params
    dg = K.digits(c2.data[0], p.digits_q)
    out = K.digit_matmul(dg, M1.data, p.top_mod)
    return CipherVec(out[None, :, :], p)


def check_mult_budget(m1_bound: int, params: LweParams) -> ErrorBudget:
    """Worst-case ``|m1| e/w + 9 e digits_q (N+1)/w`` against 1/2."""
    if m1_bound < 0:
        raise ValueError("m1_bound must be non-negative")
    lo, hi = params.error_range
    emax = max(-lo, hi - 1)
    worst = Fraction(m1_bound * emax + 9 * emax * params.gadget_rows, params.w)
    return ErrorBudget(emax, "mult", worst)


# ---------------------------------------------------------------------------
# text serialization: header "n N q form", then n rows of N+1 decimal ints


def dumps(C: CipherVec | CipherMat) -> str:
    lines = [f"{C.rows} {C.params.N} {C.params.q} {C.form}"]
    lines += [" ".join(map(str, row)) for row in C.values()]
    return "\n".join(lines) + "\n"


def read_record(lines: Iterator[str], params: LweParams) -> CipherVec | CipherMat:
    try:
        header = next(lines).split()
    except StopIteration:
        raise SecformError("unexpected end of ciphertext stream") from None
    if len(header) != 4 or header[3] not in ("Enc", "Enc2"):
        raise SecformError(f"bad ciphertext header {header!r}")
    n, N, q = int(header[0]), int(header[1]), int(header[2])
    if N != params.N or q != params.q:
        raise ShapeMismatch("ciphertext header does not match parameters")
    rows = []
    for _ in range(n):
        vals = [int(v) for v in next(lines).split()]
        if len(vals) != N + 1:
            raise ShapeMismatch("ciphertext row has wrong length")
        if any(not (0 <= v < q) for v in vals):
            raise InputNotCanonical("ciphertext entry outside [0, q)")
        rows.append(vals)
    flat = [v for row in rows for v in row]
    data = K.ints_to_limbs(flat, params.n_limbs).reshape(n, N + 1, params.n_limbs)
    cls = CipherVec if header[3] == "Enc" else CipherMat
    return cls(data, params)


def loads(text: str, params: LweParams) -> CipherVec | CipherMat:
    return read_record(iter(text.splitlines()), params)


def iter_records(lines: Iterable[str], params: LweParams):
    it = iter(lines)
    while True:
        try:
            yield read_record(it, params)
        except SecformError as exc:
            if "unexpected end" in str(exc):
                return
            raise
