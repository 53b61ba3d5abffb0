"""Multi-limb residue arithmetic modulo q = 10**D.

Residues are stored little-endian as int64 limbs in base 10**6 along the last
array axis.  The top limb is reduced modulo ``10**(D - 6*(L-1))`` so that a
limb vector always denotes a canonical residue in ``[0, q)``.

Two interchangeable implementations are provided: plain numpy, and numba
``@njit`` loops.  The numba path is used when numba imports and the
environment variable ``SECFORM_DISABLE_NUMBA`` is unset (or ``0``).  Both
are registered in :data:`BACKENDS` so tests and the benchmark can compare
them directly.
"""

from __future__ import annotations

import os

import numpy as np

LIMB_DIGITS = 6
LIMB_BASE = 10**LIMB_DIGITS

_POW10_LIMB = np.array([10**i for i in range(LIMB_DIGITS)], dtype=np.int64)


def n_limbs(digits_q: int) -> int:
    return -(-digits_q // LIMB_DIGITS)


def top_modulus(digits_q: int) -> int:
    return 10 ** (digits_q - LIMB_DIGITS * (n_limbs(digits_q) - 1))


# ---------------------------------------------------------------------------
# numpy implementation


def _np_normalize(acc, top_mod):
    # signed accumulators allowed; floor division propagates borrows
    out = np.array(acc, dtype=np.int64, copy=True)
    L = out.shape[-1]
    for t in range(L - 1):
        carry = out[..., t] // LIMB_BASE
        out[..., t] -= carry * LIMB_BASE
        out[..., t + 1] += carry
    out[..., L - 1] %= top_mod
    return out


def _np_matvec_mod(M, v, top_mod):
    n, K, L = M.shape
    acc = np.zeros((n, L), dtype=np.int64)
    for i in range(L):
        Mi = M[:, :, i]
        for j in range(L - i):
            acc[:, i + j] += Mi @ v[:, j]
    return _np_normalize(acc, top_mod)


def _np_digits(c, digits_q):
    K, L = c.shape
    dg = (c[:, :, None] // _POW10_LIMB[None, None, :]) % 10
    dg = dg.reshape(K, L * LIMB_DIGITS)[:, :digits_q]
    return np.ascontiguousarray(dg.T).reshape(-1)


def _np_digit_matmul(dg, M, top_mod):
    R, C, L = M.shape
    acc = np.tensordot(dg, M, axes=(0, 0))
    return _np_normalize(acc, top_mod)


def _np_add_mod(x, y, top_mod):
    return _np_normalize(x + y, top_mod)


def _np_sub_mod(x, y, top_mod):
    return _np_normalize(x - y, top_mod)


NUMPY_KERNELS = {
    "normalize": _np_normalize,
    "matvec_mod": _np_matvec_mod,
    "digits": _np_digits,
    "digit_matmul": _np_digit_matmul,
    "add_mod": _np_add_mod,
    "sub_mod": _np_sub_mod,
}

BACKENDS = {"numpy": NUMPY_KERNELS}


# ---------------------------------------------------------------------------
# numba implementation


def _build_numba_kernels():
    from numba import njit

    base = LIMB_BASE
    ld = LIMB_DIGITS

    @njit(cache=True)
    def _normalize_rows(acc, top_mod):
        # acc: (rows, L), normalized in place
        rows, L = acc.shape
        for r in range(rows):
            carry = 0
            for t in range(L - 1):
                v = acc[r, t] + carry
                if 0 <= v < base:
                    carry = 0
                    acc[r, t] = v
                else:
                    carry = v // base
                    acc[r, t] = v - carry * base
            v = acc[r, L - 1] + carry
            if not (0 <= v < top_mod):
                v %= top_mod
            acc[r, L - 1] = v

    def normalize(acc, top_mod):
        out = np.array(acc, dtype=np.int64, copy=True)
        shape = out.shape
        flat = out.reshape(-1, shape[-1])
        _normalize_rows(flat, top_mod)
        return flat.reshape(shape)

    @njit(cache=True)
    def _matvec_mod(M, v, top_mod):
        n, K, L = M.shape
        acc = np.zeros((n, L), dtype=np.int64)
        vt = np.ascontiguousarray(v.T)
        for r in range(n):
            for i in range(L):
                for j in range(L - i):
                    s = 0
                    for k in range(K):
                        s += M[r, k, i] * vt[j, k]
                    acc[r, i + j] += s
        _normalize_rows(acc, top_mod)
        return acc

    @njit(cache=True)
    def _digits(c, digits_q):
        K, L = c.shape
        out = np.zeros(digits_q * K, dtype=np.int64)
        for k in range(K):
            for i in range(L):
                x = c[k, i]
                for p in range(ld):
                    idx = i * ld + p
                    if idx >= digits_q:
                        break
                    out[idx * K + k] = x % 10
                    x //= 10
        return out

    @njit(cache=True)
    def _digit_matmul(dg, M, top_mod):
        R, C, L = M.shape
        acc = np.zeros((C, L), dtype=np.int64)
        for r in range(R):
            d = dg[r]
            if d == 0:
                continue
            for col in range(C):
                for t in range(L):
                    acc[col, t] += d * M[r, col, t]
        _normalize_rows(acc, top_mod)
        return acc

    def matvec_mod(M, v, top_mod):
        return _matvec_mod(np.ascontiguousarray(M, dtype=np.int64),
                           np.ascontiguousarray(v, dtype=np.int64), top_mod)

    def digits(c, digits_q):
        return _digits(np.ascontiguousarray(c, dtype=np.int64), digits_q)

    def digit_matmul(dg, M, top_mod):
        return _digit_matmul(np.ascontiguousarray(dg, dtype=np.int64),
                             np.ascontiguousarray(M, dtype=np.int64), top_mod)

    def add_mod(x, y, top_mod):
        return normalize(x + y, top_mod)

    def sub_mod(x, y, top_mod):
        return normalize(x - y, top_mod)

    return {
        "normalize": normalize,
        "matvec_mod": matvec_mod,
        "digits": digits,
        "digit_matmul": digit_matmul,
        "add_mod": add_mod,
        "sub_mod": sub_mod,
    }


try:
    BACKENDS["numba"] = _build_numba_kernels()
except ImportError:  # pragma: no cover - numba is optional
    pass

_disabled = os.environ.get("SECFORM_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")
BACKEND = "numba" if ("numba" in BACKENDS and not _disabled) else "numpy"

_active = BACKENDS[BACKEND]
normalize = _active["normalize"]
matvec_mod = _active["matvec_mod"]
digits = _active["digits"]
digit_matmul = _active["digit_matmul"]
add_mod = _active["add_mod"]
sub_mod = _active["sub_mod"]


# ---------------------------------------------------------------------------
# conversion between Python ints and limb vectors (not hot; exact)


def int_to_limbs(x: int, L: int) -> np.ndarray:
    out = np.empty(L, dtype=np.int64)
    for i in range(L):
        x, out[i] = divmod(x, LIMB_BASE)
    return out


def ints_to_limbs(values, L: int) -> np.ndarray:
    values = list(values)
    out = np.empty((len(values), L), dtype=np.int64)
    for r, x in enumerate(values):
        for i in range(L):
            x, out[r, i] = divmod(x, LIMB_BASE)
    return out


def limbs_to_ints(arr: np.ndarray) -> list[int]:
    """Convert a (..., L) limb array to a flat list of Python ints."""
    flat = np.asarray(arr).reshape(-1, arr.shape[-1]).tolist()
    out = []
    for row in flat:
        v = 0
        for limb in reversed(row):
            v = v * LIMB_BASE + limb
        out.append(v)
    return out
