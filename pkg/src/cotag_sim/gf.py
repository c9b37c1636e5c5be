"""GF(2^8) arithmetic and the byte-block kernels the RLNC codec runs on.

Field: GF(2^8) under the reduction polynomial x^8+x^4+x^3+x^2+1 (0x11D),
generator 0x02. Addition is XOR. Elements are plain ints in [0, 255];
block operations work on uint8 numpy arrays via a 256x256 product table.

Each block kernel has a numba and a numpy implementation; see _accel.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

REDUCTION_POLY = 0x11D
ORDER = 256


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= REDUCTION_POLY
    exp[255:510] = exp[0:255]  # wraparound so exp[la + lb] needs no mod
    logs = log[1:]
    mul = np.zeros((256, 256), dtype=np.uint8)
    mul[1:, 1:] = exp[logs[:, None] + logs[None, :]]
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[255 - logs]
    return exp, log, mul, inv

EXP_TABLE, LOG_TABLE, MUL_TABLE, INV_TABLE = _build_tables()


def gf_mul(a: int, b: int) -> int:
    """Product of two field elements."""
    return int(MUL_TABLE[a, b])


def gf_inv(a: int) -> int:
    """Multiplicative inverse; zero has none."""
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(2^8)")
    return int(INV_TABLE[a])


def gf_pow(a: int, n: int) -> int:
    if a == 0:
        return 0 if n else 1
    return int(EXP_TABLE[(int(LOG_TABLE[a]) * n) % 255])


# ---------------------------------------------------------------------------
# Block kernels. `blocks` is a (g, L) uint8 matrix of payload rows; a coded
# payload is sum_i coeffs[i] * blocks[i] in the field (XOR-accumulated).
# ---------------------------------------------------------------------------


@njit
def _combine_nb(mul, coeffs, blocks, out):
    g, width = blocks.shape
    for i in range(g):
        c = coeffs[i]
        if c == 0:
            continue
        row = mul[c]
        for j in range(width):
            out[j] ^= row[blocks[i, j]]


def _combine_np(mul, coeffs, blocks, out):
    live = coeffs != 0
    if not live.any():
        return
    out ^= np.bitwise_xor.reduce(mul[coeffs[live][:, None], blocks[live]], axis=0)


@njit
def _axpy_nb(mul, c, src, dst):
    row = mul[c]
    for j in range(dst.shape[0]):
        dst[j] ^= row[src[j]]


def _axpy_np(mul, c, src, dst):
    dst ^= mul[c][src]


@njit
def _eliminate_nb(mul, inv, coeff_rows, payload_rows, has_pivot, row, pay):
    g = coeff_rows.shape[0]
    for col in range(g):
        v = row[col]
        if v == 0:
            continue
        if has_pivot[col]:
            prow = mul[v]
            for j in range(g):
                row[j] ^= prow[coeff_rows[col, j]]
            for j in range(pay.shape[0]):
                pay[j] ^= prow[payload_rows[col, j]]
        else:
            s = mul[inv[v]]
            for j in range(g):
                coeff_rows[col, j] = s[row[j]]
            for j in range(pay.shape[0]):
                payload_rows[col, j] = s[pay[j]]
            has_pivot[col] = True
            return col
    return -1


def _eliminate_np(mul, inv, coeff_rows, payload_rows, has_pivot, row, pay):
    g = coeff_rows.shape[0]
    for col in range(g):
        v = row[col]
        if v == 0:
            continue
        if has_pivot[col]:
            row ^= mul[v][coeff_rows[col]]
            pay ^= mul[v][payload_rows[col]]
        else:
            scale = mul[inv[v]]
            coeff_rows[col] = scale[row]
            payload_rows[col] = scale[pay]
            has_pivot[col] = True
            return col
    return -1


@njit
def _back_substitute_nb(mul, coeff_rows, payload_rows):
    g = coeff_rows.shape[0]
    for col in range(g - 1, 0, -1):
        for r in range(col):
            f = coeff_rows[r, col]
            if f == 0:
                continue
            frow = mul[f]
            for j in range(g):
                coeff_rows[r, j] ^= frow[coeff_rows[col, j]]
            for j in range(payload_rows.shape[1]):
                payload_rows[r, j] ^= frow[payload_rows[col, j]]


def _back_substitute_np(mul, coeff_rows, payload_rows):
    g = coeff_rows.shape[0]
    for col in range(g - 1, 0, -1):
        for r in range(col):
            f = coeff_rows[r, col]
            if f == 0:
                continue
            coeff_rows[r] ^= mul[f][coeff_rows[col]]
            payload_rows[r] ^= mul[f][payload_rows[col]]


if USE_NUMBA:
    _combine, _axpy, _eliminate, _back_substitute = (
        _combine_nb, _axpy_nb, _eliminate_nb, _back_substitute_nb)
else:
    _combine, _axpy, _eliminate, _back_substitute = (
        _combine_np, _axpy_np, _eliminate_np, _back_substitute_np)


def combine_blocks(coeffs: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """sum_i coeffs[i] * blocks[i] over the field, as a fresh uint8 row."""
    if coeffs.shape[0] != blocks.shape[0]:
        raise ValueError(
            f"coefficient count {coeffs.shape[0]} != block count {blocks.shape[0]}")
    out = np.zeros(blocks.shape[1], dtype=np.uint8)
    _combine(MUL_TABLE, coeffs, blocks, out)
    return out


def axpy_inplace(c: int, src: np.ndarray, dst: np.ndarray) -> None:
    """dst ^= c * src over the field."""
    if c:
        _axpy(MUL_TABLE, c, src, dst)


def eliminate_insert(coeff_rows, payload_rows, has_pivot, row, pay) -> int:
    """Fold one (coefficient row, payload row) into an echelon store.

    Pivot rows are kept normalized (leading 1) at the index of their pivot
    column. Mutates all array arguments. Returns the pivot column claimed,
    or -1 if the row reduced to zero (linearly dependent).
    """
    return _eliminate(MUL_TABLE, INV_TABLE, coeff_rows, payload_rows,
                      has_pivot, row, pay)


def back_substitute(coeff_rows, payload_rows) -> None:
    """Reduce a full-rank echelon store to identity; payload rows become
    the original source rows in order."""
    _back_substitute(MUL_TABLE, coeff_rows, payload_rows)
