"""Straight-line LED-128 reference.

The state is a 4x4 matrix of nibbles stored row-major as a tuple of rows;
the most significant nibble of a 64-bit block is cell [0][0].
"""

from __future__ import annotations

from functools import reduce
from operator import xor
from typing import Callable, Optional

State = tuple[tuple[int, int, int, int], ...]

SBOX = (0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD, 0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2)
INV_SBOX = tuple(SBOX.index(y) for y in range(16))

KEY_BITS = 128
STEPS = 12
ROUNDS_PER_STEP = 4
N_ROUNDS = STEPS * ROUNDS_PER_STEP

# x^4 + x + 1
GF16_POLY = 0x13

# One application of the serial matrix: shifts a column up by one cell and
# feeds 4*c0 + c1 + 2*c2 + 2*c3 into the bottom.
SERIAL_ROW = (0x4, 0x1, 0x2, 0x2)

MASK64 = (1 << 64) - 1


def sbox_lookup(x: int) -> int:
    return SBOX[x & 0xF]


def gf16_mul(a: int, b: int) -> int:
    """Multiply two nibbles in GF(2^4) modulo x^4 + x + 1."""
    a &= 0xF
    b &= 0xF
    r = 0
    for _ in range(4):
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x10:
            a ^= GF16_POLY
    return r


def _matmul(x, y):
    n = len(x)
    return tuple(
        tuple(reduce(xor, (gf16_mul(x[r][k], y[k][c]) for k in range(n))) for c in range(n))
        for r in range(n)
    )


SERIAL_MATRIX = ((0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1), SERIAL_ROW)
_A2 = _matmul(SERIAL_MATRIX, SERIAL_MATRIX)
MDS_MATRIX = _matmul(_A2, _A2)


def state_from_int(block: int) -> State:
    if not 0 <= block <= MASK64:
        raise ValueError(f"block does not fit in 64 bits: {block:#x}")
    return tuple(
        tuple((block >> (60 - 4 * (4 * r + c))) & 0xF for c in range(4)) for r in range(4)
    )


def state_to_int(s: State) -> int:
    v = 0
    for row in s:
        for x in row:
            v = (v << 4) | x
    return v


def split_key(key: int) -> tuple[int, int]:
    """Return (k1, k2): the most and least significant 64-bit halves."""
    if not 0 <= key < (1 << KEY_BITS):
        raise ValueError(f"key does not fit in {KEY_BITS} bits")
    return key >> 64, key & MASK64


def subkey(key: int, boundary: int) -> int:
    """Subkey for step boundary `boundary` (0 is the initial key addition)."""
    k1, k2 = split_key(key)
    return k1 if boundary % 2 == 0 else k2


def round_constants(n: int = N_ROUNDS) -> tuple[int, ...]:
    """The 6-bit LFSR sequence, one value per round, starting from 0x01."""
    out = []
    rc = 0
    for _ in range(n):
        rc = rc_update(rc)
        out.append(rc)
    return tuple(out)


def rc_update(rc: int) -> int:
    fb = ((rc >> 5) ^ (rc >> 4) ^ 1) & 1
    return ((rc << 1) & 0x3F) | fb


ROUND_CONSTANTS = round_constants()


def constant_nibble(rc: int, row: int, col: int, key_bits: int = KEY_BITS) -> int:
    """Nibble XORed into cell (row, col) by AddConstants for 6-bit constant `rc`.

    Column 0 carries the row index mixed with the key size, column 1 the
    round constant (high three bits on even rows, low three on odd rows).
    Columns 2 and 3 receive zero.
    """
    if col == 0:
        ks = (key_bits >> 4) & 0xF if row < 2 else key_bits & 0xF
        return row ^ ks
    if col == 1:
        return (rc >> 3) & 0x7 if row % 2 == 0 else rc & 0x7
    return 0


def add_constant(s: State, round_index: int) -> State:
    if not 0 <= round_index < N_ROUNDS:
        raise ValueError(f"round_index must be in [0, {N_ROUNDS - 1}], got {round_index}")
    rc = ROUND_CONSTANTS[round_index]
    return tuple(
        tuple(x ^ constant_nibble(rc, r, c) for c, x in enumerate(row)) for r, row in enumerate(s)
    )


def sub_cells(s: State) -> State:
    return tuple(tuple(SBOX[x] for x in row) for row in s)


def inv_sub_cells(s: State) -> State:
    return tuple(tuple(INV_SBOX[x] for x in row) for row in s)


def shift_rows(s: State) -> State:
    return tuple(row[r:] + row[:r] for r, row in enumerate(s))


_MUL = tuple(tuple(gf16_mul(a, b) for b in range(16)) for a in range(16))


def mix_column(col, matrix=MDS_MATRIX) -> tuple[int, ...]:
    return tuple(
        _MUL[m0][col[0]] ^ _MUL[m1][col[1]] ^ _MUL[m2][col[2]] ^ _MUL[m3][col[3]]
        for m0, m1, m2, m3 in matrix
    )


def mix_columns_serial(s: State) -> State:
    cols = [mix_column([s[r][c] for r in range(4)]) for c in range(4)]
    return tuple(tuple(cols[c][r] for c in range(4)) for r in range(4))


def add_round_key(s: State, key64: int) -> State:
    ks = state_from_int(key64)
    return tuple(tuple(x ^ k for x, k in zip(row, krow)) for row, krow in zip(s, ks))


ROUND_OPS = ("AddConstants", "SubCells", "ShiftRows", "MixColumnsSerial")


def encrypt_block(
    plaintext: int,
    key: int,
    on_round: Optional[Callable[[int, tuple[str, ...], State], None]] = None,
    on_step: Optional[Callable[[int, State], None]] = None,
) -> int:
    """Encrypt one 64-bit block under a 128-bit key.

    `on_round(round_index, ops, state)` fires after each of the 48 rounds and
    `on_step(boundary, state)` after each of the 13 key additions; both are
    hooks for tests and lockstep comparisons.
    """
    s = add_round_key(state_from_int(plaintext), subkey(key, 0))
    if on_step:
        on_step(0, s)
    for step in range(STEPS):
        for rnd in range(ROUNDS_PER_STEP):
            i = step * ROUNDS_PER_STEP + rnd
            s = mix_columns_serial(shift_rows(sub_cells(add_constant(s, i))))
            if on_round:
                on_round(i, ROUND_OPS, s)
        s = add_round_key(s, subkey(key, step + 1))
        if on_step:
            on_step(step + 1, s)
    return state_to_int(s)
