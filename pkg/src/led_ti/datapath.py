"""Cycle-accurate nibble-serial LED-128 datapaths.

Two variants share one FSM skeleton:

* protected (threshold implementation): every data and key nibble is held
  as two Boolean shares; linear layers are duplicated per share and the
  Sbox runs as a three-share G/F pipeline.
* unprotected: single-share registers and a one-cycle direct Sbox.

The 16 cells of each matrix form a shift chain in row-major order.  Position
0 (cell 00) is the processing slot and position 15 (cell 33) the feedback
slot; one shift moves cell p+1 into p, so after 16 shifts every cell has
passed the processing slot once and the matrix is back in place.

Control flow never looks at data, so the engine steps a whole batch of
encryptions in lockstep: registers are numpy arrays whose first axis is the
batch, while FSM state, counters and the round-constant register are plain
scalars shared by the batch.

Cycle semantics: the cycle labelled with state X performs X's register
updates at its closing clock edge, and the transitions logged for that
cycle are exactly those edge updates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import led
from .rng import SplitMix64
from .sharing import SboxDecomposition, load_decomposition


class SimulatorStateError(RuntimeError):
    """Operation not allowed in the simulator's current state."""


class FsmState(enum.IntEnum):
    IDLE = 0
    ADDSHARE = 1
    INIT = 2
    ADDCONSTANT = 3
    SBOX_CAL = 4
    SBOX_SHIFT = 5
    SHIFTROW = 6
    MIXCOL = 7
    NEXTROUND = 8
    ADDKEY = 9
    BACK = 10


S = FsmState

PROTECTED_CYCLES = {
    S.ADDSHARE: 16,
    S.INIT: 16,
    S.ADDCONSTANT: 1,
    S.SBOX_CAL: 3,
    S.SBOX_SHIFT: 1,
    S.SHIFTROW: 3,
    S.MIXCOL: 16,
    S.NEXTROUND: 1,
    S.ADDKEY: 16,
    S.BACK: 16,
}
UNPROTECTED_CYCLES = {**PROTECTED_CYCLES, S.SBOX_CAL: 1}
del UNPROTECTED_CYCLES[S.ADDSHARE], UNPROTECTED_CYCLES[S.BACK]

# States whose length is tracked by BCOUNT (one nibble position per cycle).
_BCOUNT_LOOPS = {S.ADDSHARE, S.INIT, S.MIXCOL, S.ADDKEY, S.BACK}

NIBBLES = 16
ROUNDS_PER_STEP = 4
STEPS = 12

CONTROL_WIDTHS = {"fsm": 4, "bcount": 5, "rcount": 3, "scount": 4, "ccount": 2, "rc": 6}


@dataclass
class Counters:
    """Loop counters.  ``ccount`` sequences the multi-cycle SBOX_CAL and SHIFTROW."""

    bcount: int = 0
    rcount: int = 0
    scount: int = 0
    ccount: int = 0


def fsm_next(state: FsmState, c: Counters, protected: bool = True) -> FsmState:
    """Successor taken when `state` finishes, given the counters at that point."""
    if state == S.IDLE:
        return S.ADDSHARE if protected else S.INIT
    if state == S.ADDSHARE:
        return S.INIT
    if state == S.INIT:
        return S.ADDCONSTANT
    if state == S.ADDCONSTANT:
        return S.SBOX_CAL
    if state == S.SBOX_CAL:
        return S.SBOX_SHIFT
    if state == S.SBOX_SHIFT:
        return S.SHIFTROW if c.bcount == NIBBLES else S.ADDCONSTANT
    if state == S.SHIFTROW:
        return S.MIXCOL
    if state == S.MIXCOL:
        return S.NEXTROUND
    if state == S.NEXTROUND:
        return S.ADDKEY if c.rcount == ROUNDS_PER_STEP else S.ADDCONSTANT
    if state == S.ADDKEY:
        if c.scount == STEPS:
            return S.BACK if protected else S.IDLE
        return S.ADDCONSTANT
    if state == S.BACK:
        return S.IDLE
    raise ValueError(f"unknown state {state!r}")


# Which Sbox-share registers feed each pipeline update.  Component i of a
# stage reads shares i+1 and i+2 of the previous stage.
SBOX_WIRING = (
    ("sbg.0", ("sbin.1", "sbin.2")),
    ("sbg.1", ("sbin.2", "sbin.0")),
    ("sbg.2", ("sbin.0", "sbin.1")),
    ("sbf.0", ("sbg.1", "sbg.2")),
    ("sbf.1", ("sbg.2", "sbg.0")),
    ("sbf.2", ("sbg.0", "sbg.1")),
    ("d33.0", ("sbf.0", "sbf.1")),
    ("d33.1", ("sbf.2",)),
)

_MUL = np.array([[led.gf16_mul(a, b) for b in range(16)] for a in range(16)], dtype=np.uint8)
_SBOX = np.array(led.SBOX, dtype=np.uint8)


def _cell_ids(prefix: str, shares: int) -> list[str]:
    return [f"{prefix}{p // 4}{p % 4}.{s}" for s in range(shares) for p in range(NIBBLES)]


class Group(NamedTuple):
    """Old and new contents of a register group updated in one cycle."""

    name: str
    old: np.ndarray  # (batch, n) uint8
    new: np.ndarray


class CycleChanges(NamedTuple):
    cycle: int
    state: FsmState
    groups: list
    control: list  # (reg_id, width, old, new) scalars, identical across the batch


@dataclass
class CycleEntry:
    cycle: int
    state: FsmState
    transitions: list  # (reg_id, width, old, new)


@dataclass
class TransitionLog:
    entries: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def states(self) -> list[FsmState]:
        return [e.state for e in self.entries]

    def to_csv(self) -> str:
        lines = ["cycle,state,reg_id,old_hex,new_hex"]
        for e in self.entries:
            if not e.transitions:
                lines.append(f"{e.cycle},{e.state.name},,,")
            for reg, width, old, new in e.transitions:
                digits = (width + 3) // 4
                lines.append(f"{e.cycle},{e.state.name},{reg},{old:0{digits}x},{new:0{digits}x}")
        return "\n".join(lines) + "\n"


def _nibbles(blocks: np.ndarray) -> np.ndarray:
    """(batch,) uint64 blocks -> (batch, 16) nibbles, most significant first."""
    shifts = np.arange(60, -4, -4, dtype=np.uint64)
    return ((blocks[:, None] >> shifts) & np.uint64(0xF)).astype(np.uint8)


def _blocks(nibbles: np.ndarray) -> np.ndarray:
    out = np.zeros(nibbles.shape[0], dtype=np.uint64)
    for p in range(NIBBLES):
        out = (out << np.uint64(4)) | nibbles[:, p].astype(np.uint64)
    return out


def _as_blocks(value, batch: int) -> np.ndarray:
    arr = np.array(value, dtype=object, ndmin=1)
    if arr.size == 1 and batch > 1:
        arr = np.repeat(arr, batch)
    if arr.size != batch:
        raise ValueError(f"expected {batch} values, got {arr.size}")
    for v in arr:
        if not 0 <= int(v) <= led.MASK64:
            raise ValueError(f"value does not fit in 64 bits: {v!r}")
    return np.array([int(v) for v in arr], dtype=np.uint64)


class Datapath:
    """Nibble-serial LED-128 core, protected (TI) or unprotected.

    Typical use::

        dp = Datapath(protected=True)
        dp.load_inputs(pt, key, SplitMix64(seed))
        ciphertext, log = dp.run_to_completion()

    With ``batch > 1`` the plaintexts (and optionally keys) are arrays and
    ``rng`` must hold one stream per batch entry; ``advance`` then returns the
    per-cycle register changes for leakage synthesis.
    """

    def __init__(
        self,
        protected: bool = True,
        batch: int = 1,
        decomposition: Optional[SboxDecomposition] = None,
        split_round_constant: bool = True,
    ):
        self.protected = protected
        self.batch = batch
        self.shares = 2 if protected else 1
        self.split_round_constant = split_round_constant
        self.cycle_lengths = PROTECTED_CYCLES if protected else UNPROTECTED_CYCLES
        if protected:
            d = decomposition if decomposition is not None else load_decomposition()
            tables = d.tables()
            self._g_tables, self._f_tables = tables[:3], tables[3:]
        self.rng: Optional[SplitMix64] = None
        shape = (batch, self.shares, NIBBLES)
        self.data = np.zeros(shape, dtype=np.uint8)
        self.k1 = np.zeros(shape, dtype=np.uint8)
        self.k2 = np.zeros(shape, dtype=np.uint8)
        self.sbox = {
            name: np.zeros((batch, 3 if protected else 1), dtype=np.uint8)
            for name in (("sbin", "sbg", "sbf") if protected else ("sb",))
        }
        self.state = S.IDLE
        self.counters = Counters()
        self.rc = 0
        self.cycle = 0
        self.finished = False
        self._loaded = False
        self._pt = None
        self._key_nibbles = None
        self._out = np.zeros((batch, NIBBLES), dtype=np.uint8)
        self._ids = {
            "data": _cell_ids("d", self.shares),
            "k1": _cell_ids("k1_", self.shares),
            "k2": _cell_ids("k2_", self.shares),
        }
        for name, arr in self.sbox.items():
            self._ids[name] = [f"{name}.{i}" for i in range(arr.shape[1])]

    # -- register naming ---------------------------------------------------

    def register_widths(self) -> dict[str, int]:
        widths = {reg: 4 for ids in self._ids.values() for reg in ids}
        widths.update(CONTROL_WIDTHS)
        return widths

    def total_register_bits(self) -> int:
        return sum(self.register_widths().values())

    # -- loading -------------------------------------------------------------

    def load_inputs(self, plaintext, key, rng: Optional[SplitMix64] = None) -> None:
        """Arm the core with plaintext(s) and key(s).

        The protected core consumes them serially during ADDSHARE, drawing a
        fresh mask per nibble from `rng`; the unprotected core loads its
        registers in parallel here.
        """
        if self._loaded or self.state != S.IDLE:
            raise SimulatorStateError("load_inputs called while the core is running")
        pts = _as_blocks(plaintext, self.batch)
        keys = np.array(key, dtype=object, ndmin=1)
        if keys.size == 1 and self.batch > 1:
            keys = np.repeat(keys, self.batch)
        if keys.size != self.batch:
            raise ValueError(f"expected {self.batch} keys, got {keys.size}")
        halves = [led.split_key(int(k)) for k in keys]
        k1 = _nibbles(np.array([h[0] for h in halves], dtype=np.uint64))
        k2 = _nibbles(np.array([h[1] for h in halves], dtype=np.uint64))
        if self.protected:
            if rng is None or len(rng) != self.batch:
                raise ValueError("protected core needs an rng with one stream per batch entry")
            self._pt = _nibbles(pts)
            self._key_nibbles = (k1, k2)
        else:
            self.data[:, 0, :] = _nibbles(pts)
            self.k1[:, 0, :] = k1
            self.k2[:, 0, :] = k2
        self.rng = rng
        self._loaded = True
        self.finished = False
        self.cycle = 0
        self.counters = Counters()
        self.state = fsm_next(S.IDLE, self.counters, self.protected)

    # -- one clock -------------------------------------------------------------

    def advance(self) -> CycleChanges:
        """Run one clock cycle and return the register updates it made."""
        if not self._loaded:
            raise SimulatorStateError("core not loaded")
        if self.finished:
            raise SimulatorStateError("encryption already finished")
        state = self.state
        c = self.counters
        groups: list[Group] = []
        control: list = []
        old_ctrl = (int(state), c.bcount, c.rcount, c.scount, c.ccount, self.rc)

        handler = getattr(self, f"_do_{state.name.lower()}")
        handler(groups)

        # counters and state register
        if state in _BCOUNT_LOOPS or state == S.SBOX_SHIFT:
            c.bcount += 1
        if state in (S.SBOX_CAL, S.SHIFTROW):
            c.ccount += 1
        if state in _BCOUNT_LOOPS:
            done = c.bcount == NIBBLES
        elif state in (S.SBOX_CAL, S.SHIFTROW):
            done = c.ccount == self.cycle_lengths[state]
        else:
            done = True
        if done:
            if state == S.MIXCOL:
                c.rcount += 1
            if state == S.ADDKEY:
                c.scount += 1
            nxt = fsm_next(state, c, self.protected)
            if nxt in _BCOUNT_LOOPS or nxt == S.SHIFTROW or (nxt == S.ADDCONSTANT and state != S.SBOX_SHIFT):
                c.bcount = 0
            if nxt == S.ADDKEY:
                c.rcount = 0
            if nxt in (S.SBOX_CAL, S.SHIFTROW):
                c.ccount = 0
            self.state = nxt
        new_ctrl = (int(self.state), c.bcount, c.rcount, c.scount, c.ccount, self.rc)
        for name, old, new in zip(("fsm", "bcount", "rcount", "scount", "ccount", "rc"), old_ctrl, new_ctrl):
            if old != new:
                control.append((name, CONTROL_WIDTHS[name], old, new))

        changes = CycleChanges(self.cycle, state, groups, control)
        self.cycle += 1
        if self.state == S.IDLE:
            self.finished = True
            self._loaded = False
        return changes

    def step_cycle(self) -> tuple[FsmState, list]:
        """Advance one clock; returns (state, [(reg_id, width, old, new), ...]).

        Only meaningful for a single-encryption core (batch == 1).
        """
        if self.batch != 1:
            raise SimulatorStateError("step_cycle transition lists need batch == 1")
        ch = self.advance()
        return ch.state, self._transitions(ch)

    def _transitions(self, ch: CycleChanges) -> list:
        out = []
        for g in ch.groups:
            ids = self._ids[g.name]
            old, new = g.old[0], g.new[0]
            for i in np.nonzero(old != new)[0]:
                out.append((ids[i], 4, int(old[i]), int(new[i])))
        out.extend(ch.control)
        return out

    def run_to_completion(self) -> tuple[int, TransitionLog]:
        log = TransitionLog()
        while not self.finished:
            state, trans = self.step_cycle()
            log.entries.append(CycleEntry(self.cycle - 1, state, trans))
        return self.ciphertext(), log

    def run_batch(self) -> np.ndarray:
        """Run a loaded batch to completion without logging; returns ciphertexts."""
        while not self.finished:
            self.advance()
        return self.ciphertexts()

    # -- outputs -------------------------------------------------------------

    def ciphertexts(self) -> np.ndarray:
        if not self.finished:
            raise SimulatorStateError("encryption still running")
        nib = self._out if self.protected else self.data[:, 0, :]
        return _blocks(nib)

    def ciphertext(self) -> int:
        return int(self.ciphertexts()[0])

    def recombined_state(self) -> np.ndarray:
        """XOR of the data shares as 64-bit blocks (the value the core holds)."""
        return _blocks(np.bitwise_xor.reduce(self.data, axis=1))

    # -- state handlers --------------------------------------------------------

    def _update(self, groups, name, arr_name, new):
        old = getattr(self, arr_name)
        groups.append(Group(name, old.reshape(self.batch, -1), new.reshape(self.batch, -1)))
        setattr(self, arr_name, new)

    def _update_sbox(self, groups, name, new):
        groups.append(Group(name, self.sbox[name], new))
        self.sbox[name] = new

    @staticmethod
    def _shift(chain, incoming):
        return np.concatenate([chain[:, :, 1:], incoming[:, :, None]], axis=2)

    def _do_addshare(self, groups):
        j = self.counters.bcount
        rng = self.rng
        m_data, m_k1, m_k2 = rng.nibble(), rng.nibble(), rng.nibble()
        k1, k2 = self._key_nibbles
        for arr_name, x, m in (("data", self._pt[:, j], m_data), ("k1", k1[:, j], m_k1), ("k2", k2[:, j], m_k2)):
            incoming = np.stack([x ^ m, m], axis=1)
            self._update(groups, arr_name, arr_name, self._shift(getattr(self, arr_name), incoming))

    def _add_key(self, groups, key_name):
        key = getattr(self, key_name)
        data = self.data
        self._update(groups, "data", "data", self._shift(data, data[:, :, 0] ^ key[:, :, 0]))
        self._update(groups, key_name, key_name, np.roll(key, -1, axis=2))

    def _do_init(self, groups):
        if self.counters.bcount == 0:
            self.rc = led.ROUND_CONSTANTS[0]
        self._add_key(groups, "k1")

    def _do_addkey(self, groups):
        boundary = self.counters.scount + 1
        self._add_key(groups, "k1" if boundary % 2 == 0 else "k2")

    def _do_addconstant(self, groups):
        b = self.counters.bcount
        const = np.uint8(led.constant_nibble(self.rc, b // 4, b % 4))
        new = self.data.copy()
        if self.protected:
            mask = self.rng.nibble() if self.split_round_constant else np.zeros(self.batch, np.uint8)
            new[:, 0, 0] ^= const ^ mask
            new[:, 1, 0] ^= mask
        else:
            new[:, 0, 0] ^= const
        self._update(groups, "data", "data", new)

    def _do_sbox_cal(self, groups):
        k = self.counters.ccount
        if not self.protected:
            self._update_sbox(groups, "sb", _SBOX[self.data[:, 0, 0]][:, None])
            return
        if k == 0:
            m1 = self.rng.nibble()
            d0, d1 = self.data[:, 0, 0], self.data[:, 1, 0]
            self._update_sbox(groups, "sbin", np.stack([d0 ^ m1, d1, m1], axis=1))
        elif k == 1:
            self._update_sbox(groups, "sbg", self._stage(self._g_tables, self.sbox["sbin"]))
        else:
            self._update_sbox(groups, "sbf", self._stage(self._f_tables, self.sbox["sbg"]))

    @staticmethod
    def _stage(tables, shares):
        out = np.empty_like(shares)
        for i, t in enumerate(tables):
            a, b = shares[:, (i + 1) % 3], shares[:, (i + 2) % 3]
            out[:, i] = t[(a.astype(np.intp) << 4) | b]
        return out

    def _do_sbox_shift(self, groups):
        if self.protected:
            f = self.sbox["sbf"]
            incoming = np.stack([f[:, 0] ^ f[:, 1], f[:, 2]], axis=1)
        else:
            incoming = self.sbox["sb"]
        self._update(groups, "data", "data", self._shift(self.data, incoming))

    def _do_shiftrow(self, groups):
        k = self.counters.ccount
        if k == 0:
            self.rc = led.rc_update(self.rc)
        grid = self.data.reshape(self.batch, self.shares, 4, 4).copy()
        grid[:, :, k + 1 :, :] = np.roll(grid[:, :, k + 1 :, :], -1, axis=3)
        self._update(groups, "data", "data", grid.reshape(self.data.shape))

    def _do_mixcol(self, groups):
        grid = self.data.reshape(self.batch, self.shares, 4, 4).copy()
        col = grid[:, :, :, 0]
        fb = _MUL[4][col[:, :, 0]] ^ col[:, :, 1] ^ _MUL[2][col[:, :, 2]] ^ _MUL[2][col[:, :, 3]]
        grid[:, :, :, 0] = np.concatenate([col[:, :, 1:], fb[:, :, None]], axis=2)
        if self.counters.bcount % 4 == 3:
            grid = np.roll(grid, -1, axis=3)
        self._update(groups, "data", "data", grid.reshape(self.data.shape))

    def _do_nextround(self, groups):
        pass

    def _do_back(self, groups):
        j = self.counters.bcount
        self._out[:, j] = self.data[:, 0, 0] ^ self.data[:, 1, 0]
        zero = np.zeros((self.batch, self.shares), dtype=np.uint8)
        self._update(groups, "data", "data", self._shift(self.data, zero))


def run_protected(plaintext: int, key: int, seed: int, **kwargs) -> tuple[int, TransitionLog]:
    dp = Datapath(protected=True, **kwargs)
    dp.load_inputs(plaintext, key, SplitMix64(seed))
    return dp.run_to_completion()


def run_unprotected(plaintext: int, key: int) -> tuple[int, TransitionLog]:
    dp = Datapath(protected=False)
    dp.load_inputs(plaintext, key)
    return dp.run_to_completion()


def cycle_count(protected: bool) -> int:
    """Total cycles of one encryption (data-independent)."""
    lengths = PROTECTED_CYCLES if protected else UNPROTECTED_CYCLES
    nibble_loop = NIBBLES * (lengths[S.ADDCONSTANT] + lengths[S.SBOX_CAL] + lengths[S.SBOX_SHIFT])
    round_ = nibble_loop + lengths[S.SHIFTROW] + lengths[S.MIXCOL] + lengths[S.NEXTROUND]
    total = lengths[S.INIT] + STEPS * (ROUNDS_PER_STEP * round_ + lengths[S.ADDKEY])
    if protected:
        total += lengths[S.ADDSHARE] + lengths[S.BACK]
    return total
