"""Boolean share arithmetic and the three-share LED/PRESENT Sbox.

The Sbox is factored as S = F o G with both G and F quadratic, so each
stage admits a first-order threshold sharing with three shares.  Component
``i`` of a stage (0-based) reads only shares ``i+1`` and ``i+2`` (mod 3).

Component functions are stored internally as full 4096-entry tables over
``(s0, s1, s2)`` so the property checkers can also judge candidates that do
not respect the two-input signature.  The on-disk format keeps only the two
live inputs (256 entries per component).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .led import SBOX

# Output bits listed MSB first; variables 0..3 are the input bits MSB first.
# A term is () for the constant 1, (v,) for a linear term, (u, v) for u*v.
G_ANF = (
    ((1,), (2,), (3,)),
    ((), (1,), (2,)),
    ((), (0,), (2,), (1, 3), (2, 3)),
    ((), (3,), (0, 1), (0, 2), (1, 2)),
)
F_ANF = (
    ((1,), (2,), (3,), (0, 3)),
    ((0,), (2, 3)),
    ((1,), (2,), (0, 3)),
    ((2,), (1, 3)),
)

COMPONENT_NAMES = ("G1", "G2", "G3", "F1", "F2", "F3")
TABLES_RESOURCE = "sbox_ti_tables.txt"

_IDX = np.arange(4096)
_S0, _S1, _S2 = (_IDX >> 8) & 0xF, (_IDX >> 4) & 0xF, _IDX & 0xF
_SBOX = np.array(SBOX, dtype=np.uint8)


class DecompositionError(ValueError):
    """Raised for unreadable tables or a decomposition that fails verification."""


class Share2(NamedTuple):
    s0: int
    s1: int


class Share3(NamedTuple):
    s0: int
    s1: int
    s2: int


def split_1to2(x, m0):
    return Share2(x ^ m0, m0)


def recombine_2to1(s):
    return s[0] ^ s[1]


def expand_2to3(s, m1):
    return Share3(s[0] ^ m1, s[1], m1)


def reduce_3to2(s):
    return Share2(s[0] ^ s[1], s[2])


def recombine_3to1(s):
    return s[0] ^ s[1] ^ s[2]


def _bit(a, v):
    return (a >> (3 - v)) & 1


def direct_sharing(anf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Direct three-share sharing of a quadratic 4-bit function.

    Component i takes linear terms from share i+1, the cross terms
    a_{i+1}b_{i+1} + a_{i+1}b_{i+2} + a_{i+2}b_{i+1} for every product, and
    component 0 absorbs the constant.  Returns three 4096-entry tables.
    """
    sh = (_S0, _S1, _S2)
    out = [np.zeros(4096, dtype=np.uint8) for _ in range(3)]
    for pos, terms in enumerate(anf):
        for term in terms:
            for i in range(3):
                a, b = sh[(i + 1) % 3], sh[(i + 2) % 3]
                if not term:
                    if i != 0:
                        continue
                    val = np.ones(4096, dtype=np.uint8)
                elif len(term) == 1:
                    val = _bit(a, term[0])
                else:
                    u, v = term
                    val = (
                        (_bit(a, u) & _bit(a, v))
                        ^ (_bit(a, u) & _bit(b, v))
                        ^ (_bit(b, u) & _bit(a, v))
                    )
                out[i] ^= (val << (3 - pos)).astype(np.uint8)
    return out[0], out[1], out[2]


def _as_full(component_index: int, table256) -> np.ndarray:
    t = np.asarray(table256, dtype=np.uint8)
    sh = (_S0, _S1, _S2)
    a, b = sh[(component_index + 1) % 3], sh[(component_index + 2) % 3]
    return t[a * 16 + b]


def _as_256(component_index: int, full: np.ndarray) -> np.ndarray:
    a, b = (component_index + 1) % 3, (component_index + 2) % 3
    sa, sb = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    shares = [np.zeros_like(sa)] * 3
    shares[a], shares[b] = sa, sb
    return full[(shares[0] << 8) | (shares[1] << 4) | shares[2]].reshape(256)


def _stage(components, s0, s1, s2):
    idx = (np.asarray(s0, dtype=np.int64) << 8) | (np.asarray(s1, dtype=np.int64) << 4) | np.asarray(s2)
    return tuple(c[idx] for c in components)


@dataclass(frozen=True, eq=False)
class SboxDecomposition:
    """Three G components followed by three F components, as 4096-entry tables."""

    g: tuple[np.ndarray, np.ndarray, np.ndarray]
    f: tuple[np.ndarray, np.ndarray, np.ndarray]
    source: str = ""

    def __eq__(self, other):
        if not isinstance(other, SboxDecomposition):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.g + self.f, other.g + other.f))

    __hash__ = None

    @classmethod
    def from_tables(cls, tables: Sequence, source: str = "") -> "SboxDecomposition":
        """Build from six 256-entry tables in G1 G2 G3 F1 F2 F3 order."""
        if len(tables) != 6:
            raise DecompositionError(f"expected 6 component tables, got {len(tables)}")
        full = [_as_full(i % 3, t) for i, t in enumerate(tables)]
        return cls(tuple(full[:3]), tuple(full[3:]), source)

    @classmethod
    def from_anf(cls) -> "SboxDecomposition":
        return cls(direct_sharing(G_ANF), direct_sharing(F_ANF), "direct sharing of G_ANF/F_ANF")

    def tables(self) -> list[np.ndarray]:
        return [_as_256(i % 3, c) for i, c in enumerate(self.g + self.f)]

    def g_stage(self, s):
        out = _stage(self.g, *s)
        return out if isinstance(s[0], np.ndarray) else Share3(*(int(v) for v in out))

    def f_stage(self, s):
        out = _stage(self.f, *s)
        return out if isinstance(s[0], np.ndarray) else Share3(*(int(v) for v in out))

    def sbox(self, s):
        return self.f_stage(self.g_stage(s))

    def with_entry(self, component: int, index: int, value: int) -> "SboxDecomposition":
        """Copy with one entry of a 256-entry component table replaced."""
        tables = [t.copy() for t in self.tables()]
        tables[component][index] = value & 0xF
        return SboxDecomposition.from_tables(tables, source=f"{self.source} (mutated)")


# ---------------------------------------------------------------------------
# Table file I/O

_HEADER = """\
# Three-share threshold tables for the LED/PRESENT Sbox, S = F o G.
# Six blocks in order G1 G2 G3 F1 F2 F3.  Each block is a label line
# followed by 256 hex nibbles, entry index = share_a * 16 + share_b.
# Component i (1-based) reads the two shares other than share i-1:
#   G1, F1: share_a = s1, share_b = s2
#   G2, F2: share_a = s2, share_b = s0
#   G3, F3: share_a = s0, share_b = s1
# Shares of a 3-sharing are (s0, s1, s2) with value = s0 ^ s1 ^ s2.
"""


def format_tables(d: SboxDecomposition) -> str:
    lines = [_HEADER.rstrip("\n")]
    for name, table in zip(COMPONENT_NAMES, d.tables()):
        lines.append(name)
        for row in range(16):
            lines.append(" ".join(f"{v:X}" for v in table[16 * row : 16 * row + 16]))
    return "\n".join(lines) + "\n"


def write_tables(d: SboxDecomposition, path) -> None:
    Path(path).write_text(format_tables(d))


def parse_tables(text: str, source: str = "") -> SboxDecomposition:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    tables = []
    pos = 0
    for name in COMPONENT_NAMES:
        if pos >= len(tokens) or tokens[pos].upper() != name:
            found = tokens[pos] if pos < len(tokens) else "end of file"
            raise DecompositionError(f"{source or 'tables'}: expected block {name}, found {found!r}")
        body = tokens[pos + 1 : pos + 257]
        if len(body) != 256 or any(len(t) != 1 for t in body):
            raise DecompositionError(f"{source or 'tables'}: block {name} must hold 256 hex nibbles")
        try:
            tables.append(np.array([int(t, 16) for t in body], dtype=np.uint8))
        except ValueError as exc:
            raise DecompositionError(f"{source or 'tables'}: block {name}: {exc}") from None
        pos += 257
    if pos != len(tokens):
        raise DecompositionError(f"{source or 'tables'}: trailing data after block F3")
    return SboxDecomposition.from_tables(tables, source=source)


def read_tables(path) -> SboxDecomposition:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise DecompositionError(f"cannot read tables {path}: {exc}") from None
    return parse_tables(text, source=str(path))


def shipped_tables_text() -> str:
    return resources.files("led_ti.data").joinpath(TABLES_RESOURCE).read_text()


def load_decomposition(path=None, verify: bool = True) -> SboxDecomposition:
    """Load tables (the shipped file by default) and refuse ones that fail a check."""
    if path is None:
        d = parse_tables(shipped_tables_text(), source=TABLES_RESOURCE)
    else:
        d = read_tables(path)
    if verify:
        failed = [r.prop for r in verify_all(d) if not r.passed]
        if failed:
            raise DecompositionError(f"{d.source}: fails {', '.join(failed)}")
    return d


# ---------------------------------------------------------------------------
# Property checks


@dataclass
class VerificationReport:
    prop: str
    passed: bool
    cases: int
    counterexamples: list = field(default_factory=list)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        text = f"{self.prop}: {verdict} ({self.cases} cases"
        if self.counterexamples:
            text += f", {len(self.counterexamples)} counterexamples"
        return text + ")"


MAX_COUNTEREXAMPLES = 16


def _all_sharings():
    """Every 3-sharing of every nibble: arrays (x, s0, s1, s2) of length 4096."""
    x = _IDX >> 8
    s1, s2 = (_IDX >> 4) & 0xF, _IDX & 0xF
    return x, x ^ s1 ^ s2, s1, s2


def verify_correctness(d: SboxDecomposition) -> VerificationReport:
    x, s0, s1, s2 = _all_sharings()
    out = d.sbox((s0, s1, s2))
    got = out[0] ^ out[1] ^ out[2]
    bad = np.nonzero(got != _SBOX[x])[0]
    cex = [
        {"x": int(x[i]), "sharing": (int(s0[i]), int(s1[i]), int(s2[i])), "got": int(got[i]), "want": int(SBOX[x[i]])}
        for i in bad[:MAX_COUNTEREXAMPLES]
    ]
    return VerificationReport("correctness", bad.size == 0, x.size, cex)


def verify_noncompleteness(d: SboxDecomposition) -> VerificationReport:
    cex = []
    for name, comp, i in zip(COMPONENT_NAMES, d.g + d.f, (0, 1, 2) * 2):
        cube = comp.reshape(16, 16, 16)
        # sweeping the excluded share i must never change the output
        spread = np.ptp(cube, axis=i)
        for idx in np.argwhere(spread != 0)[: MAX_COUNTEREXAMPLES - len(cex)]:
            cex.append({"component": name, "excluded_share": i, "fixed_shares": tuple(int(v) for v in idx)})
    return VerificationReport("non-completeness", not cex, 6 * 4096, cex)


def _stage_uniformity(name, components, x, s0, s1, s2):
    out = _stage(components, s0, s1, s2)
    y = out[0] ^ out[1] ^ out[2]
    cex = []
    for v in range(16):
        sel = x == v
        ys = np.unique(y[sel])
        if ys.size != 1:
            cex.append({"stage": name, "x": v, "reason": "output not a sharing of a single value"})
            continue
        code = (out[1][sel].astype(np.int64) << 4) | out[2][sel]
        counts = np.bincount(code, minlength=256)
        if counts.min() != counts.max():
            cex.append({"stage": name, "x": v, "min_count": int(counts.min()), "max_count": int(counts.max())})
    return cex


def verify_uniformity(d: SboxDecomposition) -> VerificationReport:
    """Each stage, fed every sharing of x, must hit every sharing of its output once."""
    x, s0, s1, s2 = _all_sharings()
    cex = _stage_uniformity("G", d.g, x, s0, s1, s2)
    cex += _stage_uniformity("F", d.f, x, s0, s1, s2)
    return VerificationReport("uniformity", not cex, 2 * x.size, cex[:MAX_COUNTEREXAMPLES])


def verify_all(d: SboxDecomposition) -> list[VerificationReport]:
    return [verify_correctness(d), verify_noncompleteness(d), verify_uniformity(d)]
