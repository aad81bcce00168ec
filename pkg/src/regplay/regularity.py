"""Symbol multisets over entity configurations and the regularity reward.

The reward of a configuration is the negative Shannon entropy (natural
log) of a multiset of discrete symbols read off the entities.  Symbols
can be the binned coordinates themselves (direct mapping), the binned
pairwise offsets (ordered or elementwise-absolute), or binned pairwise
Euclidean distances.  The more often the same symbol repeats, the peakier
the multiset and the higher the reward; the maximum 0 is reached when
every symbol is identical.

Two evaluation paths are provided and property-tested against each other:
`regularity_reward` on a list of `EntityView`s (readable, per-state), and
`batch_regularity` on an (B, N, D) position array (vectorized, used by the
planner where millions of imagined states are scored).

A compression-based reward variant is included: the sorted symbol multiset
is serialized to a canonical byte string (header byte = tag, values as
4-byte little-endian two's complement, symbols in lexicographic order) and
scored as minus the compressed length under a bundled run-length +
Elias-gamma coder.  The compressor is an argument so alternatives can be
swapped in; short-string behavior is compressor-dependent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol, Sequence

import numpy as np

# Symbol tag namespaces.  Direct coordinate symbols are tagged by axis
# index (or all pooled under tag 0); pair symbols and per-entity color
# symbols get their own namespaces so unrelated quantities never compare
# equal.  Tags must fit in one byte for the canonical serialization.
POOLED_TAG = 0
PAIR_TAG = 8
COLOR_PAIR_TAG = 9
COLOR_TAG = 10

_MAX_AXES = PAIR_TAG  # axis tags occupy 0..7

# Bit layout for the vectorized path: each coordinate value is packed in
# 25 bits (signed range +-2**24), color bits appended, tag on top.
_VALUE_BITS = 25
_VALUE_OFFSET = 1 << 24


class MapVariant(Enum):
    DIRECT = "direct"
    RELATIVE_POSITION = "relative_position"
    ABS_RELATIVE_POSITION = "abs_relative_position"
    EUCLIDEAN_DISTANCE = "euclidean_distance"


RELATIONAL_VARIANTS = (
    MapVariant.RELATIVE_POSITION,
    MapVariant.ABS_RELATIVE_POSITION,
    MapVariant.EUCLIDEAN_DISTANCE,
)


@dataclass(frozen=True, order=True)
class Symbol:
    """A discrete symbol: namespace tag plus a tuple of exact integers."""

    tag: int
    values: tuple[int, ...]


@dataclass(frozen=True)
class EntityView:
    """Reward-facing view of one entity: real position, optional color bits."""

    position: tuple[float, ...]
    color_code: tuple[int, ...] | None = None
    frozen: bool = False


@dataclass(frozen=True)
class SymbolMapSpec:
    """Declarative description of the state-to-symbols mapping."""

    variant: MapVariant
    bin_size: float = 1.0
    subspace: tuple[int, ...] = (0, 1)
    include_color: bool = False
    axis_tagged: bool = True  # direct only; False pools all axes into one namespace
    order_k: int = 0  # 0 = derive from variant (1 direct, 2 relational)

    def __post_init__(self) -> None:
        if self.bin_size <= 0:
            raise ValueError("bin_size must be positive")
        if len(self.subspace) == 0:
            raise ValueError("subspace must name at least one coordinate")
        if len(self.subspace) > _MAX_AXES:
            raise ValueError(f"at most {_MAX_AXES} subspace coordinates supported")
        if any(j < 0 for j in self.subspace):
            raise ValueError("subspace indices must be non-negative")
        expected = 1 if self.variant is MapVariant.DIRECT else 2
        if self.order_k == 0:
            object.__setattr__(self, "order_k", expected)
        elif self.order_k != expected:
            raise ValueError(
                f"order {self.order_k} not supported for {self.variant.value}; "
                f"only order {expected} is implemented"
            )


class SymbolHistogram:
    """Multiset of symbols with positive multiplicities."""

    __slots__ = ("entries",)

    def __init__(self, entries: dict[Symbol, int]):
        for sym, count in entries.items():
            if count < 1:
                raise ValueError(f"zero-count entry for {sym}")
        self.entries = dict(entries)

    @classmethod
    def from_symbols(cls, symbols: Iterable[Symbol]) -> "SymbolHistogram":
        entries: dict[Symbol, int] = {}
        for sym in symbols:
            entries[sym] = entries.get(sym, 0) + 1
        return cls(entries)

    @property
    def total(self) -> int:
        return sum(self.entries.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SymbolHistogram) and self.entries == other.entries

    def __repr__(self) -> str:
        inner = ", ".join(f"{s}: {m}" for s, m in sorted(self.entries.items()))
        return f"SymbolHistogram({{{inner}}})"


def discretize(value: float, bin_size: float) -> int:
    """Round value/bin_size half away from zero to an exact integer bin."""
    if bin_size <= 0:
        raise ValueError("bin_size must be positive")
    if not math.isfinite(value):
        raise ValueError("non-finite input")
    scaled = value / bin_size
    binned = math.floor(abs(scaled) + 0.5)
    return binned if scaled >= 0 else -binned


def _discretize_array(values: np.ndarray, bin_size: float) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite input")
    scaled = np.asarray(values, dtype=np.float64) / bin_size
    binned = np.floor(np.abs(scaled) + 0.5)
    return np.where(scaled >= 0, binned, -binned).astype(np.int64)


def _project(entity: EntityView, subspace: tuple[int, ...]) -> tuple[float, ...]:
    pos = entity.position
    if max(subspace) >= len(pos):
        raise ValueError("subspace index outside entity dimensionality")
    return tuple(pos[j] for j in subspace)


def build_multiset_direct(entities: Sequence[EntityView], spec: SymbolMapSpec) -> SymbolHistogram:
    """One scalar symbol per entity per subspace coordinate, plus color."""
    if spec.variant is not MapVariant.DIRECT:
        raise ValueError("direct builder called with a relational spec")
    if len(entities) == 0:
        raise ValueError("no entities")
    symbols: list[Symbol] = []
    for ent in entities:
        coords = _project(ent, spec.subspace)
        for slot, value in enumerate(coords):
            tag = spec.subspace[slot] if spec.axis_tagged else POOLED_TAG
            symbols.append(Symbol(tag, (discretize(value, spec.bin_size),)))
        if spec.include_color:
            if ent.color_code is None:
                raise ValueError("spec includes color but entity has no color code")
            symbols.append(Symbol(COLOR_TAG, tuple(int(b) for b in ent.color_code)))
    return SymbolHistogram.from_symbols(symbols)


def _pair_symbol(a: EntityView, b: EntityView, spec: SymbolMapSpec) -> Symbol:
    da = _project(a, spec.subspace)
    db = _project(b, spec.subspace)
    diff = [x - y for x, y in zip(da, db)]
    if spec.variant is MapVariant.RELATIVE_POSITION:
        values = tuple(discretize(d, spec.bin_size) for d in diff)
    elif spec.variant is MapVariant.ABS_RELATIVE_POSITION:
        # binning first, absolute value second
        values = tuple(abs(discretize(d, spec.bin_size)) for d in diff)
    elif spec.variant is MapVariant.EUCLIDEAN_DISTANCE:
        values = (discretize(math.sqrt(sum(d * d for d in diff)), spec.bin_size),)
    else:
        raise ValueError("relational builder called with a direct spec")
    tag = PAIR_TAG
    if spec.include_color:
        if a.color_code is None or b.color_code is None:
            raise ValueError("spec includes color but entity has no color code")
        values = values + tuple(abs(int(x) - int(y)) for x, y in zip(a.color_code, b.color_code))
        tag = COLOR_PAIR_TAG
    return Symbol(tag, values)


def build_multiset_relational(entities: Sequence[EntityView], spec: SymbolMapSpec) -> SymbolHistogram:
    """Pair symbols: ordered pairs for signed offsets, combinations otherwise."""
    if spec.variant not in RELATIONAL_VARIANTS:
        raise ValueError("relational builder called with a direct spec")
    n = len(entities)
    if n < 2:
        raise ValueError("relational mapping needs at least 2 entities")
    symbols: list[Symbol] = []
    ordered = spec.variant is MapVariant.RELATIVE_POSITION
    for i in range(n):
        for j in range(i + 1, n):
            symbols.append(_pair_symbol(entities[i], entities[j], spec))
            if ordered:
                symbols.append(_pair_symbol(entities[j], entities[i], spec))
    return SymbolHistogram.from_symbols(symbols)


def build_multiset(entities: Sequence[EntityView], spec: SymbolMapSpec) -> SymbolHistogram:
    if spec.variant is MapVariant.DIRECT:
        return build_multiset_direct(entities, spec)
    return build_multiset_relational(entities, spec)


def entropy(hist: SymbolHistogram) -> float:
    """Shannon entropy in nats of the histogram's relative frequencies."""
    total = hist.total
    if total < 1:
        raise ValueError("empty multiset")
    acc = 0.0
    # canonical symbol order so the float sum ignores insertion history
    for sym in sorted(hist.entries):
        p = hist.entries[sym] / total
        acc -= p * math.log(p)
    return acc


def regularity_reward(entities: Sequence[EntityView], spec: SymbolMapSpec) -> float:
    """Negative entropy of the symbol multiset; 0 iff all symbols coincide."""
    return -entropy(build_multiset(entities, spec)) + 0.0  # avoid -0.0


# ---------------------------------------------------------------------------
# Vectorized evaluation over batches of imagined states.


def _pack_colors(colors: np.ndarray | None, n: int) -> np.ndarray | None:
    """Collapse per-entity bit rows into integers; None passes through."""
    if colors is None:
        return None
    bits = np.asarray(colors, dtype=np.int64)
    if bits.ndim != 2 or bits.shape[0] != n:
        raise ValueError("colors must be an (N, bits) array")
    weights = 1 << np.arange(bits.shape[1], dtype=np.int64)
    return bits @ weights


def _entropy_rows(codes: np.ndarray) -> np.ndarray:
    """Entropy per row of an integer code matrix (each row one multiset)."""
    rows, count = codes.shape
    codes = np.sort(codes, axis=1)
    starts = np.ones((rows, count), dtype=bool)
    starts[:, 1:] = codes[:, 1:] != codes[:, :-1]
    idx = np.flatnonzero(starts.ravel())
    lengths = np.diff(np.append(idx, rows * count))
    mlogm = lengths * np.log(lengths)
    sums = np.bincount(idx // count, weights=mlogm, minlength=rows)
    return np.log(count) - sums / count


def _check_code_range(values: np.ndarray) -> np.ndarray:
    if np.any(np.abs(values) >= _VALUE_OFFSET):
        raise ValueError("coordinate bins exceed the packable range")
    return values + _VALUE_OFFSET


def batch_regularity(
    positions: np.ndarray,
    spec: SymbolMapSpec,
    colors: np.ndarray | None = None,
) -> np.ndarray:
    """Regularity reward for every state in a (B, N, D) position array.

    `colors` is an optional (N, bits) 0/1 array shared by all states (colors
    are static entity attributes).  Matches `regularity_reward` row by row.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3:
        raise ValueError("positions must be (batch, entities, dims)")
    nbatch, n, dims = positions.shape
    if max(spec.subspace) >= dims:
        raise ValueError("subspace index outside entity dimensionality")
    if spec.include_color and colors is None:
        raise ValueError("spec includes color but no colors given")
    color_ids = _pack_colors(colors, n) if spec.include_color else None
    color_bits = 0 if colors is None else int(np.asarray(colors).shape[1])
    sub = positions[:, :, list(spec.subspace)]

    if spec.variant is MapVariant.DIRECT:
        if n < 1:
            raise ValueError("no entities")
        vals = _check_code_range(_discretize_array(sub, spec.bin_size))  # (B, N, S)
        if spec.axis_tagged:
            tags = np.asarray(spec.subspace, dtype=np.int64)
        else:
            tags = np.full(len(spec.subspace), POOLED_TAG, dtype=np.int64)
        codes = (tags << _VALUE_BITS) + vals
        codes = codes.reshape(nbatch, n * len(spec.subspace))
        if spec.include_color:
            ccodes = (np.int64(COLOR_TAG) << _VALUE_BITS) + color_ids
            codes = np.concatenate([codes, np.broadcast_to(ccodes, (nbatch, n))], axis=1)
        return -_entropy_rows(codes) + 0.0

    if n < 2:
        raise ValueError("relational mapping needs at least 2 entities")
    iu, ju = np.triu_indices(n, k=1)
    diffs = sub[:, iu, :] - sub[:, ju, :]  # (B, C, S)
    tag = np.int64(COLOR_PAIR_TAG if spec.include_color else PAIR_TAG)

    if spec.variant is MapVariant.EUCLIDEAN_DISTANCE:
        vals = _check_code_range(
            _discretize_array(np.sqrt(np.sum(diffs * diffs, axis=2)), spec.bin_size)
        )
        codes = (tag << _VALUE_BITS) + vals  # (B, C)
    else:
        binned = _discretize_array(diffs, spec.bin_size)
        if spec.variant is MapVariant.ABS_RELATIVE_POSITION:
            parts = [_check_code_range(np.abs(binned))]
        else:
            parts = [_check_code_range(binned), _check_code_range(-binned)]
        packed = []
        for part in parts:
            codes = tag
            for k in range(part.shape[2]):
                codes = (codes << _VALUE_BITS) + part[:, :, k]
            packed.append(codes)
        codes = packed[0] if len(packed) == 1 else np.concatenate(packed, axis=1)

    if spec.include_color:
        cdiff = np.asarray(colors, dtype=np.int64)[iu] ^ np.asarray(colors, dtype=np.int64)[ju]
        weights = 1 << np.arange(color_bits, dtype=np.int64)
        pair_color = cdiff @ weights  # (C,)
        if spec.variant is MapVariant.RELATIVE_POSITION:
            pair_color = np.concatenate([pair_color, pair_color])
        codes = (codes << color_bits) + pair_color
    return -_entropy_rows(codes) + 0.0


# ---------------------------------------------------------------------------
# Compression-based reward variant.


class Compressor(Protocol):
    def compress(self, data: bytes) -> bytes: ...


def serialize_symbols(hist: SymbolHistogram) -> bytes:
    """Canonical multiset bytes: sorted by (tag, values), repeated per count."""
    out = bytearray()
    for sym in sorted(hist.entries):
        if not 0 <= sym.tag <= 0xFF:
            raise ValueError("tag does not fit the one-byte header")
        encoded = bytes([sym.tag]) + b"".join(
            int(v).to_bytes(4, "little", signed=True) for v in sym.values
        )
        out += encoded * hist.entries[sym]
    return bytes(out)


class _BitWriter:
    def __init__(self) -> None:
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, value: int, width: int) -> None:
        for shift in range(width - 1, -1, -1):
            self.acc = (self.acc << 1) | ((value >> shift) & 1)
            self.nbits += 1
            if self.nbits == 8:
                self.buf.append(self.acc)
                self.acc = 0
                self.nbits = 0

    def finish(self) -> bytes:
        if self.nbits:
            self.buf.append(self.acc << (8 - self.nbits))
        return bytes(self.buf)


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def read(self, width: int) -> int:
        value = 0
        for _ in range(width):
            byte = self.data[self.pos >> 3]
            bit = (byte >> (7 - (self.pos & 7))) & 1
            value = (value << 1) | bit
            self.pos += 1
        return value


def _gamma_encode(writer: _BitWriter, n: int) -> None:
    # Elias gamma: floor(log2 n) zeros, then n's binary digits.
    width = n.bit_length()
    writer.write(0, width - 1)
    writer.write(n, width)


def _gamma_decode(reader: _BitReader) -> int:
    zeros = 0
    while reader.read(1) == 0:
        zeros += 1
    value = 1
    for _ in range(zeros):
        value = (value << 1) | reader.read(1)
    return value


class RunLengthEliasGamma:
    """Lossless byte run-length coder with Elias-gamma coded run lengths.

    Layout: 8-byte little-endian uncompressed length, then for each run a
    literal byte followed by the gamma code of the run length.
    """

    def compress(self, data: bytes) -> bytes:
        writer = _BitWriter()
        i = 0
        while i < len(data):
            j = i
            while j < len(data) and data[j] == data[i]:
                j += 1
            writer.write(data[i], 8)
            _gamma_encode(writer, j - i)
            i = j
        return len(data).to_bytes(8, "little") + writer.finish()

    def decompress(self, blob: bytes) -> bytes:
        length = int.from_bytes(blob[:8], "little")
        reader = _BitReader(blob[8:])
        out = bytearray()
        while len(out) < length:
            literal = reader.read(8)
            run = _gamma_decode(reader)
            out += bytes([literal]) * run
        return bytes(out)


def compression_reward(
    entities: Sequence[EntityView],
    spec: SymbolMapSpec,
    compressor: Compressor | None = None,
) -> int:
    """Minus the compressed length of the canonical direct-symbol bytes."""
    if spec.variant is not MapVariant.DIRECT:
        raise ValueError("compression reward is defined for the direct mapping")
    if compressor is None:
        compressor = RunLengthEliasGamma()
    payload = serialize_symbols(build_multiset_direct(entities, spec))
    return -len(compressor.compress(payload))
