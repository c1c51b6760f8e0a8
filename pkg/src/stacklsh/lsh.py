"""(L, K)-parameterized LSH: hash codes, multi-table index, and guarantees.

A hash family evaluates M b-bit hash functions on a trace, producing a
:class:`HashCode` of M blocks.  L hash tables are keyed by disjoint
contiguous slices of K blocks each (L * K <= M; leftover blocks unused),
and a query reports the union of the matching buckets across tables.
The closed-form candidate probability for a pair with similarity s is
``P = 1 - (1 - s**K)**L``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence, Union, runtime_checkable

from .errors import (
    DomainError,
    DuplicateId,
    FamilyMismatch,
    ParamMismatch,
    ShapeMismatch,
)
from .measures import DEFAULT_MEASURE_PARAMS, MeasureId, MeasureParams, similarity
from .traces import CorpusStats, CrashReport, StackTrace

INDEX_FORMAT_TAG = "DLSH1"


@dataclass(frozen=True)
class LshParams:
    """Index shape: M hash functions of b bits, L tables of K functions."""

    m: int = 64
    k: int = 1
    l: int = 1
    b: int = 8

    def __post_init__(self) -> None:
        for name in ("m", "k", "l", "b"):
            if getattr(self, name) < 1:
                raise ParamMismatch(f"{name} must be >= 1")
        if self.l * self.k > self.m:
            raise ParamMismatch(
                f"L * K = {self.l * self.k} exceeds the {self.m} available hash functions"
            )

    @property
    def key_bytes(self) -> int:
        """Fixed width of one serialized bucket key (K * b bits, zero padded)."""
        return (self.k * self.b + 7) // 8


@dataclass(frozen=True)
class HashCode:
    """M hash-function outputs, each packed into a b-bit block."""

    blocks: tuple[int, ...]
    bits: int

    def __post_init__(self) -> None:
        if not isinstance(self.blocks, tuple):
            object.__setattr__(self, "blocks", tuple(int(v) for v in self.blocks))
        if self.bits < 1:
            raise ShapeMismatch("blocks must have at least one bit")
        limit = 1 << self.bits
        for v in self.blocks:
            if not 0 <= v < limit:
                raise ShapeMismatch(f"block value {v} does not fit in {self.bits} bits")

    @property
    def m(self) -> int:
        return len(self.blocks)

    def table_key(self, table: int, k: int) -> int:
        """Packed key of table ``table``: blocks [table*k, (table+1)*k).

        Blocks are packed big-endian, block 0 most significant.
        """
        start = table * k
        if start + k > len(self.blocks):
            raise ShapeMismatch(f"table {table} needs blocks beyond M={len(self.blocks)}")
        key = 0
        for v in self.blocks[start : start + k]:
            key = (key << self.bits) | v
        return key


@runtime_checkable
class HashFamily(Protocol):
    """A deterministic family of M b-bit hash functions over traces."""

    @property
    def m(self) -> int: ...

    @property
    def b(self) -> int: ...

    def hash(self, trace: StackTrace) -> HashCode: ...

    def fingerprint(self) -> str: ...

    def spec(self) -> dict: ...


def pack_bits(bits, m: int, b: int) -> HashCode:
    """Group m * b bits into m blocks, first bit most significant."""
    values = [int(v) for v in bits]
    if len(values) != m * b:
        raise ShapeMismatch(f"expected {m * b} bits, got {len(values)}")
    blocks = []
    for block in range(m):
        value = 0
        for bit in values[block * b : (block + 1) * b]:
            value = (value << 1) | (1 if bit else 0)
        blocks.append(value)
    return HashCode(blocks=tuple(blocks), bits=b)


def probability_similarity(sim: float, k: int, l: int) -> float:
    """Probability that a pair with similarity ``sim`` collides in >= 1 table.

    Closed form ``1 - (1 - sim**k)**l`` under the identity
    collision-probability mapping.
    """
    if not 0.0 <= sim <= 1.0:
        raise DomainError(f"similarity {sim} outside [0, 1]")
    if k < 1 or l < 1:
        raise DomainError("k and l must be >= 1")
    return 1.0 - (1.0 - sim**k) ** l


def delta(p: float, k: int, l: int) -> float:
    """Miss probability ``(1 - p**k)**l``, the complement of the guarantee."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p} outside [0, 1]")
    if k < 1 or l < 1:
        raise DomainError("k and l must be >= 1")
    return (1.0 - p**k) ** l


def implied_similarity_threshold(k: int, l: int, target: float = 0.5) -> float:
    """Similarity s* at which the candidate probability reaches ``target``.

    Inverts ``1 - (1 - s**k)**l = target`` to
    ``s* = (1 - (1 - target)**(1/l))**(1/k)``.
    """
    if not 0.0 < target < 1.0:
        raise DomainError("target must be strictly inside (0, 1)")
    return (1.0 - (1.0 - target) ** (1.0 / l)) ** (1.0 / k)


def exact_block_hamming(x: HashCode, y: HashCode) -> float:
    """Block-level Hamming similarity: fraction of identical b-bit blocks."""
    if x.m != y.m or x.bits != y.bits:
        raise ShapeMismatch(
            f"codes have different shapes: ({x.m}, {x.bits}) vs ({y.m}, {y.bits})"
        )
    differing = sum(1 for u, v in zip(x.blocks, y.blocks) if u != v)
    return (x.m - differing) / x.m


class LshIndex:
    """L hash tables from packed bucket keys to trace-id lists.

    Stores ids only, never trace bodies.  Immutable once built; concurrent
    queries are safe.
    """

    def __init__(
        self,
        params: LshParams,
        family_fingerprint: str,
        family_spec: dict | None = None,
    ) -> None:
        self.params = params
        self.family_fingerprint = family_fingerprint
        self.family_spec = dict(family_spec or {})
        self.tables: list[dict[int, list[str]]] = [{} for _ in range(params.l)]
        self.ids: list[str] = []

    def __len__(self) -> int:
        return len(self.ids)

    def _insert(self, trace_id: str, code: HashCode) -> None:
        for j, table in enumerate(self.tables):
            key = code.table_key(j, self.params.k)
            table.setdefault(key, []).append(trace_id)

    def candidates(self, code: HashCode) -> set[str]:
        found: set[str] = set()
        for j, table in enumerate(self.tables):
            bucket = table.get(code.table_key(j, self.params.k))
            if bucket:
                found.update(bucket)
        return found


def _check_family(family: HashFamily, params: LshParams) -> None:
    if family.m < params.l * params.k:
        raise ParamMismatch(
            f"family provides {family.m} functions, index needs {params.l * params.k}"
        )
    if family.m != params.m or family.b != params.b:
        raise ParamMismatch(
            f"family shape ({family.m}, {family.b}) differs from "
            f"index params ({params.m}, {params.b})"
        )


def build_index(
    family: HashFamily,
    reports: Sequence[CrashReport],
    params: LshParams,
) -> LshIndex:
    """Hash every report once and insert its id into all L tables."""
    _check_family(family, params)
    index = LshIndex(params, family.fingerprint(), family.spec())
    seen: set[str] = set()
    for report in reports:
        if report.id in seen:
            raise DuplicateId(f"duplicate report id {report.id!r}")
        seen.add(report.id)
        index._insert(report.id, family.hash(report.trace))
        index.ids.append(report.id)
    return index


QueryItem = Union[CrashReport, StackTrace]


def _query_trace(item: QueryItem) -> tuple[StackTrace, str | None]:
    if isinstance(item, CrashReport):
        return item.trace, item.id
    return item, None


def query(
    index: LshIndex,
    item: QueryItem,
    family: HashFamily,
    *,
    exclude_id: str | None = None,
) -> set[str]:
    """Union of the query's buckets across all L tables, minus the query id.

    Passing a :class:`CrashReport` excludes its own id from the result;
    a bare :class:`StackTrace` excludes only an explicit ``exclude_id``.
    """
    if family.fingerprint() != index.family_fingerprint:
        raise FamilyMismatch("index was built with a different hash family")
    trace, own_id = _query_trace(item)
    found = index.candidates(family.hash(trace))
    found.discard(own_id if own_id is not None else exclude_id)
    if exclude_id is not None:
        found.discard(exclude_id)
    return found


def query_ranked(
    index: LshIndex,
    item: QueryItem,
    family: HashFamily,
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    corpus: Union[Mapping[str, CrashReport], Sequence[CrashReport]],
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
    *,
    exclude_id: str | None = None,
) -> list[tuple[str, float]]:
    """Candidates re-scored with the exact measure, best first.

    Sorted by descending similarity with ties broken by ascending id.
    ``corpus`` maps ids to reports so candidates can be re-scored (the
    index itself stores ids only).
    """
    by_id = corpus if isinstance(corpus, Mapping) else {r.id: r for r in corpus}
    trace, _ = _query_trace(item)
    found = query(index, item, family, exclude_id=exclude_id)
    scored = [
        (cid, similarity(measure, trace, by_id[cid].trace, stats, measure_params))
        for cid in found
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def _key_to_bytes(key: int, width: int) -> bytes:
    return key.to_bytes(width, "big")


def save_index(index: LshIndex, path: Union[str, Path]) -> None:
    """Write the documented index container.

    Layout: the ``DLSH1`` tag line, a JSON header line with the params,
    family fingerprint/spec and the id list, then L binary table sections
    of ``{key: fixed-width bytes, count: u32, id indexes: u32[count]}``.
    """
    p = index.params
    id_pos = {trace_id: i for i, trace_id in enumerate(index.ids)}
    header = {
        "format": INDEX_FORMAT_TAG,
        "m": p.m,
        "k": p.k,
        "l": p.l,
        "b": p.b,
        "fingerprint": index.family_fingerprint,
        "family": index.family_spec,
        "ids": index.ids,
    }
    width = p.key_bytes
    with open(path, "wb") as fh:
        fh.write(INDEX_FORMAT_TAG.encode("ascii") + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for table in index.tables:
            fh.write(struct.pack("<I", len(table)))
            for key in sorted(table):
                bucket = table[key]
                fh.write(_key_to_bytes(key, width))
                fh.write(struct.pack("<I", len(bucket)))
                fh.write(struct.pack(f"<{len(bucket)}I", *(id_pos[i] for i in bucket)))


def load_index(path: Union[str, Path]) -> LshIndex:
    with open(path, "rb") as fh:
        tag = fh.readline().strip().decode("ascii")
        if tag != INDEX_FORMAT_TAG:
            raise ValueError(f"not a {INDEX_FORMAT_TAG} index file (tag {tag!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        params = LshParams(m=header["m"], k=header["k"], l=header["l"], b=header["b"])
        index = LshIndex(params, header["fingerprint"], header.get("family"))
        index.ids = [str(i) for i in header["ids"]]
        width = params.key_bytes
        for j in range(params.l):
            (n_buckets,) = struct.unpack("<I", fh.read(4))
            table: dict[int, list[str]] = {}
            for _ in range(n_buckets):
                key = int.from_bytes(fh.read(width), "big")
                (count,) = struct.unpack("<I", fh.read(4))
                positions = struct.unpack(f"<{count}I", fh.read(4 * count))
                table[key] = [index.ids[pos] for pos in positions]
            index.tables[j] = table
    return index
