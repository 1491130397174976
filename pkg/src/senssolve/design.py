"""Matched designs: data model, ingestion and per-stratum summaries.

A design is a sequence of strata, each holding one treated unit and
``n_i - 1`` controls. Designs are immutable once built.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DesignError,
    EmptyInput,
    MissingTreated,
    MultipleTreated,
    NonFiniteOutcome,
    StratumTooSmall,
)

REQUIRED_COLUMNS = ("block_id", "treated", "outcome")


@dataclass(frozen=True)
class Stratum:
    id: Any
    outcomes: tuple[float, ...]
    treated_index: int

    def __post_init__(self):
        if len(self.outcomes) < 2:
            raise StratumTooSmall(f"stratum {self.id!r} has {len(self.outcomes)} unit(s)")
        if not 0 <= self.treated_index < len(self.outcomes):
            raise DesignError(f"stratum {self.id!r}: treated index out of range")
        if not all(math.isfinite(v) for v in self.outcomes):
            raise NonFiniteOutcome(f"stratum {self.id!r} has a non-finite outcome")

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @property
    def treatment(self) -> np.ndarray:
        z = np.zeros(self.n)
        z[self.treated_index] = 1.0
        return z


@dataclass(frozen=True)
class StratumSummary:
    """Observed summary of one stratum.

    ``tau_hat`` is the treated-minus-mean-control difference, which is also
    the observed entry of the stratum's delta vector. ``weight`` is n_i/N.
    """

    tau_hat: float
    weight: float
    n: int

    @property
    def delta_obs(self) -> float:
        return self.tau_hat


@dataclass(frozen=True)
class MatchedDesign:
    strata: tuple[Stratum, ...]
    is_binary: bool = field(init=False)

    def __post_init__(self):
        if len(self.strata) == 0:
            raise EmptyInput("design has no strata")
        object.__setattr__(self, "strata", tuple(self.strata))
        binary = all(v in (0.0, 1.0) for s in self.strata for v in s.outcomes)
        object.__setattr__(self, "is_binary", binary)

    @property
    def B(self) -> int:
        return len(self.strata)

    @property
    def N(self) -> int:
        return int(self.sizes.sum())

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([s.n for s in self.strata], dtype=np.int64)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.sizes)[:-1]))

    @cached_property
    def outcomes(self) -> np.ndarray:
        """All responses, stratum by stratum."""
        return np.concatenate([np.asarray(s.outcomes, dtype=float) for s in self.strata])

    @cached_property
    def treated_index(self) -> np.ndarray:
        return np.array([s.treated_index for s in self.strata], dtype=np.int64)

    @cached_property
    def treatment(self) -> np.ndarray:
        z = np.zeros(self.N)
        z[self.offsets + self.treated_index] = 1.0
        return z

    @cached_property
    def tau_hat(self) -> np.ndarray:
        """Per-stratum treated-minus-control mean differences."""
        sums = np.add.reduceat(self.outcomes, self.offsets)
        treated = self.outcomes[self.offsets + self.treated_index]
        return treated - (sums - treated) / (self.sizes - 1)

    @classmethod
    def from_arrays(cls, block_ids: Sequence, treated: Sequence, outcomes: Sequence) -> MatchedDesign:
        records = (
            {"block_id": b, "treated": t, "outcome": y}
            for b, t, y in zip(block_ids, treated, outcomes)
        )
        return _build(records)

    def negated(self) -> MatchedDesign:
        """The design with every outcome multiplied by -1."""
        return MatchedDesign(
            tuple(Stratum(s.id, tuple(-v for v in s.outcomes), s.treated_index) for s in self.strata)
        )

    def to_records(self) -> list[dict]:
        return [
            {"block_id": s.id, "treated": int(j == s.treated_index), "outcome": v}
            for s in self.strata
            for j, v in enumerate(s.outcomes)
        ]

    def to_json(self) -> str:
        payload = {
            "strata": [
                {"id": s.id, "outcomes": list(s.outcomes), "treated_index": s.treated_index}
                for s in self.strata
            ]
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> MatchedDesign:
        payload = json.loads(text)
        strata = [
            Stratum(item["id"], tuple(float(v) for v in item["outcomes"]), int(item["treated_index"]))
            for item in payload["strata"]
        ]
        return cls(tuple(strata))

    def to_csv(self, delimiter: str = ",") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS)
        for rec in self.to_records():
            writer.writerow([rec["block_id"], rec["treated"], repr(rec["outcome"])])
        return buf.getvalue()


def _parse_treated(value, block_id) -> int:
    if isinstance(value, str):
        value = value.strip()
    try:
        t = float(value)
    except (TypeError, ValueError):
        raise DesignError(f"block {block_id!r}: treated value {value!r} is not 0/1") from None
    if t not in (0.0, 1.0):
        raise DesignError(f"block {block_id!r}: treated value {value!r} is not 0/1")
    return int(t)


def _parse_outcome(value, block_id) -> float:
    try:
        y = float(value)
    except (TypeError, ValueError):
        raise NonFiniteOutcome(f"block {block_id!r}: outcome {value!r} is not a number") from None
    if not math.isfinite(y):
        raise NonFiniteOutcome(f"block {block_id!r}: outcome {value!r} is not finite")
    return y


def _build(records: Iterable[Mapping[str, Any]]) -> MatchedDesign:
    blocks: dict[Any, list[tuple[int, float]]] = {}
    for rec in records:
        try:
            block_id = rec["block_id"]
            raw_t, raw_y = rec["treated"], rec["outcome"]
        except KeyError as exc:
            raise DesignError(f"record is missing column {exc.args[0]!r}") from None
        if isinstance(block_id, str):
            block_id = block_id.strip()
        blocks.setdefault(block_id, []).append(
            (_parse_treated(raw_t, block_id), _parse_outcome(raw_y, block_id))
        )
    if not blocks:
        raise EmptyInput("no records")
    strata = []
    for block_id, units in blocks.items():
        treated = [j for j, (t, _) in enumerate(units) if t == 1]
        if not treated:
            raise MissingTreated(block_id)
        if len(treated) > 1:
            raise MultipleTreated(block_id)
        if len(units) < 2:
            raise StratumTooSmall(f"block {block_id!r} has a single unit")
        strata.append(Stratum(block_id, tuple(y for _, y in units), treated[0]))
    return MatchedDesign(tuple(strata))


def _sniff_delimiter(header: str) -> str:
    counts = {d: header.count(d) for d in ("\t", ",", ";")}
    best = max(counts, key=counts.get)
    return best if counts[best] > 0 else ","


def load_design(source) -> MatchedDesign:
    """Build a validated design from delimited text or a record stream.

    ``source`` may be a path, an open text file, or an iterable of mappings
    with keys ``block_id``, ``treated`` and ``outcome``. Strata appear in
    first-appearance order of their block id; units keep record order.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return load_design(fh)
    if hasattr(source, "read"):
        text = source.read()
        lines = text.splitlines()
        if not lines or not lines[0].strip():
            raise EmptyInput("input has no header line")
        delimiter = _sniff_delimiter(lines[0])
        reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in fields]
        if missing:
            raise DesignError(f"missing required column(s): {', '.join(missing)}")
        reader.fieldnames = fields
        return _build(row for row in reader if any((v or "").strip() for v in row.values()))
    return _build(source)


def summarize(design: MatchedDesign) -> list[StratumSummary]:
    N = design.N
    return [
        StratumSummary(float(t), float(n) / N, int(n))
        for t, n in zip(design.tau_hat, design.sizes)
    ]


def adjusted_deltas(stratum: Stratum, tau0: float) -> np.ndarray:
    """Sharp-null imputed deltas minus ``tau0`` for every unit of a stratum.

    Entry j is what the treated-minus-control difference would be, less
    ``tau0``, had unit j been the treated one, using responses adjusted by
    ``R - Z * tau0``.
    """
    adj = np.asarray(stratum.outcomes, dtype=float) - stratum.treatment * tau0
    return _deltas_from_adjusted(adj)


def _deltas_from_adjusted(adj: np.ndarray) -> np.ndarray:
    # works row-wise on (..., n) arrays
    n = adj.shape[-1]
    total = adj.sum(axis=-1, keepdims=True)
    return adj - (total - adj) / (n - 1)


def size_groups(sizes: np.ndarray) -> dict[int, np.ndarray]:
    """Map each distinct stratum size to the indices of strata with that size."""
    sizes = np.asarray(sizes)
    return {int(n): np.flatnonzero(sizes == n) for n in np.unique(sizes)}


def gather(flat: np.ndarray, offsets: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Rows of a flat per-unit array for same-size strata ``idx`` as a (len(idx), n) block."""
    return flat[offsets[idx][:, None] + np.arange(n)]
