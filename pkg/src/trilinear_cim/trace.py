"""Event ledgers filled in by the functional simulator and read by the cost model."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

COUNT_KEYS = (
    "array_reads",
    "cell_reads",
    "adc_conversions",
    "cycles",
    "bg_lines",
    "bg_updates",
    "dac_conversions",
    "writes_cells",
    "write_phases",
    "sfu_compare",
    "sfu_lut",
    "sfu_add",
    "sfu_mult",
    "replicas",
    "buffer_bytes",
)

STAGE_ORDER = (
    "projection", "scaled-query", "score", "k-program", "qk", "softmax",
    "v-program", "sv", "value-agg", "output-proj", "layernorm", "ffn", "gelu",
)


class Trace:
    """Hardware event counts keyed by (layer, head, stage); head None = shared."""

    def __init__(self):
        self.entries: dict[tuple[int, int | None, str], Counter] = {}

    def add(self, layer: int, head: int | None, stage: str, **counts) -> None:
        bad = set(counts) - set(COUNT_KEYS)
        if bad:
            raise KeyError(f"unknown trace keys {sorted(bad)}")
        c = self.entries.setdefault((layer, head, stage), Counter())
        for k, v in counts.items():
            c[k] += int(v)

    def add_sfu(self, layer: int, head: int | None, stage: str, ops: Counter) -> None:
        self.add(layer, head, stage, **{f"sfu_{k}": v for k, v in ops.items()})

    def stages(self) -> list[str]:
        """Stage names in dataflow order, unknown names last in first-seen order."""
        seen = []
        for _, _, s in self.entries:
            if s not in seen:
                seen.append(s)
        rank = {s: i for i, s in enumerate(STAGE_ORDER)}
        return sorted(seen, key=lambda s: (rank.get(s, len(rank)), seen.index(s)))

    def stage_total(self, stage: str) -> Counter:
        out = Counter()
        for (_, _, s), c in self.entries.items():
            if s == stage:
                out.update(c)
        return out

    def total(self, key: str) -> int:
        return sum(c[key] for c in self.entries.values())

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        strip = lambda t: {k: +v for k, v in t.entries.items() if +v}
        return strip(self) == strip(other)


@dataclass
class WriteLog:
    """Non-volatile cells programmed at inference time."""

    records: list[tuple[int, int, str, int]] = field(default_factory=list)

    def record(self, layer: int, head: int, operand: str, cells: int) -> None:
        self.records.append((layer, head, operand, int(cells)))

    @property
    def total(self) -> int:
        return sum(r[3] for r in self.records)

    def __int__(self):
        return self.total


class BufferTracker:
    """Peak residency of intermediate N x d matrices in the global buffer."""

    def __init__(self):
        self.live: dict[str, int] = {}
        self.peak_elems = 0
        self.peak_matrices = 0

    def store(self, name: str, elems: int) -> None:
        self.live[name] = int(elems)
        self.peak_elems = max(self.peak_elems, sum(self.live.values()))
        self.peak_matrices = max(self.peak_matrices, len(self.live))

    def free(self, name: str) -> None:
        self.live.pop(name, None)
