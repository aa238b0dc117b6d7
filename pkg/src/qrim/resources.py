"""Inference memory and operation accounting.

Memory is the stored model (weights at their bit-width, biases and batch
norm parameters at 32 bit) plus the two consecutive feature maps with the
largest combined size.  Feature map 0 is the 2-channel network input and the
last one is the 2-channel output; both are held at the activation
bit-width when ``QuantSpec.quantize_io`` is set, otherwise at 32 bit.
Units: ``KB = 1024`` and ``MB = 1024**2`` bytes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import UsageError
from .qat import ModelConfig, QuantSpec, channel_schedule

__all__ = [
    "KB", "MB", "NM_CANONICAL",
    "LayerResources", "ResourceReport",
    "count_weights", "count_aux_params", "featuremap_bytes", "count_macs", "count_ops",
    "report", "pareto_scan", "reports_csv", "reports_markdown",
]

KB = 1024
MB = 1024 * 1024
# 96 x 96 snapshots; the size the reference memory figures assume
NM_CANONICAL = 9216

Schedule = Sequence[tuple[int, int]]


def _schedule(config_or_schedule) -> list[tuple[int, int]]:
    if isinstance(config_or_schedule, ModelConfig):
        return channel_schedule(config_or_schedule)
    return [(int(a), int(b)) for a, b in config_or_schedule]


def count_weights(schedule: Schedule | ModelConfig, kernel: int = 3) -> int:
    """Convolution weights ``sum C_in * C_out * k * k`` (biases excluded)."""
    return sum(ci * co * kernel * kernel for ci, co in _schedule(schedule))


def count_aux_params(schedule: Schedule | ModelConfig) -> int:
    """Biases of every layer plus BN scale/shift of the hidden layers after the first."""
    s = _schedule(schedule)
    biases = sum(co for _, co in s)
    bn = sum(2 * co for _, co in s[1:-1])
    return biases + bn


def _fm_bits(schedule: Schedule, act_bits: int, io_bits: int) -> list[tuple[int, int]]:
    """``(channels, bits)`` of every feature map from the input to the output."""
    s = _schedule(schedule)
    if not s:
        return []
    maps = [(s[0][0], io_bits)]
    maps += [(co, act_bits) for _, co in s[:-1]]
    maps.append((s[-1][1], io_bits))
    return maps


def _map_bytes(channels: int, bits: int, nm: int) -> float:
    return channels * nm * bits / 8


def featuremap_bytes(schedule: Schedule | ModelConfig, N: int, M: int, act_bits: int = 32,
                     io_bits: int | None = None) -> float:
    """Largest combined size of two consecutive feature maps.

    ``io_bits`` defaults to 32 (the unquantised network input and output).
    """
    io_bits = 32 if io_bits is None else io_bits
    maps = _fm_bits(schedule, act_bits, io_bits)
    nm = N * M
    sizes = [_map_bytes(c, b, nm) for c, b in maps]
    return max((a + b for a, b in zip(sizes, sizes[1:])), default=0.0)


def count_macs(schedule: Schedule | ModelConfig, N: int, M: int, kernel: int = 3) -> int:
    """Multiply-accumulates ``sum C_in * C_out * k * k * N * M``."""
    return count_weights(schedule, kernel) * N * M


def count_ops(schedule: Schedule | ModelConfig, N: int, M: int, kernel: int = 3) -> int:
    """Operation count: multiply-accumulates plus elementwise work.

    MACs plus three elementwise operations per input channel and pixel of
    every layer.  Reported values are ``count_ops // 10**6``.
    """
    s = _schedule(schedule)
    return count_macs(s, N, M, kernel) + 3 * sum(ci for ci, _ in s) * N * M


@dataclass
class LayerResources:
    index: int
    c_in: int
    c_out: int
    weights: int
    weight_bytes: float
    aux_bytes: float
    out_featuremap_bytes: float
    macs: int


@dataclass
class ResourceReport:
    """Memory (bytes) and operation counts of one configuration.

    ``total_bytes = weight_bytes + aux_bytes + featuremap_bytes`` (+
    ``dynamic_range_bytes`` only with honest accounting).
    """

    name: str
    tag: str
    N: int
    M: int
    weights: int
    weight_bytes: float
    aux_bytes: float
    featuremap_bytes: float
    dynamic_range_bytes: float
    total_bytes: float
    macs: int
    ops: int
    per_layer: list[LayerResources] = field(default_factory=list)

    @property
    def weight_mb(self) -> float:
        return self.weight_bytes / MB

    @property
    def featuremap_mb(self) -> float:
        return self.featuremap_bytes / MB

    @property
    def total_mb(self) -> float:
        return self.total_bytes / MB

    @property
    def total_kb(self) -> float:
        return self.total_bytes / KB

    @property
    def ops_millions(self) -> int:
        return self.ops // 10**6

    def to_dict(self) -> dict:
        return {
            "model": self.name, "quant": self.tag, "N": self.N, "M": self.M, "weights": self.weights,
            "weight_bytes": self.weight_bytes, "aux_bytes": self.aux_bytes,
            "featuremap_bytes": self.featuremap_bytes, "dynamic_range_bytes": self.dynamic_range_bytes,
            "total_bytes": self.total_bytes, "macs": self.macs, "ops": self.ops,
        }


def report(config: ModelConfig, N: int = 96, M: int = 96, honest: bool = False) -> ResourceReport:
    """Resource report for ``config`` on ``N x M`` snapshots.

    ``honest=True`` adds the 32-bit dynamic range of every quantized weight
    tensor and activation to the total.
    """
    q: QuantSpec = config.quant
    s = channel_schedule(config)
    nm = N * M
    per_layer = []
    maps = _fm_bits(s, q.act_bits, q.io_bits)
    for i, (ci, co) in enumerate(s):
        w = ci * co * 9
        aux = co + (2 * co if 0 < i < len(s) - 1 else 0)
        per_layer.append(LayerResources(
            index=i, c_in=ci, c_out=co, weights=w, weight_bytes=w * q.weight_bits / 8, aux_bytes=4.0 * aux,
            out_featuremap_bytes=_map_bytes(*maps[i + 1], nm), macs=w * nm,
        ))
    weight_bytes = sum(p.weight_bytes for p in per_layer)
    aux_bytes = sum(p.aux_bytes for p in per_layer)
    fm = featuremap_bytes(s, N, M, q.act_bits, q.io_bits)
    n_ranges = 0
    if q.weight_scheme != "none":
        n_ranges += len(s)
    if q.act_scheme == "integer_dynamic":
        n_ranges += len(s) - 1
    dyn = 4.0 * n_ranges
    total = weight_bytes + aux_bytes + fm + (dyn if honest else 0.0)
    return ResourceReport(
        name=config.name, tag=q.tag, N=N, M=M, weights=count_weights(s), weight_bytes=weight_bytes,
        aux_bytes=aux_bytes, featuremap_bytes=fm, dynamic_range_bytes=dyn, total_bytes=total,
        macs=count_macs(s, N, M), ops=count_ops(s, N, M), per_layer=per_layer,
    )


def pareto_scan(items: Sequence, scores: Mapping, memory: Mapping | None = None,
                N: int = 96, M: int = 96) -> list:
    """Items not dominated in (memory lower, F1 higher).

    ``items`` are hashable keys, usually :class:`ModelConfig`.  Memory comes
    from ``memory[item]`` when given, otherwise from :func:`report`.  An item
    is dominated when another is at least as good on both axes and strictly
    better on one.  The front is returned in the input order.
    """
    pts = []
    for it in items:
        if it not in scores:
            raise UsageError(f"no F1 score for {it!r}")
        if memory is not None:
            if it not in memory:
                raise UsageError(f"no memory figure for {it!r}")
            mem = float(memory[it])
        else:
            mem = report(it, N, M).total_bytes
        pts.append((it, mem, float(scores[it])))
    front = []
    for it, m, f in pts:
        dominated = any((m2 <= m and f2 >= f) and (m2 < m or f2 > f) for _, m2, f2 in pts)
        if not dominated:
            front.append(it)
    return front


REPORT_COLUMNS = ("model", "quant", "N", "M", "weights", "weight_bytes", "aux_bytes", "featuremap_bytes",
                  "dynamic_range_bytes", "total_bytes", "macs", "ops")


def reports_csv(reports: Sequence[ResourceReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.to_dict())
    return buf.getvalue()


def reports_markdown(reports: Sequence[ResourceReport], f1: Mapping[str, float] | None = None) -> str:
    """Table with model, layers, channels, architecture, quantization, memory in MB and ops (10^6)."""
    lines = [
        "| Model | L | C | Arch | Quant | Weights [MB] | Feature-maps [MB] | Total [MB] | Ops [1e6] | F1 |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for r in reports:
        L, C, arch = r.name[1:].replace("-C", " ").replace("-", " ").split()
        score = f1.get(f"{r.name}/{r.tag}") if f1 else None
        lines.append(
            f"| {r.name} | {L} | {C} | {arch} | {r.tag} | {r.weight_mb:.3f} | {r.featuremap_mb:.2f} "
            f"| {r.total_mb:.2f} | {r.ops_millions} | {'' if score is None else f'{score:.4f}'} |"
        )
    return "\n".join(lines) + "\n"
