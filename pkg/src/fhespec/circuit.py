"""Integer dataflow circuits standing in for compiled FHE execution.

A pipeline is a DAG of quantized convolutions, elementwise lookup tables and
reductions.  Nonlinearities are single-input tables keyed on the incoming
integer, mirroring a lookup-table FHE backend without any cryptography.
Every accumulator gets a worst-case bit width; anything above the 16-bit
budget refuses to build, and execution asserts observed values against the
declared ranges instead of ever wrapping silently.

Internally each quantized edge works in a zero-aligned integer domain: the
represented value is exactly scale * v, with v an integer whose range covers
the calibrated float range.  Exported tensors use the affine convention of
the quant module (v = q + lift).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .approx import ApproxSpec, L1Energy, approx_kernels
from .quant import (
    BitWidthConfig,
    QuantParams,
    QuantizedTensor,
    _round_half_away,
    width_of,
)
from .transforms import (
    AudioBuffer,
    GammatoneSpec,
    MelSpec,
    Spectrogram,
    StftConfig,
    dct_matrix,
    frame_signal,
    gammatone_kernels,
    hann_window,
    mel_filterbank_matrix,
    MFCC_LOG_EPS,
)

BUDGET_BITS = 16

TRANSFORMS = ("stft", "mel", "mfcc", "gammatone")


class CircuitError(RuntimeError):
    pass


class BudgetViolation(CircuitError):
    """Raised at build time when a node's worst-case width exceeds the budget."""

    def __init__(self, violations):
        self.violations = list(violations)
        names = ", ".join(f"{n}({b} bits)" for n, b in self.violations)
        super().__init__(f"16-bit accumulator budget exceeded at: {names}")


class CircuitOverflow(CircuitError):
    """Raised at execution time when an observed value leaves its declared range."""


# Edges -----------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeSpec:
    """Quantized edge: represented value is scale * v, v in [v_min, v_max]."""

    scale: float
    v_min: int
    v_max: int
    bits: int
    signed: bool

    @classmethod
    def from_range(cls, lo: float, hi: float, bits: int, signed: bool) -> "EdgeSpec":
        lo, hi = min(lo, 0.0), max(hi, 0.0)
        if hi == lo:
            hi = lo + 1.0
        levels = (1 << bits) - 1
        scale = (hi - lo) / levels
        m = int(np.clip(_round_half_away(np.float64(-lo / scale)), 0, levels))
        return cls(scale=scale, v_min=-m, v_max=levels - m, bits=bits, signed=signed)

    @property
    def lift(self) -> int:
        # v = q + lift, with q in the affine range of self.params
        offset = (1 << (self.bits - 1)) if self.signed else 0
        return self.v_min + offset

    @property
    def max_abs(self) -> int:
        return max(abs(self.v_min), abs(self.v_max))

    @property
    def params(self) -> QuantParams:
        return QuantParams(
            alpha=self.scale * self.v_min,
            beta=self.scale * self.v_max,
            bits=self.bits,
            signed=self.signed,
        )

    def to_v(self, x) -> np.ndarray:
        v = _round_half_away(np.asarray(x, dtype=np.float64) / self.scale)
        return np.clip(v, self.v_min, self.v_max).astype(np.int64)

    def to_float(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) * self.scale


@dataclass(frozen=True)
class RawSpec:
    """Un-requantized integer edge (accumulator output); value = scale * v."""

    scale: float
    v_lo: int
    v_hi: int

    @property
    def max_abs(self) -> int:
        return max(abs(self.v_lo), abs(self.v_hi))

    @property
    def width(self) -> int:
        return width_of(self.max_abs)

    def to_float(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) * self.scale


# Nodes -----------------------------------------------------------------------
#
# Node lifecycle: built with structure and float weights only, then bound to
# quantized edges by the pipeline realization step.  `clear()` never touches
# quantization and is what calibration runs.

@dataclass
class ConvNode:
    """Strided 1-D convolution of the signal with a fixed kernel bank."""

    name: str
    src: str
    weights_f: np.ndarray  # (C, N)
    stride: int
    weights_q: np.ndarray | None = None
    w_scale: float | None = None
    in_spec: EdgeSpec | None = None
    out_spec: RawSpec | None = None

    def clear(self, x: np.ndarray) -> np.ndarray:
        return frame_signal(x, self.weights_f.shape[1], self.stride) @ self.weights_f.T

    def nonzero_taps(self) -> int:
        if self.weights_q is None:
            return int(np.max(np.count_nonzero(self.weights_f, axis=1)))
        return int(np.max(np.count_nonzero(self.weights_q, axis=1)))

    def acc_range(self) -> tuple[int, int]:
        pos = np.maximum(self.weights_q, 0).sum(axis=1)
        neg = np.minimum(self.weights_q, 0).sum(axis=1)
        a, b = self.in_spec.v_min, self.in_spec.v_max
        hi = int((pos * b + neg * a).max())
        lo = int((pos * a + neg * b).min())
        return lo, hi

    def run_int(self, v: np.ndarray) -> np.ndarray:
        frames = frame_signal(v, self.weights_q.shape[1], self.stride)
        return frames @ self.weights_q.T  # (T, C)


@dataclass
class MatmulNode:
    """Channel-mixing matrix applied per frame (mel filterbank, DCT)."""

    name: str
    src: str
    weights_f: np.ndarray  # (C_out, C_in)
    weights_q: np.ndarray | None = None
    w_scale: float | None = None
    in_spec: EdgeSpec | None = None
    out_spec: RawSpec | None = None

    def clear(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights_f.T

    nonzero_taps = ConvNode.nonzero_taps
    acc_range = ConvNode.acc_range

    def run_int(self, v: np.ndarray) -> np.ndarray:
        return v @ self.weights_q.T


@dataclass
class LutNode:
    """Elementwise lookup table keyed on the incoming integer value.

    Semantics: 'square' and 'abs' emit raw (un-requantized) integers so the
    cost contrast between l1 and squared energy is visible in the budget
    report; 'requant', 'log', 'sqrt' and 'normalize' emit values on a
    quantized edge.
    """

    name: str
    src: str
    semantic: str
    norm_center: float | None = None
    norm_scale: float | None = None
    in_spec: EdgeSpec | RawSpec | None = None
    out_spec: EdgeSpec | RawSpec | None = None
    table: np.ndarray | None = None

    def semantic_fn(self, x: np.ndarray) -> np.ndarray:
        if self.semantic == "square":
            return np.square(x)
        if self.semantic == "abs":
            return np.abs(x)
        if self.semantic == "requant":
            return x
        if self.semantic == "log":
            return np.log(np.maximum(x, 0.0) + MFCC_LOG_EPS)
        if self.semantic == "sqrt":
            return np.sqrt(np.maximum(x, 0.0))
        if self.semantic == "normalize":
            return (x - self.norm_center) / self.norm_scale
        raise CircuitError(f"unknown LUT semantic {self.semantic!r}")

    def clear(self, x: np.ndarray) -> np.ndarray:
        if self.semantic == "normalize" and self.norm_center is None:
            return x  # calibration pass collects un-normalized values
        return self.semantic_fn(x)

    def domain(self) -> tuple[int, int]:
        if isinstance(self.in_spec, EdgeSpec):
            return self.in_spec.v_min, self.in_spec.v_max
        return self.in_spec.v_lo, self.in_spec.v_hi

    def build_table(self):
        lo, hi = self.domain()
        v_in = np.arange(lo, hi + 1, dtype=np.int64)
        if self.semantic == "square":
            self.table = v_in * v_in
            self.out_spec = RawSpec(scale=self.in_spec.scale**2, v_lo=0,
                                    v_hi=int(self.table.max(initial=0)))
        elif self.semantic == "abs":
            self.table = np.abs(v_in)
            self.out_spec = RawSpec(scale=self.in_spec.scale, v_lo=0,
                                    v_hi=int(self.table.max(initial=0)))
        else:
            y = self.semantic_fn(self.in_spec.to_float(v_in))
            self.table = self.out_spec.to_v(y)

    def run_int(self, v: np.ndarray) -> np.ndarray:
        lo, _ = self.domain()
        return self.table[v - lo]


@dataclass
class ReduceNode:
    """Integer sum (or mean, as a rescaled sum) over one axis."""

    name: str
    src: str
    op: str  # 'sum' | 'mean'
    axis: str  # 'pair' | 'channels' | 'time'
    in_spec: EdgeSpec | RawSpec | None = None
    out_spec: RawSpec | None = None
    fan_in: int | None = None

    def _split(self, x: np.ndarray):
        if self.axis == "pair":
            t, c2 = x.shape
            return x.reshape(t, 2, c2 // 2), 1, 2
        if self.axis == "channels":
            return x, x.ndim - 1, x.shape[-1]
        if self.axis == "time":
            return x, 0, x.shape[0]
        raise CircuitError(f"unknown reduce axis {self.axis!r}")

    def clear(self, x: np.ndarray) -> np.ndarray:
        arr, ax, _ = self._split(x)
        return arr.sum(axis=ax) if self.op == "sum" else arr.mean(axis=ax)

    def in_range(self) -> tuple[int, int]:
        if isinstance(self.in_spec, EdgeSpec):
            return self.in_spec.v_min, self.in_spec.v_max
        return self.in_spec.v_lo, self.in_spec.v_hi

    def run_int(self, v: np.ndarray) -> np.ndarray:
        arr, ax, _ = self._split(v)
        return arr.sum(axis=ax)


@dataclass
class StdNode:
    """Population standard deviation over time, via exact integer moments.

    Keeps two accumulators (sum and sum of squares); the variance uses the
    exact integer L*S2 - S1^2 so no cancellation occurs before the sqrt.
    """

    name: str
    src: str
    in_spec: EdgeSpec | None = None
    out_spec: EdgeSpec | None = None
    fan_in: int | None = None

    def clear(self, x: np.ndarray) -> np.ndarray:
        return x.std(axis=0)

    def acc_worst(self) -> tuple[int, int]:
        t = self.fan_in
        m = self.in_spec.max_abs
        return t * m, t * m * m

    def run_int(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = v.shape[0]
        s1 = v.sum(axis=0)
        s2 = (v * v).sum(axis=0)
        m2 = t * s2 - s1 * s1  # exact: t^2 * variance in integer units
        std = self.in_spec.scale * np.sqrt(m2.astype(np.float64)) / t
        return self.out_spec.to_v(std), s1, s2


@dataclass
class ConcatNode:
    """Concatenate scalar heads that share one set of output params."""

    name: str
    srcs: list
    in_spec: EdgeSpec | None = None
    out_spec: EdgeSpec | None = None

    def clear(self, *xs) -> np.ndarray:
        return np.array([float(np.asarray(x)) for x in xs])

    def run_int(self, *vs) -> np.ndarray:
        return np.array([int(np.asarray(v)) for v in vs], dtype=np.int64)


# Weight quantization ---------------------------------------------------------

def quantize_weights(w: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Per-tensor symmetric quantization: exact integer zeros for sparse taps."""
    if bits < 2:
        raise CircuitError("weight quantization needs at least 2 bits")
    q_max = (1 << (bits - 1)) - 1
    max_abs = float(np.abs(w).max())
    if max_abs == 0.0:
        return np.zeros_like(w, dtype=np.int64), 1.0
    scale = max_abs / q_max
    q = np.clip(_round_half_away(w / scale), -q_max, q_max).astype(np.int64)
    return q, scale


# Graph -----------------------------------------------------------------------

@dataclass(frozen=True)
class BudgetEntry:
    node: str
    kind: str
    worst_case_bits: int
    l_taps: int | None = None
    observed_max_bits: int | None = None

    @property
    def violation(self) -> bool:
        return self.worst_case_bits > BUDGET_BITS


@dataclass(frozen=True)
class AccumulatorReport:
    entries: list

    @property
    def violations(self) -> list:
        return [e for e in self.entries if e.violation]

    @property
    def feasible(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "budget_bits": BUDGET_BITS,
            "nodes": [
                {
                    "node": e.node,
                    "kind": e.kind,
                    "worst_case_bits": e.worst_case_bits,
                    "l_taps": e.l_taps,
                    "observed_max_bits": e.observed_max_bits,
                    "violation": e.violation,
                }
                for e in self.entries
            ],
        }


@dataclass
class ExecutionResult:
    output: QuantizedTensor
    dequantized: np.ndarray
    observed: dict  # node name -> max abs accumulator / value


@dataclass
class CircuitGraph:
    """Realized integer pipeline; immutable once built, reusable across inputs."""

    kind: str
    approx_label: str
    bits: BitWidthConfig
    input_spec: EdgeSpec
    nodes: list
    output_node: str
    meta: dict = field(default_factory=dict)

    def node(self, name: str):
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def _inputs_of(self, n) -> list:
        return n.srcs if isinstance(n, ConcatNode) else [n.src]

    def execute(self, buf: AudioBuffer) -> ExecutionResult:
        values = {"input": self.input_spec.to_v(buf.samples)}
        observed: dict = {}
        for n in self.nodes:
            ins = [values[s] for s in self._inputs_of(n)]
            if isinstance(n, (ConvNode, MatmulNode)):
                acc = n.run_int(ins[0])
                self._check(n.name, acc, n.out_spec.v_lo, n.out_spec.v_hi)
                observed[n.name] = int(np.abs(acc).max(initial=0))
                values[n.name] = acc
            elif isinstance(n, LutNode):
                values[n.name] = n.run_int(ins[0])
            elif isinstance(n, ReduceNode):
                acc = n.run_int(ins[0])
                self._check(n.name, acc, n.out_spec.v_lo, n.out_spec.v_hi)
                observed[n.name] = int(np.abs(acc).max(initial=0))
                values[n.name] = acc
            elif isinstance(n, StdNode):
                out, s1, s2 = n.run_int(ins[0])
                w1, w2 = n.acc_worst()
                self._check(n.name, s1, -w1, w1)
                self._check(n.name, s2, 0, w2)
                observed[n.name] = max(int(np.abs(s1).max(initial=0)),
                                       int(np.abs(s2).max(initial=0)))
                values[n.name] = out
            elif isinstance(n, ConcatNode):
                values[n.name] = n.run_int(*ins)
            else:
                raise CircuitError(f"unknown node type {type(n).__name__}")
        out_node = self.node(self.output_node)
        v = values[self.output_node]
        spec = out_node.out_spec
        q = v - spec.lift
        return ExecutionResult(
            output=QuantizedTensor(data=q, params=spec.params),
            dequantized=spec.to_float(v),
            observed=observed,
        )

    @staticmethod
    def _check(name, arr, lo, hi):
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise CircuitOverflow(
                f"node {name}: observed value outside declared range [{lo}, {hi}]"
            )

    def run_clear(self, buf: AudioBuffer) -> dict:
        """Float forward of the same structure (no quantization anywhere)."""
        values = {"input": buf.samples}
        for n in self.nodes:
            ins = [values[s] for s in self._inputs_of(n)]
            values[n.name] = n.clear(*ins) if isinstance(n, ConcatNode) else n.clear(ins[0])
        return values

    def check_budget(self, observed: dict | None = None) -> AccumulatorReport:
        entries = []
        for n in self.nodes:
            obs = observed.get(n.name) if observed else None
            obs_bits = width_of(obs) if obs is not None else None
            if isinstance(n, (ConvNode, MatmulNode)):
                entries.append(BudgetEntry(n.name, "conv", n.out_spec.width,
                                           n.nonzero_taps(), obs_bits))
            elif isinstance(n, ReduceNode):
                entries.append(BudgetEntry(n.name, "reduce", n.out_spec.width,
                                           n.fan_in, obs_bits))
            elif isinstance(n, StdNode):
                w1, w2 = n.acc_worst()
                entries.append(BudgetEntry(n.name, "std",
                                           max(width_of(w1), width_of(w2)),
                                           n.fan_in, obs_bits))
            elif isinstance(n, LutNode):
                entries.append(BudgetEntry(n.name, f"lut:{n.semantic}",
                                           width_of(n.out_spec.max_abs), None, None))
        return AccumulatorReport(entries=entries)

    def to_json(self) -> str:
        def edge(spec):
            if spec is None:
                return None
            if isinstance(spec, RawSpec):
                return {"raw": True, "scale": spec.scale, "v_lo": spec.v_lo,
                        "v_hi": spec.v_hi, "width": spec.width}
            p = spec.params
            return {"raw": False, "alpha": p.alpha, "beta": p.beta,
                    "bits": p.bits, "signed": p.signed}

        def weights(w):
            return {
                "shape": list(w.shape),
                "nonzero": int(np.count_nonzero(w)),
                "sha256": hashlib.sha256(np.ascontiguousarray(w).tobytes()).hexdigest(),
            }

        nodes = []
        for n in self.nodes:
            d = {"name": n.name, "type": type(n).__name__,
                 "inputs": self._inputs_of(n)}
            if isinstance(n, (ConvNode, MatmulNode)):
                d["weights"] = weights(n.weights_q)
                d["weight_scale"] = n.w_scale
                if isinstance(n, ConvNode):
                    d["stride"] = n.stride
            if isinstance(n, LutNode):
                d["semantic"] = n.semantic
                d["table_size"] = int(n.table.size)
            if isinstance(n, ReduceNode):
                d["op"], d["axis"] = n.op, n.axis
            d["out_edge"] = edge(n.out_spec)
            nodes.append(d)
        doc = {
            "format_version": 1,
            "kind": self.kind,
            "approx": self.approx_label,
            "bits": self.bits.as_dict(),
            "input_edge": edge(self.input_spec),
            "output_node": self.output_node,
            "nodes": nodes,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


# Pipeline construction -------------------------------------------------------

def approx_label(spec: ApproxSpec) -> str:
    parts = [spec.kind]
    for f in spec.__dataclass_fields__:
        parts.append(str(getattr(spec, f)))
    return ":".join(parts)


@dataclass
class PipelinePlan:
    """Structure plus calibration statistics; realize() binds bit widths.

    Calibration runs the clear pipeline once; realizing different bit-width
    configurations afterwards is cheap, which is what the grid search needs.
    """

    kind: str
    approx: ApproxSpec
    cfg: StftConfig
    sample_rate_hz: int
    nodes: list
    output_node: str
    normalization: dict | None = None  # node name -> (center, scale)
    ranges: dict | None = None  # node name (and 'input') -> (lo, hi)

    def calibrate(self, calibration: list) -> "PipelinePlan":
        if not calibration:
            raise CircuitError("calibration set is empty")
        ranges: dict = {}

        def widen(name, arr):
            arr = np.asarray(arr, dtype=np.float64)
            lo, hi = float(arr.min()), float(arr.max())
            if name in ranges:
                lo = min(lo, ranges[name][0])
                hi = max(hi, ranges[name][1])
            ranges[name] = (lo, hi)

        collected: dict = {name: [] for name in (self.normalization or {})}
        graph_like = CircuitGraph(self.kind, approx_label(self.approx), None,
                                  None, self.nodes, self.output_node)
        for buf in calibration:
            if buf.sample_rate_hz != self.sample_rate_hz:
                raise CircuitError("calibration buffer sample rate mismatch")
            values = graph_like.run_clear(buf)
            widen("input", buf.samples)
            for n in self.nodes:
                widen(n.name, values[n.name])
                if n.name in collected:
                    collected[n.name].append(np.asarray(values[n.name], dtype=np.float64))
        if self.normalization is not None:
            norm = {}
            for name, vals in collected.items():
                flat = np.concatenate([v.ravel() for v in vals])
                center = float(flat.mean())
                scale = float(flat.std())
                if scale <= 0.0:
                    scale = 1.0
                norm[name] = (center, scale)
                lo, hi = ranges[name]
                ranges[name] = ((lo - center) / scale, (hi - center) / scale)
            self.normalization = norm
        self.ranges = ranges
        return self

    def realize(self, bits: BitWidthConfig, enforce_budget: bool = True,
                materialize_tables: bool = True) -> CircuitGraph:
        if self.ranges is None:
            raise CircuitError("plan must be calibrated before realization")
        nodes = copy.deepcopy(self.nodes)
        input_spec = EdgeSpec.from_range(*self.ranges["input"], bits=bits.input_bits,
                                         signed=False)
        specs: dict = {"input": input_spec}

        # Heads feeding a concat must land on one shared quantized edge, so
        # their ranges are pooled before any of them is realized.
        concat_srcs: set = set()
        for n in nodes:
            if isinstance(n, ConcatNode):
                concat_srcs.update(n.srcs)
        shared_edge = None
        if concat_srcs:
            lo = min(self.ranges[s][0] for s in concat_srcs)
            hi = max(self.ranges[s][1] for s in concat_srcs)
            shared_edge = EdgeSpec.from_range(lo, hi, bits=bits.output_bits,
                                              signed=lo < 0.0)

        def edge_for(name: str, role: str) -> EdgeSpec:
            if name in concat_srcs:
                return shared_edge
            lo, hi = self.ranges[name]
            b = bits.output_bits if role == "out" else bits.mid_bits
            return EdgeSpec.from_range(lo, hi, bits=b, signed=lo < 0.0)

        for n in nodes:
            role = "out" if n.name == self.output_node else "mid"
            if isinstance(n, (ConvNode, MatmulNode)):
                n.weights_q, n.w_scale = quantize_weights(n.weights_f, bits.weight_bits)
                n.in_spec = specs[n.src]
                lo, hi = n.acc_range()
                n.out_spec = RawSpec(scale=n.in_spec.scale * n.w_scale, v_lo=lo, v_hi=hi)
            elif isinstance(n, LutNode):
                n.in_spec = specs[n.src]
                if n.semantic in ("square", "abs"):
                    pass  # out_spec derived in build_table
                else:
                    if n.semantic == "normalize":
                        n.norm_center, n.norm_scale = self.normalization[n.name]
                    n.out_spec = edge_for(n.name, role)
            elif isinstance(n, ReduceNode):
                n.in_spec = specs[n.src]
                arr_lo, arr_hi = n.in_range()
                fan = {"pair": 2, "channels": None, "time": None}[n.axis]
                if fan is None:
                    fan = n.fan_in
                    if fan is None:
                        raise CircuitError(f"reduce node {n.name} needs fan_in")
                n.fan_in = fan
                in_scale = n.in_spec.scale
                scale = in_scale / fan if n.op == "mean" else in_scale
                n.out_spec = RawSpec(scale=scale, v_lo=fan * arr_lo, v_hi=fan * arr_hi)
            elif isinstance(n, StdNode):
                n.in_spec = specs[n.src]
                n.out_spec = edge_for(n.name, role)
            elif isinstance(n, ConcatNode):
                n.in_spec = specs[n.srcs[0]]
                for s in n.srcs:
                    if specs[s] != n.in_spec:
                        raise CircuitError("concat inputs must share output params")
                n.out_spec = n.in_spec
            # square/abs luts fill out_spec below
            if isinstance(n, LutNode) and n.semantic in ("square", "abs"):
                n.build_table()
            specs[n.name] = n.out_spec

        graph = CircuitGraph(
            kind=self.kind,
            approx_label=approx_label(self.approx),
            bits=bits,
            input_spec=input_spec,
            nodes=nodes,
            output_node=self.output_node,
            meta={"sample_rate_hz": self.sample_rate_hz,
                  "window_length": self.cfg.window_length, "hop": self.cfg.hop},
        )
        report = graph.check_budget()
        if enforce_budget and not report.feasible:
            raise BudgetViolation([(e.node, e.worst_case_bits) for e in report.violations])
        if materialize_tables:
            # remaining tables are only materialized once the budget holds
            for n in nodes:
                if isinstance(n, LutNode) and n.table is None:
                    n.build_table()
        return graph


def _energy_head(nodes: list, src: str, approx: ApproxSpec, prefix: str,
                 paired: bool) -> str:
    """Square (or abs for l1) energy over conv outputs, summed over re/im."""
    semantic = "abs" if isinstance(approx, L1Energy) else "square"
    nodes.append(LutNode(name=f"{prefix}_energy", src=src, semantic=semantic))
    head = f"{prefix}_energy"
    if paired:
        nodes.append(ReduceNode(name=f"{prefix}_energy_sum", src=head,
                                op="sum", axis="pair"))
        head = f"{prefix}_energy_sum"
    return head


def _stft_power_nodes(approx: ApproxSpec, cfg: StftConfig, sample_rate_hz: int,
                      window: np.ndarray) -> tuple[list, str]:
    bank = approx_kernels(approx, cfg, window, sample_rate_hz)
    nodes = [
        ConvNode(name="stft_conv", src="input", weights_f=bank.stacked(),
                 stride=cfg.hop),
        LutNode(name="stft_conv_requant", src="stft_conv", semantic="requant"),
    ]
    head = _energy_head(nodes, "stft_conv_requant", approx, "stft", paired=True)
    nodes.append(LutNode(name="stft_power", src=head, semantic="requant"))
    return nodes, "stft_power"


def build_transform_plan(kind: str, approx: ApproxSpec, cfg: StftConfig,
                         sample_rate_hz: int,
                         mel: MelSpec | None = None,
                         gamma: GammatoneSpec | None = None,
                         n_mfcc: int = 13) -> PipelinePlan:
    """Un-calibrated pipeline structure for one transform."""
    if kind not in TRANSFORMS:
        raise CircuitError(f"unknown transform {kind!r}")
    window = hann_window(cfg.window_length)
    if kind == "gammatone":
        spec = gamma or GammatoneSpec()
        kernels = gammatone_kernels(spec, cfg, sample_rate_hz)
        nodes = [
            ConvNode(name="gamma_conv", src="input", weights_f=kernels,
                     stride=cfg.hop),
            LutNode(name="gamma_conv_requant", src="gamma_conv", semantic="requant"),
        ]
        head = _energy_head(nodes, "gamma_conv_requant", approx, "gamma", paired=False)
        nodes.append(LutNode(name="gamma_spec", src=head, semantic="requant"))
        output = "gamma_spec"
    else:
        nodes, power = _stft_power_nodes(approx, cfg, sample_rate_hz, window)
        output = power
        if kind in ("mel", "mfcc"):
            mspec = mel or MelSpec()
            matrix = mel_filterbank_matrix(mspec, cfg, sample_rate_hz)
            nodes.append(MatmulNode(name="mel_matmul", src=power, weights_f=matrix))
            nodes.append(LutNode(name="mel_spec", src="mel_matmul", semantic="requant"))
            output = "mel_spec"
            if kind == "mfcc":
                d = dct_matrix(matrix.shape[0])[:n_mfcc]
                nodes.append(LutNode(name="log_lut", src="mel_spec", semantic="log"))
                nodes.append(MatmulNode(name="dct_matmul", src="log_lut", weights_f=d))
                nodes.append(LutNode(name="mfcc_out", src="dct_matmul",
                                     semantic="requant"))
                output = "mfcc_out"
    return PipelinePlan(kind=kind, approx=approx, cfg=cfg,
                        sample_rate_hz=sample_rate_hz, nodes=nodes,
                        output_node=output)


DESCRIPTOR_NAMES = ("m_gstds", "m_mstds", "mean_rms", "std_rms")


def build_descriptor_plan(approx: ApproxSpec, cfg: StftConfig, sample_rate_hz: int,
                          n_frames: int,
                          mel: MelSpec | None = None,
                          gamma: GammatoneSpec | None = None) -> PipelinePlan:
    """Joint four-descriptor pipeline ending in one shared-quantization vector.

    `n_frames` fixes the time fan-in of the reductions, so all inputs must
    produce the same frame count (equal-length clips).
    """
    window = hann_window(cfg.window_length)
    mspec = mel or MelSpec()
    gspec = gamma or GammatoneSpec()

    nodes, power = _stft_power_nodes(approx, cfg, sample_rate_hz, window)

    # mean/std over time of per-frame RMS of the STFT power spectrogram
    nodes.append(ReduceNode(name="rms_mean_power", src=power, op="mean",
                            axis="channels", fan_in=cfg.bins))
    nodes.append(LutNode(name="rms", src="rms_mean_power", semantic="sqrt"))
    nodes.append(ReduceNode(name="mean_rms_sum", src="rms", op="mean", axis="time",
                            fan_in=n_frames))
    nodes.append(LutNode(name="mean_rms", src="mean_rms_sum", semantic="normalize"))
    nodes.append(StdNode(name="std_rms_val", src="rms", fan_in=n_frames))
    nodes.append(LutNode(name="std_rms", src="std_rms_val", semantic="normalize"))

    # mean over Mel channels of the per-channel std over time
    matrix = mel_filterbank_matrix(mspec, cfg, sample_rate_hz)
    nodes.append(MatmulNode(name="mel_matmul", src=power, weights_f=matrix))
    nodes.append(LutNode(name="mel_spec", src="mel_matmul", semantic="requant"))
    nodes.append(StdNode(name="mel_stds", src="mel_spec", fan_in=n_frames))
    nodes.append(ReduceNode(name="m_mstds_sum", src="mel_stds", op="mean",
                            axis="channels", fan_in=mspec.n_mels))
    nodes.append(LutNode(name="m_mstds", src="m_mstds_sum", semantic="normalize"))

    # same over gammatone channels
    kernels = gammatone_kernels(gspec, cfg, sample_rate_hz)
    nodes.append(ConvNode(name="gamma_conv", src="input", weights_f=kernels,
                          stride=cfg.hop))
    nodes.append(LutNode(name="gamma_conv_requant", src="gamma_conv",
                         semantic="requant"))
    head = _energy_head(nodes, "gamma_conv_requant", approx, "gamma", paired=False)
    nodes.append(LutNode(name="gamma_spec", src=head, semantic="requant"))
    nodes.append(StdNode(name="gamma_stds", src="gamma_spec", fan_in=n_frames))
    nodes.append(ReduceNode(name="m_gstds_sum", src="gamma_stds", op="mean",
                            axis="channels", fan_in=gspec.n_filters))
    nodes.append(LutNode(name="m_gstds", src="m_gstds_sum", semantic="normalize"))

    nodes.append(ConcatNode(name="descriptor_vector",
                            srcs=list(DESCRIPTOR_NAMES)))
    plan = PipelinePlan(kind="descriptors", approx=approx, cfg=cfg,
                        sample_rate_hz=sample_rate_hz, nodes=nodes,
                        output_node="descriptor_vector",
                        normalization={name: None for name in DESCRIPTOR_NAMES})
    return plan


def build_pipeline(kind: str, approx: ApproxSpec, bits: BitWidthConfig,
                   calibration: list, cfg: StftConfig, sample_rate_hz: int,
                   mel: MelSpec | None = None, gamma: GammatoneSpec | None = None,
                   n_mfcc: int = 13) -> CircuitGraph:
    """Build, calibrate and realize one transform pipeline."""
    plan = build_transform_plan(kind, approx, cfg, sample_rate_hz, mel, gamma, n_mfcc)
    plan.calibrate(calibration)
    return plan.realize(bits)


def simulate_fhe_transform(buf: AudioBuffer, kind: str, approx: ApproxSpec,
                           bits: BitWidthConfig, calibration: list,
                           cfg: StftConfig,
                           mel: MelSpec | None = None,
                           gamma: GammatoneSpec | None = None) -> Spectrogram:
    """Dequantized output of the integer circuit for one input buffer."""
    graph = build_pipeline(kind, approx, bits, calibration, cfg,
                           buf.sample_rate_hz, mel, gamma)
    result = graph.execute(buf)
    return Spectrogram(values=result.dequantized)
