"""Independent reference implementations used as test oracles.

`fake_quant_reference` re-executes a realized circuit as a float pipeline
with quantizers inserted at every edge, using its own rounding, framing,
integer matmul and lookup evaluation (no table reads).  Bit-exact agreement
with the integer execution path is the circuit-equivalence contract.
"""

from __future__ import annotations

import numpy as np

from fhespec.circuit import (
    ConcatNode,
    ConvNode,
    LutNode,
    MatmulNode,
    ReduceNode,
    StdNode,
)

MFCC_LOG_EPS = 1e-6  # pinned independently of the library constant


def round_half_away(t):
    t = np.asarray(t, dtype=np.float64)
    return np.where(t >= 0.0, np.floor(t + 0.5), np.ceil(t - 0.5)).astype(np.int64)


def quant_edge(x, spec):
    v = round_half_away(np.asarray(x, dtype=np.float64) / spec.scale)
    return np.clip(v, spec.v_min, spec.v_max)


def frames_of(x, n, hop):
    t = (len(x) - n) // hop + 1
    return np.stack([x[i * hop: i * hop + n] for i in range(t)])


def lut_fn(node, x):
    if node.semantic == "requant":
        return x
    if node.semantic == "log":
        return np.log(np.maximum(x, 0.0) + MFCC_LOG_EPS)
    if node.semantic == "sqrt":
        return np.sqrt(np.maximum(x, 0.0))
    if node.semantic == "normalize":
        return (x - node.norm_center) / node.norm_scale
    raise AssertionError(node.semantic)


def fake_quant_reference(graph, buf):
    """Integer output vector of the graph, recomputed independently."""
    values = {"input": quant_edge(buf.samples, graph.input_spec)}
    for node in graph.nodes:
        if isinstance(node, ConvNode):
            frames = frames_of(values[node.src], node.weights_q.shape[1],
                               node.stride)
            values[node.name] = np.einsum("tn,cn->tc", frames, node.weights_q)
        elif isinstance(node, MatmulNode):
            values[node.name] = np.einsum("tn,cn->tc", values[node.src],
                                          node.weights_q)
        elif isinstance(node, LutNode):
            v = values[node.src]
            if node.semantic == "square":
                values[node.name] = v * v
            elif node.semantic == "abs":
                values[node.name] = np.abs(v)
            else:
                x = v.astype(np.float64) * node.in_spec.scale
                values[node.name] = quant_edge(lut_fn(node, x), node.out_spec)
        elif isinstance(node, ReduceNode):
            v = values[node.src]
            if node.axis == "pair":
                t, c2 = v.shape
                values[node.name] = v.reshape(t, 2, c2 // 2).sum(axis=1)
            elif node.axis == "channels":
                values[node.name] = v.sum(axis=v.ndim - 1)
            else:
                values[node.name] = v.sum(axis=0)
        elif isinstance(node, StdNode):
            v = values[node.src].astype(np.float64)
            std = np.std(v, axis=0) * node.in_spec.scale
            values[node.name] = quant_edge(std, node.out_spec)
        elif isinstance(node, ConcatNode):
            values[node.name] = np.array(
                [int(np.asarray(values[s])) for s in node.srcs], dtype=np.int64)
        else:
            raise AssertionError(type(node).__name__)
    out = graph.node(graph.output_node)
    return np.asarray(values[graph.output_node]) - out.out_spec.lift
