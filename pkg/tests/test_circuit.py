"""Integer-circuit tests: edges, weights, budget, bit-exact equivalence."""

import json

import numpy as np
import pytest

from oracles import fake_quant_reference
from fhespec.approx import Conventional, Cropping, Dilation, L1Energy, Poorman
from fhespec.circuit import (
    BUDGET_BITS,
    BudgetViolation,
    CircuitError,
    CircuitOverflow,
    EdgeSpec,
    RawSpec,
    approx_label,
    build_descriptor_plan,
    build_pipeline,
    build_transform_plan,
    quantize_weights,
    simulate_fhe_transform,
)
from fhespec.evaluate import normalized_euclidean
from fhespec.quant import BitWidthConfig
from fhespec.transforms import AudioBuffer, GammatoneSpec, MelSpec, StftConfig

FS = 16000
CFG = StftConfig(64, 32)
MEL = MelSpec(n_mels=8)
GAMMA = GammatoneSpec(n_filters=8)
BITS = BitWidthConfig(5, 6, 4, 6)
DBITS = BitWidthConfig(5, 6, 4, 5)  # narrower mid edges for the std heads
CLIP_LEN = 992  # 30 frames at N=64, hop=32


def clips(count, seed=0, n=CLIP_LEN, scale=0.5):
    rng = np.random.default_rng(seed)
    return [AudioBuffer(rng.standard_normal(n) * scale, FS) for _ in range(count)]


# Edges ------------------------------------------------------------------------

def test_edge_spec_zero_aligned():
    e = EdgeSpec.from_range(-1.0, 3.0, bits=4, signed=True)
    assert e.v_max - e.v_min == 15  # full level count
    assert e.to_v(0.0) == 0  # zero is exactly representable
    assert e.scale == pytest.approx(4.0 / 15.0)
    assert e.v_min == -4 and e.v_max == 11  # round(1 / scale) = 4
    # affine view agrees: v = q + lift
    assert e.params.alpha == pytest.approx(e.scale * e.v_min)
    assert e.params.beta == pytest.approx(e.scale * e.v_max)
    assert e.lift == e.v_min + 8


def test_edge_spec_clamps_and_degenerates():
    # a strictly positive range still includes zero
    e = EdgeSpec.from_range(2.0, 5.0, bits=3, signed=False)
    assert e.v_min == 0
    assert e.to_v(0.0) == 0
    # degenerate range widens instead of dividing by zero
    e = EdgeSpec.from_range(1.5, 1.5, bits=3, signed=False)
    assert e.scale > 0.0


def test_edge_spec_round_trip():
    e = EdgeSpec.from_range(-2.0, 2.0, bits=8, signed=True)
    x = np.linspace(-2.0, 2.0, 1001)
    back = e.to_float(e.to_v(x))
    assert np.max(np.abs(back - x)) <= e.scale / 2 + 1e-12


def test_raw_spec_width():
    assert RawSpec(1.0, -100, 200).max_abs == 200
    assert RawSpec(1.0, -100, 200).width == 8
    assert RawSpec(1.0, 0, 1).width == 0
    assert RawSpec(1.0, 0, 65535).width == 16


# Weight quantization ----------------------------------------------------------

def test_quantize_weights_symmetric():
    w = np.array([[0.0, -1.0, 0.5, 0.25]])
    q, scale = quantize_weights(w, bits=4)
    assert q[0, 0] == 0  # exact zero taps survive
    assert abs(q).max() == 7  # max magnitude uses the full signed range
    assert np.allclose(q * scale, w, atol=scale / 2)
    q0, s0 = quantize_weights(np.zeros((2, 3)), bits=4)
    assert np.all(q0 == 0) and s0 == 1.0
    with pytest.raises(CircuitError):
        quantize_weights(w, bits=1)


def test_quantize_weights_preserves_sparsity():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((8, 64))
    w[:, ::2] = 0.0
    q, _ = quantize_weights(w, bits=3)
    assert np.all(q[:, ::2] == 0)


# Bit-exact equivalence with the independent reference -------------------------

APPROXES = [Conventional(), Dilation(rate=4), Poorman(roots=4), L1Energy(),
            Cropping(f_min_hz=0.0, f_max_hz=2000.0)]


@pytest.mark.parametrize("kind", ["stft", "mel", "mfcc", "gammatone"])
@pytest.mark.parametrize("approx", APPROXES, ids=lambda a: a.kind)
def test_integer_execution_matches_reference(kind, approx):
    calib = clips(4, seed=20)
    graph = build_pipeline(kind, approx, BITS, calib, CFG, FS,
                           mel=MEL, gamma=GAMMA, n_mfcc=8)
    for buf in clips(5, seed=21):
        got = graph.execute(buf).output.data
        want = fake_quant_reference(graph, buf)
        assert np.array_equal(got, want)


def test_descriptor_circuit_matches_reference():
    calib = clips(6, seed=22)
    plan = build_descriptor_plan(Conventional(), CFG, FS, n_frames=30,
                                 mel=MEL, gamma=GAMMA)
    plan.calibrate(calib)
    graph = plan.realize(DBITS)
    for buf in clips(5, seed=23):
        got = graph.execute(buf).output.data
        want = fake_quant_reference(graph, buf)
        assert np.array_equal(got, want)


def test_dequantized_consistent_with_output_params():
    calib = clips(3, seed=24)
    graph = build_pipeline("stft", Conventional(), BITS, calib, CFG, FS)
    res = graph.execute(calib[0])
    p = res.output.params
    assert np.allclose(res.dequantized,
                       res.output.data.astype(np.float64) * p.scale
                       + (p.alpha - p.scale * p.q_min))


# Budget accounting ------------------------------------------------------------

def test_budget_report_structure():
    calib = clips(3, seed=25)
    graph = build_pipeline("mel", Conventional(), BITS, calib, CFG, FS, mel=MEL)
    report = graph.check_budget()
    assert report.feasible
    kinds = {e.kind for e in report.entries}
    assert "conv" in kinds and "reduce" in kinds
    assert all(e.worst_case_bits <= BUDGET_BITS for e in report.entries)
    d = report.as_dict()
    assert d["feasible"] is True and d["budget_bits"] == BUDGET_BITS


def test_observed_never_exceeds_worst_case():
    calib = clips(3, seed=26)
    graph = build_pipeline("stft", Conventional(), BITS, calib, CFG, FS)
    res = graph.execute(calib[1])
    report = graph.check_budget(res.observed)
    for e in report.entries:
        if e.observed_max_bits is not None:
            assert e.observed_max_bits <= e.worst_case_bits


def test_budget_violation_raised_and_inspectable():
    calib = clips(6, seed=27)
    plan = build_descriptor_plan(Conventional(), CFG, FS, n_frames=30,
                                 mel=MEL, gamma=GAMMA)
    plan.calibrate(calib)
    wide = BitWidthConfig(5, 6, 4, 8)  # 30 * 255^2 blows the std accumulator
    with pytest.raises(BudgetViolation) as exc:
        plan.realize(wide)
    assert exc.value.violations  # names the offending nodes
    # same config builds with enforcement off, and the report flags it
    graph = plan.realize(wide, enforce_budget=False, materialize_tables=False)
    assert not graph.check_budget().feasible


def test_overflow_check_fires_on_tampered_range():
    calib = clips(3, seed=28)
    graph = build_pipeline("stft", Conventional(), BITS, calib, CFG, FS)
    conv = graph.node("stft_conv")
    conv.out_spec = RawSpec(scale=conv.out_spec.scale, v_lo=0, v_hi=1)
    with pytest.raises(CircuitOverflow):
        graph.execute(calib[0])


# Fidelity sanity --------------------------------------------------------------

def test_generous_bits_give_small_distance_on_tone():
    t = np.arange(CLIP_LEN) / FS
    tone = AudioBuffer(0.8 * np.sin(2.0 * np.pi * 1000.0 * t), FS)
    calib = clips(4, seed=29) + [tone]
    fine = build_pipeline("stft", Conventional(), BitWidthConfig(6, 8, 4, 8),
                          calib, CFG, FS)
    clear = np.asarray(fine.run_clear(tone)["stft_power"])
    d_fine = normalized_euclidean(clear, fine.execute(tone).dequantized)
    assert d_fine < 0.1
    coarse = build_pipeline("stft", Conventional(), BitWidthConfig(3, 3, 2, 3),
                            calib, CFG, FS)
    clear_c = np.asarray(coarse.run_clear(tone)["stft_power"])
    d_coarse = normalized_euclidean(clear_c, coarse.execute(tone).dequantized)
    assert d_coarse > d_fine


def test_simulate_fhe_transform_shape():
    calib = clips(3, seed=30)
    sg = simulate_fhe_transform(calib[0], "mel", Conventional(), BITS,
                                calib, CFG, mel=MEL)
    assert sg.values.shape == (30, 8)


# Plan reuse and serialization -------------------------------------------------

def test_plan_realize_reusable_across_configs():
    calib = clips(4, seed=31)
    plan = build_transform_plan("stft", Conventional(), CFG, FS)
    plan.calibrate(calib)
    g1 = plan.realize(BitWidthConfig(4, 5, 3, 5))
    g2 = plan.realize(BitWidthConfig(6, 7, 4, 7))
    r1 = g1.execute(calib[0])
    r2 = g2.execute(calib[0])
    assert r1.output.params.bits == 5 and r2.output.params.bits == 7
    # realizing must not mutate the shared plan structure
    assert plan.nodes[0].weights_q is None


def test_realize_is_deterministic():
    calib = clips(4, seed=32)
    plan = build_transform_plan("mel", Dilation(rate=4), CFG, FS, mel=MEL)
    plan.calibrate(calib)
    j1 = plan.realize(BITS).to_json()
    j2 = plan.realize(BITS).to_json()
    assert j1 == j2


def test_graph_json_contents():
    calib = clips(3, seed=33)
    graph = build_pipeline("mfcc", Poorman(roots=4), BITS, calib, CFG, FS,
                           mel=MEL, n_mfcc=8)
    doc = json.loads(graph.to_json())
    assert doc["format_version"] == 1
    assert doc["kind"] == "mfcc"
    assert doc["approx"] == approx_label(Poorman(roots=4))
    names = {n["name"] for n in doc["nodes"]}
    assert {"stft_conv", "mel_matmul", "dct_matmul", "mfcc_out"} <= names
    conv = next(n for n in doc["nodes"] if n["name"] == "stft_conv")
    assert conv["weights"]["shape"] == [2 * CFG.bins, CFG.window_length]
    assert len(conv["weights"]["sha256"]) == 64


def test_sparse_approximations_lower_conv_taps():
    dense = build_transform_plan("stft", Conventional(), CFG, FS)
    # uniform dilation thins every kernel row; the per-bin cap would keep
    # high bins dense, so the maximum tap count only drops without it
    sparse = build_transform_plan("stft", Dilation(rate=4, per_bin_cap=False),
                                  CFG, FS)
    n_dense = dense.nodes[0].nonzero_taps()
    n_sparse = sparse.nodes[0].nonzero_taps()
    assert n_dense == CFG.window_length - 1  # the Hann window zeroes tap 0
    assert n_sparse <= (n_dense + 3) // 4 + 1


def test_calibration_errors():
    plan = build_transform_plan("stft", Conventional(), CFG, FS)
    with pytest.raises(CircuitError):
        plan.calibrate([])
    with pytest.raises(CircuitError):
        plan.realize(BITS)  # not calibrated yet
    with pytest.raises(CircuitError):
        plan.calibrate([AudioBuffer(np.ones(CLIP_LEN), 8000)])  # rate mismatch
