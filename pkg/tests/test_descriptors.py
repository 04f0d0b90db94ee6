"""Descriptor tests: formulas, normalization, CSV, circuit agreement."""

import numpy as np
import pytest

from fhespec.approx import Conventional, L1Energy
from fhespec.circuit import build_descriptor_plan
from fhespec.descriptors import (
    CSV_FIELDS,
    DESCRIPTOR_NAMES,
    DescriptorVector,
    NormalizationConstants,
    clear_descriptors,
    clear_descriptors_raw,
    fit_normalization,
    mean_std_over_time,
    read_descriptor_csv,
    rms_per_frame,
    write_descriptor_csv,
)
from fhespec.evaluate import pearson
from fhespec.quant import BitWidthConfig
from fhespec.transforms import (
    AudioBuffer,
    GammatoneSpec,
    MelSpec,
    SignalError,
    Spectrogram,
    StftConfig,
)

FS = 16000
CFG = StftConfig(64, 32)
MEL = MelSpec(n_mels=8)
GAMMA = GammatoneSpec(n_filters=8)


def noise_buf(seed, n=992, scale=0.5):
    return AudioBuffer(np.random.default_rng(seed).standard_normal(n) * scale, FS)


def test_rms_per_frame_formula():
    rng = np.random.default_rng(0)
    power = Spectrogram(values=rng.uniform(0.0, 4.0, size=(6, 33)))
    rms = rms_per_frame(power)
    assert rms.shape == (6,)
    assert np.allclose(rms, np.sqrt(power.values.mean(axis=1)))


def test_mean_std_over_time():
    x = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]])
    mean, std = mean_std_over_time(x)
    assert np.allclose(mean, [3.0, 6.0])
    assert np.allclose(std, x.std(axis=0))  # population convention
    with pytest.raises(SignalError):
        mean_std_over_time(x[:1])


def test_descriptor_values_against_direct_recompute():
    buf = noise_buf(1)
    raw = clear_descriptors_raw(buf, Conventional(), CFG, mel=MEL, gamma=GAMMA)
    assert set(raw) == set(DESCRIPTOR_NAMES)
    # independent recomputation of the RMS pair from a plain spectrogram
    from fhespec.transforms import hann_window, power_spectrogram, stft

    power = power_spectrogram(stft(buf, CFG, hann_window(64)))
    rms = np.sqrt(power.values.mean(axis=1))
    assert raw["mean_rms"] == pytest.approx(rms.mean(), rel=1e-12)
    assert raw["std_rms"] == pytest.approx(rms.std(), rel=1e-12)


def test_l1_descriptors_differ_from_squared():
    buf = noise_buf(2)
    sq = clear_descriptors_raw(buf, Conventional(), CFG, mel=MEL, gamma=GAMMA)
    l1 = clear_descriptors_raw(buf, L1Energy(), CFG, mel=MEL, gamma=GAMMA)
    assert sq["mean_rms"] != l1["mean_rms"]


def test_normalization_constants():
    raws = [{n: float(i + j) for j, n in enumerate(DESCRIPTOR_NAMES)}
            for i in range(5)]
    norm = NormalizationConstants.from_raw(raws)
    for name in DESCRIPTOR_NAMES:
        vals = np.array([r[name] for r in raws])
        assert norm.center[name] == pytest.approx(vals.mean())
        assert norm.scale[name] == pytest.approx(vals.std())
        z = np.array([norm.apply(r)[name] for r in raws])
        assert z.mean() == pytest.approx(0.0, abs=1e-12)
        assert z.std() == pytest.approx(1.0, rel=1e-12)
    # constant descriptor: scale falls back to 1 instead of dividing by zero
    flat = NormalizationConstants.from_raw([{n: 2.0 for n in DESCRIPTOR_NAMES}] * 3)
    assert all(s == 1.0 for s in flat.scale.values())
    ident = NormalizationConstants.identity()
    assert ident.apply(raws[0]) == raws[0]


def test_fit_normalization_matches_manual():
    bufs = [noise_buf(s) for s in range(4)]
    norm = fit_normalization(bufs, Conventional(), CFG, mel=MEL, gamma=GAMMA)
    raws = [clear_descriptors_raw(b, Conventional(), CFG, mel=MEL, gamma=GAMMA)
            for b in bufs]
    manual = NormalizationConstants.from_raw(raws)
    assert norm == manual
    z = clear_descriptors(bufs[0], Conventional(), CFG, norm, mel=MEL, gamma=GAMMA)
    assert z == norm.apply(raws[0])


def test_csv_round_trip(tmp_path):
    vectors = [
        DescriptorVector(file_id=f"clip_{i}", label="noise",
                         values={n: 0.1 * i + j for j, n in
                                 enumerate(DESCRIPTOR_NAMES)},
                         path=p)
        for i in range(3) for p in ("clear", "fhe")
    ]
    out = tmp_path / "descriptors.csv"
    write_descriptor_csv(out, vectors)
    header = out.read_text().splitlines()[0]
    assert header == ",".join(CSV_FIELDS)
    back = read_descriptor_csv(out)
    assert back == vectors  # repr() serialization is lossless for floats


def test_csv_bytes_deterministic(tmp_path):
    vectors = [DescriptorVector("a", "x", {n: 1 / 3 for n in DESCRIPTOR_NAMES},
                                "clear")]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_descriptor_csv(p1, vectors)
    write_descriptor_csv(p2, vectors)
    assert p1.read_bytes() == p2.read_bytes()


def test_circuit_descriptors_track_clear_pipeline():
    """Quantized descriptor vectors correlate strongly with clear ones."""
    rng = np.random.default_rng(10)
    bufs = [AudioBuffer(rng.standard_normal(992) * rng.uniform(0.2, 1.0), FS)
            for _ in range(40)]
    calib, evalu = bufs[:8], bufs[8:]
    plan = build_descriptor_plan(Conventional(), CFG, FS, n_frames=30,
                                 mel=MEL, gamma=GAMMA)
    plan.calibrate(calib)
    graph = plan.realize(BitWidthConfig(6, 7, 4, 5))
    clear = np.array([graph.run_clear(b)["descriptor_vector"] for b in evalu])
    fhe = np.array([graph.execute(b).dequantized for b in evalu])
    for i, name in enumerate(DESCRIPTOR_NAMES):
        assert pearson(clear[:, i], fhe[:, i]) > 0.95, name
