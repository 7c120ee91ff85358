"""End-to-end smoke tests for the python bindings."""

import numpy as np
import pytest

import latentcodec as lc

SPEC = dict(y_min=-12, y_max=11)
BINS = SPEC["y_max"] - SPEC["y_min"] + 1


@pytest.fixture(scope="module")
def corpus():
    latents, truths = lc.generate_corpus(
        channels=6, images=12, height=16, width=16, downscale=4, seed=1, **SPEC
    )
    return latents, truths


def test_corpus_shapes_and_determinism(corpus):
    latents, truths = corpus
    assert len(latents) == 12 and len(truths) == 12
    for t, p in zip(latents, truths):
        assert t.shape == (6, 16, 16) and t.dtype == np.int32
        assert t.min() >= SPEC["y_min"] and t.max() <= SPEC["y_max"]
        assert p.shape == (6, BINS)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    again, _ = lc.generate_corpus(
        channels=6, images=12, height=16, width=16, downscale=4, seed=1, **SPEC
    )
    for a, b in zip(latents, again):
        np.testing.assert_array_equal(a, b)


def test_hard_bank_matches_numpy_bincount(corpus):
    latents, _ = corpus
    data = latents[0]
    bank = lc.hard_bank(data, **SPEC)
    assert bank.shape == (6, BINS)
    for c in range(6):
        counts = np.bincount(data[c].ravel() - SPEC["y_min"], minlength=BINS)
        np.testing.assert_array_equal(bank[c] * data[c].size, counts)


def test_static_and_gmm_round_trip(corpus):
    latents, _ = corpus
    static = lc.fit_static(latents, **SPEC)
    gmm = lc.gmm_model(k_g=2, **SPEC)
    assert lc.model_kind(static) == "static"
    assert lc.model_kind(gmm) == "gmm"

    for model in (static, gmm):
        stream = lc.compress(model, latents[0], downscale=4, **SPEC)
        data, y_min, y_max, downscale = lc.decompress(model, stream)
        np.testing.assert_array_equal(data, latents[0])
        assert (y_min, y_max, downscale) == (SPEC["y_min"], SPEC["y_max"], 4)
        # Deterministic encoder.
        assert lc.compress(model, latents[0], downscale=4, **SPEC) == stream

    info = lc.stream_info(lc.compress(static, latents[0], downscale=4, **SPEC))
    assert info["side_bits"] == 0 and info["channels"] == 6
    info = lc.stream_info(lc.compress(gmm, latents[0], downscale=4, **SPEC))
    assert info["side_bits"] == (3 * 2 - 1) * 6 * 8


def test_learned_round_trip(corpus):
    latents, _ = corpus
    model, steps, best_val = lc.train_model(
        latents, downscale=4, n_q=8, m_q=4, kernel=5, groups=2, batch=4,
        max_steps=30, **SPEC
    )
    assert lc.model_kind(model) == "learned"
    assert steps == 30 and np.isfinite(best_val)

    stream = lc.compress(model, latents[0], downscale=4, **SPEC)
    assert lc.stream_info(stream)["side_bits"] > 0
    data, *_ = lc.decompress(model, stream)
    np.testing.assert_array_equal(data, latents[0])


def test_rate_identities():
    rng = np.random.default_rng(5)
    p = rng.uniform(1e-3, 1.0, 50)
    q = rng.uniform(1e-3, 1.0, 50)
    p /= p.sum()
    q /= q.sum()
    assert lc.cross_entropy_bits(p, q) == pytest.approx(
        lc.entropy_bits(p) + lc.kl_bits(p, q), abs=1e-9
    )
    assert lc.kl_bits(p, p) == 0.0
    assert lc.entropy_bits(np.full(256, 1 / 256)) == 8.0
    assert lc.lambda_q(256, 256, 768, 512) == 1 / 6


def test_gap_report(corpus):
    latents, truths = corpus
    static = lc.fit_static(latents, **SPEC)
    csv = lc.gap_report_csv(latents, downscale=4, model=static, baseline=static, **SPEC)
    lines = csv.strip().split("\n")
    assert lines[0] == (
        "image,original_bpp,potential_gain_bpp,potential_gain_pct,achieved_bpp,"
        "achieved_gain_bpp,achieved_gain_pct,side_info_bpp"
    )
    assert len(lines) == 1 + 12 + 1 and lines[-1].startswith("*,")
    # Baseline vs itself: achieved gain is zero on every row.
    for row in lines[1:]:
        fields = row.split(",")
        assert float(fields[5]) == 0.0 and float(fields[7]) == 0.0

    # Potential savings are positive for per-image banks vs the average bank.
    default = lc.hard_bank(latents[0], **SPEC) * 0
    banks = [lc.hard_bank(t, **SPEC) for t in latents]
    default = sum(banks) / len(banks)
    saving = lc.potential_savings_bpp(banks[0], default, downscale=4, **SPEC)
    assert saving > 0.0


def test_errors_raise_codec_error(corpus):
    latents, _ = corpus
    static = lc.fit_static(latents, **SPEC)
    gmm = lc.gmm_model(k_g=2, **SPEC)
    stream = lc.compress(gmm, latents[0], downscale=4, **SPEC)
    with pytest.raises(lc.CodecError):
        lc.decompress(static, stream)  # model does not match the stream tag
    with pytest.raises(lc.CodecError):
        lc.decompress(gmm, stream[: len(stream) // 2])
    with pytest.raises(lc.CodecError):
        lc.compress(gmm, latents[0] + 100, downscale=4, **SPEC)  # out of support
    with pytest.raises(lc.CodecError):
        lc.hard_bank(latents[0][0], **SPEC)  # wrong rank
