import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lens_forge.encoder import (
    EncoderConfig,
    MlpWeights,
    NormStats,
    PatchEncoder,
    PatchSequence,
    build_encoder_prompt,
    count_tokens,
    denormalize,
    format_metadata,
    load_or_init_weights,
    load_weights,
    mlp_backward,
    mlp_forward,
    nll_loss,
    normalize,
    patchify,
    positional_table,
    save_weights,
    splice,
    tokenize_with_placeholders,
)
from lens_forge.sensors import CANONICAL_SPECS
from oracles import gradcheck_mlp

SMALL = EncoderConfig(hidden=16, d=8)


class TestNormalize:
    def test_two_points(self):
        z, st_ = normalize([2, 4])
        assert z.tolist() == [-1.0, 1.0]
        assert (st_.mu, st_.sigma, st_.m_min, st_.m_max) == (3.0, 1.0, 2.0, 4.0)

    def test_constant(self):
        z, st_ = normalize([5, 5, 5])
        assert z.tolist() == [0, 0, 0] and st_.degenerate
        assert denormalize(z, st_).tolist() == [5, 5, 5]

    def test_inverse_examples(self):
        assert denormalize([0.0], NormStats(7, 0, 7, 7, True)).tolist() == [7.0]
        assert denormalize([1.5], NormStats(0, 2, -5, 5)).tolist() == [3.0]

    @pytest.mark.parametrize("bad", [[1, float("nan")], [float("inf")], []])
    def test_bad_input(self, bad):
        with pytest.raises(ValueError):
            normalize(bad)

    def test_denormalize_non_finite(self):
        with pytest.raises(ValueError):
            denormalize([np.nan], NormStats(0, 1, 0, 1))

    @given(st.integers(0, 2**32 - 1), st.integers(2, 300))
    def test_round_trip(self, seed, n):
        rng = np.random.default_rng(seed)
        x = rng.normal(rng.uniform(-1e3, 1e3), rng.uniform(1e-3, 1e3), n)
        z, s = normalize(x)
        back = denormalize(z, s)
        assert np.max(np.abs(back - x) / np.maximum(np.abs(x), 1e-300)) <= 1e-9

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-100, 100))
    def test_scale_covariance(self, seed, a, b):
        x = np.random.default_rng(seed).normal(0, 10, 64)
        z1, s1 = normalize(x)
        z2, s2 = normalize(a * x + b)
        assert np.max(np.abs(z1 - z2)) < 1e-12
        assert s2.mu == pytest.approx(a * s1.mu + b, abs=1e-10)
        assert s2.sigma == pytest.approx(a * s1.sigma, rel=1e-12)

    def test_population_std(self):
        _, s = normalize([1, 2, 3, 4])
        assert s.sigma == pytest.approx(math.sqrt(1.25))


class TestMetadata:
    def test_format(self):
        s = NormStats(72.5, 5.25, 60, 90)
        assert format_metadata(s, "heart_rate") == "heart_rate: mean=72.5000 std=5.2500 min=60.0000 max=90.0000"

    def test_snippet_precedes_placeholder_in_order(self):
        prompt, stats = build_encoder_prompt({"a": [1, 2, 3], "b": [4, 5]}, "Describe.")
        lines = prompt.splitlines()
        assert lines[0].startswith("a: mean=") and lines[0].endswith("<ts></ts>")
        assert lines[1].startswith("b: mean=") and lines[1].endswith("<ts></ts>")
        assert prompt.index("a: mean") < prompt.index("<ts>") < prompt.index("b: mean")
        assert list(stats) == ["a", "b"]


class TestPatchify:
    def test_heart_rate_count(self):
        ps = patchify(np.zeros(1440), EncoderConfig())
        assert ps.count == 180 and ps.pad_len == 0

    def test_dimension(self):
        assert EncoderConfig(k=8, d_p=16).patch_dim == 136
        assert patchify(np.zeros(16), EncoderConfig()).patches.shape == (2, 136)

    def test_partial_patch(self):
        cfg = EncoderConfig()
        x = np.arange(1, 8, dtype=float)
        ps = patchify(x, cfg)
        assert (ps.count, ps.pad_len) == (1, 1)
        steps = ps.patches.reshape(8, 17)
        assert steps[:7, 0].tolist() == x.tolist()
        assert steps[7, 0] == 0.0
        # positional code kept on the padded step
        assert np.array_equal(steps[7, 1:], positional_table(cfg)[7])

    def test_positions_wrap(self):
        cfg = EncoderConfig(k=4, d_p=2, max_positions=8)
        steps = patchify(np.zeros(12), cfg).patches.reshape(12, 3)
        assert np.array_equal(steps[9, 1:], steps[1, 1:])

    def test_table_range_and_sharing(self):
        t = positional_table(EncoderConfig())
        assert t.shape == (2048, 16) and np.all(np.abs(t) <= 0.05)
        per = EncoderConfig(shared_positions=False)
        assert not np.array_equal(positional_table(per, "heart_rate"), positional_table(per, "steps"))
        assert np.array_equal(positional_table(EncoderConfig(), "x"), positional_table(EncoderConfig(), "y"))

    def test_empty(self):
        with pytest.raises(ValueError):
            patchify([], EncoderConfig())

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 400))
    def test_shape_chain(self, t):
        enc = PatchEncoder(SMALL)
        z, _, ps = enc.encode_stream(np.random.default_rng(t).normal(size=t))
        assert z.shape == (math.ceil(t / 8), 8)
        assert ps.count * 8 >= t and ps.pad_len == ps.count * 8 - t


class TestMlp:
    def test_zero_weights(self):
        w = MlpWeights([np.zeros((136, 4)), np.zeros((4, 3))], [np.zeros(4), np.zeros(3)])
        assert np.array_equal(mlp_forward(np.ones(136), w), np.zeros(3))

    def test_hand_traced_two_layer(self):
        # h = relu(W1^T u + b1) = relu([1, -2] + [0, 1]) = [1, 0]; z = W2^T h + b2
        w = MlpWeights(
            [np.eye(2), np.array([[2.0, 0.0], [0.0, 3.0]])],
            [np.array([0.0, 1.0]), np.array([0.5, -0.5])],
        )
        assert mlp_forward([1.0, -2.0], w).tolist() == [2.5, -0.5]

    def test_output_dim(self):
        w = MlpWeights.init(SMALL.layer_dims, 0)
        assert mlp_forward(np.zeros((7, 136)), w).shape == (7, 8)
        assert SMALL.layer_dims == [136, 16, 16, 16, 16, 8]
        assert EncoderConfig().layer_dims == [136, 5120, 5120, 5120, 5120, 5120]

    def test_shape_mismatch(self):
        w = MlpWeights.init([4, 3], 0)
        with pytest.raises(ValueError):
            mlp_forward(np.zeros(5), w)
        with pytest.raises(ValueError):
            mlp_backward(np.zeros(4), w, np.zeros(2))
        with pytest.raises(ValueError):
            MlpWeights([np.zeros((4, 3)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])

    def test_non_finite_weights(self):
        with pytest.raises(ValueError):
            MlpWeights([np.full((2, 2), np.nan)], [np.zeros(2)])

    @pytest.mark.parametrize("seed", range(3))
    def test_gradcheck_136_32_8(self, seed):
        assert gradcheck_mlp([136, 32, 8], seed) < 1e-4

    def test_zero_upstream(self):
        w = MlpWeights.init([6, 5, 3], 1)
        gw, gb, gu = mlp_backward(np.ones(6), w, np.zeros(3))
        assert all(not g.any() for g in gw + gb) and not gu.any()

    def test_linear_in_upstream(self):
        rng = np.random.default_rng(0)
        w = MlpWeights.init([6, 5, 3], 1)
        u, g = rng.normal(size=(2, 6)), rng.normal(size=(2, 3))
        a = mlp_backward(u, w, g)
        b = mlp_backward(u, w, 2 * g)
        for x, y in zip(a[0] + a[1] + [a[2]], b[0] + b[1] + [b[2]]):
            assert np.allclose(2 * x, y, rtol=0, atol=1e-12)


class TestSplice:
    def test_length_identity(self):
        seq = splice(list(range(12)), [("a", 3), ("b", 2)], [(2, 3), (7, 8)])
        assert seq.text_len == 10 and seq.length == 15
        assert [e for e in seq.elements if e[0] == "text"] == [("text", i) for i in range(12) if i not in (2, 7)]
        assert seq.elements[2:5] == [("patch", "a", 0), ("patch", "a", 1), ("patch", "a", 2)]

    def test_no_streams(self):
        seq = splice([4, 5, 6], [], [])
        assert seq.elements == [("text", 4), ("text", 5), ("text", 6)]

    def test_mismatch(self):
        with pytest.raises(ValueError):
            splice([1, 2], [("a", 1)], [])
        with pytest.raises(ValueError):
            splice([1, 2, 3], [("a", 1), ("b", 1)], [(2, 3), (0, 1)])

    @given(st.data())
    def test_identity_property(self, data):
        n = data.draw(st.integers(0, 40))
        cuts = sorted(data.draw(st.lists(st.integers(0, n), max_size=8)))
        layout = [(cuts[i], cuts[i + 1]) for i in range(0, len(cuts) - 1, 2)]
        counts = data.draw(st.lists(st.integers(0, 50), min_size=len(layout), max_size=len(layout)))
        seq = splice(list(range(n)), [(f"s{i}", c) for i, c in enumerate(counts)], layout)
        assert seq.length == seq.text_len + sum(counts)
        text = [e[1] for e in seq.elements if e[0] == "text"]
        assert text == sorted(text)

    def test_patch_sequence_entries(self):
        ps = PatchSequence(np.zeros((4, 136)), 4, 0)
        assert splice([0, 1, 2], [ps], [(1, 2)]).length == 6


class TestTokens:
    def test_canonical_patch_counts(self):
        window = {s.name: np.zeros(s.expected_len) for s in CANONICAL_SPECS}
        per_stream = [math.ceil(s.expected_len / 8) for s in CANONICAL_SPECS]
        assert per_stream == [180, 60, 30, 30, 3, 3, 30]
        prompt, _ = build_encoder_prompt({k: v + np.arange(len(v)) for k, v in window.items()}, "Describe the user.")
        b = count_tokens(window, prompt)
        assert b.patch_tokens == 336
        assert 0 < b.text_tokens < 1500
        assert b.total == b.text_tokens + 336

    def test_empty(self):
        b = count_tokens(None, "")
        assert (b.text_tokens, b.patch_tokens, b.total) == (0, 0, 0)

    def test_placeholders_stripped(self):
        assert count_tokens({}, "a <ts>1 2 3</ts> b").text_tokens == 2

    def test_custom_tokenizer(self):
        assert count_tokens({}, "abcd", tokenizer=len).text_tokens == 4

    def test_marker_tokens(self):
        toks, layout = tokenize_with_placeholders("x <ts></ts> y z <ts>9</ts>")
        assert toks == ["x", "<ts></ts>", "y", "z", "<ts>9</ts>"]
        assert layout == [(1, 2), (4, 5)]

    def test_encode_window_budget_matches_count(self):
        streams = {s.name: np.sin(np.arange(s.expected_len)) for s in CANONICAL_SPECS}
        out = PatchEncoder(SMALL).encode_window(streams, "Describe.")
        assert out["budget"].patch_tokens == 336
        assert out["sequence"].length == out["budget"].total
        assert out["budget"].text_tokens == count_tokens(streams, out["prompt"]).text_tokens
        assert out["embeddings"]["heart_rate"].shape == (180, 8)


class TestLoss:
    def test_ln2(self):
        assert nll_loss([-math.log(2)] * 2) == pytest.approx(2 * math.log(2))

    def test_zero(self):
        assert nll_loss([0.0, 0.0]) == 0.0

    def test_resummation_oracle(self):
        lp = -np.random.default_rng(11).exponential(1.0, 5000)
        oracle = -sum(sorted(lp.tolist(), key=abs))
        assert abs(nll_loss(lp) - oracle) <= 1e-12 * abs(oracle)

    @pytest.mark.parametrize("bad", [[0.1], [float("nan")], [-float("inf")]])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            nll_loss(bad)


class TestWeightsIO:
    def test_round_trip(self, tmp_path):
        w = MlpWeights.init([136, 16, 8], 3)
        save_weights(tmp_path / "w.bin", w)
        back = load_weights(tmp_path / "w.bin")
        assert all(np.array_equal(a, b) for a, b in zip(w.params(), back.params()))
        assert (tmp_path / "w.bin").read_bytes()[:4] == b"LFW1"

    def test_corrupt(self, tmp_path):
        p = tmp_path / "w.bin"
        p.write_bytes(b"XXXX")
        with pytest.raises(ValueError):
            load_weights(p)
        save_weights(p, MlpWeights.init([4, 2], 0))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_weights(p)

    def test_load_or_init_writes_then_reuses(self, tmp_path):
        p = tmp_path / "sub" / "w.bin"
        a = load_or_init_weights(p, SMALL)
        assert p.exists()
        b = load_or_init_weights(p, SMALL)
        assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))

    def test_encoder_rejects_wrong_dims(self):
        with pytest.raises(ValueError):
            PatchEncoder(SMALL, MlpWeights.init([136, 4], 0))

    def test_he_init_bounds(self):
        w = MlpWeights.init([100, 50], 0)
        assert np.all(np.abs(w.weights[0]) <= math.sqrt(6 / 100))
        assert not w.biases[0].any()
