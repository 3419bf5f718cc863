import numpy as np
import pytest

from tdcnet.autodiff import Tensor
from tdcnet.checkpoint import load_checkpoint, save_checkpoint
from tdcnet.data import ConceptSequence, VideoSample
from tdcnet.errors import CheckpointError, ConfigurationError, DimensionError
from tdcnet.models import Model, ModelConfig, VARIANTS, classifier_forward
from tdcnet.tdc import tdc_forward, uniform_init

from test_autodiff import conv_same_loops
from test_tdc import softmax_rows


def make_sample(type_channels, clips, seed=0, label=0, sample_id="v0"):
    rng = np.random.default_rng(seed)
    seqs = [ConceptSequence(name, rng.normal(size=(l, clips)))
            for name, l in type_channels]
    return VideoSample(sample_id, seqs, label)


TYPES = [("scene", 4), ("object", 6)]


def make_model(variant, types=TYPES, clips=8, num_classes=3, seed=0, **kw):
    cfg = ModelConfig(concept_types=types, clips=clips, num_classes=num_classes,
                      variant=variant, classifier_hidden=kw.pop("classifier_hidden", (8,)),
                      **kw)
    return Model(cfg, seed=seed)


def crtdcm_co_loops(model, sample):
    """Brute-force oracle for the coupled cross-type branch."""
    p = model.cr_co
    cfg = model.config
    per_type, summed = [], []
    for name, _ in cfg.concept_types:
        x = sample.sequence(name).scores
        results = [conv_same_loops(x, w.values, b.values)
                   for w, b in zip(p.conv_w[name], p.conv_b[name])]
        per_type.append(results)
        summed.append(sum(results))
    xprime = np.concatenate(summed, axis=0)
    a_t = softmax_rows(p.w_t2.values @ np.tanh(p.w_t1.values @ xprime))
    outs, row = [], 0
    for i, (name, li) in enumerate(cfg.concept_types):
        full = softmax_rows(np.tanh(xprime @ p.w_k1[name].values) @ p.w_k2[name].values)
        a_k = full[row:row + li]
        fused = np.zeros((li, cfg.clips))
        for c in range(li):
            for t in range(cfg.clips):
                for j in range(cfg.num_widths):
                    fused[c, t] += a_k[c, j] * per_type[i][j][c, t]
        outs.append(a_t[i:i + 1] @ fused.T)
        row += li
    return np.concatenate(outs, axis=1)


class TestConfig:
    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError, match="variant"):
            ModelConfig(concept_types=TYPES, clips=8, num_classes=3, variant="mlp")

    def test_no_types(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(concept_types=[], clips=8, num_classes=3)

    def test_default_classifier_width(self):
        cfg = ModelConfig(concept_types=TYPES, clips=8, num_classes=3)
        assert cfg.classifier_hidden == (256,)

    def test_roundtrip_dict(self):
        cfg = ModelConfig(concept_types=TYPES, clips=8, num_classes=3,
                          variant="tdcmn-si", classifier_hidden=(16, 8))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestBaseline:
    def test_constant_sequences(self):
        seqs = [ConceptSequence("scene", np.tile([[0.2], [0.4]], (1, 5))),
                ConceptSequence("object", np.tile([[0.1]], (1, 5)))]
        sample = VideoSample("v", seqs, 0)
        m = make_model("baseline", types=[("scene", 2), ("object", 1)], clips=5)
        # with constant-in-time inputs, pooling equals any single clip
        pooled = np.concatenate([s.scores[:, 0] for s in seqs])
        feats = np.concatenate([np.max(s.scores, axis=1) for s in seqs])
        assert np.array_equal(pooled, feats)
        assert np.isfinite(m.baseline_forward(sample).values).all()

    def test_pooled_length(self):
        m = make_model("baseline", types=[("a", 2), ("b", 3)], clips=4)
        assert m.feature_width() == 5

    def test_planted_peak(self):
        scores = np.zeros((2, 3))
        scores[0, 1] = 0.9
        scores[1, 2] = 0.7
        m = make_model("baseline", types=[("a", 2)], clips=3)
        m.classifier = [(Tensor(np.eye(2), requires_grad=True),
                         Tensor(np.zeros((1, 2)), requires_grad=True))]
        sample = VideoSample("v", [ConceptSequence("a", scores)], 0)
        out = m.baseline_forward(sample)
        assert np.array_equal(out.values, [[0.9, 0.7]])

    def test_inconsistent_clips_rejected(self):
        from tdcnet.errors import DataError
        with pytest.raises(DataError):
            VideoSample("v", [ConceptSequence("a", np.zeros((2, 3))),
                              ConceptSequence("b", np.zeros((2, 4)))], 0)


class TestIntraBranch:
    def test_single_type_equals_tdc(self):
        m = make_model("intdcm-only", types=[("scene", 3)], clips=6)
        sample = make_sample([("scene", 3)], 6)
        x = Tensor(sample.sequence("scene").scores)
        expected = tdc_forward(x, m.intra["scene"]).values
        assert np.array_equal(m.intdcm_forward(sample).values, expected)

    def test_two_types_concat_order(self):
        m = make_model("intdcm-only")
        sample = make_sample(TYPES, 8)
        out = m.intdcm_forward(sample)
        assert out.shape == (1, 10)
        left = tdc_forward(Tensor(sample.sequence("scene").scores), m.intra["scene"]).values
        right = tdc_forward(Tensor(sample.sequence("object").scores), m.intra["object"]).values
        assert np.array_equal(out.values, np.concatenate([left, right], axis=1))


class TestCrossSi:
    def test_single_type_equals_tdc(self):
        m = make_model("crtdcm-si-only", types=[("scene", 3)], clips=6)
        sample = make_sample([("scene", 3)], 6)
        x = Tensor(sample.sequence("scene").scores)
        assert np.array_equal(m.crtdcm_si_forward(sample).values,
                              tdc_forward(x, m.cr_si).values)

    def test_output_shape(self):
        m = make_model("crtdcm-si-only")
        assert m.crtdcm_si_forward(make_sample(TYPES, 8)).shape == (1, 10)

    def test_type_order_permutes_stacking(self):
        # swapping concept type order permutes the block rows fed to the
        # shared block; check the stacked input directly
        sample = make_sample(TYPES, 8)
        m1 = make_model("crtdcm-si-only")
        m2 = make_model("crtdcm-si-only", types=[("object", 6), ("scene", 4)])
        import tdcnet.autodiff as ad
        s1 = ad.concat_axis(m1._inputs(sample), 0).values
        s2 = ad.concat_axis(m2._inputs(sample), 0).values
        assert np.array_equal(s2, np.concatenate([s1[4:], s1[:4]], axis=0))


class TestCrossCo:
    def test_zero_time_head_uniform(self):
        m = make_model("crtdcm-co-only")
        m.cr_co.w_t2.values = np.zeros_like(m.cr_co.w_t2.values)
        capture = {}
        m.crtdcm_co_forward(make_sample(TYPES, 8), capture=capture)
        for name, _ in TYPES:
            assert np.abs(capture[("cr_co", name)]["a_t"] - 1.0 / 8).max() < 1e-15

    def test_one_hot_channel_selection(self):
        m = make_model("crtdcm-co-only")
        sample = make_sample(TYPES, 8)
        for name, _ in TYPES:
            # saturate head so the softmax is one-hot on width index 1
            m.cr_co.w_k1[name].values = np.zeros_like(m.cr_co.w_k1[name].values)
            w2 = np.zeros_like(m.cr_co.w_k2[name].values)
            m.cr_co.w_k2[name].values = w2
        capture = {}
        m.crtdcm_co_forward(sample, capture=capture)
        for name, _ in TYPES:
            a_k = capture[("cr_co", name)]["a_k"]
            assert np.abs(a_k - 1.0 / 3).max() < 1e-15  # zero head -> uniform

    def test_matches_loop_oracle(self):
        for seed in range(5):
            m = make_model("crtdcm-co-only", seed=seed)
            sample = make_sample(TYPES, 8, seed=seed + 100)
            got = m.crtdcm_co_forward(sample).values
            assert np.abs(got - crtdcm_co_loops(m, sample)).max() < 1e-10

    def test_scalar_chain(self):
        types = [("a", 1), ("b", 1)]
        m = make_model("crtdcm-co-only", types=types, clips=2,
                       kernel_widths=(1,), hidden_n=1, hidden_l=1)
        sample = make_sample(types, 2, seed=5)
        got = m.crtdcm_co_forward(sample).values
        assert np.abs(got - crtdcm_co_loops(m, sample)).max() < 1e-12

    def test_convex_combination_over_clips(self):
        # each output entry lies within the min/max of that channel's fused series
        for seed in range(5):
            m = make_model("crtdcm-co-only", seed=seed)
            sample = make_sample(TYPES, 8, seed=seed)
            p = m.cr_co
            out = m.crtdcm_co_forward(sample).values.reshape(-1)
            capture = {}
            m.crtdcm_co_forward(sample, capture=capture)
            col = 0
            for name, li in m.config.concept_types:
                x = sample.sequence(name).scores
                results = [conv_same_loops(x, w.values, b.values)
                           for w, b in zip(p.conv_w[name], p.conv_b[name])]
                a_k = capture[("cr_co", name)]["a_k"]
                fused = sum(a_k[:, j:j + 1] * results[j] for j in range(len(results)))
                for c in range(li):
                    lo, hi = fused[c].min(), fused[c].max()
                    assert lo - 1e-12 <= out[col + c] <= hi + 1e-12
                col += li


class TestFullNetworks:
    @pytest.mark.parametrize("variant", ["tdcmn-si", "tdcmn-co"])
    def test_classifier_width_is_2l(self, variant):
        m = make_model(variant)
        assert m.feature_width() == 20
        assert m.classifier[0][0].shape[0] == 20

    @pytest.mark.parametrize("variant", ["intdcm-only", "crtdcm-si-only", "crtdcm-co-only"])
    def test_ablated_width_is_l(self, variant):
        assert make_model(variant).feature_width() == 10

    def test_logits_equal_manual_composition(self):
        m = make_model("tdcmn-co")
        sample = make_sample(TYPES, 8, seed=3)
        import tdcnet.autodiff as ad
        manual = classifier_forward(
            ad.concat_axis([m.intdcm_forward(sample), m.crtdcm_co_forward(sample)], 1),
            m.classifier)
        assert np.array_equal(m.forward(sample).values, manual.values)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_logits_finite(self, variant):
        m = make_model(variant)
        out = m.forward(make_sample(TYPES, 8, seed=7))
        assert out.shape == (1, 3)
        assert np.isfinite(out.values).all()

    def test_single_type_degenerate_collapse(self):
        m = make_model("tdcmn-si", types=[("scene", 4)], clips=8)
        sample = make_sample([("scene", 4)], 8)
        intra = m.intdcm_forward(sample)
        cross = m.crtdcm_si_forward(sample)
        assert intra.shape == cross.shape
        # same structure, independent weights
        assert {n for n, _ in m.intra["scene"].named_tensors()} == \
               {n for n, _ in m.cr_si.named_tensors()}

    def test_type_permutation_permutes_intra_blocks(self):
        sample = make_sample(TYPES, 8, seed=9)
        m1 = make_model("intdcm-only")
        m2 = make_model("intdcm-only", types=[("object", 6), ("scene", 4)])
        for name in m1.intra:
            for (_, a), (_, b) in zip(m1.intra[name].named_tensors(),
                                      m2.intra[name].named_tensors()):
                b.values = a.values.copy()
        out1 = m1.intdcm_forward(sample).values
        out2 = m2.intdcm_forward(sample).values
        assert np.allclose(out2, np.concatenate([out1[:, 4:], out1[:, :4]], axis=1))


class TestClassifier:
    def test_zero_weights(self):
        layers = [(Tensor(np.zeros((3, 4))), Tensor(np.zeros((1, 4)))),
                  (Tensor(np.zeros((4, 2))), Tensor(np.zeros((1, 2))))]
        out = classifier_forward(Tensor(np.ones((1, 3))), layers)
        assert np.array_equal(out.values, np.zeros((1, 2)))

    def test_single_affine(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.5, -0.5]])
        out = classifier_forward(Tensor([[1.0, 1.0]]), [(Tensor(w), Tensor(b))])
        assert np.array_equal(out.values, [[4.5, 5.5]])

    def test_hand_two_layer(self):
        w1 = np.array([[1.0, 0.0], [0.0, 1.0]])
        b1 = np.array([[0.5, -0.5]])
        w2 = np.array([[2.0, 0.0], [0.0, 2.0]])
        b2 = np.array([[0.0, 1.0]])
        x = np.array([[0.25, 0.75]])
        hidden = np.tanh(x + b1)
        expected = hidden @ w2 + b2
        out = classifier_forward(Tensor(x), [(Tensor(w1), Tensor(b1)),
                                             (Tensor(w2), Tensor(b2))])
        assert np.abs(out.values - expected).max() < 1e-15

    def test_width_mismatch(self):
        layers = [(Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 2))))]
        with pytest.raises(DimensionError):
            classifier_forward(Tensor(np.ones((1, 4))), layers)


class TestCheckpoint:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_bit_exact_roundtrip(self, variant, tmp_path):
        m = make_model(variant, seed=11)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, m)
        loaded = load_checkpoint(path)
        assert loaded.config == m.config
        for (n1, t1), (n2, t2) in zip(m.named_parameters(), loaded.named_parameters()):
            assert n1 == n2
            assert t1.values.tobytes() == t2.values.tobytes()

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        m = make_model("baseline")
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, m)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
