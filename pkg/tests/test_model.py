import numpy as np
import pytest

import masa.numcore as nc
from masa.model import (
    BODY_GRAPH,
    HAND_GRAPH,
    ModelConfig,
    SkeletonGraph,
    assemble_decoder_input,
    classify,
    decode_predict,
    embed_frames,
    encode,
    init_model_params,
    project_global,
)
from masa.numcore import OptimState, Tensor, backward, sgd_momentum_step
from masa.posedata import NUM_JOINTS
from masa.verification import tiny_model_config


CFG = tiny_model_config()


def _params(seed=0, **kwargs):
    return init_model_params(CFG, np.random.default_rng(seed), **kwargs)


def _coords(rng, T):
    return rng.uniform(-1, 1, size=(T, NUM_JOINTS, 2))


class TestSkeletonGraph:
    @pytest.mark.parametrize("graph,n", [(BODY_GRAPH, 7), (HAND_GRAPH, 21)])
    def test_symmetry_and_row_sums(self, graph, n):
        assert graph.adjacency.shape == (n, n)
        np.testing.assert_array_equal(graph.adjacency, graph.adjacency.T)
        np.testing.assert_array_equal(np.diag(graph.adjacency), np.ones(n))
        np.testing.assert_allclose(graph.norm_adjacency.sum(axis=1), 1.0, atol=1e-12)

    def test_hand_is_connected_tree(self):
        adj = HAND_GRAPH.adjacency - np.eye(21)
        assert adj.sum() == 2 * 20  # 20 undirected edges over 21 joints
        reach = np.linalg.matrix_power(HAND_GRAPH.adjacency, 21)
        assert np.all(reach > 0)


class TestEmbedFrames:
    def test_output_shape(self, rng):
        out = embed_frames(_coords(rng, 5), _params(), CFG)
        assert out.shape == (5, CFG.d_e)

    def test_framewise_statelessness(self, rng):
        """Identical frames produce identical embedding rows."""
        frame = rng.uniform(-1, 1, size=(1, NUM_JOINTS, 2))
        out = embed_frames(np.repeat(frame, 3, axis=0), _params(), CFG)
        np.testing.assert_array_equal(out.data[0], out.data[1])
        np.testing.assert_array_equal(out.data[0], out.data[2])

    def test_zero_parameters_zero_output(self, rng):
        params = _params()
        for _, t in params.items():
            t.data[...] = 0.0
        out = embed_frames(_coords(rng, 4), params, CFG)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_part_decomposition_independence(self, rng):
        """Zeroing body-joint inputs (hands fixed) changes only the trailing
        body slice of each frame embedding."""
        coords = _coords(rng, 4)
        zeroed = coords.copy()
        zeroed[:, 0:7] = 0.0
        params = _params()
        a = embed_frames(coords, params, CFG).data
        b = embed_frames(zeroed, params, CFG).data
        hands = 2 * CFG.d_hand
        np.testing.assert_array_equal(a[:, :hands], b[:, :hands])
        assert not np.allclose(a[:, hands:], b[:, hands:])

    def test_shared_hand_weights_mirror(self, rng):
        """With shared weights, swapping the two hands swaps their slices."""
        coords = _coords(rng, 2)
        swapped = coords.copy()
        swapped[:, 7:28], swapped[:, 28:49] = coords[:, 28:49], coords[:, 7:28]
        params = _params()
        a = embed_frames(coords, params, CFG).data
        b = embed_frames(swapped, params, CFG).data
        d = CFG.d_hand
        np.testing.assert_array_equal(a[:, :d], b[:, d : 2 * d])
        np.testing.assert_array_equal(a[:, d : 2 * d], b[:, :d])

    def test_unshared_hand_weights_have_own_parameters(self):
        cfg = ModelConfig(
            d_e=18, enc_layers=1, dec_layers=1, heads=2, mlp_ratio=2,
            proj_dim=8, gcn_layers=1, gcn_hidden=4, max_T=16, share_hand_weights=False,
        )
        params = init_model_params(cfg, np.random.default_rng(0))
        assert any(p.startswith("embed.hand2.") for p in params.paths())


class TestEncode:
    def test_shape_preserved(self, rng):
        f = embed_frames(_coords(rng, 6), _params(), CFG)
        out = encode(f, np.arange(6), _params(), CFG)
        assert out.shape == f.shape

    def test_single_token_finite(self, rng):
        f = embed_frames(_coords(rng, 1), _params(), CFG)
        out = encode(f, np.arange(1), _params(), CFG)
        assert np.all(np.isfinite(out.data))

    def test_attention_rows_sum_to_one(self, rng):
        f = embed_frames(_coords(rng, 5), _params(), CFG)
        sink = []
        encode(f, np.arange(5), _params(), CFG, attn_sink=sink)
        assert len(sink) == CFG.enc_layers
        for probs in sink:
            np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_positions_must_increase(self, rng):
        f = embed_frames(_coords(rng, 3), _params(), CFG)
        with pytest.raises(ValueError):
            encode(f, np.array([2, 1, 0]), _params(), CFG)

    def test_position_out_of_range(self, rng):
        f = embed_frames(_coords(rng, 3), _params(), CFG)
        with pytest.raises(ValueError):
            encode(f, np.array([0, 1, CFG.max_T]), _params(), CFG)

    def test_deterministic(self, rng):
        coords = _coords(rng, 4)
        a = encode(embed_frames(coords, _params(), CFG), np.arange(4), _params(), CFG)
        b = encode(embed_frames(coords, _params(), CFG), np.arange(4), _params(), CFG)
        np.testing.assert_array_equal(a.data, b.data)


class TestDecodePredict:
    def _encoded(self, rng, T, masked):
        params = _params()
        visible = np.array([i for i in range(T) if i not in set(masked)])
        f_enc = encode(embed_frames(_coords(rng, T)[visible], params, CFG), visible, params, CFG)
        return params, visible, f_enc

    def test_selection_contract(self, rng):
        T, masked = 8, [1, 4, 6]
        params, visible, f_enc = self._encoded(rng, T, masked)
        keys, preds = decode_predict(f_enc, visible, np.array(masked), T, params, CFG)
        assert keys == (1, 4, 6)
        assert preds.shape == (3, NUM_JOINTS, 2)

    def test_empty_mask_runs(self, rng):
        T = 5
        params, visible, f_enc = self._encoded(rng, T, [])
        keys, preds = decode_predict(f_enc, visible, np.array([], dtype=int), T, params, CFG)
        assert keys == ()
        assert preds.shape == (0, NUM_JOINTS, 2)

    def test_inconsistent_bookkeeping_rejected(self, rng):
        T, masked = 8, [1, 4]
        params, visible, f_enc = self._encoded(rng, T, [1, 4, 6])
        with pytest.raises(ValueError, match="bookkeeping"):
            decode_predict(f_enc, visible, np.array(masked), T, params, CFG)

    def test_visible_frame_perturbation_reaches_masked_predictions(self, rng):
        """Perturbing one visible frame's coordinates must change at least
        one masked prediction: information flows through the decoder."""
        T, masked = 8, [2, 5]
        params = _params(seed=3)
        visible = np.array([i for i in range(T) if i not in set(masked)])
        coords = _coords(rng, T)

        def run(c):
            f_enc = encode(embed_frames(c[visible], params, CFG), visible, params, CFG)
            _, preds = decode_predict(f_enc, visible, np.array(masked), T, params, CFG)
            return preds.data

        base = run(coords)
        coords2 = coords.copy()
        coords2[0] += 0.05
        assert not np.allclose(base, run(coords2))

    def test_positional_consistency_of_assembly(self, rng):
        """Row t of the assembled decoder input is the encoder output (or the
        shared mask token) for frame t; the positional row is added inside
        the decoder stack for index t."""
        T, masked = 6, [1, 3]
        params, visible, f_enc = self._encoded(rng, T, masked)
        assembled = assemble_decoder_input(
            f_enc, visible, np.array(masked), T, params
        ).data
        token = params["decoder.mask_token"].data
        for row, t in enumerate(visible):
            np.testing.assert_array_equal(assembled[t], f_enc.data[row])
        for t in masked:
            np.testing.assert_array_equal(assembled[t], token)


class TestProjectGlobal:
    def test_unit_norm(self, rng):
        params = _params()
        f_enc = encode(embed_frames(_coords(rng, 5), params, CFG), np.arange(5), params, CFG)
        out = project_global(f_enc, params, "proj_q")
        assert out.shape == (CFG.proj_dim,)
        assert abs(np.linalg.norm(out.data) - 1.0) < 1e-9

    def test_identical_rows_pool_to_row(self, rng):
        x = rng.normal(size=(1, CFG.d_e))
        pooled = nc.mean(Tensor(np.repeat(x, 4, axis=0)), axis=0)
        np.testing.assert_allclose(pooled.data, x[0], atol=1e-12)

    def test_empty_input_rejected(self, rng):
        params = _params()
        with pytest.raises(ValueError):
            project_global(Tensor(np.zeros((0, CFG.d_e))), params, "proj_q")


class TestClassify:
    def _setup(self, rng, num_classes=4):
        cfg = ModelConfig(
            d_e=18, enc_layers=1, dec_layers=1, heads=2, mlp_ratio=2,
            proj_dim=8, gcn_layers=1, gcn_hidden=4, max_T=16, num_classes=num_classes,
        )
        params = init_model_params(
            cfg, np.random.default_rng(1), with_decoder=False, with_classifier=True
        )
        f_enc = encode(embed_frames(_coords(rng, 4), params, cfg), np.arange(4), params, cfg)
        return cfg, params, f_enc

    def test_logit_shape_and_softmax(self, rng):
        _, params, f_enc = self._setup(rng)
        logits = classify(f_enc, params)
        assert logits.shape == (4,)
        probs = nc.softmax(logits, axis=-1)
        np.testing.assert_allclose(probs.data.sum(), 1.0, atol=1e-12)

    def test_missing_classifier_rejected(self, rng):
        params = _params()
        f_enc = encode(embed_frames(_coords(rng, 3), params, CFG), np.arange(3), params, CFG)
        with pytest.raises(ValueError, match="classifier"):
            classify(f_enc, params)

    def test_single_sample_overfit_probe(self, rng):
        """One labeled clip can be pushed to >=0.99 softmax probability
        within 200 SGD steps: a capacity sanity check."""
        cfg, params, _ = self._setup(rng, num_classes=3)
        coords = _coords(rng, 6)
        label = 1
        state = OptimState()
        for _ in range(200):
            f_enc = encode(embed_frames(coords, params, cfg), np.arange(6), params, cfg)
            logits = classify(f_enc, params)
            shifted = nc.sub(logits, Tensor(float(np.max(logits.data))))
            loss = nc.sub(nc.log(nc.sum_(nc.exp(shifted))), shifted[label])
            params.zero_grads()
            backward(loss)
            sgd_momentum_step(params, state, lr=0.05, momentum=0.9)
        f_enc = encode(embed_frames(coords, params, cfg), np.arange(6), params, cfg)
        probs = nc.softmax(classify(f_enc, params), axis=-1).data
        assert probs[label] >= 0.99


class TestEndToEndGradient:
    def test_masked_reconstruction_path(self):
        """Gradients of the reconstruction loss through decoder, encoder and
        embedding agree with finite differences on the tiny config."""
        from masa.verification import full_pipeline_check

        assert full_pipeline_check(seed=0) < 1e-3
