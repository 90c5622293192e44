"""Tests for the graph network forward pass."""

import dataclasses

import numpy as np
import pytest

from fsdag.core import ops
from fsdag.core.gradcheck import grad_check
from fsdag.core.tensor import ContractViolation
from fsdag.core.tensor import Tensor
from fsdag.document import BBox
from fsdag.document import Document
from fsdag.document import TextRegion
from fsdag.document import reading_order
from fsdag.document import spatial_relation
from fsdag.encoders.text import text_features
from fsdag.encoders.visual import conv_feature_map
from fsdag.encoders.visual import roi_align
from fsdag.model.config import ModelConfig
from fsdag.model.graph import DegenerateGraphError
from fsdag.model.graph import attention
from fsdag.model.graph import classify
from fsdag.model.graph import edge_head_score
from fsdag.model.graph import edge_head_vector
from fsdag.model.graph import edge_init
from fsdag.model.graph import forward
from fsdag.model.graph import fuse
from fsdag.model.graph import grid_bins
from fsdag.model.graph import pos_embed
from fsdag.model.graph import predict
from fsdag.model.graph import smoothed_ce_loss
from fsdag.model.graph import smoothing_targets
from fsdag.model.params import ModelParams

from tests.helpers import LABELS
from tests.helpers import make_page
from tests.helpers import random_page


def init(config: ModelConfig, seed: int = 0) -> ModelParams:
    return ModelParams.initialize(config, LABELS.names, seed=seed)


def renumber(doc: Document, perm: list[int]) -> Document:
    """New region k is old region perm[k]."""
    regions = tuple(
        TextRegion(id=k, text=doc.region(old).text, bbox=doc.region(old).bbox, label=doc.region(old).label)
        for k, old in enumerate(perm)
    )
    return dataclasses.replace(doc, regions=regions)


def loop_logits(doc: Document, params: ModelParams) -> np.ndarray:
    """Per-node, per-pair evaluation of the network with plain Python loops."""
    cfg = params.config
    count = len(doc)
    order = reading_order(doc)
    boxes = [doc.region(i).bbox for i in range(count)]

    t = text_features(doc, order, cfg.text, params.text_projection, pooling=cfg.use_text_pool)
    fmap = conv_feature_map(doc.raster, params.conv_layers, cfg.visual.stride, cfg.visual.padding)
    nodes = []
    for i in range(count):
        t_i = ops.reshape(ops.take_rows(t, np.array([i])), (cfg.d_text,))
        v_i = roi_align(fmap, boxes[i], doc.width, doc.height, cfg.visual.roi_grid)
        nodes.append(fuse(t_i, v_i, params))
    pos = [pos_embed(b, doc.width, doc.height, params) for b in boxes]
    edges = [
        [edge_init(Tensor(spatial_relation(boxes[i], boxes[j], doc.width, doc.height)), params) for j in range(count)]
        for i in range(count)
    ]

    for step in range(cfg.steps):
        updated = []
        for i in range(count):
            messages = []
            for head in range(cfg.heads):
                others = [j for j in range(count) if j != i]
                vectors = {j: edge_head_vector(nodes[i], pos[i], edges[i][j], nodes[j], pos[j], head, params) for j in others}
                scores = np.array([edge_head_score(vectors[j], head, params).item() for j in others])
                weights = np.exp(scores - scores.max())
                weights /= weights.sum()
                messages.append(sum(w * vectors[j].data for w, j in zip(weights, others)))
            update = params.update(step)(Tensor(np.concatenate(messages)[None, :]))
            if cfg.training_strategies:
                update = ops.instance_norm(update)
            updated.append(Tensor(nodes[i].data + np.maximum(update.data[0], 0.0)))
        nodes = updated

    return np.stack([params.classifier(Tensor(n.data[None, :])).data[0] for n in nodes])


class TestSmoothing:
    """Label-smoothed targets and loss."""

    def test_targets(self):
        q = smoothing_targets(np.array([0]), 4, 0.1)
        np.testing.assert_allclose(q, [[0.925, 0.025, 0.025, 0.025]], atol=1e-15)

    def test_no_smoothing_is_one_hot(self):
        assert smoothing_targets(np.array([2]), 3, 0.0).tolist() == [[0.0, 0.0, 1.0]]

    def test_loss_of_uniform_logits(self):
        loss = smoothed_ce_loss(Tensor(np.zeros((2, 4))), np.array([0, 3]), 0.1)
        assert loss.item() == pytest.approx(np.log(4))


class TestAttention:
    """Masked softmax over neighbors."""

    @pytest.mark.parametrize("seed", range(100))
    def test_rows_sum_to_one_with_zero_diagonal(self, tiny_config: ModelConfig, seed: int):
        rng = np.random.default_rng(seed)
        page = random_page(rng, int(rng.integers(2, 11)))

        _, state = forward(page, init(tiny_config, seed))

        for per_step in state.attention:
            for alpha in per_step:
                np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)
                assert np.all(np.diag(alpha) == 0.0)
                assert np.all(alpha >= 0.0)

    def test_two_nodes_attend_to_each_other(self, tiny_config: ModelConfig):
        page = make_page([(2, 2, 20, 10), (30, 20, 50, 30)])
        _, state = forward(page, init(tiny_config))
        for per_step in state.attention:
            for alpha in per_step:
                assert alpha.tolist() == [[0.0, 1.0], [1.0, 0.0]]

    def test_single_node_score_matrix(self):
        with pytest.raises(DegenerateGraphError):
            attention(Tensor(np.zeros((1, 1))))


class TestForward:
    """Shapes, contracts and equivariance."""

    def test_shapes(self, tiny_config: ModelConfig, three_node_page: Document):
        logits, state = forward(three_node_page, init(tiny_config))

        assert logits.shape == (3, len(LABELS))
        assert len(state.nodes) == tiny_config.steps + 1
        assert state.edges.shape == (3, 3, tiny_config.d_edge)
        assert state.positions.shape == (3, tiny_config.d_pos)
        assert state.order == reading_order(three_node_page)

    def test_edges_are_unit_length(self, tiny_config: ModelConfig, three_node_page: Document):
        _, state = forward(three_node_page, init(tiny_config))
        norms = np.linalg.norm(state.edges, axis=-1)
        assert np.all((norms < 1.0 + 1e-9) & ((norms > 1.0 - 1e-6) | (norms == 0.0)))

    def test_single_region_page(self, tiny_config: ModelConfig):
        with pytest.raises(DegenerateGraphError):
            forward(make_page([(2, 2, 20, 10)]), init(tiny_config))

    def test_config_mismatch(self, tiny_config: ModelConfig, three_node_page: Document):
        params = init(tiny_config)
        with pytest.raises(ContractViolation):
            forward(three_node_page, params, dataclasses.replace(tiny_config, heads=3))

    def test_missing_raster_with_visual_on(self, tiny_config: ModelConfig):
        page = make_page([(2, 2, 20, 10), (30, 3, 50, 11)], with_raster=False)
        with pytest.raises(ContractViolation):
            forward(page, init(tiny_config))

    def test_missing_raster_with_visual_off(self, tiny_config: ModelConfig):
        page = make_page([(2, 2, 20, 10), (30, 3, 50, 11)], with_raster=False)
        logits, _ = forward(page, init(dataclasses.replace(tiny_config, use_visual=False)))
        assert np.isfinite(logits.data).all()

    def test_positional_off_gives_zero_positions(self, tiny_config: ModelConfig, three_node_page: Document):
        _, state = forward(three_node_page, init(dataclasses.replace(tiny_config, use_positional=False)))
        assert np.all(state.positions == 0.0)

    def test_scalar_messages(self, tiny_config: ModelConfig, three_node_page: Document):
        params = init(dataclasses.replace(tiny_config, message_mode="scalar"))
        assert params.update(0).in_dim == tiny_config.heads
        logits, _ = forward(three_node_page, params)
        assert logits.shape == (3, len(LABELS))

    @pytest.mark.parametrize("seed", range(100))
    def test_renumbering_permutes_outputs_exactly(self, tiny_config: ModelConfig, seed: int):
        """
        Given: a page of 2 to 10 regions and the same page with its region ids shuffled
        When: both are run through the same parameters
        Then: logits and node states agree bit for bit after undoing the shuffle
        """
        rng = np.random.default_rng(seed)
        count = int(rng.integers(2, 11))
        page = random_page(rng, count)
        perm = [int(i) for i in rng.permutation(count)]
        params = init(tiny_config, seed)

        logits, state = forward(page, params)
        shuffled_logits, shuffled_state = forward(renumber(page, perm), params)

        assert np.array_equal(shuffled_logits.data, logits.data[perm])
        for original, shuffled in zip(state.nodes, shuffled_state.nodes):
            assert np.array_equal(shuffled, original[perm])

    @pytest.mark.parametrize("seed", range(50))
    @pytest.mark.parametrize("count", [2, 3, 4])
    def test_matches_explicit_loops(self, tiny_config: ModelConfig, count: int, seed: int):
        page = random_page(np.random.default_rng(100 * seed + count), count)
        params = init(tiny_config, 10 * seed + count)

        logits, _ = forward(page, params)

        np.testing.assert_allclose(logits.data, loop_logits(page, params), rtol=0, atol=1e-9)

    def test_predict_is_argmax(self, tiny_config: ModelConfig, three_node_page: Document):
        params = init(tiny_config)
        logits, _ = forward(three_node_page, params)
        assert predict(three_node_page, params) == np.argmax(logits.data, axis=1).tolist()


def zero_tensors(params: ModelParams, prefix: str) -> None:
    for name, tensor in params.tensors.items():
        if name.startswith(prefix):
            tensor.data[...] = 0.0


class TestComponents:
    """Single-node and single-pair building blocks."""

    def test_fuse_of_zero_text_is_the_bias_response(self, tiny_config: ModelConfig):
        params = init(tiny_config)
        mlp = params.fusion
        v = Tensor(np.random.default_rng(0).normal(size=tiny_config.d_visual))

        n = fuse(Tensor(np.zeros(tiny_config.d_text)), v, params)

        expected = np.maximum(mlp.b1.data, 0.0) @ mlp.w2.data + mlp.b2.data
        np.testing.assert_allclose(n.data, expected, rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_edge_init_is_unit_length_at_any_scale(self, tiny_config: ModelConfig, seed: int):
        params = init(tiny_config, seed)
        s = np.random.default_rng(seed).normal(size=6)

        for scaled in (s, 2.0 * s):
            e = edge_init(Tensor(scaled), params)
            assert np.linalg.norm(e.data) == pytest.approx(1.0, abs=1e-9)

    def test_boxes_in_the_same_cells_share_positions(self, tiny_config: ModelConfig):
        """
        Given: two different boxes whose four edges fall in the same grid cells
        When: their positional embeddings are computed
        Then: the embeddings are identical
        """
        params = init(tiny_config)
        a, b = BBox(10, 10, 20, 20), BBox(10.2, 10.1, 20.3, 20.2)
        assert grid_bins([a], 64, 48, tiny_config.grid_k).tolist() == grid_bins([b], 64, 48, tiny_config.grid_k).tolist()

        assert np.array_equal(pos_embed(a, 64, 48, params).data, pos_embed(b, 64, 48, params).data)

    def test_zero_score_weights_give_uniform_attention(self, tiny_config: ModelConfig):
        params = init(tiny_config)
        zero_tensors(params, "mlp5.")
        page = random_page(np.random.default_rng(2), 4)

        assert edge_head_score(Tensor(np.ones(tiny_config.d_node)), 0, params).item() == 0.0
        _, state = forward(page, params)

        expected = (np.ones((4, 4)) - np.eye(4)) / 3.0
        for per_step in state.attention:
            for alpha in per_step:
                np.testing.assert_allclose(alpha, expected, atol=1e-15)

    def test_zero_classifier_gives_uniform_softmax(self, tiny_config: ModelConfig):
        params = init(tiny_config)
        zero_tensors(params, "classifier.")
        nodes = Tensor(np.random.default_rng(3).normal(size=(3, tiny_config.d_node)))

        probs = ops.softmax(classify(nodes, params), axis=1)

        np.testing.assert_allclose(probs.data, np.full((3, len(LABELS)), 1.0 / len(LABELS)), atol=1e-15)

    @pytest.mark.parametrize("strategies", [True, False])
    def test_zero_update_keeps_node_states(self, tiny_config: ModelConfig, three_node_page: Document, strategies: bool):
        """
        Given: every per-step update MLP set to zero
        When: the forward pass runs all message-passing steps
        Then: the final node states equal the fused initial states exactly
        """
        params = init(dataclasses.replace(tiny_config, training_strategies=strategies))
        zero_tensors(params, "mlp6.")

        _, state = forward(three_node_page, params)

        assert np.array_equal(state.nodes[-1], state.nodes[0])


class TestGradients:
    """End-to-end gradients of the smoothed loss."""

    @pytest.mark.parametrize("seed", range(5))
    def test_full_model_matches_finite_differences(self, tiny_config: ModelConfig, three_node_page: Document, seed: int):
        params = init(tiny_config, seed)
        labels = np.array([r.label for r in three_node_page.by_id()])

        def fn():
            logits, _ = forward(three_node_page, params)
            return smoothed_ce_loss(logits, labels, tiny_config.effective_smoothing)

        assert grad_check(fn, list(params), coords=3, atol=1e-9, seed=seed) < 1e-4
