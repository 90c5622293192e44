"""Forward pass of the document graph network.

Regions become nodes of a complete graph. Node features fuse text and visual
vectors with a Kronecker product, edges encode pairwise spatial relations,
and a few rounds of multi-head attention message passing refine the nodes
before a linear classifier labels each of them.

All per-node work runs in reading order; logits and state are scattered
back to region-id order at the end, so renumbering the regions of a page
permutes the outputs exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from dataclasses import field
from functools import lru_cache

import numpy as np

from fsdag.core import ops
from fsdag.core.tensor import ContractViolation
from fsdag.core.tensor import Tensor
from fsdag.document import BBox
from fsdag.document import Document
from fsdag.document import grid_bin
from fsdag.document import reading_order
from fsdag.document import spatial_relations
from fsdag.encoders.text import EmbeddingTable
from fsdag.encoders.text import TextEncoderConfig
from fsdag.encoders.text import load_external_embeddings
from fsdag.encoders.text import text_features
from fsdag.encoders.visual import conv_feature_map
from fsdag.encoders.visual import roi_align_many
from fsdag.model.config import ModelConfig
from fsdag.model.params import ModelParams

logger = logging.getLogger(__name__)


class DegenerateGraphError(ValueError):
    """Raised when a graph has fewer than two nodes to attend over."""


@dataclass
class GraphState:
    """Intermediate values of one forward pass, in region-id order.

    Attributes:
        order: Reading sequence used for the pass
        nodes: n^0 .. n^steps, each L×D_n
        edges: e', L×L×D_e
        positions: p, L×D_p
        attention: attention[step][head] is L×L with a zero diagonal
    """

    order: list[int]
    nodes: list[np.ndarray] = field(default_factory=list)
    edges: np.ndarray | None = None
    positions: np.ndarray | None = None
    attention: list[list[np.ndarray]] = field(default_factory=list)


@lru_cache(maxsize=8)
def _cached_table(path: str) -> EmbeddingTable:
    return load_external_embeddings(path)


def embedding_table(cfg: TextEncoderConfig) -> EmbeddingTable | None:
    """External embeddings for kind external_file, loaded once per path."""
    if cfg.kind != "external_file":
        return None
    return _cached_table(str(cfg.embeddings_path))


def visual_off_vector(d_visual: int) -> np.ndarray:
    """Constant unit-norm stand-in for v when the visual branch is disabled."""
    return np.full(d_visual, 1.0 / np.sqrt(d_visual))


def fuse(t: Tensor, v: Tensor, params: ModelParams) -> Tensor:
    """n = MLP2(t kron v) for one node (rank 1) or every row (rank 2)."""
    if t.ndim == 1:
        fused = ops.reshape(ops.kron(t, v), (1, t.shape[0] * v.shape[0]))
        out = params.fusion(fused)
        return ops.reshape(out, (out.shape[1],))
    return params.fusion(ops.kron_rows(t, v))


def edge_init(s: Tensor, params: ModelParams) -> Tensor:
    """e' = l2_normalize(MLP3(s)) for one 6-vector or an (n, 6) batch."""
    if s.ndim == 1:
        out = params.edge_projection(ops.reshape(s, (1, s.shape[0])))
        return ops.l2_normalize(ops.reshape(out, (out.shape[1],)))
    return ops.l2_normalize(params.edge_projection(s), axis=-1)


def grid_bins(boxes: list[BBox], width: float, height: float, k: int) -> np.ndarray:
    """(len(boxes), 4) grid cells of x0, x1, y0, y1."""
    return np.array(
        [
            [grid_bin(b.x0, width, k), grid_bin(b.x1, width, k), grid_bin(b.y0, height, k), grid_bin(b.y1, height, k)]
            for b in boxes
        ],
        dtype=np.intp,
    )


def pos_embed_many(boxes: list[BBox], width: float, height: float, params: ModelParams) -> Tensor:
    """p for each box: tanh(hor[x0] | hor[x1] | ver[y0] | ver[y1]), or zeros when disabled."""
    config = params.config
    tables = params.pos_tables
    if tables is None:
        return Tensor(np.zeros((len(boxes), config.d_pos)))
    pos_hor, pos_ver = tables
    bins = grid_bins(boxes, width, height, config.grid_k)
    return ops.tanh(
        ops.concat(
            [
                ops.take_rows(pos_hor, bins[:, 0]),
                ops.take_rows(pos_hor, bins[:, 1]),
                ops.take_rows(pos_ver, bins[:, 2]),
                ops.take_rows(pos_ver, bins[:, 3]),
            ],
            axis=1,
        )
    )


def pos_embed(bbox: BBox, width: float, height: float, params: ModelParams) -> Tensor:
    out = pos_embed_many([bbox], width, height, params)
    return ops.reshape(out, (out.shape[1],))


def edge_head_vector(
    n_i: Tensor, p_i: Tensor, e_ij: Tensor, n_j: Tensor, p_j: Tensor, head: int, params: ModelParams
) -> Tensor:
    """MLP4 of head h on [n_i | p_i | e'_ij | n_j | p_j].

    Rank-1 inputs give one D_n vector; rank-2 inputs are rows of pairs.
    """
    single = n_i.ndim == 1
    parts = [n_i, p_i, e_ij, n_j, p_j]
    if single:
        parts = [ops.reshape(x, (1, x.shape[0])) for x in parts]
    out = params.head_vector(head)(ops.concat(parts, axis=1))
    return ops.reshape(out, (out.shape[1],)) if single else out


def edge_head_score(e_h: Tensor, head: int, params: ModelParams) -> Tensor:
    """MLP5 of head h: D_n -> 1; a scalar for one vector, a column for rows."""
    if e_h.ndim == 1:
        return ops.reshape(params.head_score(head)(ops.reshape(e_h, (1, e_h.shape[0]))), ())
    return params.head_score(head)(e_h)


def attention(scores: Tensor) -> Tensor:
    """Row-wise softmax of an L×L score matrix over j != i; the diagonal is 0.

    Raises:
        DegenerateGraphError: L < 2
    """
    count = scores.shape[0]
    if count < 2:
        raise DegenerateGraphError(f"attention needs at least 2 nodes, got {count}")
    return ops.softmax(scores, axis=1, mask=~np.eye(count, dtype=bool))


def pair_inputs(nodes: Tensor, positions: Tensor, edges: Tensor) -> Tensor:
    """Rows [n_i | p_i | e'_ij | n_j | p_j] for every ordered pair, row i*L + j."""
    count = nodes.shape[0]
    src = np.repeat(np.arange(count), count)
    dst = np.tile(np.arange(count), count)
    return ops.concat(
        [
            ops.take_rows(nodes, src),
            ops.take_rows(positions, src),
            edges,
            ops.take_rows(nodes, dst),
            ops.take_rows(positions, dst),
        ],
        axis=1,
    )


def propagate(
    nodes: Tensor, positions: Tensor, edges: Tensor, step: int, params: ModelParams
) -> tuple[Tensor, list[Tensor]]:
    """One message-passing step; returns n^{k+1} and the per-head attention.

    Args:
        nodes: n^k, L×D_n
        positions: p, L×D_p
        edges: e' flattened to L²×D_e, row i*L + j
        step: k, selects MLP6 of this step
    """
    config = params.config
    count, d_node = nodes.shape
    pairs = pair_inputs(nodes, positions, edges)

    messages = []
    alphas = []
    for head in range(config.heads):
        vectors = params.head_vector(head)(pairs)
        scores = ops.reshape(params.head_score(head)(vectors), (count, count))
        alpha = attention(scores)
        alphas.append(alpha)
        if config.message_mode == "vector":
            weighted = ops.mul(ops.reshape(alpha, (count, count, 1)), ops.reshape(vectors, (count, count, d_node)))
        else:
            weighted = ops.reshape(ops.mul(alpha, scores), (count, count, 1))
        messages.append(ops.sum(weighted, axis=1))

    update = params.update(step)(ops.concat(messages, axis=1))
    if config.training_strategies:
        update = ops.instance_norm(update)
    return ops.add(nodes, ops.relu(update)), alphas


def classify(nodes: Tensor, params: ModelParams) -> Tensor:
    """Logits L×C from a single linear layer."""
    return params.classifier(nodes)


def smoothing_targets(labels: np.ndarray, n_classes: int, epsilon: float) -> np.ndarray:
    """q = (1 - epsilon) * onehot + epsilon / C per row."""
    labels = np.asarray(labels, dtype=np.intp)
    targets = np.full((labels.shape[0], n_classes), epsilon / n_classes)
    targets[np.arange(labels.shape[0]), labels] += 1.0 - epsilon
    return targets


def smoothed_ce_loss(logits: Tensor, labels: np.ndarray, epsilon: float) -> Tensor:
    """Mean over nodes of -sum_c q_c log softmax(logits)_c."""
    count, n_classes = logits.shape
    targets = Tensor(smoothing_targets(labels, n_classes, epsilon))
    return ops.scale(ops.sum(ops.mul(ops.log_softmax(logits, axis=1), targets)), -1.0 / count)


def forward(
    doc: Document,
    params: ModelParams,
    config: ModelConfig | None = None,
    *,
    node_mask: np.ndarray | None = None,
    boxes: list[BBox] | None = None,
) -> tuple[Tensor, GraphState]:
    """Logits (L×C, region-id order) and the intermediate GraphState.

    Args:
        doc: Page to label
        params: Trained or initial parameters
        config: Must equal params.config when given
        node_mask: Optional 0/1 weights per region id applied to n^0
        boxes: Optional replacement boxes per region id for the spatial
            relations and positional embeddings

    Raises:
        DegenerateGraphError: fewer than two regions
        ContractViolation: config differs from the one params were built for
    """
    if config is not None and config != params.config:
        raise ContractViolation("forward config does not match the parameters' config")
    config = params.config
    count = len(doc)
    if count < 2:
        raise DegenerateGraphError(f"document {doc.name or '<unnamed>'} has {count} region(s); need at least 2")

    order = reading_order(doc)
    inverse = np.argsort(order)
    regions = [doc.region(i) for i in order]

    t = ops.take_rows(
        text_features(
            doc,
            order,
            config.text,
            params.text_projection,
            pooling=config.use_text_pool,
            table=embedding_table(config.text),
            char_table=params.char_table,
        ),
        np.asarray(order),
    )

    if config.use_visual:
        if doc.raster is None:
            raise ContractViolation(f"document {doc.name or '<unnamed>'} has no raster but use_visual is on")
        fmap = conv_feature_map(doc.raster, params.conv_layers, config.visual.stride, config.visual.padding)
        v = roi_align_many(fmap, [r.bbox for r in regions], doc.width, doc.height, config.visual.roi_grid)
    else:
        v = Tensor(np.tile(visual_off_vector(config.d_visual), (count, 1)))

    nodes = fuse(t, v, params)
    if node_mask is not None:
        nodes = ops.mul(nodes, Tensor(np.asarray(node_mask, dtype=np.float64)[order][:, None]))

    geometry = [r.bbox for r in regions] if boxes is None else [boxes[i] for i in order]
    relations = spatial_relations(geometry, doc.width, doc.height)
    edges = edge_init(Tensor(relations.reshape(count * count, 6)), params)
    positions = pos_embed_many(geometry, doc.width, doc.height, params)

    state = GraphState(order=list(order))
    state.nodes.append(nodes.data[inverse])
    for step in range(config.steps):
        nodes, alphas = propagate(nodes, positions, edges, step, params)
        state.nodes.append(nodes.data[inverse])
        state.attention.append([a.data[np.ix_(inverse, inverse)] for a in alphas])

    logits = ops.take_rows(classify(nodes, params), inverse)
    state.edges = edges.data.reshape(count, count, -1)[np.ix_(inverse, inverse)]
    state.positions = positions.data[inverse]
    return logits, state


def predict(doc: Document, params: ModelParams) -> list[int]:
    """Argmax class per region id."""
    logits, _ = forward(doc, params)
    return [int(c) for c in np.argmax(logits.data, axis=1)]
