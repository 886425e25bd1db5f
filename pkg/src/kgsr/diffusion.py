"""Attention-guided frontier expansion that grows a per-user subgraph.

Starting from the user node (score 1.0), each step scores every edge from
the current central nodes to their unvisited neighbors with a small
two-layer attention network, softmax-normalizes the edge scores, aggregates
them into raw candidate-node scores, keeps the top-N candidates, and
softmax-normalizes the kept raw scores into the step weights v. The kept
nodes become the next step's centrals carrying v as their scores. A node
joins the subgraph at most once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .graph import Direction, EntityKind, KnowledgeGraph
from .numerics import leaky_relu, sigmoid, stable_softmax
from .transe import EmbeddingTable


def _glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class AttentionParams:
    """Edge-attention weights: w1 maps the concatenated (user, source) pair
    down to a hidden vector, w2 maps that back to embedding space."""

    w1: np.ndarray  # (hidden, 2 * dim)
    w2: np.ndarray  # (dim, hidden)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("attention matrices must be 2-dimensional")
        if self.w1.shape[1] % 2 != 0:
            raise ValueError("w1 must have an even number of columns (2 * dim)")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError("w2 columns must match w1 rows")
        if self.w2.shape[0] * 2 != self.w1.shape[1]:
            raise ValueError("w2 rows must equal half of w1 columns")
        if not (np.isfinite(self.w1).all() and np.isfinite(self.w2).all()):
            raise ValueError("attention parameters must be finite")

    @property
    def dim(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, dim: int, hidden: int | None, rng: np.random.Generator) -> "AttentionParams":
        hidden = dim if hidden is None else hidden
        return cls(_glorot_uniform(rng, hidden, 2 * dim), _glorot_uniform(rng, dim, hidden))


@dataclass
class DiffusionConfig:
    steps: int = 2
    top_n: int = 100
    leaky_slope: float = 0.01

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must be in (0, 1)")


@dataclass(frozen=True)
class FrontierEdge:
    source: int
    relation: int
    target: int
    direction: Direction


@dataclass
class Frontier:
    """Expansion edges from the current centrals to unvisited neighbors."""

    centrals: list[int]
    central_scores: np.ndarray
    edges: list[FrontierEdge]
    source_pos: np.ndarray  # edge index -> position of its source in centrals

    @property
    def candidates(self) -> list[int]:
        return sorted({e.target for e in self.edges})


def build_frontier(
    graph: KnowledgeGraph,
    centrals: Sequence[int],
    central_scores: np.ndarray,
    visited: set[int],
) -> Frontier:
    edges: list[FrontierEdge] = []
    source_pos: list[int] = []
    for pos, central in enumerate(centrals):
        for relation, neighbor, direction in graph.neighbors(central):
            if neighbor in visited:
                continue
            edges.append(FrontierEdge(central, relation, neighbor, direction))
            source_pos.append(pos)
    return Frontier(
        list(centrals),
        np.asarray(central_scores, dtype=np.float64),
        edges,
        np.asarray(source_pos, dtype=np.intp),
    )


@dataclass
class _AttentionCache:
    x: np.ndarray        # (k, 2 * dim) concatenated (user, source) inputs
    z1: np.ndarray       # (k, hidden) pre-activation
    a1: np.ndarray       # (k, hidden) leaky-relu output
    z2: np.ndarray       # (k, dim)
    t: np.ndarray        # (k,) dot with target embeddings
    alpha_bar: np.ndarray  # (k,) sigmoid pre-normalization scores
    alpha: np.ndarray    # (k,) softmax over all frontier edges


def _attention_forward(
    params: AttentionParams,
    user_vec: np.ndarray,
    src_ids: np.ndarray,
    dst_ids: np.ndarray,
    entities: np.ndarray,
    slope: float,
) -> _AttentionCache:
    k = len(src_ids)
    x = np.concatenate([np.broadcast_to(user_vec, (k, user_vec.shape[0])), entities[src_ids]], axis=1)
    z1 = x @ params.w1.T
    a1 = leaky_relu(z1, slope)
    z2 = a1 @ params.w2.T
    t = np.einsum("kd,kd->k", z2, entities[dst_ids])
    alpha_bar = sigmoid(t)
    alpha = stable_softmax(alpha_bar)
    return _AttentionCache(x, z1, a1, z2, t, alpha_bar, alpha)


def compute_edge_attention(
    params: AttentionParams,
    user_vec: np.ndarray,
    frontier: Frontier,
    embeddings: EmbeddingTable,
    slope: float = 0.01,
) -> dict[FrontierEdge, float]:
    """Softmax-normalized attention weight for every frontier edge.

    Empty frontier yields an empty map; otherwise the weights sum to 1.
    """
    if not frontier.edges:
        return {}
    src = np.array([e.source for e in frontier.edges], dtype=np.intp)
    dst = np.array([e.target for e in frontier.edges], dtype=np.intp)
    cache = _attention_forward(params, user_vec, src, dst, embeddings.entities, slope)
    return {edge: float(a) for edge, a in zip(frontier.edges, cache.alpha)}


class NodeScores(NamedTuple):
    raw: dict[int, float]
    normalized: dict[int, float]


def propagate_node_scores(frontier: Frontier, alpha: Mapping[FrontierEdge, float]) -> NodeScores:
    """Aggregate edge attention into candidate scores.

    raw[j] sums source_score * alpha over every frontier edge landing on j;
    normalized is the softmax of raw over all candidates.
    """
    raw: dict[int, float] = {}
    for edge, pos in zip(frontier.edges, frontier.source_pos):
        weight = float(frontier.central_scores[pos]) * float(alpha[edge])
        raw[edge.target] = raw.get(edge.target, 0.0) + weight
    if not raw:
        return NodeScores({}, {})
    nodes = sorted(raw)
    softmaxed = stable_softmax(np.array([raw[n] for n in nodes]))
    return NodeScores(raw, {n: float(s) for n, s in zip(nodes, softmaxed)})


class Selection(NamedTuple):
    nodes: list[int]
    weights: np.ndarray


def select_frontier(raw_scores: Mapping[int, float], top_n: int) -> Selection:
    """Top-N candidates by raw score (ties broken by ascending entity id),
    re-weighted by a softmax restricted to the kept set."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if not raw_scores:
        return Selection([], np.zeros(0))
    ranked = sorted(raw_scores.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]
    nodes = [node for node, _ in ranked]
    weights = stable_softmax(np.array([score for _, score in ranked]))
    return Selection(nodes, weights)


@dataclass(frozen=True)
class TraversedEdge:
    source: int
    relation: int
    target: int
    direction: Direction
    attention: float


@dataclass
class DiffusionStep:
    nodes: list[int] = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edges: list[TraversedEdge] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.nodes


@dataclass
class StepTrace:
    """Full forward activations of one diffusion step, kept for training."""

    src_entities: np.ndarray
    dst_entities: np.ndarray
    source_pos: np.ndarray
    cache: _AttentionCache
    candidates: list[int]
    cand_pos_of_edge: np.ndarray  # edge index -> position in candidates
    raw: np.ndarray               # raw scores aligned with candidates
    selected_local: np.ndarray    # positions (into candidates) of kept nodes
    v: np.ndarray                 # step weights aligned with selected_local


@dataclass
class SubgraphState:
    """Result of one user's diffusion: per-step kept nodes, their weights,
    and the frontier edges that led to them."""

    user: int
    steps: list[DiffusionStep]
    visited: frozenset[int]
    trace: list[StepTrace | None] | None = None

    @property
    def node_count(self) -> int:
        return 1 + sum(len(s.nodes) for s in self.steps)

    def populated_steps(self) -> list[int]:
        return [i for i, s in enumerate(self.steps) if not s.empty]


def diffuse(
    graph: KnowledgeGraph,
    embeddings: EmbeddingTable,
    params: AttentionParams,
    user: int,
    config: DiffusionConfig | None = None,
    *,
    keep_trace: bool = False,
) -> SubgraphState:
    """Run the full multi-step expansion for one user.

    Pure function of its inputs; an empty frontier halts early and the
    remaining steps stay empty.
    """
    if config is None:
        config = DiffusionConfig()
    if graph.entity_kind(user) is not EntityKind.USER:
        raise ValueError(f"diffusion must start at a user entity, got {graph.entity_kind(user).value}")
    if params.dim != embeddings.dim:
        raise ValueError("attention parameters and embeddings disagree on dimensionality")
    user_vec = embeddings.entities[user]
    visited: set[int] = {user}
    centrals: list[int] = [user]
    central_scores = np.array([1.0])
    steps: list[DiffusionStep] = []
    traces: list[StepTrace | None] = []
    for _ in range(config.steps):
        frontier = build_frontier(graph, centrals, central_scores, visited)
        if not frontier.edges:
            break
        src = np.array([e.source for e in frontier.edges], dtype=np.intp)
        dst = np.array([e.target for e in frontier.edges], dtype=np.intp)
        cache = _attention_forward(
            params, user_vec, src, dst, embeddings.entities, config.leaky_slope
        )
        candidates = sorted(set(int(d) for d in dst))
        cand_index = {node: i for i, node in enumerate(candidates)}
        cand_pos = np.array([cand_index[int(d)] for d in dst], dtype=np.intp)
        raw = np.zeros(len(candidates))
        np.add.at(raw, cand_pos, central_scores[frontier.source_pos] * cache.alpha)
        order = sorted(range(len(candidates)), key=lambda i: (-raw[i], candidates[i]))
        selected_local = np.array(order[: config.top_n], dtype=np.intp)
        v = stable_softmax(raw[selected_local])
        selected_nodes = [candidates[i] for i in selected_local]
        selected_set = set(selected_nodes)
        traversed = [
            TraversedEdge(e.source, e.relation, e.target, e.direction, float(a))
            for e, a in zip(frontier.edges, cache.alpha)
            if e.target in selected_set
        ]
        steps.append(DiffusionStep(selected_nodes, v, traversed))
        if keep_trace:
            traces.append(
                StepTrace(src, dst, frontier.source_pos, cache, candidates, cand_pos, raw, selected_local, v)
            )
        visited.update(selected_nodes)
        centrals = selected_nodes
        central_scores = v
    while len(steps) < config.steps:
        steps.append(DiffusionStep())
        if keep_trace:
            traces.append(None)
    return SubgraphState(user, steps, frozenset(visited), traces if keep_trace else None)
