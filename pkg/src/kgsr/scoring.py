"""Subgraph encoding, candidate item scoring, training loss and explanation paths.

The user's preference vector is a two-layer encoding of (user embedding,
first-hop sum, second-hop sum). Candidate items are item-kind entities one
hop away from the last populated diffusion step, weighted by the summed
step weights v of the subgraph nodes that bridge to them; items that were
absorbed into the subgraph itself stay candidates with their own v. The
final score is bridge_weight * sigmoid(user_repr . item_embedding).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet, Sequence

import numpy as np

from .diffusion import SubgraphState
from .errors import EntityNotFoundError, UnscorableUserError
from .graph import Direction, EntityKind, KnowledgeGraph
from .numerics import leaky_relu, sigmoid
from .transe import EmbeddingTable

SCORE_FLOOR = 1e-12


def _glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class EncoderParams:
    """Subgraph-encoder weights: w3 compresses the concatenated (user, hop-1,
    hop-2) embeddings, w4 maps back to embedding space."""

    w3: np.ndarray  # (hidden, 3 * dim)
    w4: np.ndarray  # (dim, hidden)

    def __post_init__(self) -> None:
        self.w3 = np.asarray(self.w3, dtype=np.float64)
        self.w4 = np.asarray(self.w4, dtype=np.float64)
        if self.w3.ndim != 2 or self.w4.ndim != 2:
            raise ValueError("encoder matrices must be 2-dimensional")
        if self.w3.shape[1] % 3 != 0:
            raise ValueError("w3 must have 3 * dim columns")
        if self.w4.shape[1] != self.w3.shape[0]:
            raise ValueError("w4 columns must match w3 rows")
        if self.w4.shape[0] * 3 != self.w3.shape[1]:
            raise ValueError("w4 rows must equal a third of w3 columns")
        if not (np.isfinite(self.w3).all() and np.isfinite(self.w4).all()):
            raise ValueError("encoder parameters must be finite")

    @property
    def dim(self) -> int:
        return self.w4.shape[0]

    @property
    def hidden(self) -> int:
        return self.w3.shape[0]

    @classmethod
    def init(cls, dim: int, hidden: int | None, rng: np.random.Generator) -> "EncoderParams":
        hidden = dim if hidden is None else hidden
        return cls(_glorot_uniform(rng, hidden, 3 * dim), _glorot_uniform(rng, dim, hidden))


@dataclass(frozen=True)
class CandidateScore:
    item: int
    similarity: float
    bridge_weight: float
    score: float


def hop_embedding(subgraph: SubgraphState, step: int, embeddings: EmbeddingTable) -> np.ndarray:
    """Unweighted sum of the embeddings of one step's kept nodes (1-based
    step index); an empty step yields the zero vector."""
    if not 1 <= step <= len(subgraph.steps):
        raise ValueError(f"step must be in 1..{len(subgraph.steps)}, got {step}")
    nodes = subgraph.steps[step - 1].nodes
    if not nodes:
        return np.zeros(embeddings.dim)
    return embeddings.entities[nodes].sum(axis=0)


def encode_user_subgraph(
    encoder: EncoderParams,
    user_vec: np.ndarray,
    hop1: np.ndarray,
    hop2: np.ndarray,
    slope: float = 0.01,
) -> np.ndarray:
    if not (user_vec.shape == hop1.shape == hop2.shape == (encoder.dim,)):
        raise ValueError("encoder inputs must all have the encoder dimensionality")
    x = np.concatenate([user_vec, hop1, hop2])
    return encoder.w4 @ leaky_relu(encoder.w3 @ x, slope)


def similarity(user_repr: np.ndarray, item_vec: np.ndarray) -> float:
    """Sigmoid of the dot product; strictly inside (0, 1)."""
    if user_repr.shape != item_vec.shape:
        raise ValueError("similarity inputs must share a dimensionality")
    return float(sigmoid(float(user_repr @ item_vec)))


def _collect_candidates(
    subgraph: SubgraphState, graph: KnowledgeGraph
) -> tuple[int | None, dict[int, list[int]], dict[int, tuple[int, int]]]:
    """Structural candidate discovery shared by scoring and path extraction.

    Returns (last populated step index, outside-item -> bridge node list,
    inside-item -> (step index, position in step)). Outside items are
    item-kind entities adjacent to the last populated step and not in the
    subgraph; each adjacent bridge node is counted once per item.
    """
    populated = subgraph.populated_steps()
    if not populated:
        return None, {}, {}
    last = populated[-1]
    outside: dict[int, list[int]] = {}
    for bridge in subgraph.steps[last].nodes:
        seen: set[int] = set()
        for _, neighbor, _ in graph.neighbors(bridge):
            if neighbor in subgraph.visited or neighbor in seen:
                continue
            if graph.entity_kind(neighbor) is not EntityKind.ITEM:
                continue
            seen.add(neighbor)
            outside.setdefault(neighbor, []).append(bridge)
    inside: dict[int, tuple[int, int]] = {}
    for step_index in populated:
        for pos, node in enumerate(subgraph.steps[step_index].nodes):
            if graph.entity_kind(node) is EntityKind.ITEM:
                inside[node] = (step_index, pos)
    return last, outside, inside


@dataclass
class ScoreTrace:
    """Forward activations of the scoring pass, kept for training."""

    x: np.ndarray        # (3 * dim,) concatenated encoder input
    z3: np.ndarray       # (hidden,) pre-activation
    a3: np.ndarray       # (hidden,) leaky-relu output
    user_repr: np.ndarray
    items: np.ndarray    # candidate item ids, aligned with the score list
    dots: np.ndarray     # user_repr . item embedding
    sims: np.ndarray
    weights: np.ndarray  # bridge weights
    bridges: list[list[tuple[int, int]]]  # per candidate: (step index, position)


def score_candidates(
    subgraph: SubgraphState,
    graph: KnowledgeGraph,
    embeddings: EmbeddingTable,
    encoder: EncoderParams,
    slope: float = 0.01,
    *,
    keep_trace: bool = False,
) -> list[CandidateScore] | tuple[list[CandidateScore], ScoreTrace | None]:
    """Score every candidate item, sorted by descending score with id
    tie-break. An empty diffusion yields an empty list."""
    last, outside, inside = _collect_candidates(subgraph, graph)
    if last is None:
        return ([], None) if keep_trace else []
    user_vec = embeddings.entities[subgraph.user]
    hop1 = hop_embedding(subgraph, 1, embeddings)
    hop2 = hop_embedding(subgraph, 2, embeddings) if len(subgraph.steps) >= 2 else np.zeros_like(hop1)
    x = np.concatenate([user_vec, hop1, hop2])
    z3 = encoder.w3 @ x
    a3 = leaky_relu(z3, slope)
    user_repr = encoder.w4 @ a3

    step_weights = [s.weights for s in subgraph.steps]
    step_pos = [{node: i for i, node in enumerate(s.nodes)} for s in subgraph.steps]

    items: list[int] = []
    weights: list[float] = []
    bridges: list[list[tuple[int, int]]] = []
    for item in sorted(set(outside) | set(inside)):
        if item in outside:
            refs = [(last, step_pos[last][b]) for b in outside[item]]
        else:
            refs = [inside[item]]
        items.append(item)
        weights.append(float(sum(step_weights[s][p] for s, p in refs)))
        bridges.append(refs)

    item_arr = np.array(items, dtype=np.intp)
    dots = embeddings.entities[item_arr] @ user_repr if items else np.zeros(0)
    sims = sigmoid(dots) if items else np.zeros(0)
    weight_arr = np.array(weights)
    finals = weight_arr * sims

    order = sorted(range(len(items)), key=lambda i: (-finals[i], items[i]))
    scored = [
        CandidateScore(items[i], float(sims[i]), float(weight_arr[i]), float(finals[i]))
        for i in order
    ]
    if not keep_trace:
        return scored
    trace = ScoreTrace(
        x,
        z3,
        a3,
        user_repr,
        item_arr[order] if items else item_arr,
        dots[order] if items else dots,
        sims[order] if items else sims,
        weight_arr[order] if items else weight_arr,
        [bridges[i] for i in order],
    )
    return scored, trace


def user_loss(
    scores: Sequence[CandidateScore],
    positives: AbstractSet[int],
    *,
    floor: float = SCORE_FLOOR,
) -> tuple[float, int]:
    """Mean negative log score over the user's positively-scored items.

    Returns (loss, number of positives that received no candidate score).
    Raises UnscorableUserError when no positive is a candidate at all.
    """
    if not positives:
        raise ValueError("positives must be nonempty")
    scored = [c for c in scores if c.item in positives]
    skipped = len(positives) - len(scored)
    if not scored:
        raise UnscorableUserError(
            f"none of {len(positives)} positive items received a score"
        )
    loss = -sum(math.log(max(c.score, floor)) for c in scored) / len(scored)
    return loss, skipped


@dataclass(frozen=True)
class PathHop:
    relation: int
    node: int
    direction: Direction


@dataclass(frozen=True)
class ExplanationPath:
    """Alternating node/relation walk from the user to a recommended item."""

    user: int
    hops: tuple[PathHop, ...]
    weight: float

    @property
    def item(self) -> int:
        return self.hops[-1].node

    def nodes(self) -> list[int]:
        return [self.user] + [h.node for h in self.hops]


def _chains_to_nodes(
    subgraph: SubgraphState,
) -> list[dict[int, list[tuple[tuple[PathHop, ...], float, float]]]]:
    """Per step: node -> list of (hops from the user, product of interior v
    excluding the node itself, the node's own v)."""
    chains: list[dict[int, list[tuple[tuple[PathHop, ...], float, float]]]] = []
    for step_index, step in enumerate(subgraph.steps):
        level: dict[int, list[tuple[tuple[PathHop, ...], float, float]]] = {}
        weight_of = {node: float(w) for node, w in zip(step.nodes, step.weights)}
        for edge in step.edges:
            hop = PathHop(edge.relation, edge.target, edge.direction)
            own = weight_of[edge.target]
            if step_index == 0:
                level.setdefault(edge.target, []).append(((hop,), 1.0, own))
            else:
                for prefix_hops, prefix_excl, prefix_own in chains[step_index - 1].get(edge.source, ()):
                    level.setdefault(edge.target, []).append(
                        (prefix_hops + (hop,), prefix_excl * prefix_own, own)
                    )
        chains.append(level)
    return chains


def _path_sort_key(path: ExplanationPath):
    shape = tuple((h.node, h.relation, h.direction.value) for h in path.hops)
    return (-path.weight, len(path.hops), shape)


def extract_paths(
    subgraph: SubgraphState, graph: KnowledgeGraph, item: int, limit: int = 5
) -> list[ExplanationPath]:
    """All user-to-item walks backing a candidate, best first.

    Paths follow edges the diffusion actually traversed, plus (for items
    outside the subgraph) one closing graph edge from a bridge node; they
    are ordered by the product of the v weights of their interior nodes.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    last, outside, inside = _collect_candidates(subgraph, graph)
    if last is None or (item not in outside and item not in inside):
        raise EntityNotFoundError(
            f"entity {item} is not a candidate item for this subgraph"
        )
    chains = _chains_to_nodes(subgraph)
    paths: list[ExplanationPath] = []
    if item in outside:
        for bridge in outside[item]:
            closers = [
                (rel, direction)
                for rel, neighbor, direction in graph.neighbors(bridge)
                if neighbor == item
            ]
            for hops, excl, own in chains[last].get(bridge, ()):
                for rel, direction in closers:
                    paths.append(
                        ExplanationPath(
                            subgraph.user,
                            hops + (PathHop(rel, item, direction),),
                            excl * own,
                        )
                    )
    else:
        step_index, _ = inside[item]
        for hops, excl, _ in chains[step_index].get(item, ()):
            paths.append(ExplanationPath(subgraph.user, hops, excl))
    paths.sort(key=_path_sort_key)
    return paths[:limit]


def format_path(path: ExplanationPath, graph: KnowledgeGraph) -> str:
    """Arrow-serialized walk, e.g. ``u1 -likes-> colour <-has- item_3``."""
    parts = [graph.entity_name(path.user)]
    for hop in path.hops:
        relation = graph.relation_name(hop.relation)
        arrow = f"-{relation}->" if hop.direction is Direction.FORWARD else f"<-{relation}-"
        parts.append(arrow)
        parts.append(graph.entity_name(hop.node))
    return " ".join(parts)
