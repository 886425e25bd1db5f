"""Translation-based embedding pretraining used to seed the recommender.

A triple (h, r, t) is scored by the distance ||h + r - t|| under an L1 or
L2 norm; training minimizes a margin-ranking objective between stored
triples and corrupted (filtered-negative) ones with plain SGD. Entity rows
are renormalized to unit L2 length at the end of every epoch; relation
rows are normalized only at initialization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EntityNotFoundError
from .graph import KnowledgeGraph, Triple

logger = logging.getLogger(__name__)


@dataclass
class TranseConfig:
    dim: int = 100
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 100
    negatives: int = 1
    norm: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.norm not in (1, 2):
            raise ValueError("norm must be 1 or 2")


class EmbeddingTable:
    """Dense entity and relation vectors sharing one dimensionality."""

    def __init__(self, entities: np.ndarray, relations: np.ndarray):
        entities = np.asarray(entities, dtype=np.float64)
        relations = np.asarray(relations, dtype=np.float64)
        if entities.ndim != 2 or relations.ndim != 2:
            raise ValueError("embedding matrices must be 2-dimensional")
        if relations.shape[0] and entities.shape[1] != relations.shape[1]:
            raise ValueError("entity and relation dimensionality differ")
        if not (np.isfinite(entities).all() and np.isfinite(relations).all()):
            raise ValueError("embedding values must be finite")
        self.entities = entities
        self.relations = relations

    @property
    def dim(self) -> int:
        return self.entities.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relations.shape[0]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.entities.copy(), self.relations.copy())


def _normalize_rows(matrix: np.ndarray) -> None:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    np.divide(matrix, norms, out=matrix, where=norms > 0)


def initialize_embeddings(
    n_entities: int, n_relations: int, config: TranseConfig, rng: np.random.Generator | None = None
) -> EmbeddingTable:
    """Seeded uniform init in +-6/sqrt(d) with unit-normalized rows."""
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    bound = 6.0 / np.sqrt(config.dim)
    entities = rng.uniform(-bound, bound, size=(n_entities, config.dim))
    relations = rng.uniform(-bound, bound, size=(n_relations, config.dim))
    _normalize_rows(entities)
    _normalize_rows(relations)
    return EmbeddingTable(entities, relations)


def _check_triple(table: EmbeddingTable, triple: Triple) -> None:
    if not 0 <= triple.head < table.n_entities:
        raise EntityNotFoundError(f"unknown entity id {triple.head}")
    if not 0 <= triple.tail < table.n_entities:
        raise EntityNotFoundError(f"unknown entity id {triple.tail}")
    if not 0 <= triple.relation < table.n_relations:
        raise EntityNotFoundError(f"unknown relation id {triple.relation}")


def transe_score(table: EmbeddingTable, triple: Triple, norm: int = 2) -> float:
    """Distance ||h + r - t|| under the given norm order; lower is better."""
    if norm not in (1, 2):
        raise ValueError("norm must be 1 or 2")
    _check_triple(table, triple)
    diff = table.entities[triple.head] + table.relations[triple.relation] - table.entities[triple.tail]
    if norm == 1:
        return float(np.abs(diff).sum())
    return float(np.linalg.norm(diff))


def sample_negative(
    graph: KnowledgeGraph, triple: Triple, rng: np.random.Generator, max_tries: int = 100
) -> Triple:
    """Corrupt head or tail with a uniform entity, filtering stored triples.

    Each attempt flips a fresh coin for the slot and draws an entity
    different from the one it replaces; after max_tries the last candidate
    is returned even if it happens to be stored.
    """
    n = graph.n_entities
    if n < 2:
        raise ValueError("negative sampling needs at least 2 entities")
    candidate = triple
    for _ in range(max_tries):
        corrupt_head = bool(rng.integers(0, 2))
        original = triple.head if corrupt_head else triple.tail
        draw = int(rng.integers(0, n - 1))
        if draw >= original:
            draw += 1
        candidate = (
            Triple(draw, triple.relation, triple.tail)
            if corrupt_head
            else Triple(triple.head, triple.relation, draw)
        )
        if not graph.has_triple(candidate):
            return candidate
    return candidate


def _distance_and_grad(diff: np.ndarray, norm: int) -> tuple[float, np.ndarray]:
    if norm == 1:
        return float(np.abs(diff).sum()), np.sign(diff)
    dist = float(np.linalg.norm(diff))
    if dist < 1e-12:
        return dist, np.zeros_like(diff)
    return dist, diff / dist


def pair_margin_loss(
    table: EmbeddingTable, positive: Triple, negative: Triple, margin: float, norm: int = 2
) -> float:
    """Hinge value max(0, margin + d(pos) - d(neg)) for one training pair."""
    return max(
        0.0, margin + transe_score(table, positive, norm) - transe_score(table, negative, norm)
    )


def pair_margin_gradients(
    table: EmbeddingTable, positive: Triple, negative: Triple, margin: float, norm: int = 2
) -> dict[tuple[str, int], np.ndarray]:
    """Exact (sub)gradients of the hinge for every touched embedding row.

    Keys are ("entity", id) or ("relation", id); rows shared between the
    positive and negative triple accumulate both contributions. Empty dict
    when the hinge is inactive.
    """
    e, r = table.entities, table.relations
    diff_pos = e[positive.head] + r[positive.relation] - e[positive.tail]
    diff_neg = e[negative.head] + r[negative.relation] - e[negative.tail]
    d_pos, g_pos = _distance_and_grad(diff_pos, norm)
    d_neg, g_neg = _distance_and_grad(diff_neg, norm)
    if margin + d_pos - d_neg <= 0:
        return {}
    grads: dict[tuple[str, int], np.ndarray] = {}

    def _acc(key: tuple[str, int], value: np.ndarray) -> None:
        if key in grads:
            grads[key] = grads[key] + value
        else:
            grads[key] = value.copy()

    _acc(("entity", positive.head), g_pos)
    _acc(("relation", positive.relation), g_pos)
    _acc(("entity", positive.tail), -g_pos)
    _acc(("entity", negative.head), -g_neg)
    _acc(("relation", negative.relation), -g_neg)
    _acc(("entity", negative.tail), g_neg)
    return grads


def transe_pretrain(graph: KnowledgeGraph, config: TranseConfig) -> EmbeddingTable:
    """Margin-ranking SGD over all stored triples; deterministic given the seed."""
    config.validate()
    if graph.n_triples == 0:
        raise ValueError("cannot pretrain on a graph with no triples")
    if graph.n_entities < 2:
        raise ValueError("cannot pretrain on a graph with fewer than 2 entities")
    rng = np.random.default_rng(config.seed)
    table = initialize_embeddings(graph.n_entities, graph.n_relations, config, rng=rng)
    triples = list(graph.triples)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for idx in rng.permutation(len(triples)):
            positive = triples[int(idx)]
            for _ in range(config.negatives):
                negative = sample_negative(graph, positive, rng)
                epoch_loss += pair_margin_loss(table, positive, negative, config.margin, config.norm)
                grads = pair_margin_gradients(table, positive, negative, config.margin, config.norm)
                for (family, row), grad in grads.items():
                    if family == "entity":
                        table.entities[row] -= lr * grad
                    else:
                        table.relations[row] -= lr * grad
        _normalize_rows(table.entities)
        logger.debug(
            "transe epoch %d/%d mean hinge %.6f",
            epoch + 1,
            config.epochs,
            epoch_loss / (len(triples) * config.negatives),
        )
    return table
