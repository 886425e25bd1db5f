"""Shared fixtures and graph builders for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from kgsr.graph import EntityKind, KnowledgeGraph

KIND = {"user": EntityKind.USER, "item": EntityKind.ITEM, "property": EntityKind.PROPERTY}


def make_graph(entities, triples):
    """Build a graph from (name, kind-string) pairs and (head, rel, tail) name triples."""
    graph = KnowledgeGraph()
    for name, kind in entities:
        graph.intern_entity(name, KIND[kind])
    for head, relation, tail in triples:
        graph.add_triple(
            graph.entity_id(head), graph.intern_relation(relation), graph.entity_id(tail)
        )
    return graph


def random_graph(rng, n_users=2, n_items=6, n_properties=5, n_relations=3, n_edges=20):
    """Random typed graph with the user connected into the mix."""
    graph = KnowledgeGraph()
    users = [graph.intern_entity(f"u{i}", EntityKind.USER) for i in range(n_users)]
    items = [graph.intern_entity(f"i{i}", EntityKind.ITEM) for i in range(n_items)]
    props = [graph.intern_entity(f"p{i}", EntityKind.PROPERTY) for i in range(n_properties)]
    relations = [graph.intern_relation(f"r{i}") for i in range(n_relations)]
    non_users = items + props
    for user in users:
        count = int(rng.integers(1, 4))
        picked = rng.choice(len(non_users), size=min(count, len(non_users)), replace=False)
        for x in picked:
            graph.add_triple(user, relations[int(rng.integers(0, n_relations))], non_users[int(x)])
    for _ in range(n_edges):
        head, tail = rng.choice(len(non_users), size=2, replace=False)
        relation = relations[int(rng.integers(0, n_relations))]
        h, t = non_users[int(head)], non_users[int(tail)]
        try:
            graph.add_triple(h, relation, t)
        except ValueError:
            continue
    return graph


def random_embeddings(rng, graph, dim):
    from kgsr.transe import EmbeddingTable

    ents = rng.normal(size=(graph.n_entities, dim))
    ents /= np.linalg.norm(ents, axis=1, keepdims=True)
    return EmbeddingTable(ents, rng.normal(size=(max(graph.n_relations, 1), dim)))


@pytest.fixture
def chain_graph():
    """user -> p1 -> i1, the forced two-step walk."""
    return make_graph(
        [("u1", "user"), ("p1", "property"), ("i1", "item")],
        [("u1", "likes", "p1"), ("p1", "describes", "i1")],
    )


def gradient_fixture():
    """6 entities, 4 relations, d=4: one user, an inside positive and an
    outside positive reachable through two property hops."""
    from kgsr.graph import InteractionSet
    from kgsr.training import TrainConfig, initialize_model
    from kgsr.transe import EmbeddingTable

    graph = make_graph(
        [
            ("u0", "user"),
            ("i1", "item"),
            ("i2", "item"),
            ("p1", "property"),
            ("p2", "property"),
            ("p3", "property"),
        ],
        [
            ("u0", "purchase", "i1"),
            ("u0", "profile", "p1"),
            ("i1", "has", "p2"),
            ("p1", "tag", "p2"),
            ("p1", "tag", "p3"),
            ("i2", "has", "p2"),
            ("i2", "has", "p3"),
        ],
    )
    rng = np.random.default_rng(7)
    entities = rng.normal(size=(6, 4))
    entities /= np.linalg.norm(entities, axis=1, keepdims=True)
    table = EmbeddingTable(entities, rng.normal(size=(4, 4)))
    config = TrainConfig(dim=4, top_n=2, steps=2, seed=3, batch_size=8, epochs=1)
    model = initialize_model(table, config, np.random.default_rng(config.seed))
    interactions = InteractionSet()
    interactions.add(graph.entity_id("u0"), graph.entity_id("i1"))
    interactions.add(graph.entity_id("u0"), graph.entity_id("i2"))
    return graph, model, interactions, config


def batch_loss_and_selections(model, graph, interactions, config, users):
    """Forward-only loss via the public ops, with the selections recorded so
    finite-difference probes can assert selection stability."""
    from kgsr.diffusion import diffuse
    from kgsr.errors import UnscorableUserError
    from kgsr.scoring import score_candidates, user_loss

    total, used = 0.0, 0
    selections = []
    for user in users:
        state = diffuse(graph, model.embeddings, model.attention, user, config.diffusion())
        selections.append(tuple(tuple(s.nodes) for s in state.steps))
        scored = score_candidates(
            state, graph, model.embeddings, model.encoder, config.leaky_slope
        )
        try:
            loss, _ = user_loss(scored, set(interactions.items_for(user)))
        except UnscorableUserError:
            continue
        total += loss
        used += 1
    return total / used, tuple(selections)
