"""In-memory knowledge graph with typed entities and a bidirectional adjacency index.

Entities are interned to dense integer ids in first-seen order and carry
exactly one kind (user, item or property). Every stored triple is indexed
twice, once at its head (forward) and once at its tail (inverse), so
traversal never has to care about edge orientation. Graphs are safe for
concurrent reads once construction and augmentation are done; mutation
requires exclusive access.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConsistencyError, EntityNotFoundError, KindError, ParseError


class EntityKind(Enum):
    USER = "user"
    ITEM = "item"
    PROPERTY = "property"


class Direction(Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


# Sort order for adjacency entries: neighbor id, then relation id, then
# direction (forward before inverse).
_DIRECTION_ORDER = {Direction.FORWARD: 0, Direction.INVERSE: 1}


class KnowledgeGraph:
    def __init__(self) -> None:
        self._entity_names: list[str] = []
        self._entity_kinds: list[EntityKind] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_names: list[str] = []
        self._relation_ids: dict[str, int] = {}
        self._triples: list[Triple] = []
        self._triple_set: set[Triple] = set()
        self._adjacency: dict[int, list[tuple[int, int, Direction]]] = {}
        self._adjacency_sorted: dict[int, bool] = {}

    # -- entity / relation interning --------------------------------------

    def intern_entity(self, name: str, kind: EntityKind) -> int:
        existing = self._entity_ids.get(name)
        if existing is not None:
            if self._entity_kinds[existing] is not kind:
                raise ConsistencyError(
                    f"entity {name!r} declared as {kind.value} but already "
                    f"interned as {self._entity_kinds[existing].value}"
                )
            return existing
        eid = len(self._entity_names)
        self._entity_names.append(name)
        self._entity_kinds.append(kind)
        self._entity_ids[name] = eid
        return eid

    def intern_relation(self, name: str) -> int:
        existing = self._relation_ids.get(name)
        if existing is not None:
            return existing
        rid = len(self._relation_names)
        self._relation_names.append(name)
        self._relation_ids[name] = rid
        return rid

    def add_triple(self, head: int, relation: int, tail: int) -> bool:
        """Store a triple; returns False if it was already present."""
        self._check_entity(head)
        self._check_entity(tail)
        if not 0 <= relation < len(self._relation_names):
            raise EntityNotFoundError(f"unknown relation id {relation}")
        if head == tail:
            raise ValueError("self-loops are not allowed")
        triple = Triple(head, relation, tail)
        if triple in self._triple_set:
            return False
        self._triple_set.add(triple)
        self._triples.append(triple)
        self._adjacency.setdefault(head, []).append((relation, tail, Direction.FORWARD))
        self._adjacency.setdefault(tail, []).append((relation, head, Direction.INVERSE))
        self._adjacency_sorted[head] = False
        self._adjacency_sorted[tail] = False
        return True

    # -- lookups -----------------------------------------------------------

    def _check_entity(self, entity: int) -> None:
        if not 0 <= entity < len(self._entity_names):
            raise EntityNotFoundError(f"unknown entity id {entity}")

    @property
    def n_entities(self) -> int:
        return len(self._entity_names)

    @property
    def n_relations(self) -> int:
        return len(self._relation_names)

    @property
    def n_triples(self) -> int:
        return len(self._triples)

    @property
    def triples(self) -> tuple[Triple, ...]:
        return tuple(self._triples)

    def has_triple(self, triple: Triple) -> bool:
        return triple in self._triple_set

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise EntityNotFoundError(f"unknown entity {name!r}") from None

    def has_entity(self, name: str) -> bool:
        return name in self._entity_ids

    def entity_name(self, entity: int) -> str:
        self._check_entity(entity)
        return self._entity_names[entity]

    def entity_kind(self, entity: int) -> EntityKind:
        self._check_entity(entity)
        return self._entity_kinds[entity]

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise EntityNotFoundError(f"unknown relation {name!r}") from None

    def relation_name(self, relation: int) -> str:
        if not 0 <= relation < len(self._relation_names):
            raise EntityNotFoundError(f"unknown relation id {relation}")
        return self._relation_names[relation]

    def entity_names(self) -> tuple[str, ...]:
        return tuple(self._entity_names)

    def relation_names(self) -> tuple[str, ...]:
        return tuple(self._relation_names)

    def entities_of_kind(self, kind: EntityKind) -> list[int]:
        return [i for i, k in enumerate(self._entity_kinds) if k is kind]

    def neighbors(self, entity: int) -> list[tuple[int, int, Direction]]:
        """All (relation, neighbor, direction) entries incident to an entity.

        Forward entries come from triples with the entity as head, inverse
        entries from triples with it as tail. Order is deterministic:
        neighbor id, then relation id, then direction.
        """
        self._check_entity(entity)
        entries = self._adjacency.get(entity)
        if not entries:
            return []
        if not self._adjacency_sorted.get(entity, True):
            entries.sort(key=lambda e: (e[1], e[0], _DIRECTION_ORDER[e[2]]))
            self._adjacency_sorted[entity] = True
        return list(entries)

    def degree(self, entity: int) -> int:
        self._check_entity(entity)
        return len(self._adjacency.get(entity, ()))


class InteractionSet:
    """Per-user ordered purchase lists with set-based deduplication."""

    def __init__(self) -> None:
        self._by_user: dict[int, list[int]] = {}
        self._pairs: set[tuple[int, int]] = set()

    def add(self, user: int, item: int) -> bool:
        if (user, item) in self._pairs:
            return False
        self._pairs.add((user, item))
        self._by_user.setdefault(user, []).append(item)
        return True

    def users(self) -> list[int]:
        return sorted(self._by_user)

    def items_for(self, user: int) -> list[int]:
        return list(self._by_user.get(user, ()))

    def __contains__(self, pair: tuple[int, int]) -> bool:
        return pair in self._pairs

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def n_users(self) -> int:
        return len(self._by_user)


def _data_lines(path):
    """Yield (line_no, stripped_line) skipping blanks and '#' comments."""
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield line_no, line


def _parse_kind(path, line_no: int, token: str) -> EntityKind:
    try:
        return EntityKind(token)
    except ValueError:
        raise ParseError(
            path, line_no, f"unknown entity kind {token!r} (expected user/item/property)"
        ) from None


def ingest_triples(path) -> KnowledgeGraph:
    """Load a graph from a 5-field TSV: head, head_kind, relation, tail, tail_kind.

    Duplicate triples collapse silently (set semantics). A name appearing
    with two different kinds raises ConsistencyError; malformed lines raise
    ParseError with the offending line number.
    """
    graph = KnowledgeGraph()
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 5:
            raise ParseError(path, line_no, f"expected 5 tab-separated fields, got {len(fields)}")
        head_name, head_kind, relation_name, tail_name, tail_kind = fields
        if not head_name or not relation_name or not tail_name:
            raise ParseError(path, line_no, "empty field")
        head = graph.intern_entity(head_name, _parse_kind(path, line_no, head_kind))
        tail = graph.intern_entity(tail_name, _parse_kind(path, line_no, tail_kind))
        relation = graph.intern_relation(relation_name)
        try:
            graph.add_triple(head, relation, tail)
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return graph


def write_triples(graph: KnowledgeGraph, path) -> None:
    """Serialize a graph back to the triples file format (insertion order).

    Entities that participate in no triple cannot be represented and are
    dropped; re-ingesting reproduces the same name/kind/triple content for
    graphs without isolated entities.
    """
    with open(path, "w", encoding="utf-8") as handle:
        for t in graph.triples:
            handle.write(
                "\t".join(
                    (
                        graph.entity_name(t.head),
                        graph.entity_kind(t.head).value,
                        graph.relation_name(t.relation),
                        graph.entity_name(t.tail),
                        graph.entity_kind(t.tail).value,
                    )
                )
                + "\n"
            )


def ingest_interactions(path, graph: KnowledgeGraph) -> InteractionSet:
    """Load a user->items map from a 2-field TSV of user_name, item_name."""
    interactions = InteractionSet()
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(path, line_no, f"expected 2 tab-separated fields, got {len(fields)}")
        user_name, item_name = fields
        user = graph.entity_id(user_name)
        item = graph.entity_id(item_name)
        if graph.entity_kind(user) is not EntityKind.USER:
            raise KindError(f"{user_name!r} is {graph.entity_kind(user).value}, not user")
        if graph.entity_kind(item) is not EntityKind.ITEM:
            raise KindError(f"{item_name!r} is {graph.entity_kind(item).value}, not item")
        interactions.add(user, item)
    return interactions


def split_interactions(
    interactions: InteractionSet, train_fraction: float, seed: int
) -> tuple[InteractionSet, InteractionSet]:
    """Per-user stratified split; deterministic for a given seed.

    Users with a single interaction go entirely to train (they cannot be
    ranked). Within each split the original interaction order is kept.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    rng = np.random.default_rng(seed)
    train = InteractionSet()
    test = InteractionSet()
    for user in interactions.users():
        items = interactions.items_for(user)
        n = len(items)
        if n == 1 or train_fraction == 1.0:
            for item in items:
                train.add(user, item)
            continue
        n_train = max(1, math.floor(train_fraction * n))
        perm = rng.permutation(n)
        train_positions = set(int(p) for p in perm[:n_train])
        for pos, item in enumerate(items):
            (train if pos in train_positions else test).add(user, item)
    return train, test


def add_purchase_triples(
    graph: KnowledgeGraph, interactions: InteractionSet, relation_name: str = "purchase"
) -> int:
    """Materialize interactions as purchase triples; returns how many were new."""
    relation = graph.intern_relation(relation_name)
    added = 0
    for user in interactions.users():
        for item in interactions.items_for(user):
            if graph.add_triple(user, relation, item):
                added += 1
    return added
