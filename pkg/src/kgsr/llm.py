"""Review-triple extraction, graph injection and explanation rendering.

Two extractors share one output shape: a chat-completion client prompted to
answer in ``relation<TAB>value`` lines, and a deterministic offline lexicon
scanner used by default in tests and batch runs. Extracted triples are
injected into the graph under analyst-configured targets that decide who
the subject of each minted edge is.
"""
from __future__ import annotations

import json
import logging
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, NamedTuple, Protocol, Sequence

from .errors import ClientError, InjectionError, KindError, ParseError
from .graph import EntityKind, KnowledgeGraph
from .scoring import ExplanationPath, format_path

logger = logging.getLogger(__name__)

ROLE_USER = "user"
ROLE_ITEM = "item"
ROLE_VALUE = "value"
_ROLES = (ROLE_USER, ROLE_ITEM, ROLE_VALUE)


@dataclass(frozen=True)
class ExtractionTarget:
    """One analyst-configured extraction rule.

    subject_role decides which entity the minted edge starts from: the
    reviewing user, the reviewed item, or (role "value") the property value
    extracted for subject_source in the same review, which lets one review
    mint chained edges such as user -> liked thing -> brand.
    """

    name: str
    relation: str
    subject_role: str = ROLE_USER
    subject_source: str | None = None

    def __post_init__(self) -> None:
        if not self.name or not self.relation:
            raise ValueError("target name and relation must be nonempty")
        if self.subject_role not in _ROLES:
            raise ValueError(f"subject_role must be one of {_ROLES}, got {self.subject_role!r}")
        if self.subject_role == ROLE_VALUE and not self.subject_source:
            raise ValueError("subject_role 'value' requires a subject_source target")


DEFAULT_TARGETS: tuple[ExtractionTarget, ...] = (
    ExtractionTarget("like", "like", ROLE_USER),
    ExtractionTarget("belong", "belong", ROLE_VALUE, subject_source="like"),
    ExtractionTarget("review", "review", ROLE_USER),
    ExtractionTarget("positive", "positive", ROLE_USER),
    ExtractionTarget("negative", "negative", ROLE_USER),
    ExtractionTarget("date", "date", ROLE_USER),
)


@dataclass(frozen=True)
class ExtractedTriple:
    """One extraction: the relation to mint, the property value, and where
    it came from. The subject is resolved at injection time from the
    matching target's configuration."""

    relation: str
    value: str
    review_id: int = 0
    extractor: str = "lexicon"

    def __post_init__(self) -> None:
        if not self.value:
            raise ValueError("extracted value must be nonempty")
        if not self.relation:
            raise ValueError("extracted relation must be nonempty")


@dataclass(frozen=True)
class PromptTemplate:
    """Template text with declared placeholders plus a few-shot block."""

    text: str
    placeholders: tuple[str, ...]
    examples: str = ""

    def render(self, bindings: Mapping[str, str]) -> str:
        missing = [p for p in self.placeholders if p not in bindings]
        if missing:
            raise ValueError(f"unbound placeholders: {missing}")
        out = self.text
        for placeholder in self.placeholders:
            out = out.replace(f"<{placeholder}>", str(bindings[placeholder]))
        if self.examples:
            out = out + "\n" + self.examples
        return out


EXTRACTION_PROMPT = PromptTemplate(
    text=(
        'Read the customer review "<Review>" and report every <targets> signal '
        "you find. Answer with one line per finding: the relation name, a tab "
        "character, then the extracted value. Output nothing else. Some sample "
        "answers follow."
    ),
    placeholders=("Review", "targets"),
    examples=(
        'Review: "very reliable and no smell"\n'
        "review\treliable\n"
        "review\tno smell\n"
        'Review: "arrived on June 3rd, love the colour"\n'
        "date\tJune 3rd\n"
        "positive\tcolour"
    ),
)

EXPLANATION_PROMPT = PromptTemplate(
    text=(
        'Write a short explanation for the recommendation "<item->user>". '
        'Ground it in the configured targets "<targets>" and walk the '
        'reasoning path "<path>" hop by hop. Some sample answers follow.'
    ),
    placeholders=("item->user", "targets", "path"),
    examples=(
        "Sample: the user praised reliability in a review, the channel that "
        "carries this item is tagged reliable, so the system recommends it."
    ),
)


class ChatClient(Protocol):
    def complete(self, prompt: str) -> str:  # pragma: no cover - protocol
        ...


@dataclass
class ChatClientConfig:
    endpoint: str
    model: str
    api_key_env: str = "KGSR_LLM_API_KEY"
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class HttpChatClient:
    """Minimal JSON-over-HTTP chat-completions client with bounded retries."""

    def __init__(self, config: ChatClientConfig, api_key: str):
        self.config = config
        self._api_key = api_key

    def complete(self, prompt: str) -> str:
        body = json.dumps(
            {"model": self.config.model, "messages": [{"role": "user", "content": prompt}]}
        ).encode("utf-8")
        request = urllib.request.Request(
            self.config.endpoint,
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self._api_key}",
            },
            method="POST",
        )
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                with urllib.request.urlopen(request, timeout=self.config.timeout) as response:
                    payload = json.loads(response.read().decode("utf-8"))
                return payload["choices"][0]["message"]["content"]
            except (urllib.error.URLError, TimeoutError, OSError, KeyError, IndexError,
                    json.JSONDecodeError) as exc:
                last_error = exc
                logger.warning("chat request attempt %d failed: %s", attempt + 1, exc)
                if attempt < self.config.max_retries:
                    time.sleep(min(0.5 * (attempt + 1), 2.0))
        raise ClientError(
            f"chat completion failed after {self.config.max_retries + 1} attempts: {last_error}"
        )


class ExtractionResult(NamedTuple):
    triples: list[ExtractedTriple]
    dropped_lines: int


def extract_review_triples(
    review: str,
    targets: Sequence[ExtractionTarget],
    client: ChatClient,
    review_id: int = 0,
) -> ExtractionResult:
    """Prompt the client once per target and parse its tab-separated reply.

    Lines without a tab, with an empty value, or naming a relation outside
    the configured targets are dropped and counted. An empty review makes
    no client call at all.
    """
    if not targets:
        raise ValueError("targets must be nonempty")
    if not review.strip():
        return ExtractionResult([], 0)
    known = {t.relation for t in targets}
    triples: list[ExtractedTriple] = []
    seen: set[tuple[str, str]] = set()
    dropped = 0
    for target in targets:
        prompt = EXTRACTION_PROMPT.render({"Review": review, "targets": target.name})
        reply = client.complete(prompt)
        for line in reply.splitlines():
            line = line.strip()
            if not line:
                continue
            if "\t" not in line:
                dropped += 1
                continue
            relation, _, value = line.partition("\t")
            relation = relation.strip()
            value = value.strip()
            if not value or relation not in known:
                dropped += 1
                continue
            key = (relation, value)
            if key in seen:
                continue
            seen.add(key)
            triples.append(ExtractedTriple(relation, value, review_id, "llm"))
    if dropped:
        logger.warning("dropped %d unparseable extraction lines for review %d", dropped, review_id)
    return ExtractionResult(triples, dropped)


def load_lexicon(path) -> dict[str, tuple[str, str]]:
    """Keyword -> (relation, value) table from a 3-field TSV."""
    lexicon: dict[str, tuple[str, str]] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            keyword, relation, value = fields
            if not keyword or not relation or not value:
                raise ParseError(path, line_no, "empty field")
            key = keyword.lower()
            if key in lexicon:
                raise ParseError(path, line_no, f"duplicate keyword {keyword!r}")
            lexicon[key] = (relation, value)
    return lexicon


def demo_lexicon_path():
    """Location of the demo lexicon shipped with the package."""
    return resources.files("kgsr").joinpath("data/demo_lexicon.tsv")


def offline_extract(
    review: str, lexicon: Mapping[str, tuple[str, str]], review_id: int = 0
) -> list[ExtractedTriple]:
    """Case-insensitive whole-word keyword scan; pure and deterministic.

    One triple per matched keyword, deduplicated on (relation, value).
    """
    triples: list[ExtractedTriple] = []
    seen: set[tuple[str, str]] = set()
    for keyword in sorted(lexicon):
        relation, value = lexicon[keyword]
        if (relation, value) in seen:
            continue
        pattern = rf"(?<!\w){re.escape(keyword)}(?!\w)"
        if re.search(pattern, review, flags=re.IGNORECASE):
            seen.add((relation, value))
            triples.append(ExtractedTriple(relation, value, review_id, "lexicon"))
    return triples


@dataclass(frozen=True)
class ReviewRecord:
    review_id: int
    user: int
    item: int
    text: str


def load_reviews(path, graph: KnowledgeGraph) -> list[ReviewRecord]:
    """One JSON object per line: {"user": name, "item": name, "text": string}."""
    records: list[ReviewRecord] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from None
            try:
                user_name, item_name, text = obj["user"], obj["item"], obj["text"]
            except (KeyError, TypeError):
                raise ParseError(path, line_no, "expected keys user, item, text") from None
            user = graph.entity_id(user_name)
            item = graph.entity_id(item_name)
            if graph.entity_kind(user) is not EntityKind.USER:
                raise KindError(f"{user_name!r} is not a user entity")
            if graph.entity_kind(item) is not EntityKind.ITEM:
                raise KindError(f"{item_name!r} is not an item entity")
            records.append(ReviewRecord(line_no, user, item, str(text)))
    return records


def inject_triples(
    graph: KnowledgeGraph,
    extracted: Sequence[ExtractedTriple],
    review_index: Mapping[int, tuple[int, int]],
    targets: Sequence[ExtractionTarget] = DEFAULT_TARGETS,
) -> int:
    """Intern property values and mint the configured edges; returns how
    many triples were actually new.

    Extractions whose relation matches no configured target, or whose
    review id is not in the index, raise InjectionError. Value-subject
    extractions whose source target produced nothing in the same review are
    skipped with a warning. A value colliding with an existing user or item
    name raises ConsistencyError, preserving the kind partition.
    """
    by_relation = {t.relation: t for t in targets}
    values_by_review: dict[tuple[int, str], list[str]] = {}
    for triple in extracted:
        target = by_relation.get(triple.relation)
        if target is not None:
            values_by_review.setdefault((triple.review_id, target.name), []).append(triple.value)
    added = 0
    for triple in extracted:
        target = by_relation.get(triple.relation)
        if target is None:
            raise InjectionError(
                f"relation {triple.relation!r} does not match any configured target"
            )
        pair = review_index.get(triple.review_id)
        if pair is None:
            raise InjectionError(f"review {triple.review_id} is not in the review index")
        user, item = pair
        value_entity = graph.intern_entity(triple.value, EntityKind.PROPERTY)
        relation = graph.intern_relation(target.relation)
        if target.subject_role == ROLE_USER:
            subjects = [user]
        elif target.subject_role == ROLE_ITEM:
            subjects = [item]
        else:
            source_values = values_by_review.get((triple.review_id, target.subject_source), [])
            if not source_values:
                logger.warning(
                    "review %d: no %r extraction to anchor %r; skipped",
                    triple.review_id,
                    target.subject_source,
                    target.name,
                )
                continue
            subjects = [graph.intern_entity(v, EntityKind.PROPERTY) for v in source_values]
        for subject in subjects:
            if subject == value_entity:
                raise InjectionError(
                    f"review {triple.review_id}: {triple.value!r} would link to itself"
                )
            if graph.add_triple(subject, relation, value_entity):
                added += 1
    return added


@dataclass(frozen=True)
class Explanation:
    text: str
    degraded: bool = False


def render_template_explanation(path: ExplanationPath, graph: KnowledgeGraph) -> str:
    """Deterministic fallback sentence naming every hop of the path."""
    user = graph.entity_name(path.user)
    item = graph.entity_name(path.item)
    return (
        f"Because {format_path(path, graph)}, the system recommends {item} to {user}."
    )


def generate_explanation(
    path: ExplanationPath,
    targets: Sequence[ExtractionTarget],
    graph: KnowledgeGraph,
    client: ChatClient | None = None,
) -> Explanation:
    """Render the explanation prompt and return the client's reply verbatim;
    without a client (or when it fails) fall back to the template sentence."""
    template = render_template_explanation(path, graph)
    if client is None:
        return Explanation(template, degraded=False)
    serialized = format_path(path, graph)
    pair = f"{graph.entity_name(path.item)} -> {graph.entity_name(path.user)}"
    prompt = EXPLANATION_PROMPT.render(
        {
            "item->user": pair,
            "targets": ", ".join(t.name for t in targets),
            "path": serialized,
        }
    )
    try:
        return Explanation(client.complete(prompt), degraded=False)
    except ClientError as exc:
        logger.warning("explanation client failed, using template: %s", exc)
        return Explanation(template, degraded=True)


def load_targets(path) -> list[ExtractionTarget]:
    """Targets file: name, relation, subject_role[, subject_source] per line."""
    targets: list[ExtractionTarget] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise ParseError(path, line_no, f"expected 3 or 4 tab-separated fields, got {len(fields)}")
            try:
                targets.append(
                    ExtractionTarget(
                        fields[0], fields[1], fields[2], fields[3] if len(fields) == 4 else None
                    )
                )
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return targets
