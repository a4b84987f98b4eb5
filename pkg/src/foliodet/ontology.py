"""Hierarchical category ontology with per-corpus source-tag mappings.

The tree is a forest of named nodes (roots are level 1).  Each source
tag of a corpus maps to one node; expanding a dataset assigns every
instance the full root-to-node path as its labels, which is what makes
parent-level roll-up evaluation possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources

from .corpus import CategoryDef, CorpusDataset
from .errors import OntologyError, UnmappedTagError

LabelPath = tuple[str, ...]


@dataclass(frozen=True)
class OntologyNode:
    name: str
    parent: str | None
    level: int


@dataclass(frozen=True)
class TagMapping:
    corpus_id: str
    source_tag: str
    target: str


class Ontology:
    """Immutable after construction; all lookups are read-only."""

    def __init__(
        self,
        nodes: list[tuple[str, str | None]],
        mappings: list[tuple[str, str, str]],
        phrases: dict[str, str] | None = None,
    ):
        by_name: dict[str, tuple[str, str | None]] = {}
        for name, parent in nodes:
            if name in by_name:
                raise OntologyError(f"duplicate node name {name!r}")
            by_name[name] = (name, parent)
        for name, parent in nodes:
            if parent is not None and parent not in by_name:
                raise OntologyError(f"unknown parent {parent!r} of node {name!r}")

        levels: dict[str, int] = {}

        def level_of(name: str, trail: tuple[str, ...]) -> int:
            if name in trail:
                cycle = " -> ".join(trail[trail.index(name):] + (name,))
                raise OntologyError(f"cycle in parent links: {cycle}")
            if name not in levels:
                parent = by_name[name][1]
                levels[name] = 1 if parent is None else level_of(parent, trail + (name,)) + 1
            return levels[name]

        for name, _ in nodes:
            level_of(name, ())

        self._nodes = tuple(
            OntologyNode(name, parent, levels[name]) for name, parent in nodes
        )
        self._node_index = {n.name: n for n in self._nodes}
        self._order = {n.name: i for i, n in enumerate(self._nodes)}

        seen: set[tuple[str, str]] = set()
        resolved: list[TagMapping] = []
        for corpus_id, tag, target in mappings:
            key = (corpus_id, tag)
            if key in seen:
                raise OntologyError(f"duplicate mapping for ({corpus_id}, {tag!r})")
            seen.add(key)
            if target not in self._node_index:
                raise OntologyError(
                    f"unresolved mapping ({corpus_id}, {tag!r}) -> unknown node {target!r}"
                )
            resolved.append(TagMapping(corpus_id, tag, target))
        self._mappings = tuple(resolved)
        self._mapping_index = {(m.corpus_id, m.source_tag): m.target for m in self._mappings}
        self._phrases = dict(phrases or {})

    @property
    def nodes(self) -> tuple[OntologyNode, ...]:
        return self._nodes

    @property
    def mappings(self) -> tuple[TagMapping, ...]:
        return self._mappings

    @property
    def phrases(self) -> dict[str, str]:
        return dict(self._phrases)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Ontology):
            return NotImplemented
        return (
            self._nodes == other._nodes
            and self._mappings == other._mappings
            and self._phrases == other._phrases
        )

    def node(self, name: str) -> OntologyNode:
        try:
            return self._node_index[name]
        except KeyError:
            raise OntologyError(f"unknown ontology node {name!r}") from None

    def has_node(self, name: str) -> bool:
        return name in self._node_index

    def node_order(self, name: str) -> int:
        return self._order[name]

    def path(self, name: str) -> LabelPath:
        """Names from the level-1 ancestor down to `name`."""
        node = self.node(name)
        names: list[str] = []
        while True:
            names.append(node.name)
            if node.parent is None:
                break
            node = self.node(node.parent)
        return tuple(reversed(names))

    def ancestor_at(self, name: str, level: int) -> str:
        """Ancestor of `name` at `level`, or `name` itself when shallower."""
        path = self.path(name)
        return path[min(level, len(path)) - 1]

    def roots(self) -> tuple[str, ...]:
        return tuple(n.name for n in self._nodes if n.parent is None)

    def children(self, name: str) -> tuple[str, ...]:
        return tuple(n.name for n in self._nodes if n.parent == name)

    def resolve_tag(self, corpus_id: str, tag: str) -> str | None:
        """Mapped node for (corpus, tag); a tag that is itself a node name
        resolves to that node (supports re-expanding harmonized datasets)."""
        target = self._mapping_index.get((corpus_id, tag))
        if target is not None:
            return target
        if tag in self._node_index:
            return tag
        return None

    def to_json_bytes(self) -> bytes:
        doc = {
            "nodes": [{"name": n.name, "parent": n.parent} for n in self._nodes],
            "mappings": [
                {"corpus": m.corpus_id, "tag": m.source_tag, "target": m.target}
                for m in self._mappings
            ],
            "phrases": dict(sorted(self._phrases.items())),
        }
        return (json.dumps(doc, indent=2, sort_keys=False) + "\n").encode("utf-8")


def load_ontology(text: bytes) -> Ontology:
    """Load and validate an ontology config (see README for the format)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OntologyError(f"malformed ontology JSON: {exc}") from exc
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise OntologyError("ontology config must be an object with a 'nodes' array")
    nodes = [(n["name"], n.get("parent")) for n in doc["nodes"]]
    mappings = [
        (m["corpus"], m["tag"], m["target"]) for m in doc.get("mappings", [])
    ]
    phrases = doc.get("phrases", {})
    if not isinstance(phrases, dict):
        raise OntologyError("'phrases' must map source tags to prose strings")
    return Ontology(nodes, mappings, phrases)


def default_ontology() -> Ontology:
    """The ontology shipped with the package."""
    data = resources.files("foliodet").joinpath("data/ontology.json").read_bytes()
    return load_ontology(data)


def map_tag(o: Ontology, corpus_id: str, tag: str) -> LabelPath:
    """Full root-to-node label path for a corpus source tag."""
    target = o.resolve_tag(corpus_id, tag)
    if target is None:
        raise UnmappedTagError([(corpus_id, tag)])
    return o.path(target)


def descriptive_phrase(o: Ontology, tag: str) -> str:
    """Prose phrase for a source tag; the tag itself when none is known."""
    return o.phrases.get(tag, tag)


def reachable_nodes(o: Ontology, paths) -> tuple[str, ...]:
    """All node names on the given paths, in ontology declaration order."""
    names = {name for path in paths for name in path}
    return tuple(n.name for n in o.nodes if n.name in names)


def expand_labels(ds: CorpusDataset, o: Ontology) -> CorpusDataset:
    """Assign every instance its full label path and rebuild the registry.

    The output registry holds every ontology node reachable from the
    dataset's tags, in ontology declaration order (stable ids).  Any
    unmapped tag aborts with the full offender list.  Idempotent.
    """
    unmapped: list[tuple[str, str]] = []
    paths: dict[str, LabelPath] = {}
    for img in ds.images:
        for inst in img.instances:
            if inst.source_tag in paths:
                continue
            target = o.resolve_tag(ds.corpus_id, inst.source_tag)
            if target is None:
                unmapped.append((ds.corpus_id, inst.source_tag))
            else:
                paths[inst.source_tag] = o.path(target)
    if unmapped:
        raise UnmappedTagError(unmapped)

    registry = reachable_nodes(o, paths.values())
    categories = tuple(
        CategoryDef(i, name, o.phrases.get(name)) for i, name in enumerate(registry)
    )
    images = tuple(
        replace(
            img,
            instances=tuple(
                replace(inst, labels=paths[inst.source_tag]) for inst in img.instances
            ),
        )
        for img in ds.images
    )
    return CorpusDataset(
        corpus_id=ds.corpus_id,
        categories=categories,
        images=images,
        label_expanded=True,
    )
