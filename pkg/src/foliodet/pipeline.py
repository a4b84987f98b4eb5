"""Dataset transforms: filtering, deterministic splitting, merging, counts.

Everything here is a pure CorpusDataset -> CorpusDataset function; the
split shuffle uses a fixed 64-bit generator so assignments reproduce
bit-for-bit in any language, not just under one stdlib's RNG.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .corpus import (
    SPLITS,
    CategoryDef,
    CorpusDataset,
    ImageRecord,
    is_line_level_tag,
)
from .errors import ConfigError, UnmappedTagError
from .ontology import Ontology, expand_labels, reachable_nodes

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class FilterRules:
    """Which categories survive filtering.

    `retain_only_tags_present_in` keeps categories with at least one
    instance in the named split; `explicit_keep_tags` keeps a fixed
    set.  At most one of the two may be active.
    """

    drop_line_level: bool = False
    retain_only_tags_present_in: str | None = None
    explicit_keep_tags: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.retain_only_tags_present_in is not None and self.explicit_keep_tags is not None:
            raise ConfigError("at most one retention mode may be active")
        if (
            self.retain_only_tags_present_in is not None
            and self.retain_only_tags_present_in not in SPLITS
        ):
            raise ConfigError(f"unknown split {self.retain_only_tags_present_in!r}")


@dataclass(frozen=True)
class SplitSpec:
    trainval_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.trainval_fraction < 1.0:
            raise ConfigError("trainval_fraction must be in (0, 1)")


def filter_dataset(ds: CorpusDataset, rules: FilterRules) -> CorpusDataset:
    """Drop filtered categories and their instances; keep emptied images.

    The surviving categories are re-indexed contiguously from 0 in
    their original relative order.  Idempotent for fixed rules.
    """
    retained = [c.name for c in ds.categories]
    if rules.drop_line_level:
        retained = [name for name in retained if not is_line_level_tag(name)]
    if rules.retain_only_tags_present_in is not None:
        present = {
            inst.category
            for img in ds.images_in_split(rules.retain_only_tags_present_in)
            for inst in img.instances
        }
        retained = [name for name in retained if name in present]
    if rules.explicit_keep_tags is not None:
        keep = set(rules.explicit_keep_tags)
        retained = [name for name in retained if name in keep]

    keep_set = set(retained)
    categories = tuple(
        CategoryDef(i, c.name, c.descriptive_phrase)
        for i, c in enumerate(c for c in ds.categories if c.name in keep_set)
    )
    images = tuple(
        replace(
            img,
            instances=tuple(i for i in img.instances if i.category in keep_set),
        )
        for img in ds.images
    )
    return replace(ds, categories=categories, images=images)


def _splitmix64(seed: int):
    """SplitMix64 stream: documented in the README so the shuffle can be
    reproduced outside this package."""
    state = seed & _MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


def seeded_shuffle(items: Sequence[str], seed: int) -> list[str]:
    """Fisher-Yates driven by SplitMix64; index drawn as next() mod (i+1)."""
    out = list(items)
    rng = _splitmix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = next(rng) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_dataset(ds: CorpusDataset, spec: SplitSpec, force: bool = False) -> CorpusDataset:
    """Assign every image to trainval or test, deterministically.

    Image ids are sorted, shuffled with the seeded generator, and the
    first floor(n * fraction) become trainval.  Refuses to overwrite
    existing assignments unless `force` is set.
    """
    if not ds.images:
        raise ConfigError("cannot split an empty dataset")
    if not force and any(img.split != "unassigned" for img in ds.images):
        raise ConfigError("dataset already has split assignments (use force to redo)")
    order = seeded_shuffle(sorted(img.image_id for img in ds.images), spec.seed)
    n_trainval = int(len(order) * spec.trainval_fraction)
    trainval = set(order[:n_trainval])
    images = tuple(
        replace(img, split="trainval" if img.image_id in trainval else "test")
        for img in ds.images
    )
    return replace(ds, images=images)


def apply_split_manifest(ds: CorpusDataset, manifest_text: str) -> CorpusDataset:
    """Assign splits from a released manifest: one test image_id per line.

    Blank lines and '#' comments are ignored.  Ids not present in the
    dataset are configuration errors.
    """
    test_ids: set[str] = set()
    for line in manifest_text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        test_ids.add(line)
    known = {img.image_id for img in ds.images}
    missing = sorted(test_ids - known)
    if missing:
        raise ConfigError(
            "split manifest names unknown image ids: " + ", ".join(missing)
        )
    images = tuple(
        replace(img, split="test" if img.image_id in test_ids else "trainval")
        for img in ds.images
    )
    return replace(ds, images=images)


def merge_corpora(parts: Iterable[CorpusDataset], o: Ontology) -> CorpusDataset:
    """Combine label-expanded corpora into one dataset.

    Parts not yet expanded are expanded here; unmapped tags from all
    parts are reported together.  Image ids gain a "corpus_id/" prefix
    so they stay unique; split assignments carry over unchanged.
    """
    parts = list(parts)
    if not parts:
        raise ConfigError("nothing to merge")

    expanded: list[CorpusDataset] = []
    offenders: list[tuple[str, str]] = []
    for part in parts:
        try:
            expanded.append(part if part.label_expanded else expand_labels(part, o))
        except UnmappedTagError as exc:
            offenders.extend(exc.offenders)
    if offenders:
        raise UnmappedTagError(offenders)

    paths = {
        inst.labels
        for part in expanded
        for img in part.images
        for inst in img.instances
        if inst.labels
    }
    registry = reachable_nodes(o, paths)
    categories = tuple(
        CategoryDef(i, name, o.phrases.get(name)) for i, name in enumerate(registry)
    )

    images: list[ImageRecord] = []
    for part in expanded:
        for img in part.images:
            images.append(replace(img, image_id=f"{part.corpus_id}/{img.image_id}"))
    seen: set[str] = set()
    for img in images:
        if img.image_id in seen:
            raise ConfigError(f"duplicate image id after merge: {img.image_id!r}")
        seen.add(img.image_id)

    return CorpusDataset(
        corpus_id="+".join(part.corpus_id for part in parts),
        categories=categories,
        images=tuple(images),
        label_expanded=True,
    )


def class_counts(
    ds: CorpusDataset,
    split: str | None = None,
    level: str | int = "leaf",
) -> tuple[tuple[str, int], ...]:
    """Instance counts per category, descending (ties alphabetical).

    `level` is "leaf" or a hierarchy level number; numeric levels need
    a label-expanded dataset.  `split=None` counts all images.
    """
    if split is not None and split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    if level != "leaf":
        if not isinstance(level, int) or level < 1:
            raise ConfigError(f"level must be 'leaf' or a positive integer, got {level!r}")
        if not ds.label_expanded:
            raise ConfigError("hierarchy-level counts need a label-expanded dataset")

    images = ds.images if split is None else ds.images_in_split(split)
    counts: dict[str, int] = {}
    for img in images:
        for inst in img.instances:
            if level == "leaf":
                name = inst.category
            else:
                path = inst.labels or (inst.source_tag,)
                name = path[min(level, len(path)) - 1]
            counts[name] = counts.get(name, 0) + 1
    return tuple(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
