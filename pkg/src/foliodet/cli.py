"""Command-line entry point: convert, harmonize, split, stats, eval, profile.

Data goes to stdout or files; logs go to stderr.  Exit codes: 0 on
success, 1 on data errors (bad annotations, unmapped tags, bad
detections), 2 on usage and configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .corpus import CorpusDataset, assemble_dataset, parse_coco, parse_page_xml
from .errors import (
    ConfigError,
    EvalInputError,
    FoliodetError,
    ParseError,
    UnmappedTagError,
)
from .evaluation import (
    EvalConfig,
    evaluate,
    evaluate_rollup,
    format_summary_table,
    load_detections,
    summary_to_json,
)
from .export import (
    ExportSpec,
    write_coco_aabb,
    write_manifest,
    write_yolo_aabb,
    write_yolo_obb,
)
from .geometry import GeometryError
from .ontology import Ontology, default_ontology, expand_labels, load_ontology
from .pipeline import (
    FilterRules,
    SplitSpec,
    apply_split_manifest,
    class_counts,
    filter_dataset,
    merge_corpora,
    split_dataset,
)
from .profiler import complexity_profile, emit_profile_csv, emit_profile_svg

logger = logging.getLogger(__name__)

_FORMAT_FLAGS = {"coco-aabb": "coco_aabb", "yolo-aabb": "yolo_aabb", "yolo-obb": "yolo_obb"}


@dataclass(frozen=True)
class CorpusDecl:
    corpus_id: str
    format: str
    input_path: Path
    split_manifest: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    corpora: tuple[CorpusDecl, ...] = ()
    ontology_path: Path | None = None
    filter_rules: FilterRules = FilterRules()
    split_spec: SplitSpec | None = None
    formats: tuple[str, ...] = ("coco_aabb",)
    levels: tuple[str | int, ...] = ("leaf",)
    out_dir: Path | None = None


def _parse_level(text: str) -> str | int:
    if text == "leaf":
        return "leaf"
    try:
        level = int(text)
    except ValueError:
        raise ConfigError(f"level must be 'leaf' or an integer, got {text!r}") from None
    if level < 1:
        raise ConfigError("level must be positive")
    return level


def _parse_format(flag: str) -> str:
    if flag in _FORMAT_FLAGS:
        return _FORMAT_FLAGS[flag]
    if flag in _FORMAT_FLAGS.values():
        return flag
    raise ConfigError(f"unknown export format {flag!r}")


def load_run_config(path: Path) -> RunConfig:
    """Parse a run-config JSON file; relative paths resolve next to it."""
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed run config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    known = {"corpora", "ontology", "filter", "split", "formats", "levels", "out"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown run config keys: {', '.join(unknown)}")

    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    corpora = []
    ids = set()
    for entry in doc.get("corpora", []):
        if not isinstance(entry, dict):
            raise ConfigError("corpus entries must be JSON objects")
        unknown = sorted(set(entry) - {"id", "format", "input", "split_manifest"})
        if unknown:
            raise ConfigError(f"unknown corpus entry keys: {', '.join(unknown)}")
        missing = [k for k in ("id", "format", "input") if k not in entry]
        if missing:
            raise ConfigError(f"corpus entry missing keys: {', '.join(missing)}")
        corpus_id = entry["id"]
        if corpus_id in ids:
            raise ConfigError(f"duplicate corpus id {corpus_id!r}")
        ids.add(corpus_id)
        manifest = entry.get("split_manifest")
        corpora.append(
            CorpusDecl(
                corpus_id=corpus_id,
                format=entry["format"],
                input_path=resolve(entry["input"]),
                split_manifest=resolve(manifest) if manifest else None,
            )
        )

    f = doc.get("filter", {})
    rules = FilterRules(
        drop_line_level=bool(f.get("drop_line_level", False)),
        retain_only_tags_present_in=f.get("retain_only_tags_present_in"),
        explicit_keep_tags=tuple(f["explicit_keep_tags"]) if "explicit_keep_tags" in f else None,
    )

    split_spec = None
    if "split" in doc:
        s = doc["split"]
        split_spec = SplitSpec(
            trainval_fraction=float(s.get("trainval_fraction", 0.9)),
            seed=int(s.get("seed", 0)),
        )

    return RunConfig(
        corpora=tuple(corpora),
        ontology_path=resolve(doc["ontology"]) if "ontology" in doc else None,
        filter_rules=rules,
        split_spec=split_spec,
        formats=tuple(_parse_format(x) for x in doc.get("formats", ["coco-aabb"])),
        levels=tuple(_parse_level(str(x)) for x in doc.get("levels", ["leaf"])),
        out_dir=resolve(doc["out"]) if "out" in doc else None,
    )


def _ingest(decl: CorpusDecl, warnings: list[str]) -> CorpusDataset:
    if decl.format == "page-xml":
        if not decl.input_path.is_dir():
            raise ConfigError(f"{decl.input_path} is not a directory of PAGE XML files")
        files = sorted(decl.input_path.rglob("*.xml"))
        if not files:
            raise ConfigError(f"no input documents under {decl.input_path}")
        images = [parse_page_xml(f.read_bytes(), warnings=warnings) for f in files]
        ds = assemble_dataset(decl.corpus_id, images)
    elif decl.format == "coco":
        if not decl.input_path.is_file():
            raise ConfigError(f"no input documents: {decl.input_path} is not a file")
        ds = parse_coco(decl.input_path.read_bytes(), corpus_id=decl.corpus_id, warnings=warnings)
    else:
        raise ConfigError(f"unknown input format {decl.format!r} (use page-xml or coco)")
    if decl.split_manifest is not None:
        ds = apply_split_manifest(ds, decl.split_manifest.read_text(encoding="utf-8"))
    return ds


def _decl_from_args(args) -> CorpusDecl:
    if not args.input:
        raise ConfigError("no input documents (pass --input)")
    input_path = Path(args.input)
    corpus_id = args.corpus or input_path.stem or "corpus"
    manifest = Path(args.split_manifest) if args.split_manifest else None
    return CorpusDecl(corpus_id, args.from_format, input_path, manifest)


def _load_ontology(args) -> Ontology:
    if getattr(args, "ontology", None):
        return load_ontology(Path(args.ontology).read_bytes())
    return default_ontology()


def _write_tree(root: Path, files: dict[str, bytes]) -> None:
    """Write files atomically as a group: on failure remove what was written."""
    written: list[Path] = []
    try:
        for rel in sorted(files):
            target = root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(files[rel])
            written.append(target)
    except OSError:
        for p in written:
            p.unlink(missing_ok=True)
        raise


def _export_files(ds: CorpusDataset, fmt: str, level: str | int, precision: int) -> dict[str, bytes]:
    spec = ExportSpec(format=fmt, label_level=level, coordinate_precision=precision)
    if fmt == "coco_aabb":
        return {"annotations.json": write_coco_aabb(ds, spec)}
    if fmt == "yolo_obb":
        return write_yolo_obb(ds, spec)
    return write_yolo_aabb(ds, spec)


def _level_dir(level: str | int) -> str:
    return "leaf" if level == "leaf" else f"level{level}"


def _print_convert_summary(ds: CorpusDataset, warnings: list[str]) -> None:
    print(
        f"images {len(ds.images)}  instances {ds.n_instances}  "
        f"categories {len(ds.categories)}  warnings {len(warnings)}"
    )


def cmd_convert(args) -> int:
    warnings: list[str] = []
    ds = _ingest(_decl_from_args(args), warnings)
    for w in warnings:
        logger.warning(w)

    formats = [_parse_format(f) for f in (args.format or ["coco-aabb"])]
    level = _parse_level(args.level)
    out = Path(args.out) if args.out else None
    if out is None:
        raise ConfigError("convert needs --out DIR")

    files: dict[str, bytes] = {"manifest.json": write_manifest(ds, ExportSpec())}
    for fmt in formats:
        for rel, data in _export_files(ds, fmt, level, args.precision).items():
            files[f"{fmt}/{rel}"] = data
    _write_tree(out, files)
    _print_convert_summary(ds, warnings)
    return 0


def cmd_harmonize(args) -> int:
    if not args.config:
        raise ConfigError("harmonize needs --config with at least one corpus")
    cfg = load_run_config(Path(args.config))
    if not cfg.corpora:
        raise ConfigError("run config declares no corpora")

    onto = (
        load_ontology(cfg.ontology_path.read_bytes())
        if cfg.ontology_path
        else _load_ontology(args)
    )

    warnings: list[str] = []
    parts = []
    for decl in cfg.corpora:
        ds = _ingest(decl, warnings)
        ds = _filter_with_rules(ds, cfg.filter_rules)
        if decl.split_manifest is None and cfg.split_spec is not None:
            ds = split_dataset(ds, replace(cfg.split_spec, seed=args.seed if args.seed is not None else cfg.split_spec.seed))
        parts.append(expand_labels(ds, onto))
    for w in warnings:
        logger.warning(w)

    merged = merge_corpora(parts, onto)

    out = Path(args.out) if args.out else cfg.out_dir
    if out is None:
        raise ConfigError("harmonize needs an output directory (--out or config 'out')")
    formats = [_parse_format(f) for f in args.format] if args.format else list(cfg.formats)
    levels = [_parse_level(args.level)] if args.level != "leaf" else list(cfg.levels)

    files: dict[str, bytes] = {"manifest.json": write_manifest(merged, ExportSpec())}
    for fmt in formats:
        for level in levels:
            for rel, data in _export_files(merged, fmt, level, args.precision).items():
                files[f"{fmt}/{_level_dir(level)}/{rel}"] = data
    _write_tree(out, files)
    _print_convert_summary(merged, warnings)
    return 0


def _filter_with_rules(ds: CorpusDataset, rules: FilterRules) -> CorpusDataset:
    if rules == FilterRules():
        return ds
    if rules.retain_only_tags_present_in is not None and all(
        img.split == "unassigned" for img in ds.images
    ):
        raise ConfigError(
            "retain_only_tags_present_in needs split assignments (provide a split manifest)"
        )
    return filter_dataset(ds, rules)


def cmd_split(args) -> int:
    warnings: list[str] = []
    ds = _ingest(_decl_from_args(args), warnings)
    if args.split_manifest is None:
        spec = SplitSpec(trainval_fraction=args.fraction, seed=args.seed or 0)
        ds = split_dataset(ds, spec, force=True)

    assignments = {img.image_id: img.split for img in ds.images}
    doc = (json.dumps(assignments, indent=2, sort_keys=True) + "\n").encode("utf-8")
    test_ids = "".join(
        img.image_id + "\n" for img in ds.images if img.split == "test"
    ).encode("utf-8")
    n_trainval = sum(1 for s in assignments.values() if s == "trainval")
    n_test = sum(1 for s in assignments.values() if s == "test")

    if args.out:
        _write_tree(Path(args.out), {"splits.json": doc, "test_manifest.txt": test_ids})
        print(f"trainval {n_trainval}  test {n_test}")
    else:
        sys.stdout.write(doc.decode("utf-8"))
    return 0


def _stats_doc(ds: CorpusDataset, level: str | int) -> dict:
    splits: dict[str, dict] = {}
    for split in ("trainval", "test", "unassigned"):
        images = ds.images_in_split(split)
        if not images:
            continue
        counts = class_counts(ds, split=split, level=level)
        splits[split] = {
            "n_images": len(images),
            "n_instances": sum(len(img.instances) for img in images),
            "per_category": {name: n for name, n in counts},
        }
    return {"corpus_id": ds.corpus_id, "level": str(level), "splits": splits}


def cmd_stats(args) -> int:
    warnings: list[str] = []
    ds = _ingest(_decl_from_args(args), warnings)
    level = _parse_level(args.level)
    if level != "leaf" and not ds.label_expanded:
        ds = expand_labels(ds, _load_ontology(args))
    doc = _stats_doc(ds, level)

    print(f"corpus: {ds.corpus_id}")
    print(f"{'split':<12}{'images':>8}{'instances':>11}")
    for split, entry in doc["splits"].items():
        print(f"{split:<12}{entry['n_images']:>8}{entry['n_instances']:>11}")
    want = args.split if args.split != "all" else None
    for split, entry in doc["splits"].items():
        if want is not None and split != want:
            continue
        print(f"\ncategory counts (split={split}, level={level}):")
        for name, n in entry["per_category"].items():
            print(f"  {name:<28}{n:>6}")
        print(f"  {'total':<28}{entry['n_instances']:>6}")

    if args.out:
        _write_tree(
            Path(args.out),
            {"stats.json": (json.dumps(doc, indent=2) + "\n").encode("utf-8")},
        )
    return 0


def cmd_eval(args) -> int:
    warnings: list[str] = []
    ds = _ingest(_decl_from_args(args), warnings)
    if not args.detections:
        raise ConfigError("eval needs --detections FILE")
    dets = load_detections(Path(args.detections).read_bytes(), ds)

    cfg = EvalConfig(split=args.split, geometry=args.geometry)
    level = _parse_level(args.level)
    if level == "leaf":
        summary = evaluate(ds, dets, cfg)
    else:
        onto = _load_ontology(args)
        if not ds.label_expanded:
            name_of = {c.id: c.name for c in ds.categories}
            ds = expand_labels(ds, onto)
            id_of = {c.name: c.id for c in ds.categories}
            dets = tuple(
                replace(d, category_id=id_of[name_of[d.category_id]]) for d in dets
            )
        summary = evaluate_rollup(ds, dets, onto, level, cfg)

    print(format_summary_table(summary), end="")
    if args.out:
        _write_tree(Path(args.out), {"eval.json": summary_to_json(summary)})
    return 0


def cmd_profile(args) -> int:
    warnings: list[str] = []
    profiles = []
    if args.config:
        cfg = load_run_config(Path(args.config))
        if not cfg.corpora:
            raise ConfigError("run config declares no corpora")
        for decl in cfg.corpora:
            ds = _ingest(decl, warnings)
            profiles.append(complexity_profile(ds, None if args.split == "all" else args.split))
        out = Path(args.out) if args.out else cfg.out_dir
    else:
        ds = _ingest(_decl_from_args(args), warnings)
        profiles.append(complexity_profile(ds, None if args.split == "all" else args.split))
        out = Path(args.out) if args.out else None
    if out is None:
        raise ConfigError("profile needs an output directory")

    files: dict[str, bytes] = {"profile.svg": emit_profile_svg(profiles)}
    for p in profiles:
        name = "profile.csv" if len(profiles) == 1 else f"profile_{p.corpus_id}.csv"
        files[name] = emit_profile_csv(p)
    _write_tree(out, files)
    print(f"profiles {len(profiles)}  categories {sum(len(p.rows) for p in profiles)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foliodet",
        description="Harmonize manuscript layout annotations and evaluate detections.",
    )
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="run-config JSON file")
    shared.add_argument("--seed", type=int, default=None, help="seed for the split shuffle")
    shared.add_argument("--out", help="output directory")
    shared.add_argument(
        "--format",
        action="append",
        choices=sorted(_FORMAT_FLAGS),
        help="export format (repeatable)",
    )
    shared.add_argument(
        "--geometry", choices=["aabb", "obb"], default="aabb", help="box geometry for eval"
    )
    shared.add_argument(
        "--level", default="leaf", help="hierarchy level: leaf or a positive integer"
    )
    shared.add_argument("--split-manifest", help="file of test image ids, one per line")

    ingest = argparse.ArgumentParser(add_help=False)
    ingest.add_argument(
        "--from",
        dest="from_format",
        choices=["page-xml", "coco"],
        default="page-xml",
        help="input annotation format",
    )
    ingest.add_argument("--input", help="input directory (page-xml) or file (coco)")
    ingest.add_argument("--corpus", help="corpus id (default: input name)")
    ingest.add_argument("--ontology", help="ontology config JSON (default: shipped)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[shared, ingest], help="convert annotations to training formats")
    p.add_argument("--precision", type=int, default=6, help="coordinate decimal places")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("harmonize", parents=[shared, ingest], help="filter, merge, and export corpora")
    p.add_argument("--precision", type=int, default=6, help="coordinate decimal places")
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("split", parents=[shared, ingest], help="assign trainval/test splits")
    p.add_argument("--fraction", type=float, default=0.9, help="trainval fraction")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", parents=[shared, ingest], help="dataset summaries and class counts")
    p.add_argument(
        "--split",
        choices=["trainval", "test", "unassigned", "all"],
        default="test",
        help="split whose category counts to print",
    )
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", parents=[shared, ingest], help="score detections against ground truth")
    p.add_argument("--detections", help="detections JSON file")
    p.add_argument(
        "--split",
        choices=["trainval", "test", "unassigned"],
        default="test",
        help="split to evaluate on",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", parents=[shared, ingest], help="aspect-ratio complexity profile")
    p.add_argument(
        "--split",
        choices=["trainval", "test", "unassigned", "all"],
        default="all",
        help="split to profile",
    )
    p.set_defaults(func=cmd_profile)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s: %(message)s"
    )
    try:
        return args.func(args)
    except (ParseError, EvalInputError, UnmappedTagError, GeometryError) as exc:
        logger.error(str(exc))
        return 1
    except FoliodetError as exc:
        logger.error(str(exc))
        return 2
    except OSError as exc:
        logger.error(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
