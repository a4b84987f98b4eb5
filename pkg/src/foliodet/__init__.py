"""Manuscript layout annotation harmonization and detection evaluation."""

from .corpus import (
    CategoryDef,
    CategoryPolicy,
    CorpusDataset,
    ImageRecord,
    InstanceRecord,
    ValidationReport,
    assemble_dataset,
    parse_coco,
    parse_page_xml,
    validate_dataset,
)
from .errors import (
    ConfigError,
    EvalInputError,
    FoliodetError,
    OntologyError,
    ParseError,
    UnmappedTagError,
)
from .evaluation import (
    Detection,
    EvalConfig,
    EvalSummary,
    PrCurve,
    average_precision,
    evaluate,
    evaluate_rollup,
    load_detections,
    match_detections,
)
from .export import (
    ExportSpec,
    write_coco_aabb,
    write_manifest,
    write_yolo_aabb,
    write_yolo_obb,
)
from .geometry import (
    Aabb,
    DegeneratePolygonError,
    GeometryError,
    Obb,
    Polygon,
    aabb_of,
    aspect_ratio,
    clip_convex,
    convex_hull,
    iou_aabb,
    iou_obb,
    min_area_obb,
    obb_corners,
    polygon_area,
)
from .ontology import (
    Ontology,
    default_ontology,
    descriptive_phrase,
    expand_labels,
    load_ontology,
    map_tag,
)
from .pipeline import (
    FilterRules,
    SplitSpec,
    apply_split_manifest,
    class_counts,
    filter_dataset,
    merge_corpora,
    split_dataset,
)
from .profiler import (
    ComplexityProfile,
    complexity_profile,
    emit_profile_csv,
    emit_profile_svg,
    percentile,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
