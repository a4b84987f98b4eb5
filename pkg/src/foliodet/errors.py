"""Shared exception types."""


class FoliodetError(Exception):
    """Base for all errors raised by this package."""


class ParseError(FoliodetError):
    """Malformed input document (PAGE XML, COCO JSON, detections, config)."""


class OntologyError(FoliodetError):
    """Invalid ontology config or lookup failure."""


class UnmappedTagError(OntologyError):
    """Source tags without an ontology mapping."""

    def __init__(self, offenders: list[tuple[str, str]]):
        self.offenders = sorted(set(offenders))
        listing = ", ".join(f"({corpus}, {tag!r})" for corpus, tag in self.offenders)
        super().__init__(f"unmapped source tags: {listing}")


class EvalInputError(FoliodetError):
    """Detections incompatible with the dataset or evaluation config."""


class ConfigError(FoliodetError):
    """Invalid run configuration or CLI arguments."""
