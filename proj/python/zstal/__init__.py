"""Zero-shot temporal action localization with test-time head adaptation."""

from ._core import (
    Bundle,
    Error,
    Proposal,
    RunConfig,
    ambiguity_scan,
    average_precision,
    cluster_triplets,
    gradcheck,
    load_bundle,
    localize,
    map_report,
    nms,
    synth_bundle,
    thresholds_preset,
    tiou,
)

__all__ = [
    "Bundle",
    "Error",
    "Proposal",
    "RunConfig",
    "ambiguity_scan",
    "average_precision",
    "cluster_triplets",
    "gradcheck",
    "load_bundle",
    "localize",
    "map_report",
    "nms",
    "synth_bundle",
    "thresholds_preset",
    "tiou",
]
