"""Post-campaign analysis: ingestion, quality, uncertainty, binning, packaging."""
from .curve import Curve, CurveBin, bin_curve, write_curve_csv
from .fair import MANDATORY_KEYS, PackageError, build_metadata, package_fair, verify_package
from .ingest import IngestError, IngestStats, ParseIssue, iter_campaign, load_campaign
from .quality import QualityReport, filter_valid, mark_sequence, quality_report
from .uncertainty import UncertaintyBudget, monte_carlo_cp_rel, propagate_uncertainty

__all__ = [
    "Curve", "CurveBin", "bin_curve", "write_curve_csv",
    "MANDATORY_KEYS", "PackageError", "build_metadata", "package_fair", "verify_package",
    "IngestError", "IngestStats", "ParseIssue", "iter_campaign", "load_campaign",
    "QualityReport", "filter_valid", "mark_sequence", "quality_report",
    "UncertaintyBudget", "monte_carlo_cp_rel", "propagate_uncertainty",
]
