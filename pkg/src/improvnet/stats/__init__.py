"""Statistical comparison of corpora, seeds and generated output."""

from .ad import (
    ADError, ADResult, ad_ksample, asymptotic_pvalue, limit_sf, table_pvalue, tie_weights,
    weighted_chi2_sf,
)
from .cramer import CramerError, CramerResult, cramer_statistic, cramer_test
from .descriptive import (
    ARLagResult, DensityTable, DescriptiveStats, PcaResult, ar_lag_analysis, density_export,
    descriptive, distinctiveness_grid, event_matrix, ks_uniform_distance, note_streams,
    pca_variance,
)

__all__ = [
    "ADError", "ADResult", "ad_ksample", "asymptotic_pvalue", "limit_sf", "table_pvalue",
    "tie_weights", "weighted_chi2_sf",
    "CramerError", "CramerResult", "cramer_statistic", "cramer_test",
    "ARLagResult", "DensityTable", "DescriptiveStats", "PcaResult", "ar_lag_analysis",
    "density_export", "descriptive", "distinctiveness_grid", "event_matrix",
    "ks_uniform_distance", "note_streams", "pca_variance",
]
