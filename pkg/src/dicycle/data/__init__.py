from .eventlog import COLUMNS, EventLog, ingest, write_log
from .samples import PAD_ITEM, Batch, Sample, SampleSplit, build_samples, collate
from .synthetic import CategoryProfile, GroundTruth, SyntheticSpec, default_categories, generate_synthetic

__all__ = [
    "COLUMNS", "Batch", "CategoryProfile", "EventLog", "GroundTruth", "PAD_ITEM", "Sample", "SampleSplit",
    "SyntheticSpec", "build_samples", "collate", "default_categories", "generate_synthetic", "ingest", "write_log",
]
