"""Complex-query training sequences, response parsing, chunked inference and
segmentation metrics for multi-class segmentation assistants."""

__version__ = "0.1.0"

from .builder import BuilderConfig, TrainingSample, build_dataset, build_query, build_response
from .chunking import ChunkPlan, MergedPrediction, oracle_endpoint, plan_chunks, run_chunked
from .core import (BinaryMask, CategoryTable, ImageRecord, LabelMap, load_manifest, normalize_name,
                   resolve_category, rle_decode, rle_encode)
from .metrics import MetricAccumulator
from .parser import ParseReport, parse_response, roundtrip_check
