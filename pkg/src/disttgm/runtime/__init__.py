from .codec import (BadMagicError, DecodeError, LengthMismatchError, TruncatedPayloadError,
                    UnsupportedVersionError, WorkerSummary, codec_roundtrip, decode_summary,
                    encode_summary, read_matrix, write_matrix)
from .pipeline import (DataShard, EstimateReport, PipelineConfig, PipelineError, ProtocolError,
                       WorkerError, local_fit, master_aggregate, partition, run_pipeline,
                       worker_run, worker_seed)
