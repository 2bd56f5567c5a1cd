"""Payload-side services."""

from .cosmic import Cluster, OtsuResult, RayDetection, crop, detect_clusters, histogram, otsu_threshold
from .ftp import (
    ChunkCrcMismatch,
    FileCrcMismatch,
    FtpServer,
    MissingChunk,
    SessionStore,
    TransferManifest,
    TransferSession,
    ftp_join,
    ftp_split,
)
from .inference_test import InferenceTestRecord, InferenceTestService, inference_test_service
from .slots import SAFE_MODE, SlotManager, SlotStatus, SlotTable, slot_boot, stage_update
from .storage import Exists, NotFound, OutsideRoot, Storage, ftp_fs_ops
from .telemetry import SimulatedSensors, TelemetryService, telemetry_sample
from .workloads import UnknownWorkload, WorkloadRegistry, WorkloadTimeout, base_registry, run_user_workload
