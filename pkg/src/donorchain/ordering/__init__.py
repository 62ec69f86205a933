from .batcher import BatchPayload, OrderingConfig, OrderingMode, PendingQueue, cut_batch
from .service import (
    AheadOfChainError,
    EnvelopeTooLargeError,
    NotLeaderError,
    OrdererUnavailableError,
    OrderingClient,
    OrderingService,
    QueueFullError,
    RaftOrderingCluster,
    SoloOrderer,
)

__all__ = [
    "AheadOfChainError",
    "BatchPayload",
    "EnvelopeTooLargeError",
    "NotLeaderError",
    "OrdererUnavailableError",
    "OrderingClient",
    "OrderingConfig",
    "OrderingMode",
    "OrderingService",
    "PendingQueue",
    "QueueFullError",
    "RaftOrderingCluster",
    "SoloOrderer",
    "cut_batch",
]
