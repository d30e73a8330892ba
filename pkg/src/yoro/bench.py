"""
Latency breakdown of one forward pass.

Stages timed separately: input construction (embeddings and sequence
assembly), the transformer encoder, and the prediction heads. Images and
token ids are prepared before the timed loop, so no file I/O is measured.

NumPy hands matrix products to its BLAS library, which may use every core.
The thread limit is fixed when NumPy loads, so for single-thread numbers
start the process with ``OMP_NUM_THREADS=1`` (or the OpenBLAS / MKL
equivalent). The report records the limit it ran under.
"""

import os
import time
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np

from yoro._errors import ContractError
from yoro._log import get_logger
from yoro._tensor import no_grad
from yoro.model import YoroModel

logger = get_logger("bench")

STAGES = ("input", "encoder", "heads")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class BenchReport:
    iterations: int
    warmup: int
    batch: int
    stage_ms: Dict[str, float]
    stage_percent: Dict[str, float]
    fps: float
    total_s: float
    blas_threads: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "warmup": self.warmup,
            "batch": self.batch,
            "stages": {name: {"mean_ms": self.stage_ms[name],
                              "percent": self.stage_percent[name]} for name in STAGES},
            "fps": self.fps,
            "total_s": self.total_s,
            "blas_threads": self.blas_threads,
        }


def blas_thread_limit() -> Optional[str]:
    """The first thread limit set in the environment, or None when unpinned."""
    for var in THREAD_VARS:
        value = os.environ.get(var)
        if value:
            return f"{var}={value}"
    return None


def _forward_timed(model: YoroModel, token_ids: Sequence[int], pixels: np.ndarray):
    t0 = time.perf_counter()
    x0, segments, _ = model.embed(token_ids, pixels)
    t1 = time.perf_counter()
    encoded = model.encoder(x0, segments)
    t2 = time.perf_counter()
    model.heads.predict(encoded)
    t3 = time.perf_counter()
    return t1 - t0, t2 - t1, t3 - t2


def benchmark(model: YoroModel, token_ids: Sequence[int], pixels: np.ndarray,
              iterations: int = 100, warmup: int = 10, batch: int = 1) -> BenchReport:
    """
    Time *iterations* rounds of *batch* single-image forward passes.

    Parameters
    ----------
    model : YoroModel
    token_ids : sequence of int
        Pre-tokenised phrase.
    pixels : numpy.ndarray
        Pre-loaded ``H x W x 3`` image in ``[0, 1]``.
    iterations, warmup, batch : int
        Timed rounds, untimed warm-up rounds, images per round.
    """
    if iterations < 1 or warmup < 0 or batch < 1:
        raise ContractError("need iterations >= 1, warmup >= 0 and batch >= 1",
                            iterations=iterations, warmup=warmup, batch=batch)
    threads = blas_thread_limit()
    if threads is None:
        logger.info("BLAS threads not pinned; set OMP_NUM_THREADS=1 for single-thread timings")
    totals = np.zeros(len(STAGES))
    with no_grad():
        for _ in range(warmup):
            for _ in range(batch):
                _forward_timed(model, token_ids, pixels)
        start = time.perf_counter()
        for _ in range(iterations):
            for _ in range(batch):
                totals += _forward_timed(model, token_ids, pixels)
        elapsed = time.perf_counter() - start

    passes = iterations * batch
    stage_sum = float(totals.sum())
    percent = (totals / stage_sum * 100.0) if stage_sum > 0 else np.full(len(STAGES),
                                                                          100.0 / len(STAGES))
    report = BenchReport(
        iterations=iterations, warmup=warmup, batch=batch,
        stage_ms={name: float(t / passes * 1e3) for name, t in zip(STAGES, totals)},
        stage_percent={name: round(float(p), 2) for name, p in zip(STAGES, percent)},
        fps=passes / elapsed if elapsed > 0 else float("inf"),
        total_s=elapsed,
        blas_threads=threads,
    )
    logger.debug("bench: %s", report.to_dict())
    return report
