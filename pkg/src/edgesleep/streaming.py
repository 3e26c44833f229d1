"""Real-time classification over a 100 Hz sample feed.

Samples accumulate in a 3000-slot window; every completed window is
standardized and classified exactly like a stored epoch, so streaming
decisions are bit-identical to batch inference over the same samples.
Windows never overlap and the buffer resets after each decision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .epochs import EPOCH_SAMPLES, DegenerateEpochError, SleepStage, standardize
from .model import ArchConfig, ModelParams, forward
from .quant import QuantModel


class StreamGapError(ValueError):
    """Sample counter discontinuity: the feed dropped or reordered samples."""


@dataclass(frozen=True)
class StreamFrame:
    counter: int
    value: float


@dataclass(frozen=True)
class StageDecision:
    """One classification per completed 30-second window.

    An unscorable (flat) window carries stage None and no probabilities
    rather than crashing the stream.
    """

    epoch_index: int
    stage: SleepStage | None
    probs: np.ndarray | None
    latency_s: float

    @property
    def unscorable(self) -> bool:
        return self.stage is None


def frames_from_values(values: Iterable[float], start: int = 0) -> Iterator[StreamFrame]:
    for i, v in enumerate(values, start=start):
        yield StreamFrame(counter=i, value=float(v))


def make_predictor(
    model_obj: ModelParams | QuantModel, config: ArchConfig
) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a float or quantized model as a window -> probabilities callable."""
    if isinstance(model_obj, QuantModel):
        dequantized = model_obj.dequantize()  # dequantize once, reuse per window
        return lambda x: forward(dequantized, x, config, mode="infer")[0]
    return lambda x: forward(model_obj, x, config, mode="infer")[0]


def stream_classify(
    source: Iterable[StreamFrame],
    predict: Callable[[np.ndarray], np.ndarray],
    sink: Callable[[StageDecision], None],
    start_counter: int = 0,
) -> tuple[int, int]:
    """Consume frames, emit one StageDecision per completed 3000-sample window.

    Decisions are emitted in window order, synchronously: a stalled sink
    stalls the source, so nothing is ever dropped or reordered.  Returns
    (decisions emitted, samples left in the partial window).
    """
    window = np.empty(EPOCH_SAMPLES, dtype=np.float64)
    filled = 0
    expected = start_counter
    epoch_index = 0
    for frame in source:
        if frame.counter != expected:
            raise StreamGapError(
                f"sample counter jumped from {expected} to {frame.counter}"
            )
        expected += 1
        window[filled] = frame.value
        filled += 1
        if filled < EPOCH_SAMPLES:
            continue
        started = time.perf_counter()
        try:
            probs = predict(standardize(window))
            stage = SleepStage(int(np.argmax(probs)))
        except DegenerateEpochError:
            probs, stage = None, None
        sink(
            StageDecision(
                epoch_index=epoch_index,
                stage=stage,
                probs=probs,
                latency_s=time.perf_counter() - started,
            )
        )
        epoch_index += 1
        filled = 0
    return epoch_index, filled


def decision_line(decision: StageDecision) -> str:
    """Tab-separated wire format: index, stage name, five 6-decimal probs."""
    from .epochs import STAGE_NAMES

    if decision.unscorable:
        fields = [str(decision.epoch_index), "unscorable"] + ["nan"] * 5
    else:
        fields = [str(decision.epoch_index), STAGE_NAMES[int(decision.stage)]]
        fields += [f"{p:.6f}" for p in decision.probs]
    return "\t".join(fields)
