import numpy as np
import pytest

from edgesleep.epochs import EPOCH_SAMPLES, LabeledEpoch, SleepStage
from edgesleep.model import ArchConfig, init_params
from edgesleep.training import TrainConfig, fit

# Stage -> dominant sinusoid frequency (Hz); distinct bands make the classes
# linearly separable after convolutional feature extraction.
SYNTH_FREQS = {0: 1.0, 1: 4.0, 2: 8.0, 3: 13.0, 4: 20.0}


def make_synth_epochs(
    n: int,
    seed: int = 0,
    subject_id: int = 0,
    night: int = 1,
    freqs: dict[int, float] = SYNTH_FREQS,
    stage_of=lambda i: i % 5,
) -> list[LabeledEpoch]:
    """Class-dependent sinusoids with random phase/amplitude plus noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(EPOCH_SAMPLES) / 100.0
    out = []
    for i in range(n):
        stage = stage_of(i)
        amp = rng.uniform(15.0, 25.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        x = amp * np.sin(2 * np.pi * freqs[stage] * t + phase)
        x = x + rng.normal(0.0, 0.3 * amp, size=EPOCH_SAMPLES)
        out.append(
            LabeledEpoch(
                samples=x.astype(np.float32),
                stage=SleepStage(stage),
                subject_id=subject_id,
                night=night,
                epoch_index=i,
            )
        )
    return out


OVERFIT_SEED = 3
OVERFIT_DATA_SEED = 7


@pytest.fixture(scope="session")
def overfit_run():
    """One 50-epoch training run on the 200-epoch separable set.

    Validation is the training set itself, so the history's val_acc column
    tracks training accuracy per epoch.  Shared by the capacity, adaptation,
    and quantization tests.
    """
    import time

    data = make_synth_epochs(200, seed=OVERFIT_DATA_SEED)
    config = ArchConfig(width_multiplier=0.25)
    tc = TrainConfig(max_epochs=50, seed=OVERFIT_SEED)
    params = init_params(config, OVERFIT_SEED)
    started = time.perf_counter()
    best, history = fit(params, config, data, data, tc)
    seconds = time.perf_counter() - started
    return {
        "params": best,
        "config": config,
        "data": data,
        "history": history,
        "tc": tc,
        "seconds": seconds,
    }
