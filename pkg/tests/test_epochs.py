import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesleep.edf import RawAnnotation
from edgesleep.epochs import (
    DISCARD,
    EPOCH_SAMPLES,
    DegenerateEpochError,
    LabeledEpoch,
    PipelineError,
    SleepStage,
    StoreError,
    class_distribution,
    map_label,
    parse_hypnogram_text,
    read_store,
    segment_epochs,
    standardize,
    trim_wake,
    write_store,
)

from conftest import make_synth_epochs
from oracles import RAW_LABELS, random_annotation_sequence, reference_pipeline


def ann(onset, duration, text):
    return RawAnnotation(onset=float(onset), duration=float(duration), text=text)


def noise(seconds, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=seconds * 100).astype(np.float32)


class TestMapLabel:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("Sleep stage W", SleepStage.WAKE),
            ("Sleep stage 1", SleepStage.N1),
            ("Sleep stage 2", SleepStage.N2),
            ("Sleep stage 3", SleepStage.N3),
            ("Sleep stage 4", SleepStage.N3),
            ("Sleep stage R", SleepStage.REM),
        ],
    )
    def test_stage_labels(self, text, expected):
        assert map_label(text) is expected

    @pytest.mark.parametrize("text", ["Movement time", "Sleep stage ?"])
    def test_discards(self, text):
        assert map_label(text) is DISCARD

    def test_unrecognized_is_hard_error(self):
        with pytest.raises(PipelineError, match="Sleep stage X"):
            map_label("Sleep stage X")


class TestSegment:
    def test_uniform_tiling(self):
        night = segment_epochs(noise(90), [ann(0, 90, "Sleep stage 2")])
        assert [e.stage for e in night.epochs] == [SleepStage.N2] * 3
        assert [e.epoch_index for e in night.epochs] == [0, 1, 2]

    def test_discard_window_dropped(self):
        night = segment_epochs(
            noise(60), [ann(0, 30, "Sleep stage W"), ann(30, 30, "Movement time")]
        )
        assert [(e.epoch_index, e.stage) for e in night.epochs] == [(0, SleepStage.WAKE)]

    def test_duration_not_multiple(self):
        with pytest.raises(PipelineError, match="not a multiple"):
            segment_epochs(noise(90), [ann(0, 45, "Sleep stage 2")])

    def test_onset_off_grid(self):
        with pytest.raises(PipelineError, match="grid"):
            segment_epochs(noise(90), [ann(15, 30, "Sleep stage 2")])

    def test_extends_past_signal(self):
        with pytest.raises(PipelineError, match="past signal end"):
            segment_epochs(noise(60), [ann(0, 90, "Sleep stage 2")])

    def test_overlap_rejected(self):
        with pytest.raises(PipelineError, match="more than one"):
            segment_epochs(
                noise(60), [ann(0, 60, "Sleep stage 2"), ann(30, 30, "Sleep stage W")]
            )

    def test_samples_sliced_per_window(self):
        samples = noise(60, seed=5)
        night = segment_epochs(samples, [ann(0, 60, "Sleep stage R")])
        assert np.array_equal(night.epochs[1].samples, samples[EPOCH_SAMPLES:])


def wake_night(pattern):
    """pattern: list of (count, stage) runs -> SubjectNight via segmentation."""
    annotations = []
    onset = 0
    for count, label in pattern:
        annotations.append(ann(onset, 30 * count, label))
        onset += 30 * count
    return segment_epochs(noise(onset), annotations)


class TestTrimWake:
    def test_long_tails_trimmed(self):
        night = wake_night(
            [(200, "Sleep stage W"), (100, "Sleep stage 2"), (200, "Sleep stage W")]
        )
        trimmed = trim_wake(night)
        assert len(trimmed.epochs) == 60 + 100 + 60
        stages = [e.stage for e in trimmed.epochs]
        assert stages[:60] == [SleepStage.WAKE] * 60
        assert stages[60:160] == [SleepStage.N2] * 100

    def test_within_budget_unchanged(self):
        night = wake_night(
            [(10, "Sleep stage W"), (50, "Sleep stage 2"), (10, "Sleep stage W")]
        )
        assert trim_wake(night).epochs == night.epochs

    def test_pure_wake_keeps_first_hour_half(self):
        night = wake_night([(100, "Sleep stage W")])
        trimmed = trim_wake(night)
        assert len(trimmed.epochs) == 60
        assert trimmed.epochs == night.epochs[:60]

    def test_empty_night_rejected(self):
        night = wake_night([(1, "Sleep stage W")])
        with pytest.raises(PipelineError):
            trim_wake(type(night)(subject_id=0, night=0, epochs=()))

    @given(seed=st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_never_removes_sleep_or_interior_wake(self, seed):
        rng = np.random.default_rng(seed)
        pattern = [
            (int(rng.integers(1, 90)), RAW_LABELS[rng.integers(0, 6)])
            for _ in range(rng.integers(1, 6))
        ]
        night = wake_night(pattern)
        trimmed = trim_wake(night)
        kept = {e.epoch_index for e in trimmed.epochs}
        non_wake = [i for i, e in enumerate(night.epochs) if e.stage != SleepStage.WAKE]
        if non_wake:
            for pos in range(non_wake[0], non_wake[-1] + 1):
                assert night.epochs[pos].epoch_index in kept


class TestStandardize:
    def test_toy_vector(self):
        out = standardize(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out, [-1.224745, 0.0, 1.224745], atol=1e-6)

    def test_already_standard_preserved(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=EPOCH_SAMPLES)
        x = (x - x.mean()) / x.std()
        out = standardize(x)
        np.testing.assert_allclose(out, x, atol=1e-9)

    def test_flat_epoch_rejected(self):
        with pytest.raises(DegenerateEpochError):
            standardize(np.full(EPOCH_SAMPLES, 5.0))

    @given(seed=st.integers(0, 2**31), scale=st.floats(1e-4, 1e4))
    @settings(max_examples=50, deadline=None)
    def test_zero_mean_unit_std(self, seed, scale):
        rng = np.random.default_rng(seed)
        x = rng.normal(loc=rng.uniform(-10, 10), scale=scale, size=500)
        out = standardize(x)
        assert abs(out.mean()) <= 1e-6
        assert abs(out.std() - 1.0) <= 1e-5


class TestDistribution:
    def test_all_wake(self):
        epochs = make_synth_epochs(10, stage_of=lambda i: 0)
        dist = class_distribution(epochs)
        assert dist.counts[0] == 10 and dist.fractions[0] == 1.0

    def test_mixed_fractions(self):
        epochs = make_synth_epochs(4, stage_of=lambda i: 1 if i < 3 else 4)
        dist = class_distribution(epochs)
        assert dist.counts[SleepStage.N1] == 3
        assert dist.fractions[SleepStage.N1] == 0.75
        assert dist.fractions[SleepStage.REM] == 0.25

    def test_fractions_sum_to_one(self):
        dist = class_distribution(make_synth_epochs(137))
        assert sum(dist.counts) == dist.total == 137
        assert abs(sum(dist.fractions) - 1.0) <= 1e-9

    def test_empty_rejected(self):
        with pytest.raises(PipelineError):
            class_distribution([])


class TestStore:
    def test_round_trip(self, tmp_path):
        epochs = make_synth_epochs(5, seed=11, subject_id=3, night=2)
        path = tmp_path / "five.slpe"
        write_store(epochs, path)
        loaded = read_store(path)
        assert len(loaded) == 5
        for a, b in zip(epochs, loaded):
            assert np.array_equal(a.samples, b.samples)
            assert (a.stage, a.subject_id, a.night, a.epoch_index) == (
                b.stage,
                b.subject_id,
                b.night,
                b.epoch_index,
            )

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.slpe"
        write_store(make_synth_epochs(1), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(StoreError, match="magic"):
            read_store(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v9.slpe"
        write_store(make_synth_epochs(1), path)
        raw = bytearray(path.read_bytes())
        raw[4:6] = (9).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(StoreError, match="version"):
            read_store(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "cut.slpe"
        write_store(make_synth_epochs(2), path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(StoreError, match="truncated"):
            read_store(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "extra.slpe"
        write_store(make_synth_epochs(1), path)
        path.write_bytes(path.read_bytes() + b"!")
        with pytest.raises(StoreError, match="trailing"):
            read_store(path)


class TestHypnogramSidecar:
    def test_parse_lines(self):
        text = "0,1800,Sleep stage W\n1800,600,Sleep stage 1\n\n# comment\n"
        anns = parse_hypnogram_text(text)
        assert [(a.onset, a.duration, a.text) for a in anns] == [
            (0.0, 1800.0, "Sleep stage W"),
            (1800.0, 600.0, "Sleep stage 1"),
        ]

    def test_bad_line(self):
        with pytest.raises(PipelineError, match="line 1"):
            parse_hypnogram_text("0;30;Sleep stage W")

    def test_bad_number(self):
        with pytest.raises(PipelineError, match="onset/duration"):
            parse_hypnogram_text("zero,30,Sleep stage W")

    def test_non_finite_or_negative_rejected(self):
        with pytest.raises(PipelineError, match="onset/duration"):
            parse_hypnogram_text("inf,30,Sleep stage W")
        with pytest.raises(PipelineError, match="onset/duration"):
            parse_hypnogram_text("0,-30,Sleep stage W")


class TestPipelineAgainstReference:
    @given(seed=st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_matches_bruteforce_filter(self, seed):
        rng = np.random.default_rng(seed)
        triples, total_seconds = random_annotation_sequence(rng)
        samples = np.random.default_rng(seed ^ 0xFF).normal(size=total_seconds * 100)
        annotations = [ann(o, d, t) for o, d, t in triples]
        night = segment_epochs(samples, annotations)
        if night.epochs:  # trim requires a nonempty night
            night = trim_wake(night)
        got = [(e.epoch_index, int(e.stage)) for e in night.epochs]
        assert got == reference_pipeline(triples)
