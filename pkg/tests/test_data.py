import numpy as np
import pytest
from scipy.io import wavfile

from pcaudio.data import (
    DatasetManifest,
    FeatureConfig,
    ToySpec,
    featurize,
    featurize_for,
    ingest_directory,
    stratified_split,
    synth_clip,
    synth_dataset,
    write_toy_dataset,
)
from pcaudio.errors import ParameterError, UnsupportedInput
from pcaudio.models import ModelSpec, build_model
from pcaudio.pointcloud import ScaleConfig, frame_to_cloud, gate_silence
from pcaudio.signal import make_tone

TWO_BANDS = [[300, 3500], [4500, 7700]]


class TestToySpec:
    def test_overlapping_bands_rejected(self):
        with pytest.raises(ParameterError, match="overlap"):
            ToySpec(bands=[[100, 500], [400, 900]])
        ToySpec(bands=[[100, 500], [400, 900]], exclusive=False)

    def test_minimums(self):
        with pytest.raises(ParameterError):
            ToySpec(bands=[[100, 500]])
        with pytest.raises(ParameterError):
            ToySpec(bands=TWO_BANDS, clips_per_class=1)

    def test_clip_is_seeded_by_label_and_index(self):
        spec = ToySpec(bands=TWO_BANDS, duration=0.1)
        np.testing.assert_array_equal(synth_clip(spec, 1, 3).samples, synth_clip(spec, 1, 3).samples)
        assert not np.array_equal(synth_clip(spec, 1, 3).samples, synth_clip(spec, 1, 4).samples)
        assert synth_clip(spec, 1, 3).label == 1

    def test_background_widens_spectrum(self):
        spec = ToySpec(bands=[[3000, 3500], [5000, 5500]], duration=0.25, background_cutoff=[1000, 2000],
                       background_db=[-30, -30])
        mags = np.abs(np.fft.rfft(synth_clip(spec, 0, 0).samples))
        freqs = np.fft.rfftfreq(4000, 1 / 16000)
        assert mags[(freqs > 100) & (freqs < 900)].mean() > 1e-3 * mags.max()


class TestSplit:
    def test_counts_per_class(self):
        split = stratified_split(np.repeat([0, 1], 100), seed=0)
        assert split.count("train") == 160 and split.count("test") == 40

    def test_round_half_up(self):
        split = stratified_split([0] * 5 + [1] * 5, seed=0, train_fraction=0.5)
        assert split.count("train") == 6

    def test_every_class_in_both_splits(self):
        split = np.array(stratified_split([0, 0, 1, 1, 1], seed=3, train_fraction=0.99))
        for c, idx in ((0, [0, 1]), (1, [2, 3, 4])):
            assert set(split[idx]) == {"train", "test"}

    def test_seeded(self):
        labels = np.repeat([0, 1, 2], 10)
        assert stratified_split(labels, 4) == stratified_split(labels, 4)
        assert stratified_split(labels, 4) != stratified_split(labels, 5)

    def test_synth_dataset_sizes(self):
        train, test = synth_dataset(ToySpec(bands=TWO_BANDS, clips_per_class=10, duration=0.05))
        assert len(train) == 16 and len(test) == 4


class TestFeaturize:
    def test_frame_clouds(self):
        clip = make_tone(1000.0, 8000, 0.5)
        clip.label = 1
        fs = featurize([clip], FeatureConfig(n_fft=256, max_examples_per_clip=3), "cloud")
        assert len(fs) == 3 and len(fs.inputs[0]) == 129
        np.testing.assert_array_equal(fs.labels, [1, 1, 1])

    def test_spectrogram_clouds(self):
        clip = make_tone(1000.0, 8000, 1.0)
        fs = featurize([clip], FeatureConfig(mode="spectrogram", n_fft=256, frames=10), "cloud")
        assert fs.inputs[0].dim == 3 and len(fs.inputs[0]) == 1290
        assert len(fs) == ((8000 - 256) // 128 + 1) // 10

    def test_vector_floor_is_zero(self):
        clip = make_tone(1000.0, 8000, 0.1)
        fs = featurize([clip], FeatureConfig(n_fft=256, max_examples_per_clip=1), "vector")
        assert fs.inputs.shape == (1, 129) and fs.inputs.min() >= 0.0

    def test_too_short(self):
        with pytest.raises(ParameterError, match="shorter than"):
            featurize([make_tone(100.0, 8000, 0.01)], FeatureConfig(n_fft=256), "cloud")

    def test_baseline_padding_and_unsupported(self):
        model = build_model(ModelSpec(kind="FB", n_classes=2, fb_input=129, fb_hidden=(4,)))
        clip = make_tone(1000.0, 8000, 0.25)
        fs = featurize_for(model, [clip], FeatureConfig(n_fft=128), train_n_fft=256)
        assert fs.inputs.shape[1] == 129
        with pytest.raises(UnsupportedInput):
            featurize_for(model, [clip], FeatureConfig(n_fft=512), train_n_fft=256)

    def test_silence_gate(self):
        clip = make_tone(1000.0, 8000, 0.1)
        full = featurize([clip], FeatureConfig(n_fft=256, max_examples_per_clip=1), "cloud").inputs[0]
        gated = featurize([clip], FeatureConfig(n_fft=256, max_examples_per_clip=1, silence_gate_db=-40.0),
                          "cloud").inputs[0]
        assert 0 < len(gated) < len(full)
        assert gated.magnitudes.min() >= full.magnitudes.max() - 40.0 / 80.0
        vec = featurize([clip], FeatureConfig(n_fft=256, max_examples_per_clip=1, silence_gate_db=-40.0),
                        "vector").inputs[0]
        assert np.count_nonzero(vec) == len(gated)
        with pytest.raises(ParameterError):
            FeatureConfig(silence_gate_db=3.0)


class TestGateSilence:
    def test_keeps_points_within_range(self):
        mags = np.array([1.0, 0.1, 0.001, 1e-6, 0.5])
        cloud = frame_to_cloud(mags, 8000, 8)
        kept = gate_silence(cloud, -30.0)
        np.testing.assert_allclose(np.sort(kept.frequencies), [0.0, 1.0, 4.0])

    def test_linear_scale(self):
        cloud = frame_to_cloud(np.array([1.0, 0.1, 0.001]), 8000, 4, ScaleConfig(magnitude="linear"))
        assert len(gate_silence(cloud, -30.0, ScaleConfig(magnitude="linear"))) == 2

    def test_identity_when_nothing_is_quiet(self):
        cloud = frame_to_cloud(np.ones(5), 8000, 8)
        assert gate_silence(cloud, -10.0) is cloud


class TestManifest:
    def test_toy_dataset_round_trip(self, tmp_path):
        spec = ToySpec(bands=TWO_BANDS, clips_per_class=5, duration=0.05)
        written = write_toy_dataset(spec, tmp_path)
        loaded = DatasetManifest.load(tmp_path)
        assert loaded.counts() == written.counts() == {"train": 8, "test": 2}
        clips = loaded.clips("test")
        assert len(clips) == 2 and clips[0].sample_rate == 16000
        orig = {(e["label"], e["path"]) for e in written.entries if e["split"] == "test"}
        assert {c.label for c in clips} == {lab for lab, _ in orig}

    def test_schema_version_checked(self, tmp_path):
        write_toy_dataset(ToySpec(bands=TWO_BANDS, clips_per_class=2, duration=0.05), tmp_path)
        text = (tmp_path / "manifest.json").read_text().replace('"schema_version": 1', '"schema_version": 7')
        (tmp_path / "manifest.json").write_text(text)
        with pytest.raises(ParameterError, match="schema 7"):
            DatasetManifest.load(tmp_path)

    def test_missing_split_rejected(self):
        with pytest.raises(ParameterError):
            DatasetManifest(root=".", entries=[{"path": "a", "label": 0, "split": "train"}], classes=["a"])


class TestIngest:
    def _tree(self, root):
        for name, freq in (("dog", 500.0), ("rain", 2000.0)):
            (root / name).mkdir(parents=True)
            for i in range(5):
                tone = make_tone(freq + 10 * i, 8000, 0.2).samples
                padded = np.concatenate([np.zeros(800), tone, np.zeros(800)])
                wavfile.write(root / name / f"{i}.wav", 8000, padded.astype(np.float32))
        (root / "rain" / "broken.wav").write_bytes(b"not a wav")
        wavfile.write(root / "dog" / "silent.wav", 8000, np.zeros(800, np.float32))

    def test_trims_and_skips(self, tmp_path):
        self._tree(tmp_path / "in")
        m = ingest_directory(tmp_path / "in", tmp_path / "out", split_seed=0)
        assert m.classes == ["dog", "rain"]
        assert len(m.entries) == 10 and len(m.skipped) == 2
        reasons = sorted(s["reason"].split(":")[0] for s in m.skipped)
        assert reasons == ["silent", "unreadable"]
        clip = DatasetManifest.load(tmp_path / "out").clips("train")[0]
        assert abs(clip.duration - 0.2) <= 0.02

    def test_no_classes(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ParameterError):
            ingest_directory(tmp_path / "empty", tmp_path / "out")

    def test_copies_are_float_wavs(self, tmp_path):
        self._tree(tmp_path / "in")
        ingest_directory(tmp_path / "in", tmp_path / "out")
        rate, data = wavfile.read(tmp_path / "out" / "wav" / "dog" / "0.wav")
        assert rate == 8000 and data.dtype == np.float32
