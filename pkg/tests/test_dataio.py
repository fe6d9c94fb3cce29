import numpy as np
import pytest

from avfusion.dataio import (
    apply_whitening,
    load_corpus,
    load_feature_csv,
    read_feature_csv,
    whiten_corpus,
    write_corpus,
    write_feature_csv,
    write_split,
)
from avfusion.errors import InvalidInputError, MissingModalityError, ParseError, SchemaError, ValidationError
from avfusion.synth import ClipSample, Corpus, CorpusSpec, generate_corpus


def _clips(rng, n=2, widths=(3, 2)):
    return [
        ClipSample(f"c{i}", rng.standard_normal((7 + i, widths[0])), rng.standard_normal((3 + i, widths[1])), i % 2 + 1)
        for i in range(n)
    ]


def test_feature_csv_round_trip_is_bit_exact(tmp_path, rng):
    m = rng.standard_normal((5, 3)) * 10.0 ** rng.integers(-300, 300, (5, 3))
    write_feature_csv(tmp_path / "f.csv", m)
    assert np.array_equal(read_feature_csv(tmp_path / "f.csv"), m)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "frame,f0,f1,f2"


def test_two_clip_split_round_trip(tmp_path, rng):
    clips = _clips(rng)
    write_split(tmp_path, clips)
    back = load_feature_csv(tmp_path)
    for a, b in zip(clips, back, strict=True):
        assert (a.clip_id, a.label) == (b.clip_id, b.label)
        assert np.array_equal(a.audio, b.audio) and np.array_equal(a.visual, b.visual)
        assert b.truth_align is None and b.truth_salient is None


def test_generated_corpus_round_trip_with_truth(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path)
    back = load_corpus(tmp_path)
    assert back.spec == small_corpus.spec
    for split in small_corpus.splits:
        for a, b in zip(small_corpus.splits[split], back.splits[split], strict=True):
            assert np.array_equal(a.audio, b.audio) and np.array_equal(a.visual, b.visual)
            assert np.array_equal(a.truth_align, b.truth_align) and a.truth_salient == b.truth_salient
    header = (tmp_path / "train" / "truth.csv").read_text().splitlines()[0]
    assert header == "clip_id,salient_start,salient_end,align"
    assert (tmp_path / "train" / "manifest.csv").read_text().splitlines()[0] == "clip_id,label,audio_path,visual_path"


def test_short_row_reports_file_and_line(tmp_path, rng):
    write_split(tmp_path, _clips(rng))
    vis = tmp_path / "visual" / "c1.csv"
    lines = vis.read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0]
    vis.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_feature_csv(tmp_path)
    assert err.value.line == 4 and err.value.path.endswith("c1.csv")


@pytest.mark.parametrize(
    "text, line",
    [("frame,f0\n1,0.5\n3,0.2\n", 3), ("frame,f1\n1,0.5\n", 1), ("frame,f0\n1,abc\n", 2), ("frame,f0\n", 2)],
)
def test_malformed_feature_files(tmp_path, text, line):
    (tmp_path / "f.csv").write_text(text)
    with pytest.raises(ParseError) as err:
        read_feature_csv(tmp_path / "f.csv")
    assert err.value.line == line


def test_label_outside_range_is_validation_error(tmp_path, rng):
    write_split(tmp_path, _clips(rng))
    with pytest.raises(ValidationError):
        load_feature_csv(tmp_path, n_classes=1)
    man = tmp_path / "manifest.csv"
    man.write_text(man.read_text().replace("c0,1,", "c0,0,"))
    with pytest.raises(ValidationError):
        load_feature_csv(tmp_path)


def test_missing_modality_file(tmp_path, rng):
    write_split(tmp_path, _clips(rng))
    (tmp_path / "audio" / "c0.csv").unlink()
    with pytest.raises(MissingModalityError):
        load_feature_csv(tmp_path)


def test_inconsistent_width_is_schema_error(tmp_path, rng):
    clips = _clips(rng)
    clips[1] = ClipSample("c1", rng.standard_normal((4, 5)), clips[1].visual, 1)
    write_split(tmp_path, clips)
    with pytest.raises(SchemaError):
        load_feature_csv(tmp_path)


def test_duplicate_ids_across_splits_rejected(tmp_path, rng):
    clips = _clips(rng)
    write_split(tmp_path / "train", clips)
    write_split(tmp_path / "val", clips[:1])
    with pytest.raises(ValidationError):
        load_corpus(tmp_path)


def test_missing_manifest_rejected(tmp_path):
    with pytest.raises(MissingModalityError):
        load_corpus(tmp_path)


@pytest.fixture(scope="module")
def wide_corpus():
    spec = CorpusSpec(n_train=40, n_val=10, n_test=10, audio_dim=12, visual_dim=10, seed=9)
    return generate_corpus(spec)


def test_whitened_train_covariance_near_identity(wide_corpus):
    white, transforms = whiten_corpus(wide_corpus, k_audio=8, k_visual=6)
    for modality, k in (("audio", 8), ("visual", 6)):
        frames = np.concatenate([getattr(c, modality) for c in white.train])
        assert frames.shape[1] == k
        cov = np.cov(frames, rowvar=False)
        assert np.linalg.norm(cov - np.eye(k)) <= 0.15
        np.testing.assert_allclose(frames.mean(axis=0), 0.0, atol=1e-12)


def test_whitening_uses_train_statistics_only(wide_corpus):
    _, transforms = whiten_corpus(wide_corpus, k_audio=5, k_visual=4)
    swapped = Corpus(wide_corpus.spec, {"train": wide_corpus.train, "val": wide_corpus.test, "test": wide_corpus.val})
    _, again = whiten_corpus(swapped, k_audio=5, k_visual=4)
    for m in ("audio", "visual"):
        assert np.array_equal(transforms[m].mean, again[m].mean)
        assert np.array_equal(transforms[m].projection, again[m].projection)
    # val and test get the train transform: the train mean maps to zero
    mean_row = transforms["visual"].mean[None, :]
    probe = ClipSample("p", wide_corpus.train[0].audio, mean_row, 1)
    np.testing.assert_allclose(apply_whitening([probe], transforms)[0].visual, 0.0, atol=1e-12)


def test_zero_k_leaves_modality_untouched(wide_corpus):
    white, transforms = whiten_corpus(wide_corpus, k_audio=0, k_visual=3)
    assert "audio" not in transforms
    assert np.array_equal(white.val[0].audio, wide_corpus.val[0].audio)


def test_whitening_k_beyond_rank_rejected(wide_corpus):
    with pytest.raises(InvalidInputError):
        whiten_corpus(wide_corpus, k_audio=50, k_visual=0)
    with pytest.raises(InvalidInputError):
        whiten_corpus(Corpus(None, {"train": []}), 1, 1)
