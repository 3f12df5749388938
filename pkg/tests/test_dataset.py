import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifas.augment import AugmentPolicy
from lifas.dataset import (
    DatasetError,
    Manifest,
    ManifestEntry,
    SplitError,
    batches,
    ingest,
    split,
)
from lifas.dsp import SpectrogramConfig

from conftest import write_wav

SMALL = SpectrogramConfig(n_fft=256, hop_samples=128, n_mels=16, image_width_px=24, image_height_px=16)
CLIP = 2048


def fixture_corpus(root, languages=("de", "en"), speakers=10, clips=10, n=CLIP, seed=0):
    rng = np.random.default_rng(seed)
    for lang in languages:
        for s in range(speakers):
            for c in range(clips):
                write_wav(root / lang / f"{lang}spk{s}-20090101-x" / f"{c:02d}.wav", rng.uniform(-0.5, 0.5, n))
    return ingest(root)


def entries_for(lang, speakers, clips):
    return [ManifestEntry(f"{lang}/{s}/{c}.wav", lang, f"{lang}{s}") for s in range(speakers) for c in range(clips)]


# --- ingest ------------------------------------------------------------------

def test_ingest_voxforge_naming(tmp_path):
    write_wav(tmp_path / "english" / "anon123-20090101-abc" / "a.wav", np.zeros(100))
    write_wav(tmp_path / "english" / "anon123-20090101-abc" / "wav" / "b.wav", np.zeros(100))
    write_wav(tmp_path / "german" / "hans-20100505-q" / "c.WAV", np.zeros(100))
    (tmp_path / "english" / "anon123-20090101-abc" / "readme.txt").write_text("x")
    m = ingest(tmp_path)
    assert m.labels == ["english", "german"]
    assert [(e.path, e.language, e.speaker_id, e.split) for e in m.entries] == [
        ("english/anon123-20090101-abc/a.wav", "english", "anon123", None),
        ("english/anon123-20090101-abc/wav/b.wav", "english", "anon123", None),
        ("german/hans-20100505-q/c.WAV", "german", "hans", None),
    ]


def test_ingest_empty_root_and_empty_language(tmp_path, caplog):
    assert ingest(tmp_path).entries == []
    (tmp_path / "french" / "x-1-2").mkdir(parents=True)
    with caplog.at_level(logging.WARNING):
        m = ingest(tmp_path)
    assert m.entries == [] and m.labels == []
    assert "french" in caplog.text


def test_ingest_missing_root(tmp_path):
    with pytest.raises(DatasetError):
        ingest(tmp_path / "nope")


def test_ingest_custom_label_rule(tmp_path):
    write_wav(tmp_path / "en" / "a_b" / "1.wav", np.zeros(10))
    assert ingest(tmp_path, lambda s: s.split("_")[1]).entries[0].speaker_id == "b"


# --- manifest ------------------------------------------------------------------

def test_manifest_csv_round_trip(tmp_path):
    m = Manifest([ManifestEntry("a,b.wav", "en", "s1", "train"), ManifestEntry("c.wav", "de", "s2")], ["en", "de"])
    text = m.to_csv()
    assert text.splitlines()[0] == "path,language,speaker_id,split"
    back = Manifest.from_csv(text, labels=["en", "de"])
    assert back == m
    m.save(tmp_path / "m.csv")
    assert Manifest.load(tmp_path / "m.csv").entries == m.entries
    assert m.label_index("de") == 1


def test_manifest_invariants():
    with pytest.raises(ValueError):
        Manifest([ManifestEntry("a.wav", "xx", "s")], ["en"])
    with pytest.raises(ValueError):
        Manifest([], ["en", "en"])
    with pytest.raises(ValueError):
        ManifestEntry("", "en", "s")
    with pytest.raises(DatasetError):
        Manifest.from_csv("file,lang\n")


# --- split -------------------------------------------------------------------

def test_split_fixture_counts_and_disjointness():
    m = Manifest(entries_for("de", 10, 10) + entries_for("en", 10, 10), ["de", "en"])
    out = split(m, 60, 20, seed=3)
    assert out.counts("train") == {"de": 60, "en": 60}
    assert out.counts("val") == {"de": 20, "en": 20}
    train_spk = {e.speaker_id for e in out.entries if e.split == "train"}
    val_spk = {e.speaker_id for e in out.entries if e.split == "val"}
    assert not train_spk & val_spk
    assert out.is_speaker_disjoint()
    assert split(m, 60, 20, seed=3) == out
    assert len({e.path for e in out.entries}) == len(out.entries)


def test_split_single_speaker():
    m = Manifest(entries_for("en", 1, 50), ["en"])
    with pytest.raises(SplitError) as info:
        split(m, 10, 10, 0)
    assert info.value.language == "en"


def test_split_insufficient_clips_names_language():
    m = Manifest(entries_for("de", 5, 10) + entries_for("en", 3, 10), ["de", "en"])
    with pytest.raises(SplitError, match="en"):
        split(m, 20, 20, 0)


def test_split_insufficient_diversity():
    # one giant speaker plus a tiny one: disjoint 20/20 impossible
    entries = entries_for("en", 1, 38) + [ManifestEntry(f"en/x/{i}.wav", "en", "other") for i in range(2)]
    m = Manifest(entries, ["en"])
    with pytest.raises(SplitError):
        split(m, 20, 20, 0)


def test_split_speaker_shared_across_languages_stays_disjoint():
    entries = []
    for lang in ("de", "en"):
        entries += [ManifestEntry(f"{lang}/{s}/{c}.wav", lang, f"s{s}") for s in range(6) for c in range(5)]
    out = split(Manifest(entries, ["de", "en"]), 15, 10, 1)
    assert out.is_speaker_disjoint()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 8), st.integers(0, 10_000), st.data())
def test_split_property(speakers, clips, seed, data):
    total = speakers * clips
    val = data.draw(st.integers(1, total - 1))
    train = data.draw(st.integers(0, total - val))
    m = Manifest(entries_for("en", speakers, clips), ["en"])
    try:
        out = split(m, train, val, seed)
    except SplitError:
        return
    assert out.counts("train") == {"en": train}
    assert out.counts("val") == {"en": val}
    assert out.is_speaker_disjoint()


# --- batches -------------------------------------------------------------------

def test_batch_sizes_and_labels(tmp_path):
    m = fixture_corpus(tmp_path, speakers=13, clips=10)
    m = split(m, 65, 0, 0)
    assert len(m.select("train")) == 130
    got = list(batches(m, "train", SMALL, None, 64, 0, root=tmp_path, clip_len_samples=CLIP, single_threaded=True))
    assert [len(b) for b in got] == [64, 64, 2]
    for b in got:
        assert b.images.shape[1:] == (1, 16, 24)
        assert b.images.dtype == np.float32
        assert b.images.min() >= 0 and b.images.max() <= 1
        assert b.labels.min() >= 0 and b.labels.max() < 2


def all_images(m, root, split_name="train", **kw):
    kw.setdefault("single_threaded", True)
    return [b for b in batches(m, split_name, SMALL, kw.pop("policy", None), 16, kw.pop("seed", 0), root=root,
                               clip_len_samples=CLIP, **kw)]


def test_epochs_deterministic_and_cover_each_entry(tmp_path):
    m = split(fixture_corpus(tmp_path, speakers=4, clips=5), 10, 10, 0)
    a = all_images(m, tmp_path, seed=5)
    b = all_images(m, tmp_path, seed=5)
    assert all(np.array_equal(x.images, y.images) and np.array_equal(x.labels, y.labels) for x, y in zip(a, b))
    imgs = np.concatenate([x.images for x in a])
    assert len(imgs) == 20
    # every clip is distinct noise, so distinct images prove each entry appears once
    assert len({im.tobytes() for im in imgs}) == 20
    c = all_images(m, tmp_path, seed=6)
    assert not all(np.array_equal(x.labels, y.labels) and np.array_equal(x.images, y.images) for x, y in zip(a, c))


def test_val_order_fixed_and_unaugmented(tmp_path):
    m = split(fixture_corpus(tmp_path, speakers=4, clips=5), 10, 10, 0)
    policy = AugmentPolicy(4, 4, 2, 2)
    a = all_images(m, tmp_path, "val", seed=1, policy=policy)
    b = all_images(m, tmp_path, "val", seed=2)
    assert all(np.array_equal(x.images, y.images) for x, y in zip(a, b))


def test_augmented_train_batches_are_seeded(tmp_path):
    m = split(fixture_corpus(tmp_path, speakers=4, clips=5), 10, 10, 0)
    policy = AugmentPolicy(4, 4, 2, 2)
    a = all_images(m, tmp_path, seed=1, policy=policy)
    b = all_images(m, tmp_path, seed=1, policy=policy)
    plain = all_images(m, tmp_path, seed=1)
    assert all(np.array_equal(x.images, y.images) for x, y in zip(a, b))
    assert not all(np.array_equal(x.images, y.images) for x, y in zip(a, plain))


def test_threaded_equals_single_threaded(tmp_path, monkeypatch):
    monkeypatch.setenv("LIFAS_THREADS", "4")
    m = split(fixture_corpus(tmp_path, speakers=6, clips=10), 40, 20, 0)
    policy = AugmentPolicy(3, 3, 1, 1)
    single = all_images(m, tmp_path, seed=9, policy=policy)
    threaded = all_images(m, tmp_path, seed=9, policy=policy, single_threaded=False, prefetch=2)
    assert len(single) == len(threaded)
    for x, y in zip(single, threaded):
        assert np.array_equal(x.images, y.images) and np.array_equal(x.labels, y.labels)


def test_resampled_input(tmp_path):
    write_wav(tmp_path / "en" / "a-1-x" / "0.wav", np.random.default_rng(0).uniform(-0.5, 0.5, 3 * CLIP), 48000)
    write_wav(tmp_path / "de" / "b-1-x" / "0.wav", np.random.default_rng(1).uniform(-0.5, 0.5, CLIP), 16000)
    m = Manifest([ManifestEntry(e.path, e.language, e.speaker_id, "val") for e in ingest(tmp_path).entries],
                 ["de", "en"])
    (b,) = all_images(m, tmp_path, "val")
    assert len(b) == 2


def test_skip_budget(tmp_path, caplog):
    m = split(fixture_corpus(tmp_path, speakers=20, clips=10), 100, 0, 0)
    # one short file in 200 train entries is within 1%
    bad = m.select("train")[0]
    write_wav(tmp_path / bad.path, np.zeros(100))
    stats = {}
    with caplog.at_level(logging.WARNING):
        n = sum(len(b) for b in batches(m, "train", SMALL, None, 64, 0, root=tmp_path, clip_len_samples=CLIP,
                                        single_threaded=True, stats=stats))
    assert n == 199 and stats["skipped"] == 1
    assert bad.path in caplog.text
    # three failures out of 200 exceed it
    for e in m.select("train")[1:3]:
        (tmp_path / e.path).write_bytes(b"garbage")
    with pytest.raises(DatasetError):
        for _ in batches(m, "train", SMALL, None, 64, 0, root=tmp_path, clip_len_samples=CLIP, single_threaded=True):
            pass


def test_unknown_split_name(tmp_path):
    with pytest.raises(ValueError):
        next(batches(Manifest([], []), "test", SMALL))
