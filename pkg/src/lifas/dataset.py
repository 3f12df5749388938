"""Corpus ingestion, speaker-disjoint splitting and on-the-fly spectrogram batches."""

from __future__ import annotations

import csv
import io
import logging
import os
from collections import OrderedDict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .audio_io import WavError, read_wav, resample
from .augment import AugmentPolicy, augment
from .dsp import SpectrogramConfig, melspectrogram, render_image
from .errors import LifasError
from .fileio import atomic_write_text

log = logging.getLogger(__name__)

SPLITS = ("train", "val")
MANIFEST_HEADER = ["path", "language", "speaker_id", "split"]
SKIP_BUDGET = 0.01


class SplitError(LifasError):
    def __init__(self, language: str, message: str):
        super().__init__(f"{language}: {message}")
        self.language = language


class DatasetError(LifasError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    language: str
    speaker_id: str
    split: Optional[str] = None

    def __post_init__(self):
        if not self.path:
            raise ValueError("manifest entry needs a non-empty path")
        if self.split not in (None, *SPLITS):
            raise ValueError(f"split must be one of {SPLITS} or unset, got {self.split!r}")


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    labels: list[str]

    def __post_init__(self):
        known = set(self.labels)
        if len(known) != len(self.labels):
            raise ValueError("labels must be distinct")
        for e in self.entries:
            if e.language not in known:
                raise ValueError(f"entry {e.path} has language {e.language!r} outside {self.labels}")

    def label_index(self, language: str) -> int:
        return self.labels.index(language)

    def select(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def speakers(self, split: str) -> set[str]:
        return {e.speaker_id for e in self.select(split)}

    def is_speaker_disjoint(self) -> bool:
        return not (self.speakers("train") & self.speakers("val"))

    def counts(self, split: Optional[str] = None) -> dict[str, int]:
        out = OrderedDict((lang, 0) for lang in self.labels)
        for e in self.entries:
            if split is None or e.split == split:
                out[e.language] += 1
        return dict(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in self.entries:
            w.writerow([e.path, e.language, e.speaker_id, e.split or ""])
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str, labels: Optional[list[str]] = None) -> "Manifest":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != MANIFEST_HEADER:
            raise DatasetError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
        entries = [ManifestEntry(r[0], r[1], r[2], r[3] or None) for r in rows[1:] if r]
        if labels is None:
            labels = sorted({e.language for e in entries})
        return cls(entries, list(labels))

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DatasetError(f"cannot read manifest {path}: {exc.strerror}") from exc
        return cls.from_csv(text)


def voxforge_speaker(session_dir: str) -> str:
    """VoxForge sessions look like ``<user>-<yyyymmdd>-<tag>``; the speaker is ``<user>``."""
    return session_dir.split("-", 1)[0]


def ingest(root_dir, label_rule: Callable[[str], str] = voxforge_speaker) -> Manifest:
    """Scan ``root/<language>/<session>/**.wav`` into an unsplit manifest.

    ``label_rule`` maps a session directory name to a speaker id. Paths are
    stored relative to ``root_dir``.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError(f"cannot read corpus directory {root}")
    entries = []
    labels = []
    for lang_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        wavs = []
        for session in sorted(p for p in lang_dir.iterdir() if p.is_dir()):
            speaker = label_rule(session.name)
            for wav in sorted(session.rglob("*")):
                if wav.is_file() and wav.suffix.lower() == ".wav":
                    wavs.append(ManifestEntry(str(wav.relative_to(root)), lang_dir.name, speaker))
        if not wavs:
            log.warning("language directory %s holds no WAV files", lang_dir)
            continue
        labels.append(lang_dir.name)
        entries.extend(wavs)
    return Manifest(entries, labels)


def split(manifest: Manifest, train_per_lang: int, val_per_lang: int, seed: int) -> Manifest:
    """Speaker-grouped train/val assignment with exact per-language counts.

    Speakers are shuffled by ``seed``; whole speakers go to validation until
    ``val_per_lang`` is reached (the last one truncated to fit), and the
    remaining speakers fill the training set, truncated to ``train_per_lang``.
    """
    rng = np.random.default_rng(seed)
    out = []
    assigned: dict[str, str] = {}  # speaker -> split, shared across languages
    for lang in manifest.labels:
        by_speaker: dict[str, list[ManifestEntry]] = OrderedDict()
        for e in manifest.entries:
            if e.language == lang:
                by_speaker.setdefault(e.speaker_id, []).append(e)
        total = sum(len(v) for v in by_speaker.values())
        if total < train_per_lang + val_per_lang:
            raise SplitError(lang, f"{total} clips available, {train_per_lang + val_per_lang} requested")
        if train_per_lang > 0 and val_per_lang > 0 and len(by_speaker) < 2:
            raise SplitError(lang, "only one speaker; train and val cannot be speaker-disjoint")

        speakers = sorted(by_speaker)
        order = [speakers[i] for i in rng.permutation(len(speakers))]
        val, train = [], []
        rest = []
        for spk in order:
            if len(val) < val_per_lang and assigned.get(spk, "val") == "val":
                val.extend(replace(e, split="val") for e in by_speaker[spk][: val_per_lang - len(val)])
                assigned[spk] = "val"
            else:
                rest.append(spk)
        for spk in rest:
            if len(train) >= train_per_lang:
                break
            if assigned.get(spk, "train") != "train":
                continue
            train.extend(replace(e, split="train") for e in by_speaker[spk][: train_per_lang - len(train)])
            assigned[spk] = "train"
        if len(val) < val_per_lang:
            raise SplitError(lang, f"only {len(val)} validation clips from speakers free for validation")
        if len(train) < train_per_lang:
            raise SplitError(
                lang,
                f"speaker-disjoint split leaves only {len(train)} training clips "
                f"({train_per_lang} requested); not enough speaker diversity",
            )
        out.extend(train)
        out.extend(val)
    return Manifest(out, list(manifest.labels))


@dataclass
class Batch:
    images: np.ndarray  # (batch, 1, height, width) float32 in [0, 1]
    labels: np.ndarray  # (batch,) label indices

    def __len__(self) -> int:
        return len(self.labels)


def clip_image(path, config: SpectrogramConfig, clip_len_samples: int,
               policy: Optional[AugmentPolicy] = None, seed: int = 0) -> np.ndarray:
    """Decode one file and turn its first ``clip_len_samples`` samples into an image."""
    clip = read_wav(path)
    if clip.sample_rate_hz != config.sample_rate_hz:
        clip = resample(clip, config.sample_rate_hz)
    if len(clip) < clip_len_samples:
        raise DatasetError(f"{path}: {len(clip)} samples, need {clip_len_samples}")
    spec = melspectrogram(clip.samples[:clip_len_samples], config)
    if policy is not None and not policy.is_identity:
        spec = augment(spec, policy, seed)
    return render_image(spec).astype(np.float32)


def worker_count() -> int:
    env = os.environ.get("LIFAS_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(env))) if env else n


def batches(manifest: Manifest, split_name: str, config: SpectrogramConfig,
            augment_policy: Optional[AugmentPolicy] = None, batch_size: int = 64,
            epoch_seed: int = 0, *, root=".", clip_len_samples: int = 60000,
            single_threaded: bool = False, prefetch: int = 4, stats: Optional[dict] = None
            ) -> Iterator[Batch]:
    """Yield spectrogram image batches for one pass over ``split_name``.

    Training entries are shuffled by ``epoch_seed`` and augmented when a policy
    is given; validation order is fixed and never augmented. Unreadable or short
    files are skipped with a warning; more than 1% skipped aborts the epoch.
    Worker threads only compute images: the emitted order is the same as in
    ``single_threaded`` mode. ``stats``, if given, receives the skip count.
    """
    if split_name not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    entries = manifest.select(split_name)
    if split_name == "train":
        entries = [entries[i] for i in np.random.default_rng(epoch_seed).permutation(len(entries))]
        policy = augment_policy
    else:
        policy = None
    root = Path(root)
    budget = SKIP_BUDGET * len(entries)
    skipped = 0
    if stats is not None:
        stats["skipped"] = 0

    def job(idx: int):
        e = entries[idx]
        seed = int(np.random.SeedSequence([epoch_seed, idx]).generate_state(1)[0])
        try:
            return clip_image(root / e.path, config, clip_len_samples, policy, seed)
        except (OSError, WavError, DatasetError, ValueError) as exc:
            return exc

    chunks = [range(i, min(i + batch_size, len(entries))) for i in range(0, len(entries), batch_size)]

    def assemble(chunk, results):
        nonlocal skipped
        imgs, labels = [], []
        for idx, res in zip(chunk, results):
            if isinstance(res, Exception):
                skipped += 1
                if stats is not None:
                    stats["skipped"] = skipped
                log.warning("skipping %s: %s", entries[idx].path, res)
                if skipped > budget:
                    raise DatasetError(
                        f"{skipped} of {len(entries)} {split_name} files failed; over the 1% budget"
                    )
                continue
            imgs.append(res)
            labels.append(manifest.label_index(entries[idx].language))
        if not imgs:
            return None
        return Batch(np.stack(imgs)[:, None], np.asarray(labels, dtype=np.int64))

    if single_threaded or worker_count() == 1:
        for chunk in chunks:
            b = assemble(chunk, [job(i) for i in chunk])
            if b is not None:
                yield b
        return

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        pending: deque = deque()
        it = iter(chunks)
        for chunk in it:
            pending.append((chunk, [pool.submit(job, i) for i in chunk]))
            if len(pending) >= prefetch:
                break
        while pending:
            chunk, futures = pending.popleft()
            nxt = next(it, None)
            if nxt is not None:
                pending.append((nxt, [pool.submit(job, i) for i in nxt]))
            b = assemble(chunk, [f.result() for f in futures])
            if b is not None:
                yield b
