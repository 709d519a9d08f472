"""Dataset model, synthetic corpus generation, and trial construction.

A corpus is a set of utterances, each a T x F feature matrix tagged with a
speaker id, a phrase id, and optionally per-frame phone labels. Corpora are
either generated synthetically (Gaussian speaker and phone factors plus
noise) or ingested from a manifest pointing at UFM1 feature files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import load_features, resolve, save_features

__all__ = [
    "UtteranceRecord",
    "Dataset",
    "SyntheticSpec",
    "TrialList",
    "generate_synthetic_corpus",
    "normalize_features",
    "build_trials",
    "oracle_posteriors",
    "load_features",
    "save_features",
    "save_dataset",
    "load_dataset",
    "write_trials",
    "read_trials",
]


@dataclass
class UtteranceRecord:
    """One utterance: identity plus features, inline or on disk."""

    utterance_id: str
    speaker_id: str
    phrase_id: str
    features: np.ndarray | None = None
    feature_path: str | None = None
    phone_labels: np.ndarray | None = None

    def load(self, root: Path | str = ".") -> np.ndarray:
        """Return the feature matrix, reading from feature_path if not inline."""
        if self.features is not None:
            return self.features
        if self.feature_path is None:
            raise ValueError(f"utterance {self.utterance_id} has no features or feature_path")
        return load_features(resolve(root, self.feature_path))


@dataclass
class Dataset:
    """A list of utterances plus the ordered speaker and phone inventories."""

    utterances: list[UtteranceRecord]
    speakers: list[str]
    phone_set: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for utt in self.utterances:
            if utt.utterance_id in seen:
                raise ValueError(f"duplicate utterance_id {utt.utterance_id!r}")
            seen.add(utt.utterance_id)
            if utt.speaker_id not in self._speaker_index():
                raise ValueError(f"speaker {utt.speaker_id!r} missing from speaker list")
            if utt.phone_labels is not None and utt.features is not None:
                if len(utt.phone_labels) != utt.features.shape[0]:
                    raise ValueError(f"utterance {utt.utterance_id}: phone_labels length "
                                     f"{len(utt.phone_labels)} != frame count {utt.features.shape[0]}")
        if self.speakers != sorted(self.speakers):
            raise ValueError("speaker list must be lexicographically sorted")

    def _speaker_index(self) -> dict[str, int]:
        if not hasattr(self, "_spk_idx"):
            self._spk_idx = {s: i for i, s in enumerate(self.speakers)}
        return self._spk_idx

    def speaker_index(self, speaker_id: str) -> int:
        return self._speaker_index()[speaker_id]

    def subset(self, keep) -> "Dataset":
        """New Dataset restricted to utterances where keep(utt) is true."""
        utts = [u for u in self.utterances if keep(u)]
        speakers = sorted({u.speaker_id for u in utts})
        return Dataset(utts, speakers, list(self.phone_set))


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Gaussian speaker/phone factor corpus generator.

    Each frame is drawn as
        speaker_separation * speaker_mean
      + phone_separation   * phone_mean[label]
      + Normal(0, noise_std^2)
    per dimension, with speaker and phone means drawn once from N(0, 1).
    """

    n_speakers: int
    utts_per_speaker: int
    phrases: tuple[tuple[int, ...], ...]
    frames_per_phone: int = 5
    feature_dim: int = 40
    speaker_separation: float = 1.0
    phone_separation: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_speakers", "utts_per_speaker", "frames_per_phone", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if len(self.phrases) < 1:
            raise ValueError("phrases must be non-empty")
        for i, phrase in enumerate(self.phrases):
            if len(phrase) < 1:
                raise ValueError(f"phrases[{i}] is empty")
            if any(p < 0 for p in phrase):
                raise ValueError(f"phrases[{i}] has a negative phone index")
        for name in ("speaker_separation", "phone_separation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be > 0, got {self.noise_std}")

    @property
    def n_phones(self) -> int:
        return max(max(p) for p in self.phrases) + 1


def random_phrases(n_phrases: int, phones_per_phrase: int, n_phones: int,
                   seed: int) -> tuple[tuple[int, ...], ...]:
    """Draw phrase definitions (phone-index sequences) for a SyntheticSpec."""
    if n_phones < 1 or n_phrases < 1 or phones_per_phrase < 1:
        raise ValueError("n_phrases, phones_per_phrase and n_phones must be >= 1")
    rng = np.random.default_rng(seed)
    return tuple(tuple(int(p) for p in rng.integers(0, n_phones, size=phones_per_phrase))
                 for _ in range(n_phrases))


def generate_synthetic_corpus(spec: SyntheticSpec) -> Dataset:
    """Generate a deterministic synthetic corpus from a SyntheticSpec.

    Speaker names, utterance ids and the random stream depend only on the
    spec (including its seed), so identical specs give identical corpora.
    """
    rng = np.random.default_rng(spec.seed)
    n_phones = spec.n_phones
    spk_width = max(4, len(str(spec.n_speakers - 1)))
    phr_width = max(2, len(str(len(spec.phrases) - 1)))

    speaker_means = rng.standard_normal((spec.n_speakers, spec.feature_dim))
    phone_means = rng.standard_normal((n_phones, spec.feature_dim))

    utterances = []
    speakers = [f"spk{s:0{spk_width}d}" for s in range(spec.n_speakers)]
    for s, speaker in enumerate(speakers):
        for u in range(spec.utts_per_speaker):
            phrase_idx = u % len(spec.phrases)
            labels = np.repeat(np.asarray(spec.phrases[phrase_idx], dtype=np.int64),
                               spec.frames_per_phone)
            frames = (spec.speaker_separation * speaker_means[s]
                      + spec.phone_separation * phone_means[labels]
                      + rng.standard_normal((labels.size, spec.feature_dim)) * spec.noise_std)
            utterances.append(UtteranceRecord(
                utterance_id=f"{speaker}_u{u:04d}",
                speaker_id=speaker,
                phrase_id=f"phr{phrase_idx:0{phr_width}d}",
                features=frames,
                phone_labels=labels,
            ))
    phone_set = [f"ph{p:02d}" for p in range(n_phones)]
    return Dataset(utterances, speakers, phone_set)


def normalize_features(matrix: np.ndarray) -> np.ndarray:
    """Per-utterance, per-dimension mean/variance normalization.

    Dimensions whose variance falls below 1e-8 are only mean-shifted, so
    constant columns come out as zeros instead of dividing by ~0.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError(f"expected a T x F matrix with T >= 1, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("feature matrix contains non-finite values")
    centered = m - m.mean(axis=0)
    var = centered.var(axis=0)
    scale = np.where(var < 1e-8, 1.0, np.sqrt(var))
    return centered / scale


@dataclass
class TrialList:
    """Verification trials: unordered utterance pairs with target labels.

    Stored as index arrays into `utterance_ids` to keep multi-million-trial
    lists cheap; `is_target[k]` is true when both utterances of trial k share
    a speaker.
    """

    utterance_ids: list[str]
    enroll_idx: np.ndarray
    test_idx: np.ndarray
    is_target: np.ndarray

    def __post_init__(self):
        if np.any(self.enroll_idx == self.test_idx):
            raise ValueError("trial pairs an utterance with itself")
        lo = np.minimum(self.enroll_idx, self.test_idx).astype(np.int64)
        hi = np.maximum(self.enroll_idx, self.test_idx).astype(np.int64)
        keys = lo * len(self.utterance_ids) + hi
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate unordered trial pair")

    def __len__(self) -> int:
        return int(self.enroll_idx.size)

    @property
    def n_target(self) -> int:
        return int(np.count_nonzero(self.is_target))

    @property
    def n_nontarget(self) -> int:
        return len(self) - self.n_target

    def enroll_ids(self):
        ids = np.asarray(self.utterance_ids, dtype=object)
        return ids[self.enroll_idx]

    def test_ids(self):
        ids = np.asarray(self.utterance_ids, dtype=object)
        return ids[self.test_idx]


def build_trials(eval_dataset: Dataset) -> TrialList:
    """Cross-evaluate every unordered utterance pair of the dataset."""
    n = len(eval_dataset.utterances)
    if n < 2:
        raise ValueError(f"need at least 2 utterances to build trials, got {n}")
    ids = [u.utterance_id for u in eval_dataset.utterances]
    spk = np.array([eval_dataset.speaker_index(u.speaker_id) for u in eval_dataset.utterances])
    iu, ju = np.triu_indices(n, k=1)
    iu = iu.astype(np.int32)
    ju = ju.astype(np.int32)
    return TrialList(ids, iu, ju, spk[iu] == spk[ju])


def oracle_posteriors(utt: UtteranceRecord, n_phones: int,
                      smoothing: float = 0.0) -> np.ndarray:
    """Smoothed one-hot phone posteriors from the utterance's labels.

    Row t is (1 - smoothing) * onehot(label_t) + smoothing / n_phones, so
    every row sums to one.
    """
    if utt.phone_labels is None:
        raise ValueError(f"utterance {utt.utterance_id} has no phone labels")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    labels = np.asarray(utt.phone_labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_phones):
        raise ValueError(f"utterance {utt.utterance_id}: phone label out of range [0, {n_phones})")
    post = np.full((labels.size, n_phones), smoothing / n_phones, dtype=np.float64)
    post[np.arange(labels.size), labels] += 1.0 - smoothing
    return post


# ---------------------------------------------------------------------------
# Manifest and trial-list files


def save_dataset(dataset: Dataset, out_dir: Path | str) -> Path:
    """Write features (UFM1), phone labels, and a manifest under out_dir.

    Layout: manifest.tsv, phones.txt, features/<utt>.ufm, labels/<utt>.txt.
    Returns the manifest path. Paths in the manifest are relative to it.
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    have_labels = any(u.phone_labels is not None for u in dataset.utterances)
    if have_labels:
        (out / "labels").mkdir(exist_ok=True)
    lines = []
    for utt in dataset.utterances:
        feature_path = f"features/{utt.utterance_id}.ufm"
        save_features(out / feature_path, utt.load(out))
        fields = [utt.utterance_id, utt.speaker_id, utt.phrase_id, feature_path]
        if utt.phone_labels is not None:
            label_path = f"labels/{utt.utterance_id}.txt"
            (out / label_path).write_text(" ".join(str(int(p)) for p in utt.phone_labels) + "\n")
            fields.append(label_path)
        lines.append("\t".join(fields))
    if dataset.phone_set:
        (out / "phones.txt").write_text("\n".join(dataset.phone_set) + "\n")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_dataset(manifest_path: Path | str, eager: bool = True) -> Dataset:
    """Read a manifest back into a Dataset.

    With eager=True feature matrices are loaded inline; otherwise records
    keep their feature_path and are loaded on demand.
    """
    manifest = Path(manifest_path)
    root = manifest.parent
    utterances = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (4, 5):
            raise ValueError(f"{manifest}:{lineno}: expected 4 or 5 tab-separated fields")
        utt_id, speaker_id, phrase_id, feature_path = fields[:4]
        labels = None
        if len(fields) == 5:
            text = resolve(root, fields[4]).read_text().split()
            labels = np.array([int(x) for x in text], dtype=np.int64)
        utterances.append(UtteranceRecord(
            utterance_id=utt_id,
            speaker_id=speaker_id,
            phrase_id=phrase_id,
            features=load_features(resolve(root, feature_path)) if eager else None,
            feature_path=feature_path,
            phone_labels=labels,
        ))
    speakers = sorted({u.speaker_id for u in utterances})
    phones_file = root / "phones.txt"
    phone_set = phones_file.read_text().splitlines() if phones_file.exists() else []
    if not phone_set:
        labelled = [u.phone_labels.max() for u in utterances
                    if u.phone_labels is not None and u.phone_labels.size]
        if labelled:
            phone_set = [f"ph{p:02d}" for p in range(int(max(labelled)) + 1)]
    return Dataset(utterances, speakers, phone_set)


def write_trials(path, trials: TrialList) -> None:
    """Write lines 'enroll_id<TAB>test_id<TAB>{target|nontarget}'."""
    ids = trials.utterance_ids
    with open(path, "w", encoding="utf-8") as f:
        for e, t, tgt in zip(trials.enroll_idx, trials.test_idx, trials.is_target):
            f.write(f"{ids[e]}\t{ids[t]}\t{'target' if tgt else 'nontarget'}\n")


def read_trials(path) -> TrialList:
    ids: list[str] = []
    index: dict[str, int] = {}
    enroll, test, target = [], [], []

    def intern(utt_id: str) -> int:
        if utt_id not in index:
            index[utt_id] = len(ids)
            ids.append(utt_id)
        return index[utt_id]

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3 or fields[2] not in ("target", "nontarget"):
                raise ValueError(f"{path}:{lineno}: expected 'enroll<TAB>test<TAB>target|nontarget'")
            enroll.append(intern(fields[0]))
            test.append(intern(fields[1]))
            target.append(fields[2] == "target")
    return TrialList(ids, np.array(enroll, dtype=np.int32),
                     np.array(test, dtype=np.int32), np.array(target, dtype=bool))
