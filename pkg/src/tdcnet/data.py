"""Dataset ingestion, synthetic generation with planted temporal patterns,
and stratified splitting.

On-disk layout of a dataset directory:

    meta.json       -- {"num_classes", "clips", "concept_types": [[name, L]...],
                        "label_mode"}
    manifest.jsonl  -- one record per video: {"id", "label", "files": {type: relpath}}
    <id>.<type>.mat -- score matrix, binary (see below) or JSON slow path

The binary matrix format is a 16-byte header -- magic b"CSQ1", uint32 L,
uint32 N, uint32 zero, all little-endian -- followed by L*N float64
little-endian values in row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, ParseError

MATRIX_MAGIC = b"CSQ1"

PATTERN_KINDS = ("short-burst", "long-duration", "position-variant")


@dataclass
class ConceptSequence:
    """One detector's score matrix for one video: L channels x N clips."""

    type_name: str
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise DataError(f"scores for {self.type_name} must be 2-d, got {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise DataError(f"non-finite scores in sequence {self.type_name}")


@dataclass
class VideoSample:
    """A labeled bundle of concept sequences, one per concept type."""

    id: str
    sequences: list
    label: object  # int class index, or 0/1 ndarray in multi-label mode

    def __post_init__(self):
        names = [s.type_name for s in self.sequences]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate concept types in sample {self.id}: {names}")
        clips = {s.scores.shape[1] for s in self.sequences}
        if len(clips) > 1:
            raise DataError(f"inconsistent clip counts in sample {self.id}: {sorted(clips)}")

    @property
    def clips(self):
        return self.sequences[0].scores.shape[1]

    def sequence(self, type_name):
        for s in self.sequences:
            if s.type_name == type_name:
                return s
        raise DataError(f"sample {self.id} has no concept type {type_name!r}")


@dataclass
class Dataset:
    """An immutable list of samples plus the shared shape metadata."""

    samples: list
    num_classes: int
    concept_types: list  # [(name, L)]
    clips: int
    label_mode: str = "single-label"

    def __len__(self):
        return len(self.samples)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_matrix(path, scores):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    l, n = scores.shape
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<III", l, n, 0))
        f.write(scores.astype("<f8").tobytes())


def read_matrix(path):
    path = Path(path)
    if path.suffix == ".json":
        try:
            with open(path) as f:
                return np.asarray(json.load(f), dtype=np.float64)
        except (json.JSONDecodeError, ValueError) as e:
            raise ParseError(f"{path}: bad JSON matrix: {e}") from None
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != MATRIX_MAGIC:
            raise ParseError(f"{path}: bad matrix header at offset 0")
        l, n, _ = struct.unpack("<III", header[4:])
        payload = f.read()
    expected = l * n * 8
    if len(payload) != expected:
        raise ParseError(f"{path}: expected {expected} payload bytes at offset 16, "
                         f"got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(l, n).copy()


def save_dataset(dataset: Dataset, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_classes": dataset.num_classes,
        "clips": dataset.clips,
        "concept_types": [[name, int(l)] for name, l in dataset.concept_types],
        "label_mode": dataset.label_mode,
    }
    with open(out_dir / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out_dir / "manifest.jsonl", "w") as f:
        for s in dataset.samples:
            files = {}
            for seq in s.sequences:
                rel = f"{s.id}.{seq.type_name}.mat"
                write_matrix(out_dir / rel, seq.scores)
                files[seq.type_name] = rel
            label = s.label if isinstance(s.label, int) else [int(v) for v in np.asarray(s.label)]
            f.write(json.dumps({"id": s.id, "label": label, "files": files},
                               sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = path / "meta.json"
    manifest_path = path / "manifest.jsonl"
    for p in (meta_path, manifest_path):
        if not p.exists():
            raise ParseError(f"missing dataset file: {p}")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{meta_path}: {e}") from None
    type_order = [name for name, _ in meta["concept_types"]]
    type_channels = {name: l for name, l in meta["concept_types"]}
    samples = []
    with open(manifest_path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{manifest_path}:{lineno}: {e}") from None
            seqs = []
            for name in type_order:
                rel = rec["files"].get(name)
                if rel is None:
                    raise DataError(f"{manifest_path}:{lineno}: sample {rec['id']} "
                                    f"missing concept type {name!r}")
                mat_path = path / rel
                if not mat_path.exists():
                    raise ParseError(f"{manifest_path}:{lineno}: referenced file "
                                     f"not found: {mat_path}")
                scores = read_matrix(mat_path)
                if scores.shape != (type_channels[name], meta["clips"]):
                    raise DataError(f"{mat_path}: shape {scores.shape} does not match "
                                    f"meta ({type_channels[name]}, {meta['clips']})")
                seqs.append(ConceptSequence(name, scores))
            label = rec["label"]
            if meta["label_mode"] == "multi-label":
                label = np.asarray(label, dtype=np.float64)
                if label.shape != (meta["num_classes"],):
                    raise DataError(f"sample {rec['id']}: multi-hot label length "
                                    f"{label.shape} vs {meta['num_classes']} classes")
            else:
                label = int(label)
                if not 0 <= label < meta["num_classes"]:
                    raise DataError(f"sample {rec['id']}: label {label} out of range "
                                    f"for {meta['num_classes']} classes")
            samples.append(VideoSample(rec["id"], seqs, label))
    return Dataset(samples, meta["num_classes"], [tuple(t) for t in meta["concept_types"]],
                   meta["clips"], meta["label_mode"])


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Recipe for a planted-pattern benchmark.

    Each class carries at least one (type, channel, kind) triple; the planted
    channel of every listed type shows that class's temporal pattern at unit
    amplitude while all other entries are i.i.d. gaussian noise at level
    `noise`. Kinds: "short-burst" lights a single center clip, "long-duration"
    a centered run of about N/2 clips, "position-variant" a 3-clip motif at a
    random position.
    """

    num_classes: int
    clips: int
    concept_types: list                 # [(name, L)]
    noise: float = 0.1
    seed: int = 0
    class_patterns: list = field(default_factory=list)  # per class: [(type, channel, kind)]

    def __post_init__(self):
        if self.noise < 0:
            raise ConfigurationError(f"noise level must be >= 0, got {self.noise}")
        if self.num_classes < 1 or self.clips < 1:
            raise ConfigurationError("num_classes and clips must be positive")
        self.concept_types = [(str(n), int(l)) for n, l in self.concept_types]
        for name, l in self.concept_types:
            if l < 1:
                raise ConfigurationError(f"concept type {name!r} has non-positive "
                                         f"channel count {l}")
        if not self.class_patterns:
            self.class_patterns = self._default_patterns()
        if len(self.class_patterns) != self.num_classes:
            raise ConfigurationError(f"{len(self.class_patterns)} pattern lists "
                                     f"for {self.num_classes} classes")
        channels = dict(self.concept_types)
        for c, triples in enumerate(self.class_patterns):
            if not triples:
                raise ConfigurationError(f"class {c} has no discriminative pattern")
            for type_name, channel, kind in triples:
                if type_name not in channels:
                    raise ConfigurationError(f"class {c}: unknown concept type {type_name!r}")
                if not 0 <= channel < channels[type_name]:
                    raise ConfigurationError(
                        f"class {c}: planted channel {channel} exceeds "
                        f"{channels[type_name]} channels of {type_name!r}")
                if kind not in PATTERN_KINDS:
                    raise ConfigurationError(f"class {c}: unknown pattern kind {kind!r}")

    def _default_patterns(self):
        # All classes share planted channels and differ only in temporal
        # pattern, so clip-wise max pooling cannot separate them.
        out = []
        for c in range(self.num_classes):
            kind = PATTERN_KINDS[c % len(PATTERN_KINDS)]
            channel = c // len(PATTERN_KINDS)
            out.append([(name, channel, kind) for name, _ in self.concept_types])
        return out

    def sustained_length(self):
        return max(5, self.clips // 2 + 1)


def _plant(scores, channel, kind, spec, rng):
    n = spec.clips
    if kind == "short-burst":
        scores[channel, n // 2] = 1.0
    elif kind == "long-duration":
        length = min(n, spec.sustained_length())
        start = (n - length) // 2
        scores[channel, start:start + length] = 1.0
    else:  # position-variant
        width = min(3, n)
        start = int(rng.integers(0, n - width + 1))
        scores[channel, start:start + width] = 1.0


def generate_synthetic(spec: SyntheticSpec, count, label_mode="single-label") -> Dataset:
    """Deterministic planted-pattern dataset; labels cycle through classes."""
    rng = np.random.default_rng(spec.seed)
    samples = []
    for i in range(count):
        label = i % spec.num_classes
        seqs = []
        for name, l in spec.concept_types:
            scores = rng.normal(0.0, spec.noise, size=(l, spec.clips)) if spec.noise > 0 \
                else np.zeros((l, spec.clips))
            for type_name, channel, kind in spec.class_patterns[label]:
                if type_name == name:
                    _plant(scores, channel, kind, spec, rng)
            seqs.append(ConceptSequence(name, scores))
        if label_mode == "multi-label":
            vec = np.zeros(spec.num_classes)
            vec[label] = 1.0
            samples.append(VideoSample(f"syn{i:05d}", seqs, vec))
        else:
            samples.append(VideoSample(f"syn{i:05d}", seqs, label))
    return Dataset(samples, spec.num_classes, list(spec.concept_types), spec.clips, label_mode)


def oracle_label(sample: VideoSample, spec: SyntheticSpec):
    """Recover the label by counting hot clips on each class's planted channels.

    Independent of any trained model: a clip is "hot" above 0.5, and the class
    whose expected hot-clip counts best match the observation wins.
    """
    expected_count = {
        "short-burst": 1,
        "long-duration": min(spec.clips, spec.sustained_length()),
        "position-variant": min(3, spec.clips),
    }
    best, best_err = 0, float("inf")
    for c, triples in enumerate(spec.class_patterns):
        err = 0.0
        for type_name, channel, kind in triples:
            row = sample.sequence(type_name).scores[channel]
            err += abs(int((row > 0.5).sum()) - expected_count[kind])
        if err < best_err:
            best, best_err = c, err
    return best


def oracle_accuracy(dataset: Dataset, spec: SyntheticSpec):
    hits = 0
    for s in dataset.samples:
        label = s.label if isinstance(s.label, int) else int(np.argmax(s.label))
        hits += oracle_label(s, spec) == label
    return hits / max(1, len(dataset.samples))


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split(samples, fraction, seed):
    """Disjoint, exhaustive, class-stratified, seed-deterministic split."""
    if not 0 < fraction < 1:
        raise ConfigurationError(f"split fraction must be in (0, 1), got {fraction}")
    by_class = {}
    for s in samples:
        label = s.label if isinstance(s.label, int) else int(np.argmax(s.label))
        by_class.setdefault(label, []).append(s)
    rng = np.random.default_rng(seed)
    labels = sorted(by_class)
    for label in labels:
        if len(by_class[label]) < 2:
            raise DataError(f"class {label} has {len(by_class[label])} sample(s); "
                            f"need >= 2 to stratify")
    # largest-remainder allocation: per-class counts as proportional as
    # possible while the train total is round(fraction * n), each class
    # keeping at least one sample on each side
    ideal = {l: fraction * len(by_class[l]) for l in labels}
    cuts = {l: min(max(int(ideal[l]), 1), len(by_class[l]) - 1) for l in labels}
    target = int(fraction * sum(len(g) for g in by_class.values()) + 0.5)
    order_by_rem = sorted(labels, key=lambda l: (-(ideal[l] - int(ideal[l])), l))
    for l in order_by_rem:
        if sum(cuts.values()) >= target:
            break
        if cuts[l] < len(by_class[l]) - 1:
            cuts[l] += 1
    train, test = [], []
    for label in labels:
        group = by_class[label]
        order = rng.permutation(len(group))
        train.extend(group[i] for i in order[:cuts[label]])
        test.extend(group[i] for i in order[cuts[label]:])
    return train, test
