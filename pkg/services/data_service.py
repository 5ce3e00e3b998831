# services/data_service.py
import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

import settings
from models import SampleRecord, Split, SynthSpec, VisualSource, Vocabulary
from services.text_service import build_vocab, read_summary, render_summary, tokenize, validate_summary
from utils.constants import CLASS_KEYWORDS, CLASS_NAMES_3, NEUTRAL_PHRASES, SUMMARY_SECTIONS
from utils.exceptions import BadLabel, InvalidSpec, MissingFile, ParseError
from utils.logger import setup_logger

logger = setup_logger("data")

VOLUME_DTYPE = "<f4"
ARTIFACT_VALUE = 3.0
MANIFEST_NAME = "manifest.jsonl"
REQUIRED_FIELDS = ("id", "visual", "summary", "label")


# --- 1. VISUAL FILES ---

def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_visual(array: np.ndarray, path) -> Path:
    """Raw little-endian float32, C order (z-major for volumes), plus a JSON sidecar with dims."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype=VOLUME_DTYPE)
    data.tofile(path)
    meta = {"dims": list(data.shape), "dtype": VOLUME_DTYPE, "order": "z-major"}
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_visual(path) -> np.ndarray:
    path = Path(path)
    meta_path = sidecar_path(path)
    if not path.exists():
        raise MissingFile(path)
    if not meta_path.exists():
        raise MissingFile(meta_path)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        dims = tuple(int(d) for d in meta["dims"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"Bad sidecar {meta_path}: {e}") from e
    if meta.get("dtype", VOLUME_DTYPE) != VOLUME_DTYPE:
        raise ParseError(f"{meta_path}: unsupported dtype {meta.get('dtype')}")

    data = np.fromfile(path, dtype=VOLUME_DTYPE)
    if data.size != int(np.prod(dims)):
        raise ParseError(f"{path} holds {data.size} values, sidecar says {dims}")
    return data.reshape(dims)


def preprocess_volume(volume, dims: Sequence[int], foreground_threshold: float = 0.0) -> torch.Tensor:
    """Trilinear resize to `dims` (skipped when already equal), then z-score over foreground voxels."""
    t = torch.as_tensor(np.asarray(volume), dtype=torch.float64)[None, None]
    if tuple(t.shape[-3:]) != tuple(dims):
        t = F.interpolate(t, size=tuple(dims), mode="trilinear", align_corners=False)
    t = t[0, 0]

    foreground = t > foreground_threshold
    values = t[foreground] if foreground.sum() >= 2 else t.flatten()
    std = values.std()
    if std <= 0:
        return t - values.mean()
    return (t - values.mean()) / std


# --- 2. SYNTHETIC BENCHMARK ---

def validate_synth_spec(spec: SynthSpec) -> None:
    problems = []
    if len(spec.counts) != len(spec.class_names):
        problems.append("counts and class_names differ in length")
    if any(c < 0 for c in spec.counts) or sum(spec.counts) == 0:
        problems.append("counts must be non-negative with a positive total")
    if len(set(spec.class_names)) != len(spec.class_names):
        problems.append("class_names repeat")
    if len(spec.volume_dims) != 3 or min(spec.volume_dims) < 1:
        problems.append("volume_dims needs three positive sizes")
    if spec.noise < 0:
        problems.append("noise must be >= 0")
    for name in ("rho_train", "rho_test"):
        rho = getattr(spec, name)
        if rho is not None and not 0.0 <= rho <= 1.0:
            problems.append(f"{name} must lie in [0, 1]")
    if spec.rho_test is not None and spec.rho_train is None:
        problems.append("rho_test needs rho_train")
    if spec.rho_train is not None:
        if spec.confound_label not in spec.class_names:
            problems.append(f"confound_label '{spec.confound_label}' is not a class")
        if not 0 < spec.artifact_size <= min(spec.volume_dims):
            problems.append("artifact_size must fit inside the volume")
    if spec.planted_token is not None:
        if spec.planted_label not in spec.class_names:
            problems.append(f"planted_label '{spec.planted_label}' is not a class")
        if spec.planted_repeats < 1:
            problems.append("planted_repeats must be >= 1")
    if spec.keyword_signal and any(name not in CLASS_KEYWORDS for name in spec.class_names):
        problems.append(f"keyword_signal needs every class in {sorted(CLASS_KEYWORDS)}")
    if len(spec.split_fractions) != 3 or abs(sum(spec.split_fractions) - 1.0) > 1e-9 \
            or min(spec.split_fractions) < 0:
        problems.append("split_fractions must be three non-negative numbers summing to 1")
    if problems:
        raise InvalidSpec("; ".join(problems))


def severity(class_name: str, class_names: Sequence[str]) -> float:
    """0 for CN, 1 for AD; MCI sits halfway. Unknown names spread evenly by position."""
    if class_name in CLASS_NAMES_3:
        return CLASS_NAMES_3.index(class_name) / (len(CLASS_NAMES_3) - 1)
    k = list(class_names).index(class_name)
    return k / max(len(class_names) - 1, 1)


def synth_volume(rng: np.random.Generator, dims: Sequence[int], level: float, noise: float) -> np.ndarray:
    """Gaussian blob whose radius and intensity shrink with severity, plus white noise."""
    grid = np.indices(dims, dtype=np.float64)
    center = (np.asarray(dims, dtype=np.float64) - 1) / 2 + rng.normal(0.0, 0.5, size=3)
    radius = min(dims) * (0.30 - 0.15 * level)
    intensity = 1.0 - 0.5 * level
    dist2 = sum((grid[i] - center[i]) ** 2 for i in range(3))
    return intensity * np.exp(-dist2 / (2 * radius ** 2)) + noise * rng.standard_normal(dims)


def pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def synth_summary(rng: np.random.Generator, class_name: str, spec: SynthSpec, confounded: bool) -> str:
    sections = {}
    for name in SUMMARY_SECTIONS:
        phrases = [pick(rng, NEUTRAL_PHRASES[name])]
        if spec.keyword_signal and name in CLASS_KEYWORDS.get(class_name, {}):
            phrases.append(pick(rng, CLASS_KEYWORDS[class_name][name]))
        sections[name] = ". ".join(p.capitalize() for p in phrases) + "."

    if confounded:
        sections["Basic Information"] += f" Seen as {spec.confound_token} visit."
    if spec.planted_token is not None and class_name == spec.planted_label:
        sections["Medical History and Neurological Assessment"] += \
            " " + " ".join([spec.planted_token] * spec.planted_repeats) + "."
    return render_summary(sections)


def stratified_indices(labels: Sequence[str], class_names: Sequence[str], fractions: Sequence[float],
                       rng: np.random.Generator) -> Dict[str, List[int]]:
    """Per-class shuffle, then cut into train/val/test by the rounded fractions."""
    out = {s: [] for s in Split.ALL}
    for name in class_names:
        members = [i for i, label in enumerate(labels) if label == name]
        order = rng.permutation(len(members))
        n_train = int(round(fractions[0] * len(members)))
        n_val = min(int(round(fractions[1] * len(members))), len(members) - n_train)
        cuts = {Split.TRAIN: order[:n_train], Split.VAL: order[n_train:n_train + n_val],
                Split.TEST: order[n_train + n_val:]}
        for split, picked in cuts.items():
            out[split].extend(members[j] for j in picked)
    return {s: sorted(idx) for s, idx in out.items()}


def confounder_flags(labels: Sequence[str], splits: Dict[str, List[int]], spec: SynthSpec,
                     rng: np.random.Generator) -> List[bool]:
    """
    Exact quotas per split: round(rho * n) of the designated-label samples carry the
    confounder, and round((1 - rho) * n) of the others. Val follows rho_train.
    """
    flags = [False] * len(labels)
    if spec.rho_train is None:
        return flags
    rho_test = spec.rho_train if spec.rho_test is None else spec.rho_test
    rhos = {Split.TRAIN: spec.rho_train, Split.VAL: spec.rho_train, Split.TEST: rho_test}
    for split, indices in splits.items():
        designated = [i for i in indices if labels[i] == spec.confound_label]
        others = [i for i in indices if labels[i] != spec.confound_label]
        for group, share in ((designated, rhos[split]), (others, 1.0 - rhos[split])):
            n_flag = int(round(share * len(group)))
            for j in rng.choice(len(group), size=n_flag, replace=False):
                flags[group[int(j)]] = True
    return flags


def synth_dataset(spec: SynthSpec, out_dir, seed: int = 0) -> Path:
    """Write volumes, summaries and a JSONL manifest under out_dir. Same seed, same bytes."""
    validate_synth_spec(spec)
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)

    labels = [name for name, n in zip(spec.class_names, spec.counts) for _ in range(n)]
    ids = [f"{name}_{k:04d}" for name, n in zip(spec.class_names, spec.counts) for k in range(n)]
    splits = stratified_indices(labels, spec.class_names, spec.split_fractions, rng)
    split_of = {i: s for s, indices in splits.items() for i in indices}
    flags = confounder_flags(labels, splits, spec, rng)

    lines = []
    for i, (sample_id, label) in enumerate(tqdm(list(zip(ids, labels)), desc="synth", leave=False)):
        level = severity(label, spec.class_names) if spec.volume_signal else 0.5
        volume = synth_volume(rng, spec.volume_dims, level, spec.noise)
        if flags[i]:
            a = spec.artifact_size
            volume[:a, :a, :a] = ARTIFACT_VALUE

        visual_rel = f"volumes/{sample_id}.f4"
        summary_rel = f"summaries/{sample_id}.txt"
        write_visual(volume, out_dir / visual_rel)
        summary_path = out_dir / summary_rel
        summary_path.parent.mkdir(parents=True, exist_ok=True)
        summary_path.write_text(synth_summary(rng, label, spec, flags[i]), encoding="utf-8")

        record = {"id": sample_id, "visual": visual_rel, "summary": summary_rel,
                  "label": label, "split": split_of[i]}
        if spec.rho_train is not None:
            record["confounder"] = flags[i]
        lines.append(json.dumps(record))

    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "synth_spec.json").write_text(
        json.dumps({**asdict(spec), "seed": seed}, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    logger.info(f"Synthetic dataset written: {len(lines)} samples to {manifest} "
                f"(train={len(splits[Split.TRAIN])}, val={len(splits[Split.VAL])}, "
                f"test={len(splits[Split.TEST])})")
    return manifest


# --- 3. MANIFEST ---

def load_manifest(path, class_names: Sequence[str] = CLASS_NAMES_3, label_filter: bool = False,
                  check_summaries: bool = True) -> List[SampleRecord]:
    """
    JSON lines with id, visual, summary, label and an optional split. Paths are relative
    to the manifest. With label_filter, labels outside class_names but known to the
    three-class task are skipped instead of rejected.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    base = path.parent
    records: List[SampleRecord] = []
    seen = set()
    skipped = 0

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            entry = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON ({e.msg})", line=lineno) from e
        if not isinstance(entry, dict):
            raise ParseError("record must be a JSON object", line=lineno)
        missing = [k for k in REQUIRED_FIELDS if not isinstance(entry.get(k), str) or not entry.get(k)]
        if missing:
            raise ParseError(f"missing or non-string fields: {', '.join(missing)}", line=lineno)

        label = entry["label"]
        if label not in class_names:
            if label_filter and label in CLASS_NAMES_3:
                skipped += 1
                continue
            raise BadLabel(label, lineno)
        split = entry.get("split")
        if split is not None and split not in Split.ALL:
            raise ParseError(f"unknown split '{split}'", line=lineno)
        if entry["id"] in seen:
            raise ParseError(f"duplicate id '{entry['id']}'", line=lineno)
        seen.add(entry["id"])

        visual = base / entry["visual"]
        summary = base / entry["summary"]
        for ref in (visual, summary):
            if not ref.exists():
                raise MissingFile(ref, line=lineno)
        if check_summaries:
            validate_summary(read_summary(summary))

        records.append(SampleRecord(id=entry["id"], visual=str(visual), summary=str(summary),
                                    label=label, split=split, line=lineno))

    if not records:
        raise ParseError(f"{path} holds no usable records")
    logger.info(f"Manifest loaded: {len(records)} records from {path}"
                + (f" ({skipped} outside the task skipped)" if skipped else ""))
    return records


def assign_splits(records: Sequence[SampleRecord], class_names: Sequence[str],
                  fractions: Sequence[float], seed: int) -> Dict[str, List[SampleRecord]]:
    """Use the manifest's split fields when every record has one, else a stratified draw."""
    marked = [r.split is not None for r in records]
    if all(marked):
        return {s: [r for r in records if r.split == s] for s in Split.ALL}
    if any(marked):
        first = next(r for r in records if r.split is None)
        raise ParseError("split must be given on every manifest line or on none", line=first.line)

    rng = np.random.default_rng(seed)
    indices = stratified_indices([r.label for r in records], class_names, fractions, rng)
    return {s: [records[i] for i in idx] for s, idx in indices.items()}


def select_split(splits: Dict[str, List[SampleRecord]], split: str) -> List[SampleRecord]:
    if split == Split.ALL_SPLITS:
        merged = [r for s in Split.ALL for r in splits[s]]
        return sorted(merged, key=lambda r: r.line)
    if split not in splits:
        raise ParseError(f"unknown split '{split}'")
    return splits[split]


def vocab_from_records(records: Sequence[SampleRecord], config) -> Vocabulary:
    corpus = [read_summary(r.summary) for r in records]
    return build_vocab(corpus, min_freq=config.vocab_min_freq, cap=config.vocab_cap)


# --- 4. TORCH DATASET ---

class ManifestDataset(Dataset):
    """Tokenizes every summary up front; visuals are read on access."""

    def __init__(self, records: Sequence[SampleRecord], vocab: Vocabulary, config):
        self.records = list(records)
        self.config = config
        self.dtype = getattr(torch, config.dtype)
        self.class_index = {name: i for i, name in enumerate(config.class_names)}
        self.sequences = [tokenize(read_summary(r.summary), vocab, config.max_len) for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def load_visual(self, record: SampleRecord) -> torch.Tensor:
        array = read_visual(record.visual)
        if self.config.visual_source == VisualSource.FEATURES:
            return torch.as_tensor(array, dtype=self.dtype)
        if array.ndim != 3:
            raise ParseError(f"{record.visual} is not a 3D volume", line=record.line)
        return preprocess_volume(array, self.config.volume_dims, self.config.foreground_threshold).to(self.dtype)

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        record = self.records[index]
        sequence = self.sequences[index]
        return {
            "visual": self.load_visual(record),
            "token_ids": torch.tensor(sequence.ids, dtype=torch.long),
            "attention_mask": torch.tensor(sequence.attention_mask, dtype=torch.bool),
            "label": torch.tensor(self.class_index[record.label], dtype=torch.long),
            "index": torch.tensor(index, dtype=torch.long),
        }


def make_loader(dataset: ManifestDataset, batch_size: int, shuffle: bool = False,
                seed: Optional[int] = None) -> DataLoader:
    generator = torch.Generator().manual_seed(seed) if seed is not None else None
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator,
                      num_workers=settings.NUM_WORKERS)


def to_device(batch: Dict[str, torch.Tensor], device: Optional[str] = None) -> Dict[str, torch.Tensor]:
    device = device or settings.DEVICE
    return {key: value.to(device) for key, value in batch.items()}
