from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple, final

import networkx as nx
import numpy as np
import pandas as pd


# --- ENUMS (Centralized) ---

@final
class Ablation:
    NONE = "none"
    NO_CF_FDA = "no_cf_fda"  # "- CF&FDA" arm: mediator and front-door stages removed
    ALL = (NONE, NO_CF_FDA)


@final
class FdaValues:
    F = "F"  # literal M_do = softmax(F M^T / sqrt(d)) F
    M = "M"
    ALL = (F, M)


@final
class VisualSource:
    VOLUME = "volume"      # raw grid, patch-embedded inside the model
    FEATURES = "features"  # precomputed (tokens x dim) matrix from an external extractor
    ALL = (VOLUME, FEATURES)


@final
class ExportStage:
    POST_FDA_POOLED = "post_fda_pooled"
    MULTIMODAL_POOLED = "multimodal_pooled"
    ALL = (POST_FDA_POOLED, MULTIMODAL_POOLED)


@final
class Split:
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    ALL_SPLITS = "all"
    ALL = (TRAIN, VAL, TEST)


# --- 1. CAUSAL ENGINE ---

@dataclass(frozen=True)
class DiscreteSCM:
    """
    DAG over finite-valued variables with one CPD per variable.
    cpds[v] has shape (card(parent_1), ..., card(parent_k), card(v)); the last
    axis indexes the state of v. Arrays are stored read-only.
    """
    variables: Tuple[str, ...]
    cardinalities: Mapping[str, int]
    parents: Mapping[str, Tuple[str, ...]]
    cpds: Mapping[str, np.ndarray]
    topological_order: Tuple[str, ...]

    def card(self, name: str) -> int:
        return self.cardinalities[name]

    @property
    def edges(self) -> List[Tuple[str, str]]:
        return [(p, child) for child in self.variables for p in self.parents[child]]

    @property
    def state_space_size(self) -> int:
        return int(np.prod([self.cardinalities[v] for v in self.variables], dtype=object))

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.variables)
        g.add_edges_from(self.edges)
        return g


@dataclass(frozen=True)
class Distribution:
    variable: str
    probs: np.ndarray

    def __getitem__(self, state: int) -> float:
        return float(self.probs[state])

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class FrontdoorReport:
    cause: str
    target: str
    mediators: Tuple[str, ...]
    intercepts_directed_paths: bool       # (1)
    no_backdoor_cause_to_mediator: bool   # (2)
    mediator_backdoor_blocked_by_cause: bool  # (3)

    @property
    def passed(self) -> bool:
        return (self.intercepts_directed_paths and self.no_backdoor_cause_to_mediator
                and self.mediator_backdoor_blocked_by_cause)

    def as_tuple(self) -> Tuple[bool, bool, bool]:
        return (self.intercepts_directed_paths, self.no_backdoor_cause_to_mediator,
                self.mediator_backdoor_blocked_by_cause)


# --- 2. TEXT ---

@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]
    ids: Mapping[str, int] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.ids is None:
            object.__setattr__(self, "ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str, default: int) -> int:
        return self.ids.get(token, default)


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]
    attention_mask: Tuple[bool, ...]

    @property
    def n_real(self) -> int:
        return sum(self.attention_mask)


@dataclass(frozen=True)
class SummaryRecord:
    sections: Mapping[str, str]
    unrecorded: FrozenSet[str] = frozenset()
    extra: Mapping[str, str] = field(default_factory=dict)
    preamble: str = ""

    def is_recorded(self, section: str) -> bool:
        return section in self.sections and section not in self.unrecorded


# --- 3. DATA / TRAINING ---

@dataclass(frozen=True)
class SampleRecord:
    id: str
    visual: str
    summary: str
    label: str
    split: Optional[str] = None
    line: int = 0


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic benchmark written by data_service.synth_dataset."""
    counts: Tuple[int, ...] = (100, 100, 100)
    class_names: Tuple[str, ...] = ("CN", "MCI", "AD")
    volume_dims: Tuple[int, int, int] = (32, 32, 32)
    noise: float = 0.1
    volume_signal: bool = True
    keyword_signal: bool = True
    rho_train: Optional[float] = None  # None: no planted confounder
    rho_test: Optional[float] = None
    confound_label: str = "AD"
    confound_token: str = "outpatient"
    artifact_size: int = 4
    planted_token: Optional[str] = None
    planted_label: str = "AD"
    planted_repeats: int = 3
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class MetricsReport:
    acc: float
    f1: float
    precision: float
    recall: float
    auc: Optional[float]
    n_samples: int
    class_names: Tuple[str, ...]
    confusion: np.ndarray
    per_class: pd.DataFrame

    def as_row(self) -> Dict[str, Optional[float]]:
        return {"acc": self.acc, "f1": self.f1, "precision": self.precision,
                "recall": self.recall, "auc": self.auc}

    def to_dict(self) -> Dict:
        return {
            **self.as_row(),
            "n_samples": self.n_samples,
            "class_names": list(self.class_names),
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class.reset_index().to_dict(orient="records"),
        }


@dataclass
class TrainResult:
    checkpoint_path: str
    history: pd.DataFrame
    best_val_acc: float
    best_epoch: int
    n_parameters: int


@dataclass
class AblationReport:
    runs: pd.DataFrame    # one row per (seed, arm, split)
    deltas: pd.DataFrame  # full minus ablated, mean over seeds, per split
    parameter_counts: Dict[str, int]


# --- 4. ANALYSIS ---

@dataclass(frozen=True)
class SaliencyTable:
    scores: np.ndarray  # length v, non-negative, max 1 unless all zero
    class_name: str
    n_samples: int
    checkpoint_digest: str


# --- 5. CLI ---

@dataclass
class CommandOutcome:
    exit_code: int
    message: str
    artifacts: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.exit_code == 0
