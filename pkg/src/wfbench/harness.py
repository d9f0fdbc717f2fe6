"""Experiment orchestration: corpora, attacks, defenses, metrics, reports.

An experiment builds (or loads) a labeled corpus with disjoint train/eval
splits, optionally applies a defense to both splits before any feature is
extracted (the attacker trains on defended traffic), fits the chosen attack,
scores per-sample predictions, and refines each evaluation session with the
site-graph HMM. Reports embed the full configuration, its hash, all seeds,
the code version, and the list of known substitutions, and contain no
timestamps, so identical configurations reproduce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .classifiers import (
    PredictionDist,
    predict_matrix,
    predict_nb,
    signed_sizes,
    train_knn,
    train_logreg,
    train_nb,
    knn_predict_matrix,
)
from .defenses import DefensePlan, apply_defense, measure_overhead, parse_defense_spec, prepare_plan
from .errors import ConfigError, DataError
from .features import (
    PanConfig,
    apply_bounds,
    fit_bounds,
    fit_feature_space,
    pan_features,
    size_count_features,
)
from .hmm import align_emission, build_hmm, viterbi, EMISSION_FLOOR
from .sitegraph import (
    BrowsingSession,
    RedirectLog,
    SiteGraph,
    build_canonicalizer,
    build_preliminary_graph,
    plan_sessions,
    refine,
    select_subset,
)
from .synth import SynthParams, generate_site, generate_traffic, mode_config
from .trace import Sample

ATTACKS = ("bog", "ll", "pan_lr", "wang_fll")

KNOWN_SUBSTITUTIONS = {
    "pan_lr": "pan_lr: logistic-regression backend substitutes the original RBF-SVM",
    "wang_fll": "wang_fll: linear-time multiset distance stands in for the original edit distance",
}


def subseed(master: int, tag: str) -> int:
    """Stable derived seed for one pipeline stage."""
    digest = hashlib.sha256(f"{master}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class BogAttack:
    """Gaussian burst-pair features plus size counts, logistic backend."""

    name = "bog"

    def __init__(self, C: float = 128.0, seed: int = 0, k_by_domain=None):
        self.C = C
        self.seed = seed
        self.k_by_domain = k_by_domain
        self.space = None
        self.model = None

    def fit(self, samples: Sequence[Sample]) -> "BogAttack":
        self.space = fit_feature_space(samples, seed=self.seed, k_by_domain=self.k_by_domain)
        X = self.space.transform(samples)
        self.model = train_logreg(X, [s.label for s in samples], C=self.C, seed=self.seed)
        return self

    def predict_proba(self, samples: Sequence[Sample]) -> list[PredictionDist]:
        P = predict_matrix(self.model, self.space.transform(samples))
        return [PredictionDist(self.model.classes, P[i]) for i in range(len(samples))]


class PanLrAttack:
    """Size counts plus rounded burst aggregates, logistic backend."""

    name = "pan_lr"

    def __init__(self, C: float = 128.0, seed: int = 0, cfg: PanConfig = PanConfig()):
        self.C = C
        self.seed = seed
        self.cfg = cfg
        self.bounds = None
        self.model = None

    def _matrix(self, samples: Sequence[Sample]) -> np.ndarray:
        return np.stack([pan_features(s, self.cfg) for s in samples])

    def fit(self, samples: Sequence[Sample]) -> "PanLrAttack":
        raw = self._matrix(samples)
        self.bounds = fit_bounds(raw)
        X = apply_bounds(raw, self.bounds)
        self.model = train_logreg(X, [s.label for s in samples], C=self.C, seed=self.seed)
        return self

    def predict_proba(self, samples: Sequence[Sample]) -> list[PredictionDist]:
        X = apply_bounds(self._matrix(samples), self.bounds)
        P = predict_matrix(self.model, X)
        return [PredictionDist(self.model.classes, P[i]) for i in range(len(samples))]


class LlAttack:
    """Naive Bayes over raw packet-size counts."""

    name = "ll"

    def __init__(self, alpha: float = 1.0, mtu: int = 1500):
        self.alpha = alpha
        self.mtu = mtu
        self.model = None

    def fit(self, samples: Sequence[Sample]) -> "LlAttack":
        X = np.stack([size_count_features(s, self.mtu) for s in samples])
        self.model = train_nb(X, [s.label for s in samples], alpha=self.alpha)
        return self

    def predict_proba(self, samples: Sequence[Sample]) -> list[PredictionDist]:
        return [predict_nb(self.model, size_count_features(s, self.mtu)) for s in samples]


class WangFllAttack:
    """Nearest neighbor over signed packet-size multisets."""

    name = "wang_fll"

    def __init__(self, k: int = 1):
        self.k = k
        self.model = None

    def fit(self, samples: Sequence[Sample]) -> "WangFllAttack":
        self.model = train_knn([signed_sizes(s) for s in samples], [s.label for s in samples], k=self.k)
        return self

    def predict_proba(self, samples: Sequence[Sample]) -> list[PredictionDist]:
        return knn_predict_matrix(self.model, [signed_sizes(s) for s in samples])


def make_attack(name: str, seed: int = 0, **kwargs):
    if name == "bog":
        return BogAttack(seed=seed, **kwargs)
    if name == "pan_lr":
        return PanLrAttack(seed=seed, **kwargs)
    if name == "ll":
        return LlAttack(**kwargs)
    if name == "wang_fll":
        return WangFllAttack(**kwargs)
    raise ConfigError(f"unknown attack {name!r}; choose from {ATTACKS}")


@dataclass(frozen=True)
class ExperimentConfig:
    attack: str = "bog"
    defense: str = "none"
    seed: int = 0
    synth: SynthParams = field(default_factory=SynthParams)
    subset_labels: int | None = None
    session_len: int = 75
    dup_threshold: float = 0.6
    train_mode: int = 2
    eval_mode: int = 4
    noise: float = 0.05
    train_samples_per_label: int = 4
    eval_samples_per_label: int = 2
    apply_hmm: bool = True

    def __post_init__(self) -> None:
        if self.attack not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack!r}")
        parse_defense_spec(self.defense)  # validates

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    synth_raw = raw.pop("synth", {})
    try:
        synth = SynthParams(
            **{k: tuple(v) if isinstance(v, list) else v for k, v in synth_raw.items()}
        )
        return ExperimentConfig(synth=synth, **raw)
    except TypeError as exc:
        raise ConfigError(f"bad experiment config: {exc}") from exc


@dataclass(frozen=True, eq=False)
class Corpus:
    graph: SiteGraph  # refined graph driving HMM decoding
    train: tuple[Sample, ...]
    eval: tuple[Sample, ...]
    train_sessions: tuple[BrowsingSession, ...]
    eval_sessions: tuple[BrowsingSession, ...]


def build_corpus(cfg: ExperimentConfig) -> Corpus:
    """Generate the synthetic corpus for a config, end to end through the
    site-graph pipeline (canonicalize, subset, plan, refine)."""
    site, crawl_log, crawl_edges, redirect_log, crawl_log2 = generate_site(
        cfg.synth, subseed(cfg.seed, "site")
    )
    canon = build_canonicalizer(crawl_log)
    g_prelim = build_preliminary_graph(crawl_edges, canon)
    if cfg.subset_labels is not None:
        g_prelim = select_subset(g_prelim, site.homepage(), cfg.subset_labels, subseed(cfg.seed, "subset"))
    train_sessions = plan_sessions(
        g_prelim,
        session_len=cfg.session_len,
        dup_threshold=cfg.dup_threshold,
        min_samples_per_label=cfg.train_samples_per_label,
        seed=subseed(cfg.seed, "plan-train"),
        start=site.homepage(),
    )
    eval_sessions = plan_sessions(
        g_prelim,
        session_len=cfg.session_len,
        dup_threshold=cfg.dup_threshold,
        min_samples_per_label=cfg.eval_samples_per_label,
        seed=subseed(cfg.seed, "plan-eval"),
        start=site.homepage(),
    )
    _, g_final = refine(g_prelim, canon, RedirectLog(tuple(redirect_log)), crawl_log2)
    train = generate_traffic(
        site, train_sessions, mode_config(cfg.train_mode, cfg.noise), subseed(cfg.seed, "user-train") % 2**31
    )
    eval_ = generate_traffic(
        site, eval_sessions, mode_config(cfg.eval_mode, cfg.noise), subseed(cfg.seed, "user-eval") % 2**31
    )
    corpus = Corpus(g_final, tuple(train), tuple(eval_), tuple(train_sessions), tuple(eval_sessions))
    assert_disjoint(corpus.train, corpus.eval)
    return corpus


def assert_disjoint(train: Sequence[Sample], eval_: Sequence[Sample]) -> None:
    train_ids = {(s.session_id, s.position) for s in train}
    eval_ids = {(s.session_id, s.position) for s in eval_}
    overlap = train_ids & eval_ids
    if overlap:
        raise DataError(f"train/eval splits share {len(overlap)} sample ids, e.g. {sorted(overlap)[:3]}")


def group_sessions(samples: Sequence[Sample]) -> list[list[Sample]]:
    by_session: dict[str, list[Sample]] = {}
    for s in samples:
        by_session.setdefault(s.session_id, []).append(s)
    groups = []
    for sid in sorted(by_session):
        groups.append(sorted(by_session[sid], key=lambda s: s.position))
    return groups


def accuracy_of(predicted: Sequence[str], truth: Sequence[str]) -> float:
    if not truth:
        raise DataError("no samples to score")
    return sum(p == t for p, t in zip(predicted, truth)) / len(truth)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    attack: str
    defense: str
    config: dict
    config_hash: str
    code_version: str
    n_train: int
    n_eval: int
    n_labels: int
    accuracy: float
    hmm_accuracy: float | None
    per_label_accuracy: dict[str, float]
    confusion_top: list[tuple[str, str, int]]
    unseen_eval_labels: list[str]
    unseen_label_misses: int
    overhead: tuple[float, float] | None
    session_curve: list[tuple[int, float]] | None
    deviations: list[str]

    def to_record(self) -> dict:
        return {
            "version": 1,
            "attack": self.attack,
            "defense": self.defense,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "n_labels": self.n_labels,
            "accuracy": self.accuracy,
            "hmm_accuracy": self.hmm_accuracy,
            "per_label_accuracy": {k: self.per_label_accuracy[k] for k in sorted(self.per_label_accuracy)},
            "confusion_top": [list(row) for row in self.confusion_top],
            "unseen_eval_labels": self.unseen_eval_labels,
            "unseen_label_misses": self.unseen_label_misses,
            "overhead": list(self.overhead) if self.overhead else None,
            "session_curve": [list(p) for p in self.session_curve] if self.session_curve else None,
            "deviations": self.deviations,
            "config": self.config,
        }


def format_report(report: MetricsReport) -> str:
    lines = [
        f"attack={report.attack} defense={report.defense}",
        f"train={report.n_train} eval={report.n_eval} labels={report.n_labels}",
        f"per-sample accuracy: {report.accuracy:.4f}",
    ]
    if report.hmm_accuracy is not None:
        lines.append(f"hmm accuracy:        {report.hmm_accuracy:.4f}")
    if report.overhead:
        lines.append(f"overhead: bytes x{report.overhead[0]:.3f}, packets x{report.overhead[1]:.3f}")
    if report.unseen_eval_labels:
        lines.append(
            f"unseen eval labels: {len(report.unseen_eval_labels)} "
            f"({report.unseen_label_misses} forced misses)"
        )
    if report.session_curve:
        curve = ", ".join(f"{n}:{a:.3f}" for n, a in report.session_curve)
        lines.append(f"session-length curve: {curve}")
    for dev in report.deviations:
        lines.append(f"substitution: {dev}")
    lines.append(f"config {report.config_hash[:16]}  code {report.code_version}")
    return "\n".join(lines)


def _evaluate(
    attack,
    corpus: Corpus,
    apply_hmm: bool,
) -> tuple[float, float | None, list[str], list[PredictionDist]]:
    dists = attack.predict_proba(list(corpus.eval))
    predicted = [d.argmax_label() for d in dists]
    truth = [s.label for s in corpus.eval]
    acc = accuracy_of(predicted, truth)
    hmm_acc = None
    if apply_hmm:
        model = build_hmm(corpus.graph)
        dist_by_id = {(s.session_id, s.position): d for s, d in zip(corpus.eval, dists)}
        hits = 0
        total = 0
        for group in group_sessions(corpus.eval):
            emissions = [
                align_emission(model, dist_by_id[(s.session_id, s.position)], floor=EMISSION_FLOOR)
                for s in group
            ]
            path = viterbi(model, emissions)
            for s, lbl in zip(group, path.labels):
                hits += lbl == s.label
                total += 1
        hmm_acc = hits / total
    return acc, hmm_acc, predicted, dists


def run_experiment(cfg: ExperimentConfig, corpus: Corpus | None = None) -> MetricsReport:
    """Full pipeline: corpus -> defense -> features -> train -> eval -> HMM."""
    if corpus is None:
        corpus = build_corpus(cfg)
    plan = parse_defense_spec(cfg.defense)
    overhead = None
    if plan.kind != "none":
        plan = prepare_plan(plan, list(corpus.train))
        defended_train = tuple(apply_defense(s, plan) for s in corpus.train)
        defended_eval = tuple(apply_defense(s, plan) for s in corpus.eval)
        report = measure_overhead(
            list(corpus.train) + list(corpus.eval), list(defended_train) + list(defended_eval)
        )
        overhead = (report.byte_overhead, report.packet_overhead)
        corpus = replace(corpus, train=defended_train, eval=defended_eval)

    attack = make_attack(cfg.attack, seed=subseed(cfg.seed, "attack"))
    attack.fit(list(corpus.train))
    acc, hmm_acc, predicted, _ = _evaluate(attack, corpus, cfg.apply_hmm)

    truth = [s.label for s in corpus.eval]
    train_labels = {s.label for s in corpus.train}
    unseen = sorted({t for t in truth if t not in train_labels})
    unseen_misses = sum(t in set(unseen) for t in truth)

    per_label: dict[str, list[int]] = {}
    confusion: dict[tuple[str, str], int] = {}
    for p, t in zip(predicted, truth):
        per_label.setdefault(t, []).append(int(p == t))
        if p != t:
            confusion[(t, p)] = confusion.get((t, p), 0) + 1
    top = sorted(confusion.items(), key=lambda kv: (-kv[1], kv[0]))[:10]

    return MetricsReport(
        attack=cfg.attack,
        defense=cfg.defense,
        config=cfg.to_dict(),
        config_hash=cfg.hash(),
        code_version=__version__,
        n_train=len(corpus.train),
        n_eval=len(corpus.eval),
        n_labels=len({s.label for s in corpus.train}),
        accuracy=acc,
        hmm_accuracy=hmm_acc,
        per_label_accuracy={l: float(np.mean(v)) for l, v in per_label.items()},
        confusion_top=[(t, p, n) for (t, p), n in top],
        unseen_eval_labels=unseen,
        unseen_label_misses=unseen_misses,
        overhead=overhead,
        session_curve=None,
        deviations=[KNOWN_SUBSTITUTIONS[cfg.attack]] if cfg.attack in KNOWN_SUBSTITUTIONS else [],
    )


def session_length_sweep(
    cfg: ExperimentConfig,
    lengths: Sequence[int],
    corpus: Corpus | None = None,
    attack=None,
) -> list[tuple[int, float]]:
    """Decoded accuracy as a function of session length.

    Each evaluation session is cut into contiguous windows of the requested
    length at a seeded random offset (full coverage, so length 1 scores
    every sample and equals the per-sample classifier accuracy exactly).
    """
    if corpus is None:
        corpus = build_corpus(cfg)
    if attack is None:
        attack = make_attack(cfg.attack, seed=subseed(cfg.seed, "attack"))
        attack.fit(list(corpus.train))
    groups = group_sessions(corpus.eval)
    max_len = max(len(g) for g in groups)
    for length in lengths:
        if length < 1 or length > max_len:
            raise ConfigError(f"session length {length} outside [1, {max_len}]")
    model = build_hmm(corpus.graph)
    dists = attack.predict_proba(list(corpus.eval))
    dist_by_id = {(s.session_id, s.position): d for s, d in zip(corpus.eval, dists)}
    rng = np.random.default_rng(subseed(cfg.seed, "session-sweep"))
    curve = []
    for length in lengths:
        hits = 0
        total = 0
        for group in groups:
            n_windows = len(group) // length
            if n_windows == 0:
                continue
            offset = int(rng.integers(0, len(group) - n_windows * length + 1))
            for w in range(n_windows):
                window = group[offset + w * length : offset + (w + 1) * length]
                emissions = [
                    align_emission(model, dist_by_id[(s.session_id, s.position)], floor=EMISSION_FLOOR)
                    for s in window
                ]
                path = viterbi(model, emissions)
                for s, lbl in zip(window, path.labels):
                    hits += lbl == s.label
                    total += 1
        curve.append((length, hits / total))
    return curve


def train_size_sweep(
    cfg: ExperimentConfig,
    sizes: Sequence[int] = (2, 4, 8, 16),
    attacks: Sequence[str] = ATTACKS,
    corpus: Corpus | None = None,
) -> dict[str, list[tuple[int, float]]]:
    """Per-sample accuracy of each attack as training samples per label vary."""
    if corpus is None:
        corpus = build_corpus(cfg)
    by_label: dict[str, list[Sample]] = {}
    for s in corpus.train:
        by_label.setdefault(s.label, []).append(s)
    available = min(len(v) for v in by_label.values())
    for size in sizes:
        if size > available:
            raise ConfigError(f"train size {size} exceeds available {available} per label")
    rng = np.random.default_rng(subseed(cfg.seed, "train-sweep"))
    order = {l: rng.permutation(len(v)) for l, v in sorted(by_label.items())}
    curves: dict[str, list[tuple[int, float]]] = {name: [] for name in attacks}
    truth = [s.label for s in corpus.eval]
    for size in sizes:
        subset = []
        for l in sorted(by_label):
            subset.extend(by_label[l][i] for i in order[l][:size])
        for name in attacks:
            attack = make_attack(name, seed=subseed(cfg.seed, f"attack-{name}-{size}"))
            attack.fit(subset)
            predicted = [d.argmax_label() for d in attack.predict_proba(list(corpus.eval))]
            curves[name].append((size, accuracy_of(predicted, truth)))
    return curves


def write_report(report: MetricsReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(json.dumps(report.to_record(), separators=(",", ":"), sort_keys=True))
        fp.write("\n")
