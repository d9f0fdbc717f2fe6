"""Site-graph hidden Markov model and Viterbi decoding.

States are the refined graph's labels. The start distribution is uniform,
transitions give equal probability to every out-edge of a state (sinks get an
injected self-loop), and the per-step emission score is the classifier's
posterior probability of the state given the observed sample. Decoding runs
entirely in log space; zero probabilities become -inf and ties resolve to the
smallest state index, so decoding is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .classifiers import PredictionDist
from .errors import DataError
from .sitegraph import SiteGraph

EMISSION_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SequenceModel:
    states: tuple[str, ...]
    log_pi: np.ndarray  # (S,)
    log_A: np.ndarray  # (S, S)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}


def build_hmm(g: SiteGraph, smoothing: float = 0.0) -> SequenceModel:
    """Row-normalized transition structure over the graph's edges.

    ``smoothing`` optionally mixes in a small uniform mass over non-edges
    (off by default; the binary structure is the reference behavior).
    """
    if not g.labels:
        raise DataError("cannot build an HMM from an empty graph")
    states = tuple(sorted(g.labels))
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    A = np.zeros((n, n))
    for a, b in g.edges:
        A[index[a], index[b]] = 1.0
    for i in range(n):
        if A[i].sum() == 0.0:
            A[i, i] = 1.0  # sink: self-loop keeps every row a distribution
    if smoothing > 0.0:
        A = A + smoothing
    A = A / A.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        log_A = np.log(A)
        log_pi = np.log(np.full(n, 1.0 / n))
    return SequenceModel(states, log_pi, log_A)


@dataclass(frozen=True)
class DecodedPath:
    labels: tuple[str, ...]
    log_score: float


def align_emission(
    m: SequenceModel, dist: PredictionDist, floor: float = 0.0
) -> np.ndarray:
    """Project a classifier distribution onto the model's state order.

    States absent from the distribution get the floor value; with a positive
    floor the result is renormalized.
    """
    index = m.state_index()
    arr = np.full(m.n_states, floor)
    for label, p in zip(dist.labels, dist.probs):
        i = index.get(label)
        if i is not None:
            arr[i] = max(float(p), floor)
    total = arr.sum()
    if floor > 0.0:
        arr = arr / total
    return arr


def viterbi(m: SequenceModel, emissions: Sequence[np.ndarray]) -> DecodedPath:
    """Most likely state sequence for per-step emission probability vectors."""
    if len(emissions) < 1:
        raise DataError("need at least one emission")
    n = m.n_states
    with np.errstate(divide="ignore"):
        log_e = [np.log(np.asarray(e, dtype=np.float64)) for e in emissions]
    for t, e in enumerate(log_e):
        if e.shape != (n,):
            raise DataError(f"emission {t} has shape {e.shape}, expected ({n},)")

    score = m.log_pi + log_e[0]
    back = np.zeros((len(emissions), n), dtype=np.int64)
    if np.all(np.isneginf(score)):
        raise DataError("no valid path: all start scores are -inf")
    for t in range(1, len(emissions)):
        cand = score[:, None] + m.log_A
        best_prev = cand.argmax(axis=0)  # first index wins ties
        score = cand[best_prev, np.arange(n)] + log_e[t]
        back[t] = best_prev
        if np.all(np.isneginf(score)):
            raise DataError(f"no valid path at step {t}")
    last = int(score.argmax())
    path = [last]
    for t in range(len(emissions) - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return DecodedPath(tuple(m.states[i] for i in path), float(score[last]))


def refine_session(
    predict_proba: Callable[[Sequence], list[PredictionDist]],
    m: SequenceModel,
    samples: Sequence,
) -> DecodedPath:
    """Classify each sample of one session, floor and renormalize the
    posteriors, and decode the most likely label path."""
    dists = predict_proba(samples)
    emissions = [align_emission(m, d, floor=EMISSION_FLOOR) for d in dists]
    return viterbi(m, emissions)
