"""The three autotagging systems behind one two-tag predict interface:
a linear max-margin classifier over 68-dim bag-of-frames vectors, a
vector-quantization + first-order Markov-model scorer over MFCC sequences,
and sparse-representation classification over auditory-modulation vectors.

All ties break toward Vocals, the majority class in every dataset.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip
from .features import am_features, bff, mfcc_sequence
from .labels import LABELS, NONVOCALS, VOCALS, Label

CODEBOOK_SIZE = 75
BPDN_EPS2 = 0.01
BPDN_MAX_ITERS = 200
BPDN_BISECTIONS = 20
SRC_LAMBDA = 0.25
PEGASOS_EPOCHS = 200
PEGASOS_REG = 1e-4


class DegenerateTrainingError(ValueError):
    """Training set does not contain both labels."""


class DataError(ValueError):
    """Not enough (or not distinct enough) data to fit a model."""


def _label_sign(label: Label) -> float:
    return 1.0 if label == VOCALS else -1.0


# ---------------------------------------------------------------------------
# Linear classifier over BFF vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearBffModel:
    """Affine separator plus the per-dimension training min/max that map
    features into [0, 1]."""

    weights: np.ndarray  # 69 values: 68 feature weights + bias
    feat_min: np.ndarray
    feat_max: np.ndarray
    seed: int

    def normalize(self, vec: np.ndarray) -> np.ndarray:
        span = self.feat_max - self.feat_min
        span = np.where(span > 0.0, span, 1.0)
        return np.clip((vec - self.feat_min) / span, 0.0, 1.0)

    def score(self, vec: np.ndarray) -> float:
        z = self.normalize(np.asarray(vec, dtype=np.float64))
        return float(z @ self.weights[:-1] + self.weights[-1])


def train_linear_bff(train, seed: int,
                     epochs: int = PEGASOS_EPOCHS,
                     reg: float = PEGASOS_REG) -> LinearBffModel:
    """Fit the separator by hinge-loss subgradient descent with L2
    regularization (step 1/(reg*t)), on min/max-normalized features."""
    vectors = np.asarray([v for v, _ in train], dtype=np.float64)
    labels = [lab for _, lab in train]
    if len(set(labels)) < 2:
        raise DegenerateTrainingError("training set has a single class")
    feat_min = vectors.min(axis=0)
    feat_max = vectors.max(axis=0)
    span = np.where(feat_max - feat_min > 0.0, feat_max - feat_min, 1.0)
    normed = (vectors - feat_min) / span
    aug = np.column_stack([normed, np.ones(len(normed))])
    signs = np.array([_label_sign(lab) for lab in labels])

    rng = np.random.default_rng(seed)
    w = np.zeros(aug.shape[1])
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(aug)):
            t += 1
            eta = 1.0 / (reg * t)
            margin = signs[i] * (w @ aug[i])
            w *= 1.0 - eta * reg
            if margin < 1.0:
                w += eta * signs[i] * aug[i]
    return LinearBffModel(weights=w, feat_min=feat_min, feat_max=feat_max,
                          seed=int(seed))


def predict_linear(model: LinearBffModel, vec: np.ndarray) -> Label:
    """Sign of the affine score selects the label; a score of exactly 0 is
    a tie and goes to Vocals."""
    return VOCALS if model.score(vec) >= 0.0 else NONVOCALS


# ---------------------------------------------------------------------------
# k-means codebook + first-order Markov models
# ---------------------------------------------------------------------------

def kmeans(points: np.ndarray, k: int, seed: int,
           max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding.

    Returns (centroids, objective_trace); the trace holds the within-cluster
    sum of squares at each assignment step and is non-increasing. Empty
    clusters keep their previous centroid. Deterministic given the seed.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(n)]
            continue
        centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))

    trace = []
    for _ in range(max_iter):
        dists = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dists, axis=1)
        trace.append(float(dists[np.arange(n), labels].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
        movement = float(np.max(np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1))))
        centroids = new_centroids
        if movement < tol:
            break
    return centroids, trace


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return len(self.centroids)


def train_codebook(frames: np.ndarray, k: int = CODEBOOK_SIZE,
                   seed: int = 0) -> Codebook:
    frames = np.asarray(frames, dtype=np.float64)
    if len(np.unique(frames, axis=0)) < k:
        raise DataError("need at least %d distinct frames" % k)
    centroids, _ = kmeans(frames, k, seed)
    return Codebook(centroids=centroids, seed=int(seed))


def encode(codebook: Codebook, frames: np.ndarray) -> np.ndarray:
    """Map each frame to the index of the nearest centroid (Euclidean);
    exact ties go to the lowest index."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("need a nonempty (n, d) frame matrix")
    dists = np.sum((frames[:, None, :] - codebook.centroids[None, :, :]) ** 2, axis=2)
    return np.argmin(dists, axis=1)


@dataclass(frozen=True)
class MarkovModel:
    """First-order chain in the log domain over a fixed code alphabet."""

    log_initial: np.ndarray          # (k,)
    log_transition: np.ndarray       # (k, k), rows sum to 1 in linear domain
    smoothing: float

    @property
    def alphabet_size(self) -> int:
        return len(self.log_initial)


def train_markov(sequences, alphabet_size: int = CODEBOOK_SIZE,
                 smoothing: float = 1.0) -> MarkovModel:
    """Estimate initial and transition probabilities from code sequences
    with additive (Laplace) smoothing over the code alphabet."""
    sequences = [np.asarray(s, dtype=np.int64) for s in sequences]
    sequences = [s for s in sequences if len(s) > 0]
    if not sequences:
        raise DataError("empty training corpus")
    k = alphabet_size
    init = np.zeros(k)
    trans = np.zeros((k, k))
    for seq in sequences:
        init[seq[0]] += 1.0
        np.add.at(trans, (seq[:-1], seq[1:]), 1.0)
    init += smoothing
    trans += smoothing
    with np.errstate(divide="ignore", invalid="ignore"):
        log_initial = np.log(init / init.sum()) if init.sum() > 0 else np.full(k, -np.inf)
        row_sums = trans.sum(axis=1, keepdims=True)
        probs = np.where(row_sums > 0, trans / np.where(row_sums > 0, row_sums, 1.0), 0.0)
        log_transition = np.log(probs)
    return MarkovModel(log_initial=log_initial, log_transition=log_transition,
                       smoothing=float(smoothing))


def sequence_log_prob(model: MarkovModel, codes: np.ndarray) -> float:
    codes = np.asarray(codes, dtype=np.int64)
    if len(codes) == 0:
        raise ValueError("empty code sequence")
    total = model.log_initial[codes[0]]
    if len(codes) > 1:
        total = total + model.log_transition[codes[:-1], codes[1:]].sum()
    return float(total)


def score_vqmm(model_t: MarkovModel, model_tbar: MarkovModel, codes):
    """Log joint probability of the code under both models; Vocals wins
    ties."""
    if model_t.alphabet_size != model_tbar.alphabet_size:
        raise ValueError("models span different code alphabets")
    lp_t = sequence_log_prob(model_t, codes)
    lp_tbar = sequence_log_prob(model_tbar, codes)
    label = VOCALS if lp_t >= lp_tbar else NONVOCALS
    return lp_t, lp_tbar, label


# ---------------------------------------------------------------------------
# Sparse representation classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SrcDictionary:
    """Feature atoms (min/max-normalized training vectors, one column per
    instance) paired with unit-norm one-hot tag atoms."""

    atoms: np.ndarray        # (dim, n_train), every entry in [0, 1]
    tag_atoms: np.ndarray    # (2, n_train), rows ordered (Vocals, NonVocals)
    feat_min: np.ndarray
    feat_max: np.ndarray
    lipschitz: float         # largest squared singular value of atoms

    def normalize(self, vec: np.ndarray) -> np.ndarray:
        span = self.feat_max - self.feat_min
        span = np.where(span > 0.0, span, 1.0)
        out = np.clip((vec - self.feat_min) / span, 0.0, 1.0)
        return np.where(self.feat_max > self.feat_min, out, 0.0)


def build_dictionary(train) -> SrcDictionary:
    vectors = np.asarray([v for v, _ in train], dtype=np.float64)
    labels = [lab for _, lab in train]
    if len(vectors) < 2 or len(set(labels)) < 2:
        raise DataError("need at least two instances covering both classes")
    feat_min = vectors.min(axis=0)
    feat_max = vectors.max(axis=0)
    span = feat_max - feat_min
    with np.errstate(invalid="ignore"):
        normed = np.where(span > 0.0, (vectors - feat_min) / np.where(span > 0, span, 1.0), 0.0)
    atoms = normed.T
    tag_atoms = np.zeros((2, len(vectors)))
    for i, lab in enumerate(labels):
        tag_atoms[0 if lab == VOCALS else 1, i] = 1.0  # one-hot is unit-norm
    lipschitz = float(np.linalg.norm(atoms, 2) ** 2)
    return SrcDictionary(atoms=atoms, tag_atoms=tag_atoms, feat_min=feat_min,
                         feat_max=feat_max, lipschitz=lipschitz)


def _fista(gram, corr, mu, lipschitz, s0, max_iters, tol=1e-9):
    """Accelerated iterative shrinkage on 0.5*||f - D s||^2 + mu*||s||_1,
    driven through the Gram matrix (gram = D^T D, corr = D^T f)."""
    s = s0.copy()
    z = s0.copy()
    t_acc = 1.0
    step = 1.0 / lipschitz
    for _ in range(max_iters):
        grad = gram @ z - corr
        s_new = z - step * grad
        s_new = np.sign(s_new) * np.maximum(np.abs(s_new) - mu * step, 0.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        z = s_new + ((t_acc - 1.0) / t_new) * (s_new - s)
        delta = np.max(np.abs(s_new - s))
        s, t_acc = s_new, t_new
        if delta < tol * max(1.0, np.max(np.abs(s))):
            break
    return s


def solve_bpdn(D: np.ndarray, f: np.ndarray, eps2: float = BPDN_EPS2,
               max_iters: int = BPDN_MAX_ITERS,
               n_bisect: int = BPDN_BISECTIONS,
               lipschitz: float | None = None):
    """Approximately minimize ||s||_1 subject to ||f - D s||_2^2 <= eps2.

    Iterative shrinkage on the penalized form, with the penalty weight
    bisected until the residual constraint is met; each of the n_bisect
    inner runs gets max_iters iterations. Returns (s, feasible). When no
    feasible iterate is found the best (minimum-residual) iterate comes
    back with feasible=False. Deterministic.
    """
    D = np.asarray(D, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    ff = float(f @ f)
    if ff <= eps2:
        return np.zeros(D.shape[1]), True
    if lipschitz is None:
        lipschitz = float(np.linalg.norm(D, 2) ** 2)
    if lipschitz <= 0.0:
        return np.zeros(D.shape[1]), False
    gram = D.T @ D
    corr = D.T @ f

    def residual_sq(s):
        return ff - 2.0 * float(corr @ s) + float(s @ (gram @ s))

    mu_hi = float(np.max(np.abs(corr)))
    mu_lo = 0.0
    s = np.zeros(D.shape[1])
    best = None
    best_l1 = np.inf
    fallback = s
    fallback_res = ff
    for _ in range(n_bisect):
        mu = 0.5 * (mu_lo + mu_hi)
        s = _fista(gram, corr, mu, lipschitz, s, max_iters)
        res = residual_sq(s)
        if res <= eps2:
            l1 = float(np.sum(np.abs(s)))
            if l1 <= best_l1:
                best, best_l1 = s.copy(), l1
            mu_lo = mu
        else:
            mu_hi = mu
            if res < fallback_res:
                fallback, fallback_res = s.copy(), res
    if best is None:
        return fallback, False
    return best, True


def predict_srcam(dictionary: SrcDictionary, vec: np.ndarray,
                  lam: float = SRC_LAMBDA,
                  eps2: float = BPDN_EPS2,
                  max_iters: int = BPDN_MAX_ITERS) -> Label:
    """Sparse-code the query against the dictionary, combine tag atoms, and
    threshold. With two tags: exactly one surviving tag wins; both or
    neither surviving falls back to the argmax (ties to Vocals); an
    all-zero combination is degenerate and predicts Vocals with a warning.
    """
    v = dictionary.normalize(np.asarray(vec, dtype=np.float64))
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        warnings.warn("all-zero query after normalization; defaulting to Vocals")
        return VOCALS
    f = v / norm
    s, _ = solve_bpdn(dictionary.atoms, f, eps2=eps2, max_iters=max_iters,
                      lipschitz=dictionary.lipschitz)
    w = dictionary.tag_atoms @ s
    return threshold_tags(w, lam)


def threshold_tags(w: np.ndarray, lam: float = SRC_LAMBDA) -> Label:
    """Tag decision from the combined tag-atom vector w = (Vocals, NonVocals)."""
    w = np.asarray(w, dtype=np.float64)
    peak = float(np.max(np.abs(w)))
    if peak == 0.0:
        warnings.warn("degenerate all-zero tag combination; defaulting to Vocals")
        return VOCALS
    survivors = (w / peak) > lam
    if survivors.sum() == 1:
        return VOCALS if survivors[0] else NONVOCALS
    return VOCALS if w[0] >= w[1] else NONVOCALS


# ---------------------------------------------------------------------------
# Uniform trained-system interface
# ---------------------------------------------------------------------------

VARIANTS = ("linear_bff", "vqmm", "srcam")

FEATURE_KIND_OF_VARIANT = {
    "linear_bff": "bff",
    "vqmm": "mfcc",
    "srcam": "am",
}

_EXTRACTORS = {"bff": bff, "mfcc": mfcc_sequence, "am": am_features}


@dataclass(frozen=True)
class TrainedSystem:
    """One classifier variant with provenance; predict is deterministic."""

    variant: str
    payload: dict
    train_folds: tuple
    seed: int

    @property
    def feature_kind(self) -> str:
        return FEATURE_KIND_OF_VARIANT[self.variant]

    def extract(self, clip: AudioClip) -> np.ndarray:
        return _EXTRACTORS[self.feature_kind](clip)

    def predict_features(self, feats: np.ndarray) -> Label:
        if self.variant == "linear_bff":
            return predict_linear(self.payload["model"], feats)
        if self.variant == "vqmm":
            codes = encode(self.payload["codebook"], feats)
            _, _, label = score_vqmm(self.payload["model_t"],
                                     self.payload["model_tbar"], codes)
            return label
        if self.variant == "srcam":
            return predict_srcam(self.payload["dictionary"], feats)
        raise ValueError("unknown variant %r" % self.variant)

    def predict_clip(self, clip: AudioClip) -> Label:
        return self.predict_features(self.extract(clip))


def train_system(variant: str, features_and_labels, seed: int,
                 train_folds=()) -> TrainedSystem:
    """Train one variant from (feature, label) pairs of its feature kind."""
    if variant == "linear_bff":
        model = train_linear_bff(features_and_labels, seed=seed)
        payload = {"model": model}
    elif variant == "vqmm":
        frames = np.vstack([f for f, _ in features_and_labels])
        codebook = train_codebook(frames, CODEBOOK_SIZE, seed=seed)
        seq_t = [encode(codebook, f) for f, lab in features_and_labels if lab == VOCALS]
        seq_tbar = [encode(codebook, f) for f, lab in features_and_labels if lab == NONVOCALS]
        if not seq_t or not seq_tbar:
            raise DegenerateTrainingError("training set has a single class")
        payload = {"codebook": codebook,
                   "model_t": train_markov(seq_t),
                   "model_tbar": train_markov(seq_tbar)}
    elif variant == "srcam":
        payload = {"dictionary": build_dictionary(features_and_labels)}
    else:
        raise ValueError("unknown variant %r" % variant)
    return TrainedSystem(variant=variant, payload=payload,
                         train_folds=tuple(train_folds), seed=int(seed))


MODEL_FORMAT_VERSION = 1


def save_system(path, system: TrainedSystem) -> None:
    """Versioned container with every matrix, normalization bound and seed;
    the round trip is bit-exact for predictions."""
    meta = {"version": MODEL_FORMAT_VERSION, "variant": system.variant,
            "train_folds": list(system.train_folds), "seed": system.seed}
    arrays = {}
    if system.variant == "linear_bff":
        m = system.payload["model"]
        arrays = {"weights": m.weights, "feat_min": m.feat_min,
                  "feat_max": m.feat_max}
        meta["model_seed"] = m.seed
    elif system.variant == "vqmm":
        cb = system.payload["codebook"]
        mt = system.payload["model_t"]
        mtb = system.payload["model_tbar"]
        arrays = {"centroids": cb.centroids,
                  "t_log_initial": mt.log_initial,
                  "t_log_transition": mt.log_transition,
                  "tbar_log_initial": mtb.log_initial,
                  "tbar_log_transition": mtb.log_transition}
        meta["codebook_seed"] = cb.seed
        meta["smoothing"] = mt.smoothing
    elif system.variant == "srcam":
        d = system.payload["dictionary"]
        arrays = {"atoms": d.atoms, "tag_atoms": d.tag_atoms,
                  "feat_min": d.feat_min, "feat_max": d.feat_max,
                  "lipschitz": np.array([d.lipschitz])}
    with open(path, "wb") as fh:
        np.savez(fh, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_system(path) -> TrainedSystem:
    with np.load(path) as rec:
        meta = json.loads(str(rec["meta"]))
        if meta["version"] != MODEL_FORMAT_VERSION:
            raise ValueError("model container version %r not supported"
                             % meta["version"])
        variant = meta["variant"]
        if variant == "linear_bff":
            payload = {"model": LinearBffModel(weights=rec["weights"],
                                               feat_min=rec["feat_min"],
                                               feat_max=rec["feat_max"],
                                               seed=meta["model_seed"])}
        elif variant == "vqmm":
            payload = {"codebook": Codebook(centroids=rec["centroids"],
                                            seed=meta["codebook_seed"]),
                       "model_t": MarkovModel(log_initial=rec["t_log_initial"],
                                              log_transition=rec["t_log_transition"],
                                              smoothing=meta["smoothing"]),
                       "model_tbar": MarkovModel(log_initial=rec["tbar_log_initial"],
                                                 log_transition=rec["tbar_log_transition"],
                                                 smoothing=meta["smoothing"])}
        elif variant == "srcam":
            payload = {"dictionary": SrcDictionary(atoms=rec["atoms"],
                                                   tag_atoms=rec["tag_atoms"],
                                                   feat_min=rec["feat_min"],
                                                   feat_max=rec["feat_max"],
                                                   lipschitz=float(rec["lipschitz"][0]))}
        else:
            raise ValueError("unknown variant %r" % variant)
    return TrainedSystem(variant=variant, payload=payload,
                         train_folds=tuple(meta["train_folds"]),
                         seed=meta["seed"])
