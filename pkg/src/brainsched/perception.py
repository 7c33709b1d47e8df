"""Mixture-model learning of per-user delay perception.

A joint dataset stacks each subject's feature vector with the smallest
delay that subject can notice. A Gaussian mixture fitted by EM exposes
the population's perception modes; a generative classifier then maps a
new user's features to a mode, and a confidence interval on that mode's
delay column yields a usable deadline with a stated miss probability.

Mode ids are 1-based everywhere in this module's public surface.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chi2 import chi_square_quantile

_LOG_2PI = math.log(2.0 * math.pi)


class DataError(ValueError):
    """Raised for malformed datasets or model inputs."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointDataset:
    """Rows of (features, perceived-delay) vectors, delay in seconds last."""

    rows: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if rows.ndim != 2:
            raise DataError(f"dataset must be 2-D, got shape {rows.shape}")
        n, dim = rows.shape
        if n < 2:
            raise DataError(f"dataset needs at least 2 rows, got {n}")
        if dim < 2:
            raise DataError("dataset needs at least one feature column plus the delay column")
        if len(self.feature_names) != dim:
            raise DataError(
                f"expected {dim} column names, got {len(self.feature_names)}"
            )
        if not np.all(np.isfinite(rows)):
            raise DataError("dataset contains non-finite values")
        if np.any(rows[:, -1] <= 0.0):
            raise DataError("delay-perception column must be strictly positive")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def n_features(self) -> int:
        return self.dim - 1

    @property
    def features(self) -> np.ndarray:
        return self.rows[:, :-1]

    @property
    def delays(self) -> np.ndarray:
        return self.rows[:, -1]

    @classmethod
    def from_arrays(cls, features, delays, feature_names=None) -> "JointDataset":
        features = np.asarray(features, dtype=float)
        delays = np.asarray(delays, dtype=float).reshape(-1, 1)
        rows = np.hstack([features, delays])
        if feature_names is None:
            feature_names = tuple(f"f{i + 1}" for i in range(features.shape[1])) + (
                "beta_seconds",
            )
        return cls(rows=rows, feature_names=feature_names)


def load_dataset_csv(path) -> JointDataset:
    """Read a dataset CSV: header row, one subject per row, last column `beta_seconds`."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[-1] != "beta_seconds":
            raise DataError(f"{path}: last column must be named 'beta_seconds'")
        try:
            rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric cell ({exc})") from None
    if rows.size == 0:
        raise DataError(f"{path}: no data rows")
    return JointDataset(rows=rows, feature_names=tuple(header))


def save_dataset_csv(data: JointDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.feature_names)
        for row in data.rows:
            writer.writerow([f"{v:.9g}" for v in row])


@dataclass(frozen=True)
class GmmModel:
    """Gaussian mixture over the joint (features, delay) space."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    fit_log_likelihood: float
    log_likelihood_history: tuple[float, ...] = ()

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covariances, dtype=float)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        L = weights.shape[0]
        if means.shape[0] != L or covs.shape[0] != L:
            raise DataError("weights, means and covariances disagree on mode count")
        dim = means.shape[1]
        if covs.shape[1:] != (dim, dim):
            raise DataError("covariance blocks must be square and match the mean dimension")
        if np.any(weights <= 0.0) or abs(weights.sum() - 1.0) > 1e-9:
            raise DataError("mixture weights must be positive and sum to 1")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
            raise DataError("model parameters must be finite")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2), atol=1e-10):
            raise DataError("covariance matrices must be symmetric")

    @property
    def n_modes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "n_modes": int(self.n_modes),
            "dim": int(self.dim),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": [c.flatten().tolist() for c in self.covariances],
            "fit_log_likelihood": float(self.fit_log_likelihood),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "GmmModel":
        dim = int(obj["dim"])
        covs = np.array(
            [np.asarray(c, dtype=float).reshape(dim, dim) for c in obj["covariances"]]
        )
        return cls(
            weights=np.asarray(obj["weights"], dtype=float),
            means=np.asarray(obj["means"], dtype=float),
            covariances=covs,
            fit_log_likelihood=float(obj["fit_log_likelihood"]),
        )


def save_model_json(model: GmmModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_json_dict(), indent=2, sort_keys=True))


def load_model_json(path) -> GmmModel:
    try:
        obj = json.loads(Path(path).read_text())
        return GmmModel.from_json_dict(obj)
    except (KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from None


@dataclass(frozen=True)
class ModeClassifier:
    """Feature-marginal Gaussians per mode; classifies by posterior mode probability."""

    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "priors", np.asarray(self.priors, dtype=float))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "covariances", np.asarray(self.covariances, dtype=float))
        if abs(self.priors.sum() - 1.0) > 1e-9:
            raise DataError("classifier priors must sum to 1")

    @property
    def n_modes(self) -> int:
        return self.priors.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class PerceptionProfile:
    """One user's learned mode and the deadline it supports."""

    mode_id: int
    d_min: float
    epsilon_prime: float
    mu_d: float
    var_d: float
    clamped: bool = False


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------


def _chol_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor, retrying with a growing diagonal jitter if needed."""
    jitter = 0.0
    scale = float(np.mean(np.diag(cov)))
    if scale <= 0.0 or not np.isfinite(scale):
        scale = 1.0
    for _ in range(8):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12 * scale)
    raise DataError("covariance matrix is not positive definite after flooring")


def _log_gaussian(rows: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of N(mean, cov) at each row (rows: (n, d))."""
    chol = _chol_with_jitter(cov)
    diff = rows - mean
    z = np.linalg.solve(chol, diff.T)
    # Clip keeps the Mahalanobis term finite for points absurdly far from a
    # degenerate mode; their responsibility underflows to zero either way.
    z = np.clip(z, -1e100, 1e100)
    maha = np.sum(z * z, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    d = rows.shape[1]
    return -0.5 * (maha + log_det + d * _LOG_2PI)


def _log_responsibilities(model: GmmModel, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row unnormalized log joint and the normalized responsibilities."""
    n = rows.shape[0]
    log_joint = np.empty((n, model.n_modes))
    for k in range(model.n_modes):
        log_joint[:, k] = math.log(model.weights[k]) + _log_gaussian(
            rows, model.means[k], model.covariances[k]
        )
    peak = log_joint.max(axis=1, keepdims=True)
    shifted = np.exp(log_joint - peak)
    resp = shifted / shifted.sum(axis=1, keepdims=True)
    return log_joint, resp


# ---------------------------------------------------------------------------
# EM fitting
# ---------------------------------------------------------------------------


def _standardize(rows: np.ndarray) -> np.ndarray:
    mu = rows.mean(axis=0)
    sd = rows.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    return (rows - mu) / sd


def _kmeanspp_centers(std_rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, later ones distance-weighted."""
    n = std_rows.shape[0]
    centers = [std_rows[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((std_rows - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(std_rows[rng.integers(n)])
            continue
        probs = d2 / total
        centers.append(std_rows[rng.choice(n, p=probs)])
    return np.array(centers)


def _initial_parameters(
    rows: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    std_rows = _standardize(rows)
    centers = _kmeanspp_centers(std_rows, k, rng)
    d2 = np.array([np.sum((std_rows - c) ** 2, axis=1) for c in centers])
    labels = np.argmin(d2, axis=0)
    dim = rows.shape[1]
    global_cov = np.cov(rows, rowvar=False, bias=True).reshape(dim, dim)
    global_cov += 1e-8 * np.mean(np.diag(global_cov)) * np.eye(dim) + 1e-12 * np.eye(dim)
    weights = np.empty(k)
    means = np.empty((k, dim))
    covs = np.empty((k, dim, dim))
    for j in range(k):
        members = rows[labels == j]
        if members.shape[0] == 0:
            weights[j] = 1.0
            means[j] = rows[rng.integers(rows.shape[0])]
            covs[j] = global_cov
            continue
        weights[j] = members.shape[0]
        means[j] = members.mean(axis=0)
        if members.shape[0] > dim:
            covs[j] = np.cov(members, rowvar=False, bias=True).reshape(dim, dim)
            covs[j] += 1e-6 * np.mean(np.diag(global_cov)) * np.eye(dim)
        else:
            covs[j] = global_cov
    weights /= weights.sum()
    return weights, means, covs


def _em_single_run(
    rows: np.ndarray,
    k: int,
    rng: np.random.Generator,
    tol: float,
    max_iter: int,
    reg_scale: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]:
    n, dim = rows.shape
    weights, means, covs = _initial_parameters(rows, k, rng)
    history: list[float] = []
    for _ in range(max_iter):
        log_joint = np.empty((n, k))
        for j in range(k):
            log_joint[:, j] = math.log(max(weights[j], 1e-300)) + _log_gaussian(
                rows, means[j], covs[j]
            )
        peak = log_joint.max(axis=1, keepdims=True)
        shifted = np.exp(log_joint - peak)
        norm = shifted.sum(axis=1, keepdims=True)
        ll = float(np.sum(np.log(norm) + peak))

        if history and ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            # Regularization can nudge the likelihood down at convergence;
            # keep the previous (better) parameters.
            break
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            break

        resp = shifted / norm
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        new_weights = nk / n
        new_means = (resp.T @ rows) / nk[:, None]
        new_covs = np.empty_like(covs)
        for j in range(k):
            diff = rows - new_means[j]
            cov = (resp[:, j, None] * diff).T @ diff / nk[j]
            cov = 0.5 * (cov + cov.T)
            ridge = reg_scale * max(float(np.mean(np.diag(cov))), 1e-300)
            new_covs[j] = cov + ridge * np.eye(dim)
        weights, means, covs = new_weights, new_means, new_covs
    return weights, means, covs, history


def em_fit(
    data: JointDataset,
    n_modes: int,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 200,
    n_restarts: int = 5,
    reg_scale: float = 1e-8,
) -> GmmModel:
    """Fit a GMM by EM with k-means++ seeding and seeded restarts.

    Parameters
    ----------
    data : JointDataset
        Joint (features, delay) rows.
    n_modes : int
        Number of mixture modes to fit.
    seed : int
        Seeds initialization; the whole fit is deterministic given it.
    tol : float
        Stop when the log-likelihood improves by less than this.
    max_iter : int
        Per-restart EM iteration cap.
    n_restarts : int
        Independent seeded restarts; the best final likelihood wins.

    Returns
    -------
    GmmModel
        Fitted model; `log_likelihood_history` is the winning restart's
        per-iteration log-likelihood trace (non-decreasing).
    """
    if n_modes < 1:
        raise DataError(f"mode count must be >= 1, got {n_modes}")
    if data.n < n_modes:
        raise DataError(
            f"insufficient data: {data.n} rows cannot support {n_modes} modes"
        )
    if tol <= 0.0:
        raise DataError(f"tol must be positive, got {tol}")

    best = None
    for restart in range(max(1, n_restarts)):
        rng = np.random.default_rng([seed, restart])
        weights, means, covs, history = _em_single_run(
            data.rows, n_modes, rng, tol, max_iter, reg_scale
        )
        if not history:
            continue
        if best is None or history[-1] > best[3][-1]:
            best = (weights, means, covs, history)
    if best is None:
        raise DataError("EM failed to complete a single iteration")
    weights, means, covs, history = best
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        fit_log_likelihood=history[-1],
        log_likelihood_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# Responsibilities and clustering
# ---------------------------------------------------------------------------


def responsibility(model: GmmModel, w) -> np.ndarray:
    """Posterior mode probabilities for one joint vector (weights in both
    numerator and denominator)."""
    w = np.asarray(w, dtype=float).reshape(1, -1)
    if w.shape[1] != model.dim:
        raise DataError(f"expected a vector of length {model.dim}, got {w.shape[1]}")
    _, resp = _log_responsibilities(model, w)
    return resp[0]


def assign_cluster(model: GmmModel, w) -> int:
    """Most probable mode for `w` (1-based); ties go to the lowest mode id."""
    return int(np.argmax(responsibility(model, w))) + 1


def label_rows(model: GmmModel, data: JointDataset) -> np.ndarray:
    """Vector of 1-based mode labels for every dataset row."""
    _, resp = _log_responsibilities(model, data.rows)
    return np.argmax(resp, axis=1) + 1


def within_cluster_scatter(data: JointDataset, labels, standardize: bool = True) -> float:
    """Half the sum of pairwise squared distances inside each cluster.

    Uses the identity  sum_{i,i' in C} ||x_i - x_i'||^2 = 2 n_C sum_i ||x_i - mean_C||^2
    so the ordered-pair definition is evaluated without forming all pairs.
    Columns are standardized to unit variance first unless disabled.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != data.n:
        raise DataError(f"expected {data.n} labels, got {labels.shape[0]}")
    if labels.size and (np.any(labels < 1) or not np.issubdtype(labels.dtype, np.integer)):
        raise DataError("labels must be integers >= 1")
    rows = _standardize(data.rows) if standardize else data.rows
    total = 0.0
    for value in np.unique(labels):
        members = rows[labels == value]
        center = members.mean(axis=0)
        total += members.shape[0] * float(np.sum((members - center) ** 2))
    return total


def mode_count_scan(
    data: JointDataset,
    k_min: int,
    k_max: int,
    seed: int = 0,
    standardize: bool = True,
    **em_kwargs,
) -> list[tuple[int, float]]:
    """Fit each candidate mode count and return (k, within-cluster scatter) pairs."""
    if not 1 <= k_min <= k_max <= data.n:
        raise DataError(
            f"mode-count range [{k_min}, {k_max}] invalid for {data.n} rows"
        )
    curve = []
    for k in range(k_min, k_max + 1):
        model = em_fit(data, k, seed=seed, **em_kwargs)
        labels = label_rows(model, data)
        curve.append((k, within_cluster_scatter(data, labels, standardize=standardize)))
    return curve


def select_mode_count(
    data: JointDataset,
    k_min: int,
    k_max: int,
    seed: int = 0,
    elbow_ratio: float = 0.1,
    **em_kwargs,
) -> int:
    """Elbow rule on the scatter curve: smallest k whose relative scatter
    drop to k+1 falls below `elbow_ratio`; k_max if the curve never flattens."""
    curve = mode_count_scan(data, k_min, k_max, seed=seed, **em_kwargs)
    for (k, w_k), (_, w_next) in zip(curve, curve[1:]):
        if w_k <= 0.0:
            return k
        if (w_k - w_next) / w_k < elbow_ratio:
            return k
    return k_max


# ---------------------------------------------------------------------------
# Classifier over features only
# ---------------------------------------------------------------------------


def train_classifier(model: GmmModel) -> ModeClassifier:
    """Marginalize each mode onto the feature coordinates (drop the delay
    row/column) to obtain the posterior-mode classifier."""
    p = model.dim - 1
    means = model.means[:, :p]
    covs = model.covariances[:, :p, :p]
    for k in range(model.n_modes):
        _chol_with_jitter(covs[k])  # raises DataError if not positive definite
    return ModeClassifier(priors=model.weights.copy(), means=means, covariances=covs)


def classify(classifier: ModeClassifier, x) -> int:
    """Most probable mode (1-based) given features only; ties to lowest id."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != classifier.n_features:
        raise DataError(
            f"expected {classifier.n_features} features, got {x.shape[1]}"
        )
    scores = np.array(
        [
            math.log(classifier.priors[k])
            + _log_gaussian(x, classifier.means[k], classifier.covariances[k])[0]
            for k in range(classifier.n_modes)
        ]
    )
    return int(np.argmax(scores)) + 1


# ---------------------------------------------------------------------------
# Confidence bounds and effective delay
# ---------------------------------------------------------------------------


def _check_mode_id(model: GmmModel, mode_id: int) -> int:
    if not 1 <= mode_id <= model.n_modes:
        raise DataError(f"mode id {mode_id} outside 1..{model.n_modes}")
    return mode_id - 1


def perception_bound(model: GmmModel, mode_id: int, gamma: float) -> float:
    """Half-width (seconds) of the level-`gamma` confidence interval on the
    delay column of mode `mode_id`: sqrt(Q_dim(gamma) * var_delay).

    Only the delay-column diagonal entry of the covariance enters; no
    diagonality is assumed.
    """
    k = _check_mode_id(model, mode_id)
    var_d = float(model.covariances[k][-1, -1])
    return math.sqrt(chi_square_quantile(model.dim, gamma) * var_d)


def effective_delay(
    model: GmmModel,
    mode_id: int,
    epsilon_prime: float,
    d_min_floor: float = 1e-3,
) -> PerceptionProfile:
    """Largest deadline the mode supports with miss probability <= epsilon_prime.

    Subtracts the (1 - 2*epsilon_prime)-level half-width from the mode's mean
    perceived delay. Values that would go nonpositive are clamped at
    `d_min_floor` and flagged.
    """
    if not 0.0 < epsilon_prime < 0.5:
        raise DataError(f"epsilon_prime must lie in (0, 0.5), got {epsilon_prime}")
    k = _check_mode_id(model, mode_id)
    mu_d = float(model.means[k][-1])
    var_d = float(model.covariances[k][-1, -1])
    half_width = perception_bound(model, mode_id, 1.0 - 2.0 * epsilon_prime)
    d_min = mu_d - half_width
    clamped = d_min < d_min_floor
    if clamped:
        d_min = d_min_floor
    return PerceptionProfile(
        mode_id=mode_id,
        d_min=d_min,
        epsilon_prime=epsilon_prime,
        mu_d=mu_d,
        var_d=var_d,
        clamped=clamped,
    )
