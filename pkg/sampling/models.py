#!/usr/bin/env python3
"""
Target distributions, synthetic data generators and the CSV loader.

A target is a joint log-likelihood L(theta) = log p(X|theta) + log p(theta)
with analytic full-data and minibatch gradients. Concrete models implement
per-row terms over an index selection and the prior; the module-level
functions add the two, rescale minibatches and reject non-finite values.
"""

import csv
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, gammaln, log_expit

from .errors import EmptyBatch, LabelDomainError, NonFiniteValue, ParseError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# Weights of the linear classifier that labels the mixture data
MIXTURE_LR_WEIGHTS = np.array([1.0, -1.0])
MIXTURE_LR_MEANS = np.array([[1.0, -1.0], [-1.0, 1.0]])

Batch = Optional[np.ndarray]


@dataclass(frozen=True)
class Dataset:
    """Observed data: feature rows (n x d) and optional labels."""
    rows: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, np.newaxis]
        if rows.ndim != 2:
            raise ValueError(f"Dataset rows must be a matrix, got shape {rows.shape}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

        if self.labels is not None:
            labels = np.array(self.labels, dtype=float)
            if labels.shape != (rows.shape[0],):
                raise ValueError(
                    f"Expected {rows.shape[0]} labels, got shape {labels.shape}"
                )
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


class TargetModel(ABC):
    """
    Pluggable target density over a parameter vector of length ``dim``.

    Subclasses provide the per-row log-likelihood (summed over an index
    selection, or over every row when the selection is None) and the prior.
    Data-free targets leave ``dataset`` as None and ignore the selection.
    """

    name = "target"
    param_names: Tuple[str, ...] = ()

    def __init__(self, dim: int, dataset: Optional[Dataset] = None,
                 truth: Optional[Sequence[float]] = None):
        self.dim = dim
        self.dataset = dataset
        self.truth = None if truth is None else np.asarray(truth, dtype=float)

    @property
    def n(self) -> int:
        return 0 if self.dataset is None else self.dataset.n

    def reported(self, theta: np.ndarray) -> np.ndarray:
        """Map the sampled parameterization to the one summaries are reported in."""
        return np.asarray(theta, dtype=float)

    def reported_names(self) -> Tuple[str, ...]:
        if self.param_names:
            return self.param_names
        return tuple(f"theta_{i}" for i in range(self.dim))

    @abstractmethod
    def log_lik_rows(self, theta: np.ndarray, idx: Batch) -> float:
        ...

    @abstractmethod
    def grad_log_lik_rows(self, theta: np.ndarray, idx: Batch) -> np.ndarray:
        ...

    @abstractmethod
    def log_prior(self, theta: np.ndarray) -> float:
        ...

    @abstractmethod
    def grad_log_prior(self, theta: np.ndarray) -> np.ndarray:
        ...

    def _rows(self, idx: Batch) -> np.ndarray:
        return self.dataset.rows if idx is None else self.dataset.rows[idx]

    def _labels(self, idx: Batch) -> np.ndarray:
        return self.dataset.labels if idx is None else self.dataset.labels[idx]


class GaussianNormalGammaModel(TargetModel):
    """
    Unknown mean and precision of 1-D Gaussian data, theta = (mu, eta).

    Precision tau = exp(eta). Prior: mu | tau ~ N(mu0, 1/(lambda0 tau)),
    tau ~ Gamma(shape a0, rate b0), plus the +eta Jacobian of the log map.
    """

    name = "gaussian-nw"
    param_names = ("mu", "tau")

    def __init__(self, dataset: Dataset, mu0: float = 0.0, lambda0: float = 1.0,
                 a0: float = 1.0, b0: float = 1.0,
                 truth: Optional[Sequence[float]] = (0.0, 1.0)):
        if dataset.dim != 1:
            raise ValueError("GaussianNormalGammaModel needs scalar observations")
        if lambda0 <= 0 or a0 <= 0 or b0 <= 0:
            raise ValueError("lambda0, a0 and b0 must be positive")
        super().__init__(2, dataset, truth)
        self.mu0 = mu0
        self.lambda0 = lambda0
        self.a0 = a0
        self.b0 = b0

    def reported(self, theta: np.ndarray) -> np.ndarray:
        return np.array([theta[0], np.exp(theta[1])])

    def log_lik_rows(self, theta, idx):
        mu, eta = theta
        x = self._rows(idx)[:, 0]
        resid2 = np.sum((x - mu) ** 2)
        return x.shape[0] * (0.5 * eta - 0.5 * LOG_2PI) - 0.5 * np.exp(eta) * resid2

    def grad_log_lik_rows(self, theta, idx):
        mu, eta = theta
        x = self._rows(idx)[:, 0]
        tau = np.exp(eta)
        diff = x - mu
        return np.array([tau * np.sum(diff),
                         0.5 * x.shape[0] - 0.5 * tau * np.sum(diff ** 2)])

    def log_prior(self, theta):
        mu, eta = theta
        tau = np.exp(eta)
        normal = -0.5 * LOG_2PI + 0.5 * math.log(self.lambda0) + 0.5 * eta \
            - 0.5 * self.lambda0 * tau * (mu - self.mu0) ** 2
        gamma = self.a0 * math.log(self.b0) - gammaln(self.a0) \
            + (self.a0 - 1.0) * eta - self.b0 * tau
        return normal + gamma + eta

    def grad_log_prior(self, theta):
        mu, eta = theta
        tau = np.exp(eta)
        dev = mu - self.mu0
        return np.array([-self.lambda0 * tau * dev,
                         self.a0 + 0.5 - 0.5 * self.lambda0 * tau * dev ** 2 - self.b0 * tau])

    def conjugate_posterior(self) -> Tuple[float, float, float, float]:
        """Normal-Gamma posterior parameters (mu_n, lambda_n, a_n, b_n)."""
        x = self.dataset.rows[:, 0]
        n = x.shape[0]
        xbar = float(np.mean(x))
        lambda_n = self.lambda0 + n
        mu_n = (self.lambda0 * self.mu0 + n * xbar) / lambda_n
        a_n = self.a0 + 0.5 * n
        b_n = self.b0 + 0.5 * float(np.sum((x - xbar) ** 2)) \
            + self.lambda0 * n * (xbar - self.mu0) ** 2 / (2.0 * lambda_n)
        return mu_n, lambda_n, a_n, b_n


class GaussianMeanModel(TargetModel):
    """1-D mean with known noise variance and a conjugate normal prior."""

    name = "gaussian-mean"
    param_names = ("mu",)

    def __init__(self, dataset: Dataset, noise_variance: float = 1.0,
                 prior_mean: float = 0.0, prior_variance: float = 1.0,
                 truth: Optional[Sequence[float]] = (0.0,)):
        if dataset.dim != 1:
            raise ValueError("GaussianMeanModel needs scalar observations")
        super().__init__(1, dataset, truth)
        self.noise_variance = noise_variance
        self.prior_mean = prior_mean
        self.prior_variance = prior_variance

    def log_lik_rows(self, theta, idx):
        x = self._rows(idx)[:, 0]
        return -0.5 * x.shape[0] * (LOG_2PI + math.log(self.noise_variance)) \
            - 0.5 * np.sum((x - theta[0]) ** 2) / self.noise_variance

    def grad_log_lik_rows(self, theta, idx):
        x = self._rows(idx)[:, 0]
        return np.array([np.sum(x - theta[0]) / self.noise_variance])

    def log_prior(self, theta):
        return -0.5 * (LOG_2PI + math.log(self.prior_variance)) \
            - 0.5 * (theta[0] - self.prior_mean) ** 2 / self.prior_variance

    def grad_log_prior(self, theta):
        return np.array([-(theta[0] - self.prior_mean) / self.prior_variance])

    def posterior_variance(self) -> float:
        return 1.0 / (self.n / self.noise_variance + 1.0 / self.prior_variance)

    def posterior_mean(self) -> float:
        total = float(np.sum(self.dataset.rows[:, 0]))
        return self.posterior_variance() * (
            total / self.noise_variance + self.prior_mean / self.prior_variance
        )


class BayesLogisticModel(TargetModel):
    """Logistic regression without intercept, N(0, prior_variance * I) prior."""

    name = "bayes-lr"

    def __init__(self, dataset: Dataset, prior_variance: float = 10.0,
                 truth: Optional[Sequence[float]] = None):
        if dataset.labels is None:
            raise ValueError("BayesLogisticModel needs labelled data")
        if prior_variance <= 0:
            raise ValueError("prior_variance must be positive")
        super().__init__(dataset.dim, dataset, truth)
        self.prior_variance = prior_variance
        self.param_names = tuple(f"w{i}" for i in range(self.dim))

    def log_lik_rows(self, theta, idx):
        z = self._rows(idx) @ theta
        y = self._labels(idx)
        return np.sum(y * log_expit(z) + (1.0 - y) * log_expit(-z))

    def grad_log_lik_rows(self, theta, idx):
        x = self._rows(idx)
        return x.T @ (self._labels(idx) - expit(x @ theta))

    def log_prior(self, theta):
        return -0.5 * float(theta @ theta) / self.prior_variance \
            - 0.5 * self.dim * (LOG_2PI + math.log(self.prior_variance))

    def grad_log_prior(self, theta):
        return -theta / self.prior_variance


class GaussianTarget(TargetModel):
    """Data-free N(mean, precision^-1) target, up to its normalizing constant."""

    name = "gaussian-target"

    def __init__(self, mean: Sequence[float], precision: Sequence):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        super().__init__(mean.shape[0], None, mean)
        self.mean = mean
        self.precision = np.atleast_2d(np.asarray(precision, dtype=float))

    def log_lik_rows(self, theta, idx):
        dev = theta - self.mean
        return -0.5 * float(dev @ self.precision @ dev)

    def grad_log_lik_rows(self, theta, idx):
        return -self.precision @ (theta - self.mean)

    def log_prior(self, theta):
        return 0.0

    def grad_log_prior(self, theta):
        return np.zeros(self.dim)


class LinearPotentialTarget(TargetModel):
    """L(theta) = g . theta; a zero gradient gives the free particle."""

    name = "linear-potential"

    def __init__(self, gradient: Sequence[float]):
        gradient = np.atleast_1d(np.asarray(gradient, dtype=float))
        super().__init__(gradient.shape[0], None)
        self.gradient = gradient

    def log_lik_rows(self, theta, idx):
        return float(self.gradient @ theta)

    def grad_log_lik_rows(self, theta, idx):
        return self.gradient.copy()

    def log_prior(self, theta):
        return 0.0

    def grad_log_prior(self, theta):
        return np.zeros(self.dim)


class MinibatchSampler:
    """
    Draws minibatch index sets uniformly without replacement.

    ``draw`` returns None (meaning the full data set) when no batch size is
    configured, the batch would cover every row, or the model has no data;
    in that case the random stream is left untouched.
    """

    def __init__(self, n: int, batch_size: Optional[int] = None):
        if batch_size is not None and batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        self.n = n
        self.batch_size = batch_size

    @property
    def full(self) -> bool:
        return self.n == 0 or self.batch_size is None or self.batch_size >= self.n

    def draw(self, rng: np.random.Generator) -> Batch:
        if self.full:
            return None
        return rng.choice(self.n, size=self.batch_size, replace=False)


def _check_theta(model: TargetModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dim,):
        raise ValueError(f"theta has shape {theta.shape}, model expects ({model.dim},)")
    return theta


def _finite_scalar(value, what: str, theta: np.ndarray) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteValue(f"{what} is not finite", details={"theta": theta.tolist()})
    return value


def _finite_vector(value, what: str, theta: np.ndarray) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"{what} is not finite", details={"theta": theta.tolist()})
    return value


def _check_batch(model: TargetModel, batch) -> Tuple[np.ndarray, float]:
    batch = np.asarray(batch, dtype=int)
    if batch.size == 0:
        raise EmptyBatch("Minibatch is empty")
    if model.n == 0:
        raise ValueError(f"Model '{model.name}' has no data to subsample")
    if batch.min() < 0 or batch.max() >= model.n:
        raise ValueError(f"Minibatch indices must lie in [0, {model.n})")
    return batch, model.n / batch.size


def log_lik(model: TargetModel, theta) -> float:
    """Joint log-likelihood log p(X|theta) + log p(theta) over all data."""
    theta = _check_theta(model, theta)
    with np.errstate(all="ignore"):
        value = model.log_lik_rows(theta, None) + model.log_prior(theta)
    return _finite_scalar(value, "log-likelihood", theta)


def grad_log_lik(model: TargetModel, theta) -> np.ndarray:
    """Exact gradient of log_lik."""
    theta = _check_theta(model, theta)
    with np.errstate(all="ignore"):
        value = model.grad_log_lik_rows(theta, None) + model.grad_log_prior(theta)
    return _finite_vector(value, "log-likelihood gradient", theta)


def stoch_log_lik(model: TargetModel, theta, batch: Batch) -> float:
    """(n/|batch|) * sum of per-row terms over the batch, plus the log prior."""
    if batch is None:
        return log_lik(model, theta)
    theta = _check_theta(model, theta)
    batch, scale = _check_batch(model, batch)
    with np.errstate(all="ignore"):
        value = scale * model.log_lik_rows(theta, batch) + model.log_prior(theta)
    return _finite_scalar(value, "minibatch log-likelihood", theta)


def stoch_grad_log_lik(model: TargetModel, theta, batch: Batch) -> np.ndarray:
    """
    Unbiased minibatch gradient of the joint log-likelihood.

    A batch of None, or one listing every index, gives the full gradient.

    Raises:
        EmptyBatch: if the batch has no indices
    """
    if batch is None:
        return grad_log_lik(model, theta)
    theta = _check_theta(model, theta)
    batch, scale = _check_batch(model, batch)
    with np.errstate(all="ignore"):
        value = scale * model.grad_log_lik_rows(theta, batch) + model.grad_log_prior(theta)
    return _finite_vector(value, "minibatch gradient", theta)


def generate_gaussian_data(n: int, seed: int) -> Dataset:
    """n i.i.d. N(0, 1) scalars; a pure function of (n, seed)."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    return Dataset(rng.standard_normal(n)[:, np.newaxis])


def generate_mixture_lr_data(n: int, seed: int, label_rule: str = "threshold") -> Dataset:
    """
    Two-component Gaussian mixture labelled by the classifier w = [1, -1].

    Components N([1,-1], I) and N([-1,1], I) are picked with probability 1/2.
    With label_rule 'threshold', y = 1 iff x . w > 0 (ties give 0); with
    'logistic', y ~ Bernoulli(sigmoid(x . w)).
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    component = (rng.random(n) < 0.5).astype(int)
    rows = MIXTURE_LR_MEANS[component] + rng.standard_normal((n, 2))
    labels = label_points(rows, label_rule, rng)
    return Dataset(rows, labels)


def label_points(rows: np.ndarray, label_rule: str = "threshold",
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    score = np.asarray(rows, dtype=float) @ MIXTURE_LR_WEIGHTS
    if label_rule == "threshold":
        return (score > 0.0).astype(float)
    if label_rule == "logistic":
        if rng is None:
            raise ValueError("logistic labels need a random stream")
        return (rng.random(score.shape[0]) < expit(score)).astype(float)
    raise ValueError(f"Unknown label rule: {label_rule}")


def _is_numeric_row(row) -> bool:
    try:
        for cell in row:
            float(cell)
    except ValueError:
        return False
    return True


def load_csv_dataset(path: Union[str, Path], label_column: int,
                     standardize: bool = False) -> Dataset:
    """
    Load a rectangular numeric CSV as features plus binary labels.

    A first row that does not parse as numbers is taken as a header. Labels
    in {0, 1} are kept, labels in {-1, 1} are mapped to {0, 1}.

    Raises:
        ParseError: with the 1-based row and 0-based column of the bad cell
        LabelDomainError: if the label column is not binary
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        raw_rows = [row for row in csv.reader(f) if row and any(cell.strip() for cell in row)]

    if not raw_rows:
        raise ParseError(f"CSV file has no data rows: {path}", row=0, column=0)

    first_line = 1
    if not _is_numeric_row(raw_rows[0]):
        logger.debug(f"Treating first row of {path} as header")
        raw_rows = raw_rows[1:]
        first_line = 2
    if not raw_rows:
        raise ParseError(f"CSV file has a header but no data rows: {path}", row=1, column=0)

    width = len(raw_rows[0])
    if not -width <= label_column < width:
        raise ValueError(f"label_column {label_column} out of range for {width} columns")
    label_column %= width

    values = np.empty((len(raw_rows), width))
    for i, row in enumerate(raw_rows):
        line = first_line + i
        if len(row) != width:
            raise ParseError(
                f"Row {line} has {len(row)} columns, expected {width}",
                row=line, column=min(len(row), width)
            )
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError as e:
                raise ParseError(
                    f"Non-numeric value {cell!r} at row {line}, column {j}",
                    row=line, column=j, original_error=e
                )

    labels = values[:, label_column]
    features = np.delete(values, label_column, axis=1)

    domain = set(np.unique(labels).tolist())
    if domain <= {0.0, 1.0}:
        pass
    elif domain <= {-1.0, 1.0}:
        labels = (labels > 0).astype(float)
    else:
        raise LabelDomainError(
            f"Labels in {path} are not binary",
            details={"values": sorted(domain)[:10]}
        )

    if standardize:
        std = features.std(axis=0)
        std[std == 0.0] = 1.0
        features = (features - features.mean(axis=0)) / std

    logger.info(f"Loaded {features.shape[0]} rows x {features.shape[1]} features from {path}")
    return Dataset(features, labels)
