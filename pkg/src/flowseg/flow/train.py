"""Flow training: Adam on shuffled mini-batches with early stopping.

Training minimizes mean NLL. After every epoch the validation NLL is
evaluated; when it stops improving for `patience` epochs the loop ends and
the parameters of the best validation epoch are restored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..feature_store import FeatureDataset
from .model import FlowModel, gradients, init_model


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    n_layers: int = 32
    hidden: int = 64

    def __post_init__(self) -> None:
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience,
               self.n_layers, self.hidden) <= 0:
            raise ValidationError("all training hyperparameters must be positive")
        if not (0.0 < self.validation_fraction <= 0.5):
            raise ValidationError("validation_fraction must lie in (0, 0.5]")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_nll: float
    val_nll: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_text(self) -> str:
        lines = ["epoch,train_nll,val_nll"]
        lines += [f"{r.epoch},{r.train_nll:.6f},{r.val_nll:.6f}" for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingLog":
        records = []
        for line in text.strip().splitlines()[1:]:
            epoch, train_nll, val_nll = line.split(",")
            records.append(EpochRecord(int(epoch), float(train_nll), float(val_nll)))
        return cls(records=records)

    def best_val_curve(self) -> list[float]:
        """Running best (lowest) validation NLL, one entry per epoch."""
        out: list[float] = []
        best = np.inf
        for record in self.records:
            best = min(best, record.val_nll)
            out.append(best)
        return out


class Adam:
    """Adaptive-moment optimizer over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for i, (param, grad) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad**2
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _dataset_vectors(dataset: FeatureDataset | np.ndarray) -> np.ndarray:
    vectors = dataset.vectors if isinstance(dataset, FeatureDataset) else dataset
    return np.asarray(vectors, dtype=np.float64)


def train(
    dataset: FeatureDataset | np.ndarray,
    config: TrainConfig,
    val_vectors: np.ndarray | None = None,
) -> tuple[FlowModel, TrainingLog]:
    """Fit a flow to background vectors.

    When ``val_vectors`` is omitted, a validation split of
    ``config.validation_fraction`` is carved out of the dataset with the
    configured seed. Standardization constants come from the training part
    only. Returns the best-validation model and the per-epoch log.
    """
    data = _dataset_vectors(dataset)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValidationError("training dataset must be a non-empty (n, dim) array")
    dim = data.shape[1]

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    if val_vectors is None:
        order = shuffle_rng.permutation(data.shape[0])
        n_val = max(1, int(round(data.shape[0] * config.validation_fraction)))
        if n_val >= data.shape[0]:
            raise ValidationError("dataset too small for the requested validation fraction")
        val = data[order[:n_val]]
        train_part = data[order[n_val:]]
    else:
        val = np.asarray(val_vectors, dtype=np.float64)
        if val.ndim != 2 or val.shape[1] != dim or val.shape[0] == 0:
            raise ValidationError("validation vectors must be a non-empty (n, dim) array")
        train_part = data

    mean = train_part.mean(axis=0)
    std = np.maximum(train_part.std(axis=0), 1e-6)

    model = init_model(dim, config.n_layers, config.hidden, seed=config.seed)
    model.set_standardization(mean, std)
    optimizer = Adam(model.params(), config.learning_rate)

    log = TrainingLog()
    best_val = np.inf
    best_params = model.copy_params()
    epochs_since_best = 0
    n_train = train_part.shape[0]

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n_train)
        total_loss = 0.0
        for start in range(0, n_train, config.batch_size):
            batch = train_part[order[start : start + config.batch_size]]
            total_loss += model.nll(batch) * batch.shape[0]
            optimizer.step(gradients(batch, model))
        train_nll = total_loss / n_train
        val_nll = model.nll(val)
        log.records.append(EpochRecord(epoch, train_nll, val_nll))

        if val_nll < best_val:
            best_val = val_nll
            best_params = model.copy_params()
            log.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                log.stopped_early = True
                break

    model.set_params(best_params)
    return model, log
