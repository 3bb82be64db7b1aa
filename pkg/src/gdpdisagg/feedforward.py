# ==============================================================================
# gdpdisagg.feedforward: Feedforward Network Regressor
#
# A fully connected network h⁽ˡ⁾ = σ(W⁽ˡ⁾h⁽ˡ⁻¹⁾ + b⁽ˡ⁾) with one or two hidden
# layers and a linear output unit, trained with full-batch Adam and early
# stopping on the last fraction of the training rows.
#
# Architecture search draws up to 100 candidates from a seeded, scrambled
# Halton sequence over (layers, units, activation, dropout). Every trial runs
# inside its own forked torch RNG, so results depend only on (data, spec).
# Weight initialization and dropout masks draw from torch's process-wide CPU
# generator, so trials are serialized behind `_TORCH_RNG_LOCK` even when the
# evaluation runs on a thread pool.
# Training happens in torch; the stored weights are replayed with a numpy
# forward pass, so prediction does not need torch at all.
# ==============================================================================

import logging
import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
from scipy.special import expit
from scipy.stats import qmc

from .errors import DataError, TrainingDivergedError
from .models import FeedForwardSettings, FitResult, RegressorKind, RegressorSpec, fingerprint
from .series import Frequency, Panel, Series

logger = logging.getLogger(__name__)

_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805

# Guards the global torch generator between fork_rng and the end of training.
_TORCH_RNG_LOCK = threading.Lock()

_TORCH_ACTIVATIONS: dict[str, type[nn.Module]] = {
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
    "elu": nn.ELU,
    "selu": nn.SELU,
    "swish": nn.SiLU,
}


def _numpy_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "elu":
        return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "selu":
        return _SELU_SCALE * np.where(z > 0.0, z, _SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    if name == "swish":
        return z * expit(z)
    raise DataError(f"Unknown activation '{name}'.")


@dataclass(frozen=True)
class Architecture:
    units: tuple[int, ...]
    activation: str
    dropout: float

    def as_dict(self) -> dict[str, object]:
        return {"units": list(self.units), "activation": self.activation, "dropout": self.dropout}


@dataclass(frozen=True, eq=False)
class TrialOutcome:
    trial: int
    architecture: Architecture
    validation_mse: float
    epochs: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def candidate_architectures(settings: FeedForwardSettings, seed: int) -> list[Architecture]:
    """Maps seeded Halton points onto the bounded architecture space."""
    for name in settings.activations:
        if name not in _TORCH_ACTIVATIONS:
            raise DataError(f"Unknown activation '{name}'.")
    if settings.min_units > settings.max_units:
        raise DataError("min_units must not exceed max_units.")
    points = qmc.Halton(d=5, scramble=True, seed=seed).random(settings.trials)
    log_lo, log_hi = math.log(settings.min_units), math.log(settings.max_units)
    out: list[Architecture] = []
    for u in points:
        layers = 1 + min(int(u[0] * settings.max_layers), settings.max_layers - 1)
        sizes = tuple(
            int(round(math.exp(log_lo + v * (log_hi - log_lo)))) for v in u[1 : 1 + layers]
        )
        activation = settings.activations[min(int(u[3] * len(settings.activations)), len(settings.activations) - 1)]
        out.append(Architecture(sizes, activation, float(u[4] * settings.max_dropout)))
    return out


def _build(n_inputs: int, arch: Architecture) -> nn.Sequential:
    layers: list[nn.Module] = []
    width = n_inputs
    for units in arch.units:
        layers.append(nn.Linear(width, units))
        layers.append(_TORCH_ACTIVATIONS[arch.activation]())
        if arch.dropout > 0.0:
            layers.append(nn.Dropout(arch.dropout))
        width = units
    layers.append(nn.Linear(width, 1))
    return nn.Sequential(*layers).double()


def _linear_layers(model: nn.Sequential) -> list[nn.Linear]:
    return [m for m in model if isinstance(m, nn.Linear)]


def train_trial(
    trial: int,
    arch: Architecture,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    settings: FeedForwardSettings,
    seed: int,
) -> Optional[TrialOutcome]:
    """
    Trains one architecture on standardized data.

    Returns None when the loss becomes non-finite; the caller logs and
    discards the trial. Validation MSE is in standardized target units.
    """
    with _TORCH_RNG_LOCK, torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = _build(x_train.shape[1], arch)
        optimizer = torch.optim.Adam(
            model.parameters(),
            lr=settings.learning_rate,
            betas=settings.betas,
            eps=settings.eps,
        )
        xt = torch.from_numpy(np.ascontiguousarray(x_train))
        yt = torch.from_numpy(np.ascontiguousarray(y_train)).reshape(-1, 1)
        xv = torch.from_numpy(np.ascontiguousarray(x_val))
        yv = torch.from_numpy(np.ascontiguousarray(y_val)).reshape(-1, 1)
        loss_fn = nn.MSELoss()

        best_loss = math.inf
        best_state: Optional[dict[str, torch.Tensor]] = None
        stale = 0
        epochs = 0
        for epoch in range(1, settings.max_epochs + 1):
            epochs = epoch
            model.train()
            optimizer.zero_grad()
            loss = loss_fn(model(xt), yt)
            if not torch.isfinite(loss):
                return None
            loss.backward()
            optimizer.step()

            model.eval()
            with torch.no_grad():
                val_loss = float(loss_fn(model(xv), yv))
            if not math.isfinite(val_loss):
                return None
            if val_loss < best_loss:
                best_loss = val_loss
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= settings.patience:
                    break

        if best_state is None:
            return None
        model.load_state_dict(best_state)
        linear = _linear_layers(model)
        return TrialOutcome(
            trial=trial,
            architecture=arch,
            validation_mse=best_loss,
            epochs=epochs,
            weights=[m.weight.detach().numpy().copy() for m in linear],
            biases=[m.bias.detach().numpy().copy() for m in linear],
        )


def _moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    return mean, np.where(scale > 0.0, scale, 1.0)


def validation_split(n_rows: int, fraction: float) -> int:
    """Number of training rows; the remaining tail is the validation slice."""
    n_val = max(1, int(round(fraction * n_rows)))
    n_train = n_rows - n_val
    if n_train < 1:
        raise DataError(f"Too few rows ({n_rows}) for a training/validation split.")
    return n_train


def fit_feedforward(
    x: Panel,
    y: Series,
    trials: Optional[int] = None,
    seed: Optional[int] = None,
    spec: Optional[RegressorSpec] = None,
) -> FitResult:
    """
    Searches architectures and returns the best trial by validation MSE.

    Ties go to fewer hidden units, then the earlier trial.

    Raises:
        TrainingDivergedError: Every trial produced a non-finite loss.
    """
    spec = spec or RegressorSpec(kind=RegressorKind.FEEDFORWARD)
    settings = spec.feedforward
    if trials is not None:
        settings = settings.model_copy(update={"trials": trials})
    if seed is not None:
        spec = spec.model_copy(update={"seed": seed})
    return _fit(x, y, spec, settings, candidate_architectures(settings, spec.seed))


def _fit(
    x: Panel,
    y: Series,
    spec: RegressorSpec,
    settings: FeedForwardSettings,
    architectures: list[Architecture],
) -> FitResult:
    if len(x) != len(y) or not np.array_equal(x.index, y.index):
        raise DataError("Design and target must share the same index.")
    if not np.all(np.isfinite(x.data)) or not np.all(np.isfinite(y.values)):
        raise DataError("Feedforward inputs contain missing values.")
    n_train = validation_split(len(y), settings.validation_fraction)

    x_mean, x_scale = _moments(x.data[:n_train])
    y_mean = float(y.values[:n_train].mean())
    y_scale = float(y.values[:n_train].std()) or 1.0
    xs = (x.data - x_mean) / x_scale
    ys = (y.values - y_mean) / y_scale

    outcomes: list[TrialOutcome] = []
    for trial, arch in enumerate(architectures):
        outcome = train_trial(
            trial, arch, xs[:n_train], ys[:n_train], xs[n_train:], ys[n_train:], settings, spec.seed + trial
        )
        if outcome is None:
            logger.warning(f"Feedforward trial {trial} ({arch}) diverged and was discarded.")
            continue
        logger.debug(
            f"Trial {trial}: {arch.units} {arch.activation} dropout={arch.dropout:.3f} "
            f"val_mse={outcome.validation_mse:.4e} after {outcome.epochs} epochs"
        )
        outcomes.append(outcome)
    if not outcomes:
        raise TrainingDivergedError(f"All {len(architectures)} feedforward trials diverged.")

    best = min(outcomes, key=lambda o: (o.validation_mse, sum(o.architecture.units), o.trial))
    val_mse = best.validation_mse * y_scale**2
    logger.info(
        f"Feedforward search kept trial {best.trial} of {len(architectures)}: "
        f"{best.architecture.units} {best.architecture.activation} (val MSE {val_mse:.4e})"
    )
    return FitResult(
        kind=RegressorKind.FEEDFORWARD,
        columns=x.columns,
        hyperparameters={**best.architecture.as_dict(), "trial": best.trial},
        state={
            "activation": best.architecture.activation,
            "weights": [w.tolist() for w in best.weights],
            "biases": [b.tolist() for b in best.biases],
            "x_mean": x_mean.tolist(),
            "x_scale": x_scale.tolist(),
            "y_mean": y_mean,
            "y_scale": y_scale,
            "validation_mse": val_mse,
            "epochs": best.epochs,
        },
        seed=spec.seed,
        fingerprint=fingerprint(x, y),
        design_frequency=x.frequency,
    )


def search(x: Panel, y: Series, spec: RegressorSpec) -> dict[str, object]:
    fit = fit_feedforward(x, y, spec=spec)
    return {k: fit.hyperparameters[k] for k in ("units", "activation", "dropout")}


def fit_fixed(
    x: Panel, y: Series, spec: RegressorSpec, hyperparameters: dict[str, object]
) -> FitResult:
    """Retrains a single, already chosen architecture."""
    units = hyperparameters["units"]
    dropout = hyperparameters["dropout"]
    if not isinstance(units, (list, tuple)) or not isinstance(dropout, (int, float)):
        raise DataError(f"Malformed feedforward hyperparameters: {hyperparameters}.")
    arch = Architecture(tuple(int(u) for u in units), str(hyperparameters["activation"]), float(dropout))
    return _fit(x, y, spec, spec.feedforward, [arch])


def predict_array(fit: FitResult, data: np.ndarray, frequency: Frequency) -> np.ndarray:
    state = fit.state
    h = (data - np.asarray(state["x_mean"])) / np.asarray(state["x_scale"])
    weights = [np.asarray(w, dtype=np.float64) for w in state["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in state["biases"]]
    for w, b in zip(weights[:-1], biases[:-1]):
        h = _numpy_activation(str(state["activation"]), h @ w.T + b)
    out = h @ weights[-1].T + biases[-1]
    return out[:, 0] * float(state["y_scale"]) + float(state["y_mean"])
