"""
Noise predictors eps_theta(X_t, Sigma, t).

Two kinds share the BasePredictor interface:

- GaussianOraclePredictor: the closed-form conditional mean E[eps | x_t] for
  an i.i.d. complex Gaussian source of power sigma_z^2.
- FeedForwardPredictor: a small torch MLP conditioned on the singular values
  and the step, trained with train_predictor().

Both take a PredictorQuery and return an array shaped like its x_t.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from dmmimo.channel import sample_rayleigh_channel
from dmmimo.checkpoint import load_arrays, save_arrays
from dmmimo.constants import DEFAULT_HIDDEN_WIDTHS, DEFAULT_SEED
from dmmimo.diffusion import NoiseSchedule, forward_diffuse
from dmmimo.exceptions import InvalidParameter, MalformedCheckpoint, ShapeMismatch
from dmmimo.log import LOGGER, progress_disabled
from dmmimo.signals import as_real_pairs, complex_gaussian, from_real_pairs
from dmmimo.training import (
    TrainConfig,
    TrainingRecord,
    check_finite,
    loss_decreased,
    make_optimizer,
    reset_linear,
)
from dmmimo.types import BasePredictor


@dataclass(frozen=True)
class PredictorQuery:
    """Inputs of one (batched) predictor call.

    x_t has shape (..., M, k); lambdas is (..., M) or (M,); t and
    alpha_bar_t are scalars or one value per batch entry.
    """

    x_t: np.ndarray
    lambdas: np.ndarray
    t: Union[int, np.ndarray]
    alpha_bar_t: Union[float, np.ndarray]
    T: int

    @classmethod
    def at_step(cls, x_t, lambdas, t, sched: NoiseSchedule) -> "PredictorQuery":
        return cls(
            x_t=x_t,
            lambdas=np.asarray(lambdas, dtype=np.float64),
            t=t,
            alpha_bar_t=sched.alpha_bar_at(t),
            T=sched.T,
        )

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.x_t.shape[:-2]


class GaussianOraclePredictor(BasePredictor):
    """eps_hat = sqrt(1 - abar) x_t / (abar sigma_z^2 + 1 - abar).

    Exact for an i.i.d. CN(0, sigma_z^2) source; linear in x_t.
    """

    kind = "analytic_gaussian"

    def __init__(self, source_power: float = 1.0):
        if not source_power > 0:
            raise InvalidParameter("source_power", source_power, "positive")
        self.source_power = float(source_power)

    def coefficient(self, alpha_bar):
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        return np.sqrt(1.0 - alpha_bar) / (
            alpha_bar * self.source_power + 1.0 - alpha_bar
        )

    def __call__(self, query: PredictorQuery) -> np.ndarray:
        return self.coefficient(query.alpha_bar_t)[..., None, None] * query.x_t


class EpsilonNet(torch.nn.Module):
    """Fully connected SiLU network in float64."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        hidden_widths: Sequence[int],
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        widths = [in_features, *hidden_widths, out_features]
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(fan_in, fan_out, dtype=torch.float64)
            for fan_in, fan_out in zip(widths[:-1], widths[1:])
        )
        self.activation = torch.nn.SiLU()
        self.reset_parameters(generator)

    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        for layer in self.layers:
            reset_linear(layer, generator)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        hidden = features
        for layer in self.layers[:-1]:
            hidden = self.activation(layer(hidden))
        return self.layers[-1](hidden)


class FeedForwardPredictor(BasePredictor):
    """Trainable predictor for M x k states.

    The network sees the flattened real pairs of X_t (2Mk values), the
    singular values lambda_1..lambda_M, t/T and abar_t, and returns 2Mk
    values read back as an M x k complex block.
    """

    kind = "feed_forward"

    def __init__(
        self,
        M: int,
        k: int,
        T: int,
        hidden_widths: Sequence[int] = DEFAULT_HIDDEN_WIDTHS,
        seed: int = DEFAULT_SEED,
    ):
        self.M = int(M)
        self.k = int(k)
        self.T = int(T)
        self.hidden_widths = tuple(int(w) for w in hidden_widths)
        generator = torch.Generator().manual_seed(int(seed))
        self.net = EpsilonNet(
            self.in_features, self.out_features, self.hidden_widths, generator
        )

    @property
    def in_features(self) -> int:
        return 2 * self.M * self.k + self.M + 2

    @property
    def out_features(self) -> int:
        return 2 * self.M * self.k

    def check(self, query: PredictorQuery):
        if query.x_t.ndim < 2 or query.x_t.shape[-2:] != (self.M, self.k):
            raise ShapeMismatch((self.M, self.k), query.x_t.shape)
        if np.shape(query.lambdas)[-1:] != (self.M,):
            raise ShapeMismatch((self.M,), np.shape(query.lambdas))

    def features(self, query: PredictorQuery) -> torch.Tensor:
        """(B, in_features) network input for a flattened batch."""
        batch_shape = query.batch_shape
        B = int(np.prod(batch_shape, dtype=np.int64))
        x = as_real_pairs(query.x_t).reshape(B, self.out_features)
        lambdas = np.broadcast_to(query.lambdas, batch_shape + (self.M,))
        t_frac = np.broadcast_to(np.asarray(query.t, dtype=np.float64) / self.T, batch_shape)
        alpha_bar = np.broadcast_to(np.asarray(query.alpha_bar_t, dtype=np.float64), batch_shape)
        columns = np.concatenate(
            [x, lambdas.reshape(B, self.M), t_frac.reshape(B, 1), alpha_bar.reshape(B, 1)],
            axis=1,
        )
        return torch.from_numpy(np.ascontiguousarray(columns, dtype=np.float64))

    def forward_tensor(self, query: PredictorQuery) -> torch.Tensor:
        """Differentiable (B, 2Mk) output."""
        return self.net(self.features(query))

    def __call__(self, query: PredictorQuery) -> np.ndarray:
        self.check(query)
        with torch.no_grad():
            out = self.forward_tensor(query).numpy()
        return from_real_pairs(out.reshape(query.batch_shape + (self.M, 2 * self.k)))

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {
            name: value.detach().numpy().copy()
            for name, value in self.net.state_dict().items()
        }

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]):
        state = {name: torch.from_numpy(np.array(value)) for name, value in arrays.items()}
        self.net.load_state_dict(state)

    def save(self, path: Union[str, Path], meta: Optional[dict] = None):
        header = {
            "M": self.M,
            "k": self.k,
            "T": self.T,
            "hidden_widths": list(self.hidden_widths),
            "activation": "silu",
        }
        header.update(meta or {})
        save_arrays(path, self.kind, self.state_arrays(), header)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FeedForwardPredictor":
        header, arrays = load_arrays(path, kind=cls.kind)
        meta = header.get("meta", {})
        try:
            model = cls(meta["M"], meta["k"], meta["T"], meta["hidden_widths"])
            model.load_state_arrays(arrays)
        except (KeyError, RuntimeError) as e:
            raise MalformedCheckpoint(f"{path} does not describe a predictor: {e}") from e
        if not all(np.all(np.isfinite(value)) for value in arrays.values()):
            raise MalformedCheckpoint(f"{path} holds non-finite parameters")
        return model


def predict_epsilon(model: BasePredictor, query: PredictorQuery) -> np.ndarray:
    """Predicted noise, shaped like query.x_t.

    Raises:
        ShapeMismatch: if lambdas do not match the rows of x_t, or the model
            was built for another state shape
    """
    if query.x_t.ndim < 2:
        raise ShapeMismatch("(..., M, k)", query.x_t.shape)
    if np.shape(query.lambdas)[-1:] != query.x_t.shape[-2:-1]:
        raise ShapeMismatch(query.x_t.shape[-2:-1], np.shape(query.lambdas))
    prediction = model(query)
    if prediction.shape != query.x_t.shape:
        raise ShapeMismatch(query.x_t.shape, prediction.shape)
    return prediction


def training_loss(
    model: BasePredictor,
    z_batch: np.ndarray,
    lambdas_batch: np.ndarray,
    t_batch,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> float:
    """Mean |eps - eps_theta(X_t, Sigma, t)|^2 per complex element."""
    eps = complex_gaussian(rng, z_batch.shape)
    x_t = forward_diffuse(z_batch, t_batch, sched, noise=eps)
    prediction = predict_epsilon(
        model, PredictorQuery.at_step(x_t, lambdas_batch, t_batch, sched)
    )
    return float(np.mean(np.abs(eps - prediction) ** 2))


def _loss_tensor(
    model: FeedForwardPredictor,
    z_batch: np.ndarray,
    lambdas_batch: np.ndarray,
    t_batch: np.ndarray,
    sched: NoiseSchedule,
    eps: np.ndarray,
) -> torch.Tensor:
    x_t = forward_diffuse(z_batch, t_batch, sched, noise=eps)
    out = model.forward_tensor(PredictorQuery.at_step(x_t, lambdas_batch, t_batch, sched))
    target = torch.from_numpy(as_real_pairs(eps).reshape(out.shape))
    # sum over the real pair, mean over complex elements
    return 2.0 * torch.mean((out - target) ** 2)


def train_predictor(
    model: FeedForwardPredictor,
    encoded_signals: np.ndarray,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[FeedForwardPredictor, List[TrainingRecord]]:
    """Minimize E|eps - eps_theta(X_t, Sigma, t)|^2 by Adam.

    Every iteration draws a batch of encoded signals Z, steps t uniform in
    1..T, Rayleigh channels (only their singular values condition the
    network) and fresh noise eps.

    Args:
        model (FeedForwardPredictor): updated in place
        encoded_signals (ndarray): training set of shape (N, M, k)
        sched (NoiseSchedule): the forward process
        cfg (TrainConfig): optimizer settings
        rng (Generator): source of all training randomness

    Returns:
        (model, history): history holds one TrainingRecord per epoch

    Raises:
        TrainingDiverged: if a batch loss is NaN or infinite
    """
    if not isinstance(model, FeedForwardPredictor):
        raise InvalidParameter("model", getattr(model, "kind", model), "a feed_forward predictor")
    if encoded_signals.ndim != 3 or len(encoded_signals) == 0:
        raise InvalidParameter(
            "encoded_signals", encoded_signals.shape, "a non-empty (N, M, k) array"
        )
    model.check(PredictorQuery(encoded_signals[:1], np.ones(model.M), 1, 1.0, sched.T))
    iterations = cfg.iterations(len(encoded_signals))
    optimizer, scheduler = make_optimizer(
        model.net.parameters(), cfg, cfg.epochs * iterations
    )
    history = []
    step = 0
    for epoch in tqdm(range(cfg.epochs), desc="stage 2", disable=progress_disabled()):
        losses = []
        learning_rate = scheduler.get_last_lr()[0]
        for _ in range(iterations):
            index = rng.integers(0, len(encoded_signals), cfg.batch_size)
            z = encoded_signals[index]
            t = rng.integers(1, sched.T + 1, cfg.batch_size)
            lambdas = sample_rayleigh_channel(model.M, rng, size=cfg.batch_size).lambdas
            eps = complex_gaussian(rng, z.shape)
            loss = _loss_tensor(model, z, lambdas, t, sched, eps)
            losses.append(check_finite(loss, "stage 2", step + 1))
            optimizer.zero_grad()
            loss.backward()
            learning_rate = scheduler.get_last_lr()[0]
            optimizer.step()
            scheduler.step()
            step += 1
        record = TrainingRecord(epoch + 1, float(np.mean(losses)), float(learning_rate))
        LOGGER.debug(f"stage 2 epoch {record.epoch}: loss {record.mean_loss:.6f}")
        history.append(record)
    if history:
        LOGGER.info(
            f"Trained the predictor for {cfg.epochs} epochs, final loss {history[-1].mean_loss:.6f}"
        )
    if not loss_decreased(history):
        LOGGER.warning("The predictor loss did not decrease over training.")
    return model, history


def squared_error(
    model: FeedForwardPredictor,
    query: PredictorQuery,
    epsilon_target: np.ndarray,
    loss_scale: float = 1.0,
) -> torch.Tensor:
    """loss_scale * sum |eps_theta - epsilon_target|^2 as a differentiable scalar."""
    out = model.forward_tensor(query)
    target = torch.from_numpy(as_real_pairs(epsilon_target).reshape(out.shape))
    return loss_scale * torch.sum((out - target) ** 2)


def parameter_gradients(
    model: FeedForwardPredictor,
    query: PredictorQuery,
    epsilon_target: np.ndarray,
    loss_scale: float = 1.0,
) -> Dict[str, np.ndarray]:
    """Autograd gradients of squared_error() by parameter name."""
    names, params = zip(*model.net.named_parameters())
    loss = squared_error(model, query, epsilon_target, loss_scale)
    grads = torch.autograd.grad(loss, params)
    return {name: grad.detach().numpy().copy() for name, grad in zip(names, grads)}


def gradient_check(
    model: FeedForwardPredictor,
    query: PredictorQuery,
    epsilon_target: np.ndarray,
    step: float = 1e-5,
    floor: float = 1e-5,
) -> float:
    """Largest relative error between autograd and central differences.

    The relative error of one parameter is |a - n| / max(|a|, |n|, floor),
    so gradients that are both near zero compare on an absolute scale.
    Meant for small networks: it costs two forward passes per parameter.
    """
    model.check(query)
    analytic = parameter_gradients(model, query, epsilon_target)
    worst = 0.0
    with torch.no_grad():
        for name, param in model.net.named_parameters():
            flat = param.view(-1)
            expected = analytic[name].reshape(-1)
            for j in range(flat.numel()):
                original = float(flat[j])
                flat[j] = original + step
                loss_plus = float(squared_error(model, query, epsilon_target))
                flat[j] = original - step
                loss_minus = float(squared_error(model, query, epsilon_target))
                flat[j] = original
                numeric = (loss_plus - loss_minus) / (2.0 * step)
                a = float(expected[j])
                error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, error)
    LOGGER.debug(f"gradient check: max relative error {worst:.3e}")
    return worst
