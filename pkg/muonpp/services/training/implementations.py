import logging
import math
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from muonpp.conf import settings
from muonpp.exceptions import InvalidInputError
from muonpp.seeding import trial_seed
from muonpp.services.correlation.implementations import ExchangeableCorrelationModel, rescale_on_trigger
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.spectral.abstract import AbstractSpectralOptimizer
from muonpp.services.spectral.dto import MuonPPState, SpectralTarget
from muonpp.services.spectral.implementations import (
    CascadeNormalizer,
    MuonBaselineOptimizer,
    MuonPlusPlusOptimizer,
    MuonPlusPlusRescaleOptimizer,
)
from muonpp.services.training.abstract import AbstractNetwork, AbstractTrainer
from muonpp.services.training.dto import (
    OPTIMIZER_KINDS,
    Activations,
    CoordinateCheck,
    LayerRecord,
    MLPConfig,
    SweepResult,
    TrainRecord,
)
from muonpp.services.training.exceptions import TrainingDivergedError

# seed stream keys under the run's master seed
REFERENCE_STREAM = 1
EVAL_STREAM = 2
BATCH_STREAM = 3
CHECK_STREAM = 4

ActivationPair = Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray, np.ndarray], np.ndarray]]

ACTIVATION_FUNCTIONS: Dict[str, ActivationPair] = {
    # (activation, derivative given pre-activation z and output h)
    "relu": (lambda z: np.maximum(z, 0), lambda z, h: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, h: 1 - h * h),
    "identity": (lambda z: z, lambda z, h: np.ones_like(z)),
}


def batch_l2(h: np.ndarray) -> float:
    """Root-mean-square over the batch of per-sample Euclidean norms."""
    return float(np.linalg.norm(h) / math.sqrt(h.shape[1]))


class BiaslessMLP(AbstractNetwork):
    """
    ``h_l = act(W_l h_{l-1})`` with a linear last layer and the loss
    ``1 / (2B) * sum_b ||h_L - y||^2``. Samples are columns.
    """

    def __init__(self, activation: str = "relu", linalg: Optional[AbstractLinalgBackend] = None):
        if activation not in ACTIVATION_FUNCTIONS:
            raise InvalidInputError(
                f"unknown activation {activation!r}, expected one of {sorted(ACTIVATION_FUNCTIONS)}"
            )
        self.activation = activation
        self._act, self._act_derivative = ACTIVATION_FUNCTIONS[activation]
        self.linalg = linalg or DenseLinalgBackend()

    def init_weights(self, config: MLPConfig) -> List[np.ndarray]:
        """Gaussian layers rescaled so that ``||W_l|| = sqrt(n_l / n_{l-1})`` exactly."""
        rng = np.random.default_rng(config.seed)
        weights = []
        for n_out, n_in in config.shapes:
            raw = rng.standard_normal((n_out, n_in))
            weights.append(math.sqrt(n_out / n_in) * raw / self.linalg.spectral_norm(raw))
        return weights

    def forward(self, weights: List[np.ndarray], x: np.ndarray) -> Activations:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != weights[0].shape[1]:
            raise InvalidInputError(f"input has shape {x.shape}, network expects {weights[0].shape[1]} rows")
        return self._forward(weights, x)

    def _forward(self, weights: Sequence[np.ndarray], x: np.ndarray) -> Activations:
        hidden, pre = [x], []
        last = len(weights) - 1
        for index, weight in enumerate(weights):
            z = weight @ hidden[-1]
            pre.append(z)
            hidden.append(z if index == last else self._act(z))
        return Activations(hidden=hidden, pre=pre)

    def backward(self, weights: List[np.ndarray], activations: Activations, target: np.ndarray) -> List[np.ndarray]:
        self._check_activations(weights, activations)
        output = activations.output
        target = np.asarray(target, dtype=np.float64)
        if target.ndim == 1:
            target = target[:, None]
        if target.shape != output.shape:
            raise InvalidInputError(f"target has shape {target.shape}, output has shape {output.shape}")

        batch = output.shape[1]
        upstream = (output - target) / batch
        grads: List[Optional[np.ndarray]] = [None] * len(weights)
        for index in range(len(weights) - 1, -1, -1):
            grads[index] = upstream @ activations.hidden[index].T
            if index > 0:
                upstream = (weights[index].T @ upstream) * self._act_derivative(
                    activations.pre[index - 1], activations.hidden[index]
                )
        return grads

    @staticmethod
    def _check_activations(weights: List[np.ndarray], activations: Activations) -> None:
        if len(activations.pre) != len(weights) or len(activations.hidden) != len(weights) + 1:
            raise InvalidInputError("activations do not come from a network of this depth")
        batch = activations.hidden[0].shape[1]
        for index, weight in enumerate(weights):
            fan_in, fan_out = (weight.shape[1], batch), (weight.shape[0], batch)
            if activations.hidden[index].shape != fan_in or activations.pre[index].shape != fan_out:
                raise InvalidInputError(f"stale activations: layer {index + 1} does not match weight {weight.shape}")

    def loss(self, weights: Sequence[np.ndarray], x: np.ndarray, target: np.ndarray):
        residual = self._forward(weights, x).output - target
        return np.sum(residual * residual) / (2 * x.shape[1])

    def gradient_check(self, config: MLPConfig, seed: int, step: float = 1e-5, floor: float = 1e-8) -> float:
        """
        Largest ``|analytic - fd| / (|analytic| + floor)`` over all weight entries, with ``fd`` the
        central difference of step ``step``. Losses for the differences are evaluated in extended
        precision so the comparison measures the backward pass rather than float64 cancellation.
        """
        if not step > 0 or not floor > 0:
            raise InvalidInputError(f"step and floor must be positive, got {step}, {floor}")
        weights = self.init_weights(replace(config, seed=seed))
        rng = np.random.default_rng(trial_seed(seed, CHECK_STREAM))
        x = rng.standard_normal((config.widths[0], config.batch_size))
        y = rng.standard_normal((config.widths[-1], config.batch_size))
        grads = self.backward(weights, self.forward(weights, x), y)

        wide = [weight.astype(np.longdouble) for weight in weights]
        x_wide, y_wide = x.astype(np.longdouble), y.astype(np.longdouble)
        h = np.longdouble(step)
        worst = 0.0
        for layer, weight in enumerate(wide):
            for index in np.ndindex(weight.shape):
                original = weight[index]
                weight[index] = original + h
                plus = self.loss(wide, x_wide, y_wide)
                weight[index] = original - h
                minus = self.loss(wide, x_wide, y_wide)
                weight[index] = original
                numeric = float((plus - minus) / (2 * h))
                analytic = float(grads[layer][index])
                worst = max(worst, abs(analytic - numeric) / (abs(analytic) + floor))
        return worst


def build_optimizer(
    kind: str,
    linalg: AbstractLinalgBackend,
    msign_mode: str,
    nesterov: bool = False,
    match_scaling: bool = False,
) -> AbstractSpectralOptimizer:
    if kind == "muonpp":
        return MuonPlusPlusOptimizer(linalg, msign_mode=msign_mode, nesterov=nesterov)
    if kind == "muonpp_rescale":
        return MuonPlusPlusRescaleOptimizer(linalg, msign_mode=msign_mode, nesterov=nesterov)
    if kind == "muon":
        return MuonBaselineOptimizer(linalg, msign_mode=msign_mode, nesterov=nesterov, match_scaling=match_scaling)
    if kind == "cascade":
        return CascadeNormalizer(linalg)
    raise InvalidInputError(f"unknown optimizer {kind!r}, expected one of {OPTIMIZER_KINDS}")


class SpectralTrainer(AbstractTrainer):
    """Trains a biasless MLP against a frozen random reference network with one spectral optimizer per layer."""

    EVAL_BATCH = 256

    def __init__(
        self,
        linalg: Optional[AbstractLinalgBackend] = None,
        msign_mode: Optional[str] = None,
        divergence_loss: Optional[float] = None,
    ):
        self.linalg = linalg or DenseLinalgBackend()
        self.msign_mode = msign_mode or settings.TRAIN_MSIGN_MODE
        self.divergence_loss = divergence_loss or settings.DIVERGENCE_LOSS
        self.correlation = ExchangeableCorrelationModel(self.linalg)
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def train_run(
        self,
        config: MLPConfig,
        optimizer_kind: str,
        eta: float,
        mu: Optional[float] = None,
        nesterov: bool = False,
        match_scaling: bool = False,
        correlation_trigger: Optional[float] = None,
        msign_mode: Optional[str] = None,
        raise_on_divergence: bool = False,
    ) -> List[TrainRecord]:
        if not (math.isfinite(eta) and eta >= 0):
            raise InvalidInputError(f"eta must be a finite non-negative number, got {eta}")
        if correlation_trigger is not None and not correlation_trigger > 0:
            raise InvalidInputError(f"correlation trigger constant must be positive, got {correlation_trigger}")
        mu = settings.DEFAULT_MOMENTUM if mu is None else mu
        optimizer = build_optimizer(
            optimizer_kind, self.linalg, msign_mode or self.msign_mode, nesterov=nesterov, match_scaling=match_scaling
        )
        network = BiaslessMLP(config.activation, self.linalg)

        weights = network.init_weights(config)
        reference = network.init_weights(replace(config, seed=trial_seed(config.seed, REFERENCE_STREAM)))
        eval_rng = np.random.default_rng(trial_seed(config.seed, EVAL_STREAM))
        x_eval = eval_rng.standard_normal((config.widths[0], self.EVAL_BATCH))
        y_eval = network.forward(reference, x_eval).output
        states = [MuonPPState.zeros(SpectralTarget(n_out, n_in), mu) for n_out, n_in in config.shapes]
        rho_prev = [self.correlation.mom_rho(weight) for weight in weights]
        fired = [False] * config.depth

        self.logger.info(
            f"Training widths={list(config.widths)} with {optimizer_kind} eta={eta:g} for {config.steps} steps"
        )
        records = [self._initial_record(network, weights, states, x_eval, y_eval, rho_prev)]
        for step in range(1, config.steps + 1):
            rng = np.random.default_rng(trial_seed(config.seed, BATCH_STREAM, step))
            x = rng.standard_normal((config.widths[0], config.batch_size))
            y = network.forward(reference, x).output
            before = network.forward(weights, x)
            grads = network.backward(weights, before, y)

            new_weights, layers = [], []
            for index, (weight, grad) in enumerate(zip(weights, grads)):
                new_weight, states[index], report = optimizer.step(states[index], weight, grad, eta)
                norm_after = report.spectral_norm_after
                rho_cur = self._safe_rho(new_weight)
                if correlation_trigger is not None:
                    outcome = self._trigger(new_weight, rho_prev[index], rho_cur, correlation_trigger, fired[index])
                    if outcome is not None and outcome.fired and not fired[index]:
                        new_weight = outcome.weight
                        states[index].target = states[index].target.scaled(outcome.factor)
                        norm_after = self.linalg.spectral_norm(new_weight)
                        fired[index] = True
                rho_prev[index] = rho_cur
                new_weights.append(new_weight)
                layers.append(
                    LayerRecord(
                        spectral_norm_W=norm_after,
                        update_spectral_norm=self.linalg.spectral_norm(new_weight - weight),
                        h_l2=batch_l2(before.hidden[index + 1]),
                        delta_h_l2=0.0,
                        gap=report.gap_before,
                        rescaled=report.rescaled,
                        width=weight.shape[0],
                        target_S=states[index].target.S,
                        admissible_eta=report.admissible_eta,
                        rho_hat=rho_cur,
                    )
                )

            after = network.forward(new_weights, x)
            for index, layer in enumerate(layers):
                layer.delta_h_l2 = batch_l2(after.hidden[index + 1] - before.hidden[index + 1])
            weights = new_weights

            loss = float(network.loss(weights, x_eval, y_eval))
            if not math.isfinite(loss) or loss > self.divergence_loss:
                records.append(TrainRecord(step=step, loss=loss, per_layer=layers, diverged=True))
                self.logger.error(f"Training diverged at step {step}: loss={loss:g}")
                if raise_on_divergence:
                    raise TrainingDivergedError(f"loss {loss:g} at step {step}", step=step, loss=loss)
                break
            records.append(TrainRecord(step=step, loss=loss, per_layer=layers))
            self.logger.debug(f"step {step}: loss={loss:.6g}")
        return records

    def _initial_record(self, network, weights, states, x_eval, y_eval, rho) -> TrainRecord:
        activations = network.forward(weights, x_eval)
        layers = []
        for index, weight in enumerate(weights):
            info = self.linalg.top_two_singular(weight)
            layers.append(
                LayerRecord(
                    spectral_norm_W=self.linalg.spectral_norm(weight),
                    update_spectral_norm=0.0,
                    h_l2=batch_l2(activations.hidden[index + 1]),
                    delta_h_l2=0.0,
                    gap=info.gap,
                    rescaled=False,
                    width=weight.shape[0],
                    target_S=states[index].target.S,
                    rho_hat=rho[index],
                )
            )
        return TrainRecord(step=0, loss=float(network.loss(weights, x_eval, y_eval)), per_layer=layers)

    def _trigger(self, weight, rho_prev: float, rho_cur: float, C: float, already_fired: bool):
        try:
            return rescale_on_trigger(weight, rho_prev, rho_cur, C, already_fired)
        except InvalidInputError as e:
            # a non-positive previous estimate leaves the factor undefined; wait for the next checkpoint
            self.logger.warning(f"Correlation trigger skipped: {e}")
            return None

    def _safe_rho(self, weight: np.ndarray) -> float:
        if not np.any(weight):
            return float("nan")
        return self.correlation.mom_rho(weight)

    def coordinate_check(
        self,
        base_config: MLPConfig,
        width_multipliers: Sequence[int],
        optimizer_kind: str,
        eta: float,
        after_step: int = 3,
        **options,
    ) -> CoordinateCheck:
        """``||h_l|| / sqrt(n_l)`` and ``||delta h_l|| / sqrt(n_l)`` per width, layer and step."""
        multipliers = [int(m) for m in width_multipliers]
        if not multipliers:
            raise InvalidInputError("at least one width multiplier is required")
        rows = []
        for multiplier in multipliers:
            config = base_config.with_hidden_multiplier(multiplier)
            records = self.train_run(config, optimizer_kind, eta, raise_on_divergence=True, **options)
            for record in records:
                for layer_index, layer in enumerate(record.per_layer, start=1):
                    rows.append(
                        {
                            "width_multiplier": multiplier,
                            "step": record.step,
                            "layer": layer_index,
                            "width": layer.width,
                            "h_normalized": layer.h_l2 / math.sqrt(layer.width),
                            "delta_h_normalized": layer.delta_h_l2 / math.sqrt(layer.width),
                        }
                    )
        table = pd.DataFrame(rows)
        spread = coordinate_spread(table, after_step) if len(set(multipliers)) > 1 else None
        return CoordinateCheck(table=table, after_step=after_step, spread=spread)

    def lr_sweep(
        self,
        base_config: MLPConfig,
        width_multipliers: Sequence[int],
        eta_grid: Sequence[float],
        optimizer_kind: str,
        **options,
    ) -> SweepResult:
        grid = [float(eta) for eta in eta_grid]
        multipliers = [int(m) for m in width_multipliers]
        if not grid or any(eta <= 0 for eta in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidInputError(f"eta grid must be positive and strictly ascending, got {grid}")
        if not multipliers:
            raise InvalidInputError("at least one width multiplier is required")
        if len(grid) < 5:
            self.logger.warning(f"eta grid has {len(grid)} points; argmin comparisons are coarse")

        rows, argmin_index = [], {}
        for multiplier in multipliers:
            config = base_config.with_hidden_multiplier(multiplier)
            losses = []
            for eta in grid:
                records = self.train_run(config, optimizer_kind, eta, **options)
                final = records[-1]
                losses.append(float("inf") if final.diverged else final.loss)
            best = int(np.argmin(losses))
            argmin_index[multiplier] = best
            for position, (eta, loss) in enumerate(zip(grid, losses)):
                rows.append(
                    {"width_multiplier": multiplier, "eta": eta, "final_loss": loss, "argmin_flag": position == best}
                )
        drift = None
        if len(multipliers) > 1:
            drift = max(abs(argmin_index[a] - argmin_index[b]) for a, b in zip(multipliers, multipliers[1:]))
        return SweepResult(
            table=pd.DataFrame(rows),
            argmin={multiplier: grid[index] for multiplier, index in argmin_index.items()},
            argmin_drift=drift,
        )


def coordinate_spread(table: pd.DataFrame, after_step: int) -> float:
    """Largest max/min ratio across widths of any normalized statistic at any (step, layer) from ``after_step`` on."""
    late = table[table["step"] >= after_step]
    if late.empty:
        return float("nan")
    spread = 1.0
    for column in ("h_normalized", "delta_h_normalized"):
        grouped = late.groupby(["step", "layer"])[column]
        low, high = grouped.min(), grouped.max()
        if (low <= 0).any():
            return float("inf")
        spread = max(spread, float((high / low).max()))
    return spread
