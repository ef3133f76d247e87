import logging
import math
import sys
from typing import Any, Callable, Dict, Optional

import numpy as np

from muonpp.cli.config import RunConfig
from muonpp.cli.output import RunOutput
from muonpp.exceptions import DegenerateInputError, InvalidInputError, MuonPPError
from muonpp.services.correlation.dto import CorrelatedWeightSpec
from muonpp.services.correlation.implementations import ExchangeableCorrelationModel
from muonpp.services.correlation.service import CorrelationService
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.linalg.matrix import read_mat1
from muonpp.services.rmt.dto import ExperimentReport, Verdict
from muonpp.services.rmt.service import RmtLabService
from muonpp.services.spectral.service import SpectralUpdateService, init_state
from muonpp.services.training.dto import MLPConfig, records_frame
from muonpp.services.training.exceptions import TrainingDivergedError
from muonpp.services.training.implementations import build_optimizer
from muonpp.services.training.service import TrainingService

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

COORDINATE_SPREAD_LIMIT = 2.0


class CommandDispatcher:
    """
    Runs one resolved command and maps its outcome onto the exit-code contract:
    0 for success, pass or inconclusive, 1 for a fail verdict or a diverged run, 2 for bad
    input and I/O failures.
    """

    def __init__(
        self,
        linalg: Optional[AbstractLinalgBackend] = None,
        lab: Optional[RmtLabService] = None,
        correlation: Optional[CorrelationService] = None,
        training: Optional[TrainingService] = None,
        spectral: Optional[SpectralUpdateService] = None,
        stdout=None,
    ):
        self.linalg = linalg or DenseLinalgBackend()
        self.lab = lab
        self.correlation = correlation or CorrelationService(ExchangeableCorrelationModel(self.linalg))
        self.training = training or TrainingService(linalg=self.linalg)
        self.spectral = spectral or SpectralUpdateService(self.linalg)
        self.stdout = stdout
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def dispatch(self, config: RunConfig) -> int:
        handler = self._handlers()[config.command]
        output = RunOutput(config.output_dir)
        self.logger.info(f"Running {config.command} with seed={config.seed} into {config.output_dir}")
        try:
            output.write_manifest(config)
            verdict = handler(config, output)
        except OSError as exc:
            location = exc.filename or config.output_dir
            self.logger.error(f"{config.command}: I/O failure on {location}: {exc.strerror or exc}")
            return EXIT_USAGE
        except MuonPPError as exc:
            self.logger.error(f"{config.command}: {exc}")
            return EXIT_USAGE
        return self._exit_code(config.command, verdict)

    def _exit_code(self, command: str, verdict: Optional[Verdict]) -> int:
        if verdict == Verdict.FAIL:
            self.logger.error(f"{command}: verdict fail")
            return EXIT_FAIL
        if verdict == Verdict.INCONCLUSIVE:
            self.logger.warning(f"{command}: verdict inconclusive")
        return EXIT_OK

    def _handlers(self) -> Dict[str, Callable[[RunConfig, RunOutput], Optional[Verdict]]]:
        return {
            "step": self._step,
            "train": self._train,
            "sweep": self._sweep,
            "coordcheck": self._coordcheck,
            "rmt-gap": self._rmt_gap,
            "rmt-preserve": self._rmt_preserve,
            "rmt-ratio": self._rmt_ratio,
            "rmt-mom": self._rmt_mom,
            "rmt-counterexample": self._rmt_counterexample,
            "rmt-msign": self._rmt_msign,
            "rmt-dual": self._rmt_dual,
            "corr-estimate": self._corr_estimate,
            "corr-sample": self._corr_sample,
            "budget": self._budget,
        }

    def _emit(self, line: str) -> None:
        print(line, file=self.stdout or sys.stdout)

    # optimizer and training

    def _step(self, config: RunConfig, output: RunOutput) -> None:
        p = config.parameters
        if p["repeat"] < 1:
            raise InvalidInputError(f"repeat must be positive, got {p['repeat']}")
        weight = read_mat1(p["weight"])
        grad = read_mat1(p["grad"])
        optimizer = build_optimizer(
            p["optimizer"], self.linalg, p["msign_mode"], nesterov=p["nesterov"], match_scaling=p["match_scaling"]
        )
        state = init_state(weight.shape, mu=p["mu"])
        rows = []
        for _ in range(p["repeat"]):
            weight, state, report = optimizer.step(state, weight, grad, p["eta"])
            rows.append(report.to_dict())
        output.write_rows("step.csv", rows)
        output.write_matrix("step.weight.mat1", weight)
        output.write_matrix("step.delta.mat1", report.delta)
        self._emit(
            f"spectral_norm_after={report.spectral_norm_after:.17g} S={report.S:.17g} "
            f"admissible_eta={report.admissible_eta:.17g}"
        )

    @staticmethod
    def _network(config: RunConfig) -> MLPConfig:
        p = config.parameters
        return MLPConfig(
            widths=p["widths"],
            activation=p["activation"],
            batch_size=p["batch_size"],
            steps=p["steps"],
            seed=config.seed,
        )

    @staticmethod
    def _optimizer_options(config: RunConfig) -> Dict[str, Any]:
        p = config.parameters
        return {
            "mu": p["mu"],
            "nesterov": p["nesterov"],
            "match_scaling": p["match_scaling"],
            "msign_mode": p["msign_mode"],
        }

    def _train(self, config: RunConfig, output: RunOutput) -> Optional[Verdict]:
        p = config.parameters
        records = self.training.train_run(
            self._network(config),
            p["optimizer"],
            p["eta"],
            correlation_trigger=p["trigger"],
            **self._optimizer_options(config),
        )
        output.write_frame("train.csv", records_frame(records))
        final = records[-1]
        self._emit(f"initial_loss={records[0].loss:.17g} final_loss={final.loss:.17g} steps={final.step}")
        if final.diverged:
            self.logger.error(f"train: diverged at step {final.step} with loss {final.loss:.6g}")
            return Verdict.FAIL
        return None

    def _sweep(self, config: RunConfig, output: RunOutput) -> None:
        p = config.parameters
        result = self.training.lr_sweep(
            self._network(config), p["multipliers"], p["etas"], p["optimizer"], **self._optimizer_options(config)
        )
        output.write_frame("sweep.csv", result.table)
        argmin = " ".join(f"eta_star[{multiplier}]={eta:g}" for multiplier, eta in result.argmin.items())
        self._emit(f"{argmin} argmin_drift={result.argmin_drift}")

    def _coordcheck(self, config: RunConfig, output: RunOutput) -> Verdict:
        p = config.parameters
        try:
            check = self.training.coordinate_check(
                self._network(config),
                p["multipliers"],
                p["optimizer"],
                p["eta"],
                after_step=p["after_step"],
                **self._optimizer_options(config),
            )
        except TrainingDivergedError as exc:
            self.logger.error(f"coordcheck: {exc}")
            report = ExperimentReport(
                name="coordcheck",
                parameters=self._coordcheck_parameters(config),
                rows=[{"step": exc.step, "loss": exc.loss, "diverged": True}],
                verdict=Verdict.FAIL,
                tolerance_used=COORDINATE_SPREAD_LIMIT,
            )
            return self._report(output, report)
        verdict = {True: Verdict.PASS, False: Verdict.FAIL}.get(check.within_factor_two, Verdict.INCONCLUSIVE)
        report = ExperimentReport(
            name="coordcheck",
            parameters=self._coordcheck_parameters(config),
            rows=check.table.to_dict("records"),
            verdict=verdict,
            tolerance_used=COORDINATE_SPREAD_LIMIT,
            summary={"spread": check.spread, "after_step": check.after_step},
        )
        return self._report(output, report)

    def _coordcheck_parameters(self, config: RunConfig) -> Dict[str, Any]:
        p = config.parameters
        return {
            **self._network(config).to_dict(),
            "multipliers": list(p["multipliers"]),
            "optimizer": p["optimizer"],
            "eta": p["eta"],
        }

    # Monte-Carlo lab

    def _lab(self, config: RunConfig) -> RmtLabService:
        return self.lab or RmtLabService(self.linalg, workers=config.parameters.get("workers"))

    def _report(self, output: RunOutput, report: ExperimentReport) -> Verdict:
        output.write_report(report)
        self.logger.info(f"{report.name}: {report.verdict_line} in {report.wall_time:.2f}s")
        self._emit(f"{report.name} {report.verdict_line}")
        return report.verdict

    def _rmt_gap(self, config: RunConfig, output: RunOutput) -> Verdict:
        p = config.parameters
        report = self._lab(config).run_gap_experiment(p["ns"], p["trials"], config.seed, method=p["method"])
        return self._report(output, report)

    def _rmt_preserve(self, config: RunConfig, output: RunOutput) -> Verdict:
        p = config.parameters
        report = self._lab(config).run_preservation_experiment(
            p["dims"], p["trials"], config.seed, eta_factor=p["eta_factor"]
        )
        return self._report(output, report)

    def _rmt_ratio(self, config: RunConfig, output: RunOutput) -> Verdict:
        p = config.parameters
        n = p["ns"][0]
        template = CorrelatedWeightSpec(m=max(1, round(p["c"] * n)), n=n, sigma_n=p["sigma"], rho_n=p["rho"])
        report = self._lab(config).run_norm_ratio_experiment(
            template, p["rho_law"], p["ns"], p["trials"], config.seed, sigma_law=p["sigma_law"]
        )
        return self._report(output, report)

    def _rmt_mom(self, config: RunConfig, output: RunOutput) -> Verdict:
        p = config.parameters
        spec = CorrelatedWeightSpec(m=p["m"], n=p["n"], sigma_n=p["sigma"], rho_n=p["rho"])
        return self._report(output, self._lab(config).run_mom_experiment([spec], p["trials"], config.seed))

    def _rmt_counterexample(self, config: RunConfig, output: RunOutput) -> Verdict:
        return self._report(output, self._lab(config).run_counterexample(delta=config.parameters["delta"]))

    def _rmt_msign(self, config: RunConfig, output: RunOutput) -> Verdict:
        p = config.parameters
        return self._report(output, self._lab(config).run_msign_experiment(p["trials"], config.seed, steps=p["steps"]))

    def _rmt_dual(self, config: RunConfig, output: RunOutput) -> Verdict:
        p = config.parameters
        report = self._lab(config).run_dual_experiment(p["trials"], config.seed, iterations=p["iterations"])
        return self._report(output, report)

    # correlation model

    def _corr_estimate(self, config: RunConfig, output: RunOutput) -> None:
        p = config.parameters
        weight = read_mat1(p["weight"])
        rho_hat = self.correlation.mom_rho(weight)
        m, n = weight.shape
        row = {
            "m": m,
            "n": n,
            "rho_hat": rho_hat,
            "frob": float(np.linalg.norm(weight)),
            "spectral": self.linalg.spectral_norm(weight),
            "srank": self.correlation.stable_rank(weight),
        }
        if p["rescale"]:
            outcome = self.correlation.evaluate_trigger(weight, p["rho_prev"], rho_hat, p["C"], already_fired=False)
            row.update(fired=outcome.fired, factor=outcome.factor, threshold=outcome.threshold)
            output.write_matrix("corr-estimate.weight.mat1", outcome.weight)
        output.write_rows("corr-estimate.csv", [row])
        self._emit(f"rho_hat={rho_hat:.17g}")

    def _corr_sample(self, config: RunConfig, output: RunOutput) -> None:
        p = config.parameters
        spec = CorrelatedWeightSpec(m=p["m"], n=p["n"], sigma_n=p["sigma"], rho_n=p["rho"])
        draw = self.correlation.sample_correlated(spec, config.seed)
        prediction = self.correlation.predict_spectral(spec, draw.z, boundary_rule=p["boundary_rule"])
        spectral = self.linalg.spectral_norm(draw.weight)
        predicted = prediction.predicted_norm
        row = {
            **spec.to_dict(),
            "seed": config.seed,
            "z": draw.z,
            "frob": float(np.linalg.norm(draw.weight)),
            "spectral": spectral,
            "srank": _or_nan(self.correlation.stable_rank, draw.weight),
            "rho_hat": _or_nan(self.correlation.mom_rho, draw.weight),
            "regime": prediction.regime.value,
            "predicted_norm": predicted,
            "ratio": spectral / predicted if predicted > 0 else math.nan,
        }
        output.write_matrix("corr-sample.mat1", draw.weight)
        output.write_rows("corr-sample.csv", [row])
        self._emit(f"spectral={spectral:.17g} predicted_norm={predicted:.17g} regime={prediction.regime.value}")

    def _budget(self, config: RunConfig, output: RunOutput) -> None:
        p = config.parameters
        threshold = self.spectral.token_budget_threshold(
            p["eta"], p["n"], p["init_range"], p["base_width"], p["batch_size"]
        )
        output.write_rows("budget.csv", [{**p, **threshold.to_dict()}])
        self._emit(f"T_threshold={threshold.T_threshold:g} tokens={threshold.token_threshold:g}")


def _or_nan(measure: Callable[[np.ndarray], float], weight: np.ndarray) -> float:
    # zero draws (sigma = 0) have no stable rank and no moment estimate
    try:
        return measure(weight)
    except DegenerateInputError:
        return math.nan


def dispatch(config: RunConfig) -> int:
    return CommandDispatcher().dispatch(config)
