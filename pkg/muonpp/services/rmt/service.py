from typing import Optional, Sequence, Tuple

from muonpp.services.correlation.dto import CorrelatedWeightSpec
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.rmt.dto import ExperimentReport
from muonpp.services.rmt.implementations import (
    CounterexampleExperiment,
    DualExperiment,
    GapExperiment,
    MomExperiment,
    MsignExperiment,
    NormRatioExperiment,
    PreservationExperiment,
)


class RmtLabService:
    """Entry point for the Monte-Carlo experiments; every run is a pure function of its inputs and seed."""

    def __init__(self, linalg: Optional[AbstractLinalgBackend] = None, workers: Optional[int] = None):
        self.linalg = linalg or DenseLinalgBackend()
        self.workers = workers

    def run_gap_experiment(
        self, ns: Sequence[int], trials: int, seed: int, method: str = "lanczos"
    ) -> ExperimentReport:
        return GapExperiment(self.linalg, workers=self.workers).run(ns, trials, seed, method=method)

    def run_preservation_experiment(
        self, dims: Sequence[Tuple[int, int]], trials: int, seed: int, eta_factor: float = 0.9
    ) -> ExperimentReport:
        return PreservationExperiment(self.linalg, workers=self.workers).run(dims, trials, seed, eta_factor=eta_factor)

    def run_norm_ratio_experiment(
        self,
        spec_template: CorrelatedWeightSpec,
        rho_law: str,
        ns: Sequence[int],
        trials: int,
        seed: int,
        sigma_law: str = "const",
    ) -> ExperimentReport:
        experiment = NormRatioExperiment(self.linalg, workers=self.workers)
        return experiment.run(spec_template, rho_law, ns, trials, seed, sigma_law=sigma_law)

    def run_mom_experiment(self, specs: Sequence[CorrelatedWeightSpec], trials: int, seed: int) -> ExperimentReport:
        return MomExperiment(self.linalg, workers=self.workers).run(specs, trials, seed)

    def run_counterexample(self, delta: float = 0.1) -> ExperimentReport:
        return CounterexampleExperiment(self.linalg).run(delta=delta)

    def run_msign_experiment(self, trials: int, seed: int, steps: Optional[int] = None) -> ExperimentReport:
        return MsignExperiment(self.linalg, workers=self.workers).run(trials, seed, steps=steps)

    def run_dual_experiment(self, trials: int, seed: int, iterations: Optional[int] = None) -> ExperimentReport:
        return DualExperiment(self.linalg, workers=self.workers).run(trials, seed, iterations=iterations)
