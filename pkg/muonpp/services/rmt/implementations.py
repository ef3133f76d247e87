import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from muonpp.conf import settings
from muonpp.exceptions import InvalidInputError
from muonpp.seeding import SEED_RULE, trial_seed
from muonpp.services.correlation.dto import BoundaryRule, CorrelatedWeightSpec, Regime
from muonpp.services.correlation.implementations import (
    ExchangeableCorrelationModel,
    boundary_factor,
    classify_regime,
    conditional_rho,
)
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.rmt.abstract import AbstractExperiment
from muonpp.services.rmt.dto import ExperimentReport, Verdict
from muonpp.services.rmt.exceptions import ExperimentError
from muonpp.services.spectral.implementations import DualSubgradientSolver, admissible_eta_from

RHO_LAWS: Dict[str, Callable[[int, float], float]] = {
    "const": lambda n, rho: rho,
    "inv_n": lambda n, rho: 1.0 / n,
    "inv_n_1_5": lambda n, rho: n ** -1.5,
    "inv_sqrt_n": lambda n, rho: n ** -0.5,
    "inv_n2": lambda n, rho: n ** -2.0,
}

SIGMA_LAWS: Dict[str, Callable[[int, float, float], float]] = {
    "const": lambda n, rho, sigma: sigma,
    "inv_sqrt_n": lambda n, rho, sigma: n ** -0.5,
    "inv_n": lambda n, rho, sigma: 1.0 / n,
    "key_diff": lambda n, rho, sigma: 1.0 / (n * math.sqrt(rho)),
}


class MonteCarloExperiment(AbstractExperiment):
    """Shared plumbing: trial fan-out, guard rails and report assembly."""

    def __init__(
        self,
        linalg: Optional[AbstractLinalgBackend] = None,
        workers: Optional[int] = None,
        min_trials: Optional[int] = None,
        max_non_convergence_rate: Optional[float] = None,
    ):
        self.linalg = linalg or DenseLinalgBackend()
        self.workers = workers or settings.EXPERIMENT_WORKERS
        self.min_trials = min_trials or settings.MIN_TRIALS
        self.max_non_convergence_rate = max_non_convergence_rate or settings.MAX_NON_CONVERGENCE_RATE
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def map_trials(self, trial: Callable[[Any], Dict[str, Any]], keys: Sequence[Any]) -> List[Dict[str, Any]]:
        def guarded(key: Any) -> Dict[str, Any]:
            try:
                return trial(key)
            except (np.linalg.LinAlgError, ArithmeticError) as e:
                raise ExperimentError(f"{self.name}: trial {key} failed: {e}") from e

        # Executor.map yields in submission order, so rows stay in key order
        if self.workers > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                return list(executor.map(guarded, keys))
        return [guarded(key) for key in keys]

    def guard(self, trials: int, rows: Iterable[Dict[str, Any]]) -> Optional[str]:
        """Reason the experiment cannot support a verdict, or None."""
        if trials < self.min_trials:
            return f"trials={trials} below the minimum of {self.min_trials}"
        flags = [row["converged"] for row in rows if "converged" in row]
        if flags:
            rate = 1.0 - sum(flags) / len(flags)
            if rate > self.max_non_convergence_rate:
                return f"power-iteration non-convergence rate {rate:.3%} above {self.max_non_convergence_rate:.3%}"
        return None

    def report(
        self,
        parameters: Dict[str, Any],
        rows: List[Dict[str, Any]],
        verdict: Verdict,
        tolerance: float,
        started: float,
        summary: Optional[Dict[str, Any]] = None,
        inconclusive_reason: Optional[str] = None,
    ) -> ExperimentReport:
        summary = dict(summary or {})
        if inconclusive_reason:
            verdict = Verdict.INCONCLUSIVE
            summary["inconclusive_reason"] = inconclusive_reason
            self.logger.warning(f"{self.name}: inconclusive ({inconclusive_reason})")
        wall_time = time.perf_counter() - started
        self.logger.info(f"{self.name}: {verdict.value} after {wall_time:.2f}s over {len(rows)} rows")
        return ExperimentReport(
            name=self.name,
            parameters=parameters,
            rows=rows,
            verdict=verdict,
            tolerance_used=tolerance,
            wall_time=wall_time,
            summary=summary,
        )

    @staticmethod
    def _require_trials(trials: int) -> None:
        if trials < 1:
            raise InvalidInputError(f"trials must be positive, got {trials}")

    @staticmethod
    def _require_seed(seed: int) -> None:
        if seed < 0:
            raise InvalidInputError(f"seed must be non-negative, got {seed}")


class GapExperiment(MonteCarloExperiment):
    """sigma1 - sigma2 of ``n^-1/2 A`` (A iid standard Gaussian, square) shrinks as n grows."""

    name = "rmt-gap"
    SHRINK_FACTOR = 0.5

    def run(self, ns: Sequence[int], trials: int, seed: int, method: str = "lanczos") -> ExperimentReport:
        started = time.perf_counter()
        ns = [int(n) for n in ns]
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidInputError(f"ns must be non-empty and strictly ascending, got {ns}")
        if ns[0] < 32:
            raise InvalidInputError(f"every n must be at least 32, got {ns[0]}")
        self._require_trials(trials)
        self._require_seed(seed)
        self.logger.info(f"{self.name}: ns={ns} trials={trials} seed={seed} method={method}")

        def trial(key: Tuple[int, int]) -> Dict[str, Any]:
            n, index = key
            stream = trial_seed(seed, n, index)
            a = np.random.default_rng(stream).standard_normal((n, n))
            info = self.linalg.top_two_singular(a / math.sqrt(n), method=method)
            return {
                "n": n,
                "trial": index,
                "seed": stream,
                "sigma1": info.sigma1,
                "sigma2": info.sigma2,
                "gap": info.gap,
                "converged": info.converged,
            }

        rows = self.map_trials(trial, [(n, index) for n in ns for index in range(trials)])
        medians = pd.DataFrame(rows).groupby("n", sort=True)["gap"].median()
        values = [float(medians[n]) for n in ns]
        decreasing = all(b < a for a, b in zip(values, values[1:]))
        shrunk = values[-1] <= self.SHRINK_FACTOR * values[0]
        verdict = Verdict.PASS if decreasing and shrunk else Verdict.FAIL
        summary = {f"median_gap[{n}]": value for n, value in zip(ns, values)}
        summary.update({"strictly_decreasing": decreasing, "shrunk_below_half": shrunk})

        reason = self.guard(trials, rows)
        if reason is None and len(ns) < 2:
            reason = "a single n cannot show a trend"
        parameters = {"ns": ns, "trials": trials, "seed": seed, "method": method, "seed_rule": SEED_RULE,
                      "seed_key": "(n, trial)"}
        return self.report(parameters, rows, verdict, self.SHRINK_FACTOR, started, summary, reason)


class PreservationExperiment(MonteCarloExperiment):
    """
    Random admissible instances of the norm-preservation claim: ``||W|| = S``, Delta orthogonal to
    the top singular pair with ``||Delta|| = 1`` and ``eta = eta_factor * (sigma1 - sigma2) / sigma1``.

    With ``eta_factor <= 1`` every instance must keep ``||W - eta S Delta|| = S``; with a larger
    factor the experiment passes when at least one violation is observed.
    """

    name = "rmt-preserve"

    def run(
        self,
        dims: Sequence[Tuple[int, int]],
        trials: int,
        seed: int,
        eta_factor: float = 0.9,
        tolerance: float = 1e-8,
        method: str = "lanczos",
    ) -> ExperimentReport:
        started = time.perf_counter()
        dims = [(int(m), int(n)) for m, n in dims]
        if not dims or any(m < 4 or n < 4 for m, n in dims):
            raise InvalidInputError(f"every dimension must be at least 4x4, got {dims}")
        if not eta_factor >= 0:
            raise InvalidInputError(f"eta_factor must be non-negative, got {eta_factor}")
        self._require_trials(trials)
        self._require_seed(seed)

        def trial(index: int) -> Dict[str, Any]:
            m, n = dims[index % len(dims)]
            stream = trial_seed(seed, m, n, index)
            rng = np.random.default_rng(stream)
            S = math.sqrt(m / n)
            raw = rng.standard_normal((m, n))
            weight = S * raw / self.linalg.spectral_norm(raw)
            info = self.linalg.top_two_singular(weight, method=method)
            projected = self.linalg.project_out_top(rng.standard_normal((m, n)), info.u1, info.v1)
            delta = self.linalg.polar_factor(projected, mode="exact").matrix
            eta = eta_factor * admissible_eta_from(info)
            norm_after = self.linalg.spectral_norm(weight - eta * S * delta)
            deviation = abs(norm_after - S) / S
            return {
                "m": m,
                "n": n,
                "trial": index,
                "seed": stream,
                "S": S,
                "sigma1": info.sigma1,
                "sigma2": info.sigma2,
                "eta": eta,
                "norm_after": norm_after,
                "rel_deviation": deviation,
                "violation": deviation > tolerance,
                "converged": info.converged,
            }

        rows = self.map_trials(trial, list(range(trials)))
        violations = sum(row["violation"] for row in rows)
        rate = violations / len(rows)
        expect_preserved = eta_factor <= 1.0
        if expect_preserved:
            verdict = Verdict.PASS if violations == 0 else Verdict.FAIL
        else:
            verdict = Verdict.PASS if violations > 0 else Verdict.FAIL
        summary = {
            "violation_rate": rate,
            "max_rel_deviation": max(row["rel_deviation"] for row in rows),
            "expectation": "preserved" if expect_preserved else "violated",
        }
        parameters = {
            "dims": dims,
            "trials": trials,
            "seed": seed,
            "eta_factor": eta_factor,
            "method": method,
            "seed_rule": SEED_RULE,
            "seed_key": "(m, n, trial)",
        }
        return self.report(parameters, rows, verdict, tolerance, started, summary, self.guard(trials, rows))


class CounterexampleExperiment(MonteCarloExperiment):
    """W = diag(1, 0.2), Delta = diag(0, -1): eta * S < sigma1 alone does not keep the norm at S."""

    name = "rmt-counterexample"

    def run(self, delta: float = 0.1, tolerance: float = 1e-12) -> ExperimentReport:
        started = time.perf_counter()
        if not delta > 0:
            raise InvalidInputError(f"delta must be positive, got {delta}")
        weight = np.diag([1.0, 0.2])
        direction = np.diag([0.0, -1.0])
        S = 1.0
        info = self.linalg.top_two_singular(weight)
        admissible = admissible_eta_from(info)

        rows = []
        for label, eta in (("inside", 0.5 * admissible), ("edge", admissible), ("beyond", admissible + delta)):
            norm_after = self.linalg.spectral_norm(weight - eta * S * direction)
            expected = max(info.sigma1, info.sigma2 + eta * S)
            rows.append(
                {
                    "case": label,
                    "eta": eta,
                    "admissible_eta": admissible,
                    "eta_S_below_sigma1": eta * S < info.sigma1,
                    "norm_after": norm_after,
                    "expected_norm": expected,
                    "error": abs(norm_after - expected),
                    "violated": norm_after > S * (1.0 + tolerance),
                }
            )
        exact = all(row["error"] <= tolerance for row in rows)
        violated_only_beyond = [row["violated"] for row in rows] == [False, False, True]
        verdict = Verdict.PASS if exact and violated_only_beyond else Verdict.FAIL
        summary = {"norm_beyond": rows[-1]["norm_after"], "admissible_eta": admissible}
        return self.report({"delta": delta}, rows, verdict, tolerance, started, summary)


class NormRatioExperiment(MonteCarloExperiment):
    """
    Empirical Frobenius and spectral norms of correlated draws against the closed-form
    predictions. The verdict follows the regime at the largest n.

    In the super-critical regime each draw is judged against the bulk-plus-spike norm
    ``sigma (sqrt(m) + sqrt(n)) * boundary_factor(z, n rho, c)``, which tends to the same
    ``sigma sqrt(m n rho) |z|`` limit; ``fraction_within_band`` still reports the leading-order ratio.
    """

    name = "rmt-ratio"
    SPECTRAL_BAND = 0.03
    FROBENIUS_BAND = 0.01
    SPIKE_BAND = 0.05
    SPIKE_FRACTION = 0.9
    # median srank * rho
    SRANK_BAND = (0.2, 5.0)
    KEY_DIFF_BAND = (0.1, 10.0)
    NON_VANISHING_SPREAD = 3.0
    BOUNDARY_BAND = 0.1

    def __init__(self, *args, model: Optional[ExchangeableCorrelationModel] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.model = model or ExchangeableCorrelationModel(self.linalg)

    def run(
        self,
        spec_template: CorrelatedWeightSpec,
        rho_law: str,
        ns: Sequence[int],
        trials: int,
        seed: int,
        sigma_law: str = "const",
    ) -> ExperimentReport:
        started = time.perf_counter()
        if rho_law not in RHO_LAWS:
            raise InvalidInputError(f"unknown rho law {rho_law!r}, expected one of {sorted(RHO_LAWS)}")
        if sigma_law not in SIGMA_LAWS:
            raise InvalidInputError(f"unknown sigma law {sigma_law!r}, expected one of {sorted(SIGMA_LAWS)}")
        ns = [int(n) for n in ns]
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidInputError(f"ns must be non-empty and strictly ascending, got {ns}")
        self._require_trials(trials)
        self._require_seed(seed)
        specs = {n: self._spec_for(spec_template, rho_law, sigma_law, n) for n in ns}

        def trial(key: Tuple[int, int]) -> Dict[str, Any]:
            n, index = key
            return self._measure(specs[n], index, trial_seed(seed, n, index))

        rows = self.map_trials(trial, [(n, index) for n in ns for index in range(trials)])
        frame = pd.DataFrame(rows)
        regime = classify_regime(specs[ns[-1]])
        verdict, tolerance, summary = self._judge(frame, ns, regime, sigma_law)
        summary.update(self._boundary_rule_summary(frame))
        parameters = {
            "c": spec_template.c,
            "sigma_template": spec_template.sigma_n,
            "rho_template": spec_template.rho_n,
            "rho_law": rho_law,
            "sigma_law": sigma_law,
            "ns": ns,
            "trials": trials,
            "seed": seed,
            "regime_cutoffs": f"sub<{settings.SUB_CRITICAL_CUTOFF:g} super>{settings.SUPER_CRITICAL_CUTOFF:g} "
                              f"non_vanishing_rho>={settings.NON_VANISHING_RHO:g}",
            "seed_rule": SEED_RULE,
            "seed_key": "(n, trial)",
        }
        return self.report(parameters, rows, verdict, tolerance, started, summary, self.guard(trials, rows))

    @staticmethod
    def _spec_for(template: CorrelatedWeightSpec, rho_law: str, sigma_law: str, n: int) -> CorrelatedWeightSpec:
        m = max(1, int(round(template.c * n)))
        rho = RHO_LAWS[rho_law](n, template.rho_n)
        if sigma_law == "key_diff" and not rho > 0:
            raise InvalidInputError("sigma_law=key_diff needs a positive rho")
        sigma = SIGMA_LAWS[sigma_law](n, rho, template.sigma_n)
        return CorrelatedWeightSpec(m=m, n=n, sigma_n=sigma, rho_n=rho)

    def _measure(self, spec: CorrelatedWeightSpec, index: int, stream: int) -> Dict[str, Any]:
        draw = self.model.sample(spec, stream)
        weight = draw.weight
        frob = float(np.linalg.norm(weight))
        spectral = self.linalg.spectral_norm(weight)
        prediction = self.model.predict_spectral(spec, draw.z)
        proof = self.model.predict_spectral(spec, draw.z, boundary_rule=BoundaryRule.PROOF.value)
        frob_predicted = self.model.predict_frobenius(spec).predicted_norm
        edge = spec.sigma_n * (math.sqrt(spec.m) + math.sqrt(spec.n))
        tau = spec.n * spec.rho_n
        z = draw.z
        if tau > 0 and math.isfinite(z) and z != 0.0:
            refined = edge * boundary_factor(z, tau, spec.c, BoundaryRule.PROPOSITION)
        else:
            refined = edge
        return {
            "n": spec.n,
            "m": spec.m,
            "trial": index,
            "seed": stream,
            "sigma": spec.sigma_n,
            "rho": spec.rho_n,
            "c": spec.c,
            "z": z,
            "frob": frob,
            "spectral": spectral,
            "srank": frob * frob / (spectral * spectral) if spectral > 0 else float("nan"),
            "rho_hat": self.model.mom_rho(weight) if frob > 0 else float("nan"),
            "regime": prediction.regime.value,
            "predicted_norm": prediction.predicted_norm,
            "ratio": spectral / prediction.predicted_norm if prediction.predicted_norm > 0 else float("nan"),
            "ratio_proof": spectral / proof.predicted_norm if proof.predicted_norm > 0 else float("nan"),
            "refined_norm": refined,
            "refined_ratio": spectral / refined if refined > 0 else float("nan"),
            "frob_predicted": frob_predicted,
            "frob_ratio": frob / frob_predicted if frob_predicted > 0 else float("nan"),
        }

    def _judge(self, frame: pd.DataFrame, ns: List[int], regime: Regime, sigma_law: str):
        last = frame[frame["n"] == ns[-1]]
        summary: Dict[str, Any] = {"regime": regime.value}

        if sigma_law == "key_diff":
            low, high = self.KEY_DIFF_BAND
            scaled = frame["spectral"] / (frame["z"].abs() * np.sqrt(frame["c"]))
            medians = scaled.groupby(frame["n"]).median()
            summary.update({f"median_norm_over_z[{n}]": float(medians[n]) for n in ns})
            ok = bool(((medians >= low) & (medians <= high)).all())
            return (Verdict.PASS if ok else Verdict.FAIL), high, summary

        if regime == Regime.SUB_CRITICAL:
            spectral_median = float(last["ratio"].median())
            frob_medians = frame.groupby("n")["frob_ratio"].median()
            summary["median_ratio"] = spectral_median
            summary.update({f"median_frob_ratio[{n}]": float(frob_medians[n]) for n in ns})
            ok = abs(spectral_median - 1.0) <= self.SPECTRAL_BAND and bool(
                ((frob_medians - 1.0).abs() <= self.FROBENIUS_BAND).all()
            )
            return (Verdict.PASS if ok else Verdict.FAIL), self.SPECTRAL_BAND, summary

        if regime == Regime.SUPER_CRITICAL:
            within = float(((last["ratio"] - 1.0).abs() <= self.SPIKE_BAND).mean())
            refined_within = float(((last["refined_ratio"] - 1.0).abs() <= self.SPIKE_BAND).mean())
            srank_scale = float((last["srank"] * last["rho"]).median())
            summary.update(
                {
                    "fraction_within_band": within,
                    "refined_fraction_within_band": refined_within,
                    "median_srank_times_rho": srank_scale,
                }
            )
            low, high = self.SRANK_BAND
            ok = refined_within >= self.SPIKE_FRACTION and low <= srank_scale <= high
            return (Verdict.PASS if ok else Verdict.FAIL), self.SPIKE_BAND, summary

        if regime == Regime.NON_VANISHING:
            medians = frame.groupby("n")["spectral"].median()
            spread = float(medians.max() / medians.min())
            summary.update({f"median_norm[{n}]": float(medians[n]) for n in ns})
            summary["spread"] = spread
            ok = spread < self.NON_VANISHING_SPREAD
            return (Verdict.PASS if ok else Verdict.FAIL), self.NON_VANISHING_SPREAD, summary

        deviation = float((last["ratio"] - 1.0).abs().median())
        summary["median_abs_deviation"] = deviation
        ok = deviation <= self.BOUNDARY_BAND
        return (Verdict.PASS if ok else Verdict.FAIL), self.BOUNDARY_BAND, summary

    @staticmethod
    def _boundary_rule_summary(frame: pd.DataFrame) -> Dict[str, Any]:
        boundary = frame[frame["regime"] == Regime.BOUNDARY.value]
        if boundary.empty:
            return {}
        proposition = float((boundary["ratio"] - 1.0).abs().median())
        proof = float((boundary["ratio_proof"] - 1.0).abs().median())
        return {
            "boundary_deviation_proposition": proposition,
            "boundary_deviation_proof": proof,
            "better_boundary_rule": "proposition" if proposition <= proof else "proof",
        }


class MomExperiment(MonteCarloExperiment):
    """Moment estimator against the per-draw conditional value ``rho z^2 / (rho z^2 + 1 - rho)``."""

    name = "rmt-mom"

    def __init__(self, *args, model: Optional[ExchangeableCorrelationModel] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.model = model or ExchangeableCorrelationModel(self.linalg)

    def run(
        self, specs: Sequence[CorrelatedWeightSpec], trials: int, seed: int, tolerance: float = 0.01
    ) -> ExperimentReport:
        started = time.perf_counter()
        specs = list(specs)
        if not specs:
            raise InvalidInputError("at least one spec is required")
        if any(spec.sigma_n == 0 for spec in specs):
            raise InvalidInputError("sigma_n = 0 gives all-zero draws; the estimator is undefined")
        self._require_trials(trials)
        self._require_seed(seed)

        def trial(key: Tuple[int, int]) -> Dict[str, Any]:
            position, index = key
            spec = specs[position]
            stream = trial_seed(seed, position, index)
            draw = self.model.sample(spec, stream)
            estimate = self.model.mom_rho(draw.weight)
            oracle = conditional_rho(spec.rho_n, draw.z) if spec.rho_n >= 0 else spec.rho_n
            return {
                "spec": position,
                "m": spec.m,
                "n": spec.n,
                "sigma": spec.sigma_n,
                "rho": spec.rho_n,
                "trial": index,
                "seed": stream,
                "z": draw.z,
                "rho_hat": estimate,
                "oracle": oracle,
                "deviation": abs(estimate - oracle),
            }

        rows = self.map_trials(trial, [(position, index) for position in range(len(specs)) for index in range(trials)])
        deviations = pd.DataFrame(rows).groupby("spec")["deviation"].mean()
        summary = {f"mean_abs_deviation[{position}]": float(value) for position, value in deviations.items()}
        verdict = Verdict.PASS if bool((deviations <= tolerance).all()) else Verdict.FAIL
        parameters = {
            "specs": [spec.to_dict() for spec in specs],
            "trials": trials,
            "seed": seed,
            "seed_rule": SEED_RULE,
            "seed_key": "(spec, trial)",
        }
        return self.report(parameters, rows, verdict, tolerance, started, summary, self.guard(trials, rows))


class MsignExperiment(MonteCarloExperiment):
    """Newton-Schulz msign against the SVD polar factor on matrices with bounded condition number."""

    name = "rmt-msign"

    def run(
        self,
        trials: int,
        seed: int,
        shape: Tuple[int, int] = (16, 12),
        steps: Optional[int] = None,
        max_condition: float = 100.0,
        tolerance: float = 1e-6,
    ) -> ExperimentReport:
        started = time.perf_counter()
        steps = steps or settings.NEWTON_SCHULZ_STEPS
        m, n = (int(shape[0]), int(shape[1]))
        if m < 1 or n < 1:
            raise InvalidInputError(f"shape must be positive, got {shape}")
        if not max_condition >= 1:
            raise InvalidInputError(f"max_condition must be at least 1, got {max_condition}")
        self._require_trials(trials)
        self._require_seed(seed)
        k = min(m, n)

        def trial(index: int) -> Dict[str, Any]:
            stream = trial_seed(seed, index)
            rng = np.random.default_rng(stream)
            left, _ = np.linalg.qr(rng.standard_normal((m, k)))
            right, _ = np.linalg.qr(rng.standard_normal((n, k)))
            singular = np.sort(10.0 ** rng.uniform(-math.log10(max_condition), 0.0, size=k))[::-1]
            matrix = (left * singular) @ right.T
            exact = self.linalg.polar_factor(matrix, mode="exact").matrix
            iterative = self.linalg.polar_factor(matrix, mode="iterative", steps=steps)
            return {
                "trial": index,
                "seed": stream,
                "condition": float(singular[0] / singular[-1]),
                "error": float(np.linalg.norm(iterative.matrix - exact)),
                "residual": iterative.residual,
            }

        rows = self.map_trials(trial, list(range(trials)))
        worst = max(row["error"] for row in rows)
        verdict = Verdict.PASS if worst <= tolerance else Verdict.FAIL
        parameters = {
            "shape": [m, n],
            "steps": steps,
            "max_condition": max_condition,
            "trials": trials,
            "seed": seed,
            "seed_rule": SEED_RULE,
            "seed_key": "(trial,)",
        }
        summary = {"max_error": worst}
        return self.report(parameters, rows, verdict, tolerance, started, summary, self.guard(trials, rows))


class DualExperiment(MonteCarloExperiment):
    """
    Dual subgradient solver against a coarse-then-fine grid search over
    ``nu in [-3 ||G||_*, 3 ||G||_*]``, plus dominance of the relaxed update over the projected one.
    """

    name = "rmt-dual"
    COARSE_STEP = 1e-2
    FINE_STEP = 1e-4
    DOMINANCE_SLACK = 1e-6

    def run(
        self,
        trials: int,
        seed: int,
        shape: Tuple[int, int] = (8, 6),
        iterations: Optional[int] = None,
        tolerance: float = 1e-4,
    ) -> ExperimentReport:
        started = time.perf_counter()
        m, n = (int(shape[0]), int(shape[1]))
        if m < 2 or n < 2:
            raise InvalidInputError(f"shape must be at least 2x2, got {shape}")
        self._require_trials(trials)
        self._require_seed(seed)
        solver = DualSubgradientSolver(self.linalg, iterations=iterations)

        def trial(index: int) -> Dict[str, Any]:
            stream = trial_seed(seed, index)
            rng = np.random.default_rng(stream)
            weight = rng.standard_normal((m, n))
            grad = rng.standard_normal((m, n))
            info = self.linalg.top_two_singular(weight)
            solve = solver.solve(grad, info.u1, info.v1)
            anchor = np.outer(info.u1, info.v1)
            grid_nu, grid_value = self._grid_minimum(grad, anchor, 3.0 * self.linalg.nuclear_norm(grad))
            projected = self.linalg.polar_factor(self.linalg.project_out_top(grad, info.u1, info.v1)).matrix
            dual_value = float(np.sum(grad * solve.delta))
            projection_value = float(np.sum(grad * projected))
            return {
                "trial": index,
                "seed": stream,
                "nu_min": solve.nu_min,
                "objective": solve.objective,
                "grid_nu": grid_nu,
                "grid_objective": grid_value,
                "objective_gap": solve.objective - grid_value,
                "dual_value": dual_value,
                "projection_value": projection_value,
                "dominates": dual_value >= projection_value - self.DOMINANCE_SLACK,
                "iterations": solve.iterations,
                "degenerate": solve.degenerate,
                "residual": solve.residual,
                "converged": info.converged,
            }

        rows = self.map_trials(trial, list(range(trials)))
        worst_gap = max(row["objective_gap"] for row in rows)
        dominates = all(row["dominates"] for row in rows)
        verdict = Verdict.PASS if worst_gap <= tolerance and dominates else Verdict.FAIL
        parameters = {
            "shape": [m, n],
            "iterations": solver.iterations,
            "grid": f"coarse {self.COARSE_STEP:g} then fine {self.FINE_STEP:g}",
            "trials": trials,
            "seed": seed,
            "seed_rule": SEED_RULE,
            "seed_key": "(trial,)",
        }
        summary = {"max_objective_gap": worst_gap, "all_dominate": dominates}
        return self.report(parameters, rows, verdict, tolerance, started, summary, self.guard(trials, rows))

    def _grid_minimum(self, grad: np.ndarray, anchor: np.ndarray, radius: float) -> Tuple[float, float]:
        coarse = np.arange(-radius, radius + self.COARSE_STEP, self.COARSE_STEP)
        values = self._nuclear_along(grad, anchor, coarse)
        centre = coarse[int(np.argmin(values))]
        # F is convex, so the fine search only needs the neighbourhood of the coarse minimizer
        fine = np.arange(centre - 2 * self.COARSE_STEP, centre + 2 * self.COARSE_STEP + self.FINE_STEP, self.FINE_STEP)
        fine_values = self._nuclear_along(grad, anchor, fine)
        best = int(np.argmin(fine_values))
        return float(fine[best]), float(fine_values[best])

    @staticmethod
    def _nuclear_along(grad: np.ndarray, anchor: np.ndarray, nus: np.ndarray, chunk: int = 4096) -> np.ndarray:
        out = np.empty(nus.size)
        for start in range(0, nus.size, chunk):
            block = nus[start:start + chunk]
            stack = grad[None, :, :] + block[:, None, None] * anchor[None, :, :]
            out[start:start + chunk] = np.linalg.svd(stack, compute_uv=False).sum(axis=1)
        return out

