"""Central-difference gradient estimators.

Four methods share one interface:

- ``tra``: average of difference samples at a caller-chosen perturbation;
- ``opt``: the same, at the perturbation computed from the problem's true
  constants (an oracle baseline);
- ``boot``: pilot stage estimates the constants, the pilots are discarded,
  and the remaining budget is spent at the estimated perturbation;
- ``cor``: pilot stage as above, then every pilot sample is location-scale
  mapped to the estimated perturbation and averaged together with the fresh
  samples, so the whole budget contributes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bootstrap import column_moments
from .oracle import GroundTruth, SimulationOracle
from .regression import clamp_bias_constant, clamp_floor, fit_bias_wls, fit_var_wls
from .sampling import (
    DEFAULT_PILOT_EXPONENT,
    PerturbationGenerator,
    PerturbationSet,
    difference_samples,
    draw_perturbation_set,
)

__all__ = [
    "EstimationError",
    "BudgetError",
    "EstimatorConfig",
    "PilotData",
    "ConstantEstimates",
    "GradientEstimate",
    "optimal_perturbation",
    "transform_pilot_sample",
    "tra_cfd",
    "opt_cfd",
    "boot_cfd",
    "cor_cfd",
    "estimate_constants",
    "r_sweep",
]


class EstimationError(RuntimeError):
    """The constant-estimation stage produced unusable values."""


class BudgetError(ValueError):
    """The sample-pair budget cannot accommodate the requested split."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the pilot/constant-estimation stage.

    ``pilot_size`` (per-perturbation pair count) wins over ``pilot_fraction``
    (share of the budget spent on pilots) when both are set.  The default
    spends the whole budget on pilots, which the transformation step then
    recycles.
    """

    K: int = 10
    pilot_fraction: float | None = 1.0
    pilot_size: int | None = None
    bootstrap_reps: int = 1000
    bootstrap_mode: str = "mc"
    pilot_exponent: float = DEFAULT_PILOT_EXPONENT
    coeff_gen: PerturbationGenerator = field(default_factory=PerturbationGenerator)
    clamp_scale: float = 1e-4
    weighting: str = "wls"

    def resolve_pilot_size(self, n: int) -> int:
        """Pairs per pilot perturbation for a total budget of ``n`` pairs."""
        if self.pilot_size is not None:
            n_b = int(self.pilot_size)
        elif self.pilot_fraction is not None:
            n_b = int(np.floor(self.pilot_fraction * n / self.K))
        else:
            raise ValueError("config must set pilot_size or pilot_fraction")
        if n_b < 2:
            raise BudgetError(
                f"budget {n} leaves fewer than 2 pilot pairs per perturbation (K={self.K})"
            )
        if self.K * n_b > n:
            raise BudgetError(
                f"pilot stage needs {self.K * n_b} pairs but the budget is {n}"
            )
        return n_b


@dataclass(frozen=True)
class PilotData:
    """Difference samples of the pilot stage: row ``k`` holds the samples at
    perturbation ``k``.  The pair cost is exactly ``K * n_b``."""

    perturbations: PerturbationSet
    samples: np.ndarray

    @property
    def pair_cost(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class ConstantEstimates:
    """Outputs of the constant-estimation stage.

    ``bias_const`` is the clamped slope used everywhere downstream;
    ``bias_const_raw`` keeps the unclamped fit for inspection.
    ``perturbation`` is derived from ``budget`` sample pairs.
    """

    deriv: float
    bias_const: float
    bias_const_raw: float
    noise_var: float
    perturbation: float
    budget: int


@dataclass(frozen=True)
class GradientEstimate:
    """A derivative estimate with its provenance."""

    value: float
    method: str
    pairs_used: int
    perturbation: float
    constants: ConstantEstimates | None = None


def optimal_perturbation(noise_var: float, bias_const: float, n: int) -> float:
    """Perturbation minimizing the asymptotic mean squared error at budget ``n``."""
    if bias_const == 0:
        raise ValueError("bias constant must be nonzero")
    if n < 1:
        raise ValueError(f"budget must be >= 1, got {n}")
    return float((noise_var / (4.0 * n * bias_const**2)) ** (1.0 / 6.0))


def transform_pilot_sample(
    delta: float, h_k: float, h_n: float, deriv: float, bias_const: float
) -> float:
    """Map one pilot difference sample to the target perturbation.

    Centers the sample at its fitted mean, rescales by the perturbation
    ratio (standard deviations scale like ``1/h``), and recenters at the
    fitted mean of the target perturbation.
    """
    if h_n == 0:
        raise ValueError("target perturbation must be nonzero")
    fitted_k = deriv + bias_const * h_k * h_k
    fitted_n = deriv + bias_const * h_n * h_n
    return abs(h_k) / abs(h_n) * (delta - fitted_k) + fitted_n


def _pilot_matrix(
    oracle: SimulationOracle,
    theta0,
    coord: int,
    pert: PerturbationSet,
    rng: np.random.Generator,
) -> np.ndarray:
    columns = rng.spawn(pert.size)
    return np.stack(
        [
            difference_samples(oracle, theta0, coord, float(h), columns[k], pert.pilot_size)
            for k, h in enumerate(pert.perturbations)
        ]
    )


def _fit_constants(
    pilot: PilotData, budget: int, cfg: EstimatorConfig, boot_rng: np.random.Generator
) -> ConstantEstimates:
    pert = pilot.perturbations
    n_b = pert.pilot_size
    means, variances = column_moments(
        pilot.samples, cfg.bootstrap_mode, cfg.bootstrap_reps, boot_rng
    )
    # Columns whose spread is pure floating-point rounding count as
    # deterministic.
    degenerate = variances <= (1e-12 * np.maximum(1.0, np.abs(means))) ** 2
    noise_free = bool(np.all(degenerate))
    if np.any(degenerate) and not noise_free:
        raise EstimationError(
            "a pilot column has zero resampling variance while others do not; "
            "the noisy-response model does not hold for this oracle"
        )
    if cfg.weighting == "wls":
        # Noise-free pilots carry no weighting information: fall back to
        # equal weights.
        sds = np.ones_like(variances) if noise_free else np.sqrt(variances)
    elif cfg.weighting == "ols":
        sds = np.ones_like(variances)
    else:
        raise ValueError(f"unknown weighting {cfg.weighting!r}")
    bias_fit = fit_bias_wls(pert.perturbations, means, sds)
    noise_var = 0.0 if noise_free else fit_var_wls(pert.perturbations, variances, n_b).noise_var
    clamped = clamp_bias_constant(bias_fit.slope, clamp_floor(bias_fit.intercept, cfg.clamp_scale))
    if not noise_free:
        h_n = optimal_perturbation(noise_var, clamped, budget)
    else:
        # Zero estimated noise makes the error-optimal perturbation
        # degenerate.  The largest pilot perturbation keeps every transform
        # ratio at most one, so the downstream error stays within the
        # clamped-slope times squared-perturbation bound.
        h_n = float(np.max(pert.perturbations))
    return ConstantEstimates(
        deriv=bias_fit.intercept,
        bias_const=clamped,
        bias_const_raw=bias_fit.slope,
        noise_var=noise_var,
        perturbation=h_n,
        budget=budget,
    )


def estimate_constants(
    oracle: SimulationOracle,
    theta0,
    coord: int,
    n: int,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
    budget: int | None = None,
) -> tuple[ConstantEstimates, PilotData]:
    """Run the pilot stage: draw perturbations and samples, fit the constants,
    and derive the perturbation for ``budget`` (default: ``n``) pairs."""
    n_b = cfg.resolve_pilot_size(n)
    coeff_rng, pilot_rng, boot_rng = rng.spawn(3)
    pert = draw_perturbation_set(cfg.K, n_b, cfg.coeff_gen, coeff_rng, cfg.pilot_exponent)
    pilot = PilotData(pert, _pilot_matrix(oracle, theta0, coord, pert, pilot_rng))
    constants = _fit_constants(pilot, n if budget is None else budget, cfg, boot_rng)
    return constants, pilot


def tra_cfd(
    oracle: SimulationOracle,
    theta0,
    coord: int,
    n: int,
    h: float,
    rng: np.random.Generator,
) -> GradientEstimate:
    """Plain difference estimator: average of ``n`` pairs at perturbation ``h``."""
    if n < 1:
        raise ValueError(f"need n >= 1 pairs, got {n}")
    value = float(difference_samples(oracle, theta0, coord, h, rng, n).mean())
    return GradientEstimate(value, "tra", n, float(h))


def opt_cfd(
    oracle: SimulationOracle,
    theta0,
    coord: int,
    n: int,
    truth: GroundTruth,
    rng: np.random.Generator,
) -> GradientEstimate:
    """Difference estimator at the perturbation computed from true constants.

    Refuses to run when the required constants are unknown: silently
    substituted defaults would fake an oracle baseline.
    """
    if truth is None or truth.bias_const is None or truth.noise_var is None:
        raise ValueError("opt method needs the true bias constant and noise variance")
    if truth.bias_const == 0:
        raise ValueError("opt method is undefined for a zero bias constant")
    h_star = optimal_perturbation(truth.noise_var, truth.bias_const, n)
    est = tra_cfd(oracle, theta0, coord, n, h_star, rng)
    return replace(est, method="opt")


def boot_cfd(
    oracle: SimulationOracle,
    theta0,
    coord: int,
    n: int,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
) -> GradientEstimate:
    """Two-stage estimator that discards its pilots.

    The perturbation is derived from the leftover budget ``n - K*n_b`` and
    only that many fresh pairs enter the average; the pilot pairs still count
    against the budget.
    """
    n_b = cfg.resolve_pilot_size(n)
    n2 = n - cfg.K * n_b
    if n2 < 1:
        raise BudgetError(
            f"budget {n} leaves no fresh pairs after {cfg.K * n_b} pilot pairs"
        )
    est_rng, fresh_rng = rng.spawn(2)
    constants, _ = estimate_constants(oracle, theta0, coord, n, cfg, est_rng, budget=n2)
    fresh = difference_samples(oracle, theta0, coord, constants.perturbation, fresh_rng, n2)
    return GradientEstimate(float(fresh.mean()), "boot", n, constants.perturbation, constants)


def cor_cfd(
    oracle: SimulationOracle,
    theta0,
    coord: int,
    n: int,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
    constants: ConstantEstimates | None = None,
) -> GradientEstimate:
    """Correlation-induced estimator: the full pipeline.

    Pilot samples estimate the constants and the optimal perturbation for the
    *full* budget ``n``; every pilot sample is then transformed to that
    perturbation and averaged with the ``n - K*n_b`` fresh pairs.  Spending
    the entire budget on pilots (no fresh pairs) is valid.

    ``constants`` overrides the estimation stage (testing hook); the pilot
    draws and the transformation still run.
    """
    n_b = cfg.resolve_pilot_size(n)
    est_rng, fresh_rng = rng.spawn(2)
    if constants is None:
        constants, pilot = estimate_constants(oracle, theta0, coord, n, cfg, est_rng, budget=n)
    else:
        coeff_rng, pilot_rng, _ = est_rng.spawn(3)
        pert = draw_perturbation_set(cfg.K, n_b, cfg.coeff_gen, coeff_rng, cfg.pilot_exponent)
        pilot = PilotData(pert, _pilot_matrix(oracle, theta0, coord, pert, pilot_rng))
    h_n = constants.perturbation
    if h_n == 0:
        raise EstimationError("estimated perturbation is zero")
    h = pilot.perturbations.perturbations
    fitted = constants.deriv + constants.bias_const * h * h
    fitted_n = constants.deriv + constants.bias_const * h_n * h_n
    transformed = (np.abs(h) / abs(h_n))[:, None] * (pilot.samples - fitted[:, None]) + fitted_n
    n2 = n - pilot.pair_cost
    fresh = (
        difference_samples(oracle, theta0, coord, h_n, fresh_rng, n2)
        if n2 > 0
        else np.empty(0)
    )
    value = (float(transformed.sum()) + float(fresh.sum())) / n
    return GradientEstimate(value, "cor", n, h_n, constants)


def r_sweep(
    oracle: SimulationOracle,
    theta0,
    coord: int,
    truth_deriv: float,
    n: int,
    r_grid,
    cfg: EstimatorConfig,
    reps: int,
    rng: np.random.Generator,
) -> list[dict]:
    """Replicated error table of the ``cor`` and ``boot`` methods across
    pilot-budget fractions.

    Rows where a method is infeasible (``boot`` needs at least one fresh
    pair) are marked invalid instead of aborting the sweep.
    """
    rows: list[dict] = []
    for r in r_grid:
        sub = replace(cfg, pilot_fraction=float(r), pilot_size=None)
        n_b = sub.resolve_pilot_size(n)
        for method, fn in (("cor", cor_cfd), ("boot", boot_cfd)):
            row = {"r": float(r), "method": method, "reps": reps, "pairs": n}
            if method == "boot" and n - sub.K * n_b < 1:
                row.update(valid=False, bias=np.nan, variance=np.nan, mse=np.nan)
                rows.append(row)
                continue
            cell_rng = rng.spawn(1)[0]
            values = np.array(
                [fn(oracle, theta0, coord, n, sub, rep_rng).value for rep_rng in cell_rng.spawn(reps)]
            )
            bias = float(values.mean() - truth_deriv)
            variance = float(values.var(ddof=0))
            row.update(valid=True, bias=bias, variance=variance, mse=bias * bias + variance)
            rows.append(row)
    return rows
