"""Noisy black-box test problems with known ground truth.

An oracle wraps a stochastic response ``Y(theta)`` whose mean is the
performance measure of interest.  Oracles are immutable; every draw goes
through a caller-owned ``numpy.random.Generator``, so evaluation is pure
given the stream and safe to run concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "GroundTruth",
    "SimulationOracle",
    "QueueSpec",
    "sin_oracle",
    "poly_oracle",
    "noisy_bench_oracle",
    "queue_oracle",
    "lr_derivative_oracle",
    "deterministic_oracle",
    "rosenbrock",
    "zakharov",
    "Problem",
    "parse_problem",
]


@dataclass(frozen=True)
class GroundTruth:
    """Known constants of a problem at the point of interest.

    Fields are ``None`` when unavailable; consumers that need a constant must
    refuse to run rather than substitute a default.

    deriv        first derivative of the mean response
    bias_const   third-derivative constant (leading quadratic bias coefficient)
    fifth_const  fifth-derivative constant (next, quartic bias coefficient)
    noise_var    response variance at the point
    """

    deriv: float | None = None
    bias_const: float | None = None
    fifth_const: float | None = None
    noise_var: float | None = None

    def __post_init__(self) -> None:
        if self.noise_var is not None and not self.noise_var > 0:
            raise ValueError(f"noise_var must be positive when given, got {self.noise_var}")


@dataclass(frozen=True)
class SimulationOracle:
    """A noisy function ``Y(theta)`` evaluated by simulation.

    ``sample(theta, rng, size)`` returns ``size`` independent draws at one
    point.  ``mean`` is the noise-free response when known (used for
    optimality-gap reporting and exactness tests), ``truth`` maps a point to
    its :class:`GroundTruth`, and ``argmin`` is the known minimizer for
    benchmark functions.
    """

    dim: int
    label: str
    sample: Callable[[np.ndarray, np.random.Generator, int], np.ndarray]
    mean: Callable[[np.ndarray], float] | None = None
    truth: Callable[[np.ndarray], GroundTruth] | None = None
    argmin: np.ndarray | None = None

    def eval(self, theta: np.ndarray | float, rng: np.random.Generator) -> float:
        """One scalar draw of ``Y(theta)``."""
        return float(self.sample(np.atleast_1d(np.asarray(theta, dtype=float)), rng, 1)[0])


def deterministic_oracle(f: Callable[[np.ndarray], float], dim: int = 1, label: str = "noise-free") -> SimulationOracle:
    """Wrap a deterministic function as a zero-noise oracle (test helper)."""

    def sample(theta, rng, size):
        return np.full(size, float(f(theta)))

    return SimulationOracle(dim=dim, label=label, sample=sample, mean=lambda t: float(f(t)))


# ---------------------------------------------------------------------------
# Scaled sine (homoscedastic and heteroscedastic noise)
# ---------------------------------------------------------------------------

def sin_oracle(kappa: float, case: int | str = 1) -> SimulationOracle:
    """Mean response ``kappa*sin(theta)`` with Gaussian noise.

    Case 1 ("homoscedastic"): unit noise variance everywhere.
    Case 2 ("heteroscedastic"): noise variance ``exp(-3*theta)``.
    """
    if kappa == 0:
        raise ValueError("kappa must be nonzero (the derivative target degenerates)")
    case_id = {1: 1, 2: 2, "homoscedastic": 1, "heteroscedastic": 2}.get(case)
    if case_id is None:
        raise ValueError(f"unknown case {case!r}")

    def mean(theta):
        return float(kappa * np.sin(np.atleast_1d(theta)[0]))

    def sd(theta):
        t = float(np.atleast_1d(theta)[0])
        return 1.0 if case_id == 1 else float(np.exp(-1.5 * t))

    def sample(theta, rng, size):
        return rng.normal(mean(theta), sd(theta), size)

    def truth(theta):
        t = float(np.atleast_1d(theta)[0])
        ct = float(np.cos(t))
        return GroundTruth(
            deriv=kappa * ct,
            bias_const=-kappa * ct / 6.0,
            fifth_const=kappa * ct / 120.0,
            noise_var=sd(t) ** 2,
        )

    return SimulationOracle(dim=1, label=f"sin{case_id}", sample=sample, mean=mean, truth=truth)


# ---------------------------------------------------------------------------
# Degree-5 polynomial
# ---------------------------------------------------------------------------

def poly_oracle() -> SimulationOracle:
    """Mean response ``1 - 6 t + 6 t^2 - 2.5 t^3 + 0.1 t^5`` with unit noise."""

    def mean(theta):
        t = float(np.atleast_1d(theta)[0])
        return 1.0 - 6.0 * t + 6.0 * t * t - 2.5 * t**3 + 0.1 * t**5

    def sample(theta, rng, size):
        return rng.normal(mean(theta), 1.0, size)

    def truth(theta):
        t = float(np.atleast_1d(theta)[0])
        return GroundTruth(
            deriv=-6.0 + 12.0 * t - 7.5 * t * t + 0.5 * t**4,
            bias_const=-2.5 + t * t,
            fifth_const=0.1,
            noise_var=1.0,
        )

    return SimulationOracle(dim=1, label="poly", sample=sample, mean=mean, truth=truth)


# ---------------------------------------------------------------------------
# Noisy optimization benchmarks
# ---------------------------------------------------------------------------

def rosenbrock(x: np.ndarray) -> float:
    x1, x2 = float(x[0]), float(x[1])
    return 100.0 * (x2 - x1 * x1) ** 2 + (x1 - 1.0) ** 2


def zakharov(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    i = np.arange(1, x.size + 1)
    s = float(np.sum(0.5 * i * x))
    return float(np.sum(x * x)) + s**2 + s**4


def noisy_bench_oracle(fn: str, d: int) -> SimulationOracle:
    """Benchmark function plus unit Gaussian noise; the clean function stays
    exposed through ``mean`` for gap reporting."""
    if fn == "rosenbrock":
        if d != 2:
            raise ValueError("rosenbrock is defined in two dimensions")
        f, argmin = rosenbrock, np.ones(2)
    elif fn == "zakharov":
        if d < 1:
            raise ValueError(f"zakharov needs d >= 1, got {d}")
        f, argmin = zakharov, np.zeros(d)
    else:
        raise ValueError(f"unknown benchmark function {fn!r}")

    def sample(theta, rng, size):
        return f(theta) + rng.standard_normal(size)

    return SimulationOracle(
        dim=d, label=f"{fn}@{d}", sample=sample, mean=lambda t: float(f(t)), argmin=argmin
    )


# ---------------------------------------------------------------------------
# M/M/1 queue: average waiting time of the first N customers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QueueSpec:
    """Single-server Markovian queue observed for a fixed number of customers."""

    arrival_rate: float
    service_rate: float
    horizon: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.arrival_rate) and self.arrival_rate > 0):
            raise ValueError(f"arrival_rate must be finite and positive, got {self.arrival_rate}")
        if not (np.isfinite(self.service_rate) and self.service_rate > 0):
            raise ValueError(f"service_rate must be finite and positive, got {self.service_rate}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")


def _simulate_queue(
    lam: float,
    mu: float,
    horizon: int,
    measure: str,
    rng: np.random.Generator,
    size: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized waiting-time recursion for ``size`` independent paths.

    Returns (responses, interarrival draws, service draws); the draws are
    needed by the score-function derivative estimator.  Exponentials come from
    the inverse CDF so a fixed stream reproduces paths exactly.  With
    ``measure="wait"`` the response is the average waiting time of the first
    ``horizon`` customers; with ``measure="sojourn"`` their average time in
    system (wait plus own service), which draws one extra service time.
    """
    n_steps = horizon - 1
    n_svc = horizon if measure == "sojourn" else n_steps
    # Interarrivals of customers 2..N, then the services in customer order.
    arrivals = -np.log(rng.random((size, n_steps))) / lam if n_steps else np.empty((size, 0))
    services = -np.log(rng.random((size, n_svc))) / mu if n_svc else np.empty((size, 0))
    wait = np.zeros(size)
    total = np.zeros(size)
    for i in range(n_steps):
        wait = np.maximum(wait + services[:, i] - arrivals[:, i], 0.0)
        total += wait
    if measure == "sojourn":
        total += services.sum(axis=1)
    return total / horizon, arrivals, services


def queue_oracle(
    spec: QueueSpec, parameter: str = "service", measure: str = "sojourn"
) -> SimulationOracle:
    """Per-customer congestion of the first ``horizon`` customers, as a
    function of one rate parameter (the other stays fixed at its spec value).

    The first customer arrives to an empty system and never waits.  The
    default response is the average time in system; ``measure="wait"``
    restricts it to the average waiting time.  The default (service rate,
    time in system) pairing is the one validated against the published
    sensitivity values by :func:`lr_derivative_oracle`; see the README.
    """
    if parameter not in ("arrival", "service"):
        raise ValueError(f"parameter must be 'arrival' or 'service', got {parameter!r}")
    if measure not in ("wait", "sojourn"):
        raise ValueError(f"measure must be 'wait' or 'sojourn', got {measure!r}")

    def rates(theta):
        t = float(np.atleast_1d(theta)[0])
        if not t > 0:
            raise ValueError(f"queue rates must be positive, got {t}")
        if parameter == "arrival":
            return t, spec.service_rate
        return spec.arrival_rate, t

    def sample(theta, rng, size):
        lam, mu = rates(theta)
        response, _, _ = _simulate_queue(lam, mu, spec.horizon, measure, rng, size)
        return response

    label = f"queue@{spec.arrival_rate},{spec.service_rate},{spec.horizon},{parameter},{measure}"
    return SimulationOracle(dim=1, label=label, sample=sample)


def lr_derivative_oracle(
    spec: QueueSpec,
    parameter: str,
    reps: int,
    rng: np.random.Generator,
    measure: str = "sojourn",
    batch: int = 200_000,
) -> float:
    """Score-function estimate of the derivative of the expected queue
    response with respect to the chosen rate.

    Used only to validate the queue problems: the estimator multiplies each
    simulated response by the log-likelihood derivative of the exponential
    draws the response depends on.
    """
    if parameter not in ("arrival", "service"):
        raise ValueError(f"parameter must be 'arrival' or 'service', got {parameter!r}")
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    lam, mu = spec.arrival_rate, spec.service_rate
    total = 0.0
    done = 0
    while done < reps:
        m = min(batch, reps - done)
        response, arrivals, services = _simulate_queue(lam, mu, spec.horizon, measure, rng, m)
        if parameter == "arrival":
            score = np.sum(1.0 / lam - arrivals, axis=1)
        else:
            score = np.sum(1.0 / mu - services, axis=1)
        total += float(np.sum(response * score))
        done += m
    return total / reps


# ---------------------------------------------------------------------------
# Problem registry: string ids -> (oracle, point of interest, truth)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    """An oracle together with the point where the derivative (or the
    optimization) is taken, and ground truth when available."""

    oracle: SimulationOracle
    theta0: np.ndarray
    truth: GroundTruth | None
    label: str


def parse_problem(problem_id: str, kappa: float = 10.0) -> Problem:
    """Build a problem from its string id.

    Supported ids: ``sin1``, ``sin2``, ``poly@<theta0>``, ``rosenbrock``,
    ``zakharov@<d>``, ``queue@<lam>,<mu>,<N>,<param>``.
    """
    pid = problem_id.strip()
    name, _, arg = pid.partition("@")
    if name in ("sin1", "sin2"):
        if arg:
            raise ValueError(f"{name} takes no parameters, got {pid!r}")
        oracle = sin_oracle(kappa, 1 if name == "sin1" else 2)
        theta0 = np.zeros(1)
        return Problem(oracle, theta0, oracle.truth(theta0), pid)
    if name == "poly":
        theta0 = np.array([float(arg)]) if arg else np.zeros(1)
        oracle = poly_oracle()
        return Problem(oracle, theta0, oracle.truth(theta0), pid)
    if name == "rosenbrock":
        if arg:
            raise ValueError(f"rosenbrock takes no parameters, got {pid!r}")
        oracle = noisy_bench_oracle("rosenbrock", 2)
        return Problem(oracle, np.zeros(2), None, pid)
    if name == "zakharov":
        d = int(arg) if arg else 1
        oracle = noisy_bench_oracle("zakharov", d)
        return Problem(oracle, np.ones(d), None, pid)
    if name == "queue":
        parts = arg.split(",")
        if len(parts) not in (4, 5):
            raise ValueError(
                f"queue id must be queue@<lam>,<mu>,<N>,<param>[,<measure>], got {pid!r}"
            )
        spec = QueueSpec(float(parts[0]), float(parts[1]), int(parts[2]))
        parameter = parts[3].strip()
        measure = parts[4].strip() if len(parts) == 5 else "sojourn"
        oracle = queue_oracle(spec, parameter, measure)
        theta0 = np.array([spec.arrival_rate if parameter == "arrival" else spec.service_rate])
        return Problem(oracle, theta0, None, pid)
    raise ValueError(f"unknown problem id {pid!r}")
