"""Brute-force checks of the encoder/generator equilibrium on finite games.

A discrete game has a finite support of n points with data distribution
``p_data``, generator distribution ``p_g``, a nonnegative energy per point and
a margin ``m``. The encoder minimizes

    V = sum_i p_data[i] E[i] + p_g[i] max(0, m - E[i])

and the generator minimizes ``U = sum_i p_g[i] E[i]``. The equilibrium is
``p_g = p_data`` with a constant energy ``gamma`` in ``[0, m]``, where V = m.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import make_rng
from .errors import InvalidInputError

PROB_TOL = 1e-12


@dataclass(frozen=True)
class PhiProblem:
    """phi(y) = a y + b max(0, m - y) on y >= 0."""

    a: float
    b: float
    m: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise InvalidInputError("a and b must be nonnegative")
        if not self.m > 0:
            raise InvalidInputError("margin must be positive")

    def __call__(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self.a * y + self.b * np.maximum(0.0, self.m - y)


def phi_minimizer(p: PhiProblem) -> tuple:
    """Minimizers of phi on [0, inf): (m,) if a < b, (0,) if a > b, (0, m) on a tie.

    On a tie phi equals a*m on the whole of [0, m]; the two endpoints are
    reported, 0 first (the preferred choice).
    """
    if p.a < p.b:
        return (p.m,)
    if p.a > p.b:
        return (0.0,)
    return (0.0, p.m)


def _check_prob(name, p, positive=False):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(p)) or p.min() < 0:
        raise InvalidInputError(f"{name} must be finite and nonnegative")
    if abs(p.sum() - 1.0) > PROB_TOL * max(1, p.size):
        raise InvalidInputError(f"{name} must sum to 1 (got {p.sum()!r})")
    if positive and p.min() <= 0:
        raise InvalidInputError(f"{name} has zero-probability points; the equilibrium result assumes full support")
    return p


@dataclass
class DiscreteGame:
    p_data: np.ndarray
    p_g: np.ndarray
    energy: np.ndarray
    margin: float

    def __post_init__(self):
        self.p_data = _check_prob("p_data", self.p_data, positive=True)
        self.p_g = _check_prob("p_g", self.p_g)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        if self.energy.shape != self.p_data.shape or self.p_g.shape != self.p_data.shape:
            raise InvalidInputError("p_data, p_g and energy must have the same length")
        if not np.all(np.isfinite(self.energy)) or self.energy.min() < 0:
            raise InvalidInputError("energy must be finite and nonnegative")
        if not self.margin > 0:
            raise InvalidInputError("margin must be positive")


def game_value_V(g: DiscreteGame) -> float:
    return float(np.sum(g.p_data * g.energy + g.p_g * np.maximum(0.0, g.margin - g.energy)))


def game_value_U(g: DiscreteGame) -> float:
    return float(np.dot(g.p_g, g.energy))


def best_response_energy(p_data, p_g, m: float) -> np.ndarray:
    """Pointwise minimizer of V over energies: m where p_data < p_g, else 0."""
    p_data = _check_prob("p_data", p_data)
    p_g = _check_prob("p_g", p_g)
    if p_data.shape != p_g.shape:
        raise InvalidInputError("p_data and p_g must have the same length")
    return np.where(p_data < p_g, float(m), 0.0)


def random_simplex(rng: np.random.Generator, n: int) -> np.ndarray:
    p = rng.dirichlet(np.ones(n))
    p = np.maximum(p, 1e-300)
    return p / p.sum()


@dataclass
class SaddleReport:
    value_v: float
    value_u: float
    is_saddle: bool
    gamma_estimate: Optional[float]
    max_violation: float
    margin: float
    n_trials: int
    min_perturbed_v: float = math.nan
    max_generator_gain: float = 0.0
    counterexample_gain: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"saddle point:       {'yes' if self.is_saddle else 'NO'}",
            f"V(G*, E*)           {self.value_v:.12g}  (margin m = {self.margin:g})",
            f"U(G*, E*)           {self.value_u:.12g}",
            f"gamma               {self.gamma_estimate if self.gamma_estimate is not None else '-'}",
            f"min V over {self.n_trials} perturbed energies: {self.min_perturbed_v:.12g}",
            f"max generator gain  {self.max_generator_gain:.3g}",
            f"max violation       {self.max_violation:.3g}",
        ]
        if self.counterexample_gain is not None:
            lines.append(f"G0 counterexample   U decrease {self.counterexample_gain:.6g}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)

    def to_csv(self) -> str:
        row = {k: v for k, v in asdict(self).items() if k != "notes"}
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def verify_saddle(p_data, m: float, tolerance: float = 1e-9, gamma: Optional[float] = None,
                  energy=None, n_trials: int = 1000, seed: int = 0) -> SaddleReport:
    """Check that (p_g = p_data, E) is a saddle point by brute force.

    ``energy`` defaults to the constant ``gamma`` (drawn from [0, m] when not
    given). Checks: V equals m; no energy in [0, 2m]^n lowers V; no random
    generator distribution lowers U; and, for a non-constant energy, the
    generator that moves all mass to the lowest-energy point lowers U.
    """
    if not m > 0:
        raise InvalidInputError("margin must be positive")
    p_data = _check_prob("p_data", p_data, positive=True)
    n = p_data.size
    rng = make_rng(seed, 0x5AD)
    if energy is None:
        if gamma is None:
            gamma = float(rng.uniform(0.0, m))
        energy = np.full(n, float(gamma))
    energy = np.asarray(energy, dtype=np.float64)
    game = DiscreteGame(p_data, p_data.copy(), energy, m)
    notes = []

    v_star = game_value_V(game)
    u_star = game_value_U(game)
    violation = abs(v_star - m)

    # encoder side: V(G*, E') >= V(G*, E*) for arbitrary energies
    min_v = math.inf
    for _ in range(n_trials):
        e_alt = rng.uniform(0.0, 2.0 * m, size=n)
        min_v = min(min_v, game_value_V(DiscreteGame(p_data, p_data, e_alt, m)))
    violation = max(violation, v_star - min_v)

    # generator side: U(G', E*) >= U(G*, E*)
    gain = 0.0
    for _ in range(n_trials):
        p_alt = random_simplex(rng, n)
        gain = max(gain, u_star - game_value_U(DiscreteGame(p_data, p_alt, energy, m)))
    violation = max(violation, gain)

    constant = bool(np.ptp(energy) <= tolerance)
    counter = None
    if constant:
        notes.append("energy is constant, so U is the same for every generator distribution")
        gamma_est = float(energy.mean())
    else:
        gamma_est = None
        p0 = np.zeros(n)
        p0[int(np.argmin(energy))] = 1.0
        counter = u_star - game_value_U(DiscreteGame(p_data, p0, energy, m))
        notes.append("energy is not constant; a generator concentrated on its minimum lowers U")
        violation = max(violation, counter)
    if energy.max() > m + tolerance:
        notes.append("energy exceeds the margin somewhere")

    is_saddle = violation <= tolerance
    return SaddleReport(
        value_v=v_star,
        value_u=u_star,
        is_saddle=bool(is_saddle),
        gamma_estimate=gamma_est,
        max_violation=float(violation),
        margin=float(m),
        n_trials=n_trials,
        min_perturbed_v=float(min_v),
        max_generator_gain=float(gain),
        counterexample_gain=None if counter is None else float(counter),
        notes=notes,
    )


# ---------------------------------------------------------------------------
# randomized suites used by the CLI and the tests


def lemma_fuzz(n_cases: int = 1000, grid_points: int = 10_000, seed: int = 0) -> dict:
    """Compare phi_minimizer against a grid search on [0, 3m]."""
    rng = make_rng(seed, 0x1E3)
    disagreements = 0
    for _ in range(n_cases):
        p = PhiProblem(float(rng.uniform(0, 1)), float(rng.uniform(0, 1)), float(rng.uniform(0.1, 100)))
        if not phi_agrees_with_grid(p, grid_points):
            disagreements += 1
    return {"cases": n_cases, "disagreements": disagreements}


def phi_agrees_with_grid(p: PhiProblem, grid_points: int = 10_000) -> bool:
    y = np.linspace(0.0, 3.0 * p.m, grid_points)
    vals = p(y)
    best = vals.min()
    step = y[1] - y[0]
    claimed = phi_minimizer(p)
    slack = (p.a + p.b) * step + 1e-12 * max(1.0, abs(best))
    # every claimed point attains the grid minimum ...
    if any(p(c) > best + slack for c in claimed):
        return False
    # ... and every grid minimizer lies next to a claimed point (or on the tie plateau)
    near = y[vals <= best + 1e-12 * max(1.0, abs(best))]
    if p.a == 0 and p.b == 0:
        return True
    if p.a == 0:
        # phi is flat from m onwards
        return bool(np.all(near >= p.m - step))
    if p.a == p.b:
        return bool(np.all(near <= p.m + step))
    return bool(all(min(abs(t - c) for c in claimed) <= step for t in near))


def saddle_suite(n_games: int = 1000, n_trials: int = 1000, tolerance: float = 1e-9, seed: int = 0,
                 max_support: int = 12) -> dict:
    """Equilibrium identities over random games with p_g = p_data and E = gamma in [0, m]."""
    rng = make_rng(seed, 0x6A3E)
    max_v_err = 0.0
    for _ in range(n_games):
        n = int(rng.integers(2, max_support + 1))
        p = random_simplex(rng, n)
        m = float(rng.uniform(0.1, 200.0))
        gamma = float(rng.uniform(0.0, m))
        g = DiscreteGame(p, p, np.full(n, gamma), m)
        max_v_err = max(max_v_err, abs(game_value_V(g) - m))
    # inequality direction: V(p_data, p_data, E) >= m for any energy
    min_gap = math.inf
    for _ in range(n_trials):
        n = int(rng.integers(2, max_support + 1))
        p = random_simplex(rng, n)
        m = float(rng.uniform(0.1, 200.0))
        e = rng.uniform(0.0, 2.0 * m, size=n)
        min_gap = min(min_gap, game_value_V(DiscreteGame(p, p, e, m)) - m)
    report = verify_saddle(np.full(2, 0.5), 1.0, tolerance, gamma=0.5, n_trials=n_trials, seed=seed)
    passed = max_v_err <= tolerance and min_gap >= -tolerance and report.is_saddle
    return {
        "games": n_games,
        "max_abs_v_minus_m": max_v_err,
        "perturbations": n_trials,
        "min_v_minus_m": min_gap,
        "reference_report": report,
        "passed": bool(passed),
    }
