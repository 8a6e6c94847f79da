"""Game data model: parameters, equilibrium 8-tuples, value functions, strategies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .basis import MAX_DEGREE, PhiBasis, make_basis, trim

ABS_TOL = 1e-9


class SpecError(ValueError):
    """A game parameter constraint is violated; ``constraint`` names which one."""

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


class OrderConditionError(ValueError):
    pass


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class GameSpec:
    sigma: float
    rho: float
    c: float
    c_tilde: float
    lam: float
    lam_tilde: float
    f1: tuple[float, ...]
    f2: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "f1", trim(self.f1))
        object.__setattr__(self, "f2", trim(self.f2))

    @property
    def theta(self) -> float:
        return math.sqrt(2.0 * self.rho / self.sigma**2)

    def payoff(self, player: int):
        return self.f1 if player == 1 else self.f2

    def replace(self, **changes) -> "GameSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return GameSpec(**d)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "rho": self.rho,
            "costs": {"c": self.c, "c_tilde": self.c_tilde, "lambda": self.lam, "lambda_tilde": self.lam_tilde},
            "f1": list(self.f1),
            "f2": list(self.f2),
        }


def _leading(coeffs) -> float:
    return trim(coeffs)[-1]


def validate_spec(spec: GameSpec, allow_cost_inversion: bool = False) -> GameSpec:
    """Return ``spec`` unchanged if every constraint holds, else raise SpecError.

    ``allow_cost_inversion`` relaxes ``c >= c_tilde`` and ``lambda >= lambda_tilde``;
    it exists only for reproducing parameter sets that break that ordering.
    """
    for name in ("sigma", "rho", "c", "c_tilde", "lam", "lam_tilde"):
        v = getattr(spec, name)
        if not math.isfinite(v):
            raise SpecError("finite", f"{name} must be finite, got {v}")
    if any(not math.isfinite(v) for v in spec.f1 + spec.f2):
        raise SpecError("finite", "payoff coefficients must be finite")
    if spec.sigma <= 0:
        raise SpecError("sigma>0", f"sigma must be positive, got {spec.sigma}")
    if spec.rho <= 0:
        raise SpecError("rho>0", f"rho must be positive, got {spec.rho}")
    if spec.c_tilde < 0 or spec.lam_tilde < 0:
        raise SpecError("gains>=0", "c_tilde and lambda_tilde must be nonnegative")
    if spec.c < 0 or spec.lam < 0:
        raise SpecError("costs>=0", "c and lambda must be nonnegative")
    if not allow_cost_inversion:
        if spec.c < spec.c_tilde:
            raise SpecError("c>=c_tilde", f"c={spec.c} < c_tilde={spec.c_tilde}")
        if spec.lam < spec.lam_tilde:
            raise SpecError("lambda>=lambda_tilde", f"lambda={spec.lam} < lambda_tilde={spec.lam_tilde}")
    if spec.c == spec.c_tilde and spec.lam == spec.lam_tilde:
        raise SpecError("(c,lambda)=(c_tilde,lambda_tilde) forbidden", "intervention would be a pure transfer")
    if 1.0 - spec.lam * spec.rho <= 0:
        raise SpecError("ExCond violated", f"1 - lambda*rho = {1.0 - spec.lam * spec.rho:g} <= 0")
    for i, f in ((1, spec.f1), (2, spec.f2)):
        if len(f) - 1 > MAX_DEGREE:
            raise SpecError("degree<=5", f"f{i} has degree {len(f) - 1}")
    if len(spec.f1) > 1 and _leading(spec.f1) < 0:
        raise SpecError("orientation", "f1 must be nondecreasing at +infinity")
    if len(spec.f2) > 1 and _leading(spec.f2) > 0:
        raise SpecError("orientation", "f2 must be nonincreasing at +infinity")
    return spec


_COST_KEYS = {"c", "c_tilde", "lambda", "lambda_tilde"}
_TOP_KEYS = {"sigma", "rho", "costs", "f1", "f2"}


def spec_from_dict(d: dict, allow_cost_inversion: bool = False) -> GameSpec:
    if not isinstance(d, dict):
        raise SpecError("schema", "spec must be a JSON object")
    extra = set(d) - _TOP_KEYS
    if extra:
        raise SpecError("schema", f"unknown fields {sorted(extra)}")
    missing = _TOP_KEYS - set(d)
    if missing:
        raise SpecError("schema", f"missing fields {sorted(missing)}")
    costs = d["costs"]
    if not isinstance(costs, dict):
        raise SpecError("schema", "costs must be an object")
    if set(costs) != _COST_KEYS:
        raise SpecError("schema", f"costs must have exactly {sorted(_COST_KEYS)}")
    for key in ("f1", "f2"):
        if not isinstance(d[key], list) or not d[key]:
            raise SpecError("schema", f"{key} must be a non-empty coefficient list")
    try:
        spec = GameSpec(
            sigma=float(d["sigma"]),
            rho=float(d["rho"]),
            c=float(costs["c"]),
            c_tilde=float(costs["c_tilde"]),
            lam=float(costs["lambda"]),
            lam_tilde=float(costs["lambda_tilde"]),
            f1=tuple(float(v) for v in d["f1"]),
            f2=tuple(float(v) for v in d["f2"]),
        )
    except (TypeError, ValueError) as exc:
        raise SpecError("schema", str(exc)) from exc
    return validate_spec(spec, allow_cost_inversion)


def load_spec(path, allow_cost_inversion: bool = False) -> GameSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh), allow_cost_inversion)


BUNDLED = ("problem1", "problem2", "cubic", "linear_cubic")


def bundled_spec_path(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"no bundled spec {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files("impulse_game") / "data" / f"{name}.json"))


def bundled_spec(name: str, **overrides) -> GameSpec:
    spec = load_spec(bundled_spec_path(name))
    return validate_spec(spec.replace(**overrides)) if overrides else spec


def is_symmetric_linear(spec: GameSpec) -> bool:
    """f1 = x - s1 and f2 = s2 - x with s1 < s2."""
    f1, f2 = spec.f1, spec.f2
    if len(f1) != 2 or len(f2) != 2:
        return False
    if f1[1] != 1.0 or f2[1] != -1.0:
        return False
    return -f1[0] < f2[0]


def linear_constants(spec: GameSpec) -> tuple[float, float]:
    if not is_symmetric_linear(spec):
        raise SpecError("symmetric-linear", "payoffs are not of the form x - s1, s2 - x")
    return -spec.f1[0], spec.f2[0]


@dataclass(frozen=True)
class EquilibriumParams:
    a11: float
    a12: float
    a21: float
    a22: float
    xbar1: float
    xbar2: float
    xstar1: float
    xstar2: float

    FIELDS = ("a11", "a12", "a21", "a22", "xbar1", "xbar2", "xstar1", "xstar2")

    def __post_init__(self):
        for k in self.FIELDS:
            object.__setattr__(self, k, float(getattr(self, k)))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in self.FIELDS])

    @classmethod
    def from_array(cls, v) -> "EquilibriumParams":
        return cls(*(float(x) for x in v))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "EquilibriumParams":
        extra = set(d) - set(cls.FIELDS)
        if extra:
            raise ValueError(f"unknown fields {sorted(extra)}")
        return cls(**{k: float(d[k]) for k in cls.FIELDS})

    def check(self) -> "EquilibriumParams":
        v = self.as_array()
        if not np.all(np.isfinite(v)):
            raise OrderConditionError("equilibrium parameters must be finite")
        if not (self.xbar1 < self.xstar1 < self.xbar2 and self.xbar1 < self.xstar2 < self.xbar2):
            raise OrderConditionError(
                "order condition xbar1 < xstar_i < xbar2 violated: "
                f"xbar1={self.xbar1}, xstar1={self.xstar1}, xstar2={self.xstar2}, xbar2={self.xbar2}"
            )
        return self


def load_params(path) -> EquilibriumParams:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return EquilibriumParams.from_dict(d.get("params", d))


def phi_bases(spec: GameSpec, p: EquilibriumParams) -> tuple[PhiBasis, PhiBasis]:
    return (
        make_basis(spec.f1, spec.rho, spec.sigma, p.a11, p.a12),
        make_basis(spec.f2, spec.rho, spec.sigma, p.a21, p.a22),
    )


@dataclass(frozen=True)
class PiecewiseValue:
    """Candidate value function of one player: linear / phi / linear.

    Player 1 pays (c, lambda) on the left tail and collects (c_tilde, lambda_tilde)
    on the right; player 2 the mirror image.
    """

    player: int
    params: EquilibriumParams
    basis: PhiBasis
    spec: GameSpec = field(repr=False)

    def _tails(self):
        p, s, phi = self.params, self.spec, self.basis
        if self.player == 1:
            left = (phi(p.xstar1) - s.c - s.lam * p.xstar1, s.lam)
            right = (phi(p.xstar2) + s.c_tilde - s.lam_tilde * p.xstar2, s.lam_tilde)
        else:
            left = (phi(p.xstar1) + s.c_tilde + s.lam_tilde * p.xstar1, -s.lam_tilde)
            right = (phi(p.xstar2) - s.c + s.lam * p.xstar2, -s.lam)
        return left, right

    def __call__(self, x):
        return eval_value(self, x)

    def deriv(self, x, side: str = "right"):
        return eval_value_deriv(self, x, side)


def value_functions(spec: GameSpec, p: EquilibriumParams) -> tuple[PiecewiseValue, PiecewiseValue]:
    p.check()
    b1, b2 = phi_bases(spec, p)
    return PiecewiseValue(1, p, b1, spec), PiecewiseValue(2, p, b2, spec)


def eval_value(v: PiecewiseValue, x):
    x = np.asarray(x, dtype=float)
    (l0, l1), (r0, r1) = v._tails()
    p = v.params
    out = np.where(
        x <= p.xbar1,
        l0 + l1 * x,
        np.where(x >= p.xbar2, r0 + r1 * x, v.basis(np.clip(x, p.xbar1, p.xbar2))),
    )
    return float(out) if out.ndim == 0 else out


def eval_value_deriv(v: PiecewiseValue, x, side: str = "right"):
    """First derivative; at the kinks ``side`` picks the one-sided limit."""
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    x = np.asarray(x, dtype=float)
    (_, l1), (_, r1) = v._tails()
    p = v.params
    if side == "right":
        in_left, in_right = x < p.xbar1, x >= p.xbar2
    else:
        in_left, in_right = x <= p.xbar1, x > p.xbar2
    inner = v.basis(np.clip(x, p.xbar1, p.xbar2), 1)
    out = np.where(in_left, l1, np.where(in_right, r1, inner))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ThresholdStrategy:
    player: int
    threshold: float
    target: float

    @property
    def direction(self) -> str:
        return "below" if self.player == 1 else "above"

    def acts(self, x: float) -> bool:
        return x <= self.threshold if self.player == 1 else x >= self.threshold


def strategies_from_params(p: EquilibriumParams) -> tuple[ThresholdStrategy, ThresholdStrategy]:
    p.check()
    return ThresholdStrategy(1, p.xbar1, p.xstar1), ThresholdStrategy(2, p.xbar2, p.xstar2)


def check_strategies(s1: ThresholdStrategy, s2: ThresholdStrategy) -> None:
    if s1.player != 1 or s2.player != 2:
        raise StrategyError("expected a player-1 and a player-2 strategy")
    vals = (s1.threshold, s1.target, s2.threshold, s2.target)
    if not all(math.isfinite(v) for v in vals):
        raise StrategyError("strategy levels must be finite")
    if not s1.threshold < s2.threshold:
        raise StrategyError(f"thresholds out of order: {s1.threshold} >= {s2.threshold}")
    for s in (s1, s2):
        if not s1.threshold < s.target < s2.threshold:
            raise StrategyError(
                f"player {s.player} target {s.target} outside ({s1.threshold}, {s2.threshold})"
            )
