"""Named target functions used by the CLI and the verification suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factory import TargetFunction


@dataclass(frozen=True)
class FunctionRegistryEntry:
    name: str
    description: str
    target: TargetFunction
    expected_exponent: int | None  # None for the deliberately rejected entry
    levels: int = 40
    mode: str = "certified"

    @property
    def lipschitz_bound(self) -> float:
        return self.target.lipschitz_bound

    @property
    def negative(self) -> bool:
        return self.expected_exponent is None


def tie_probability(eps: float, nu: float) -> float:
    """Chance that a single A-child among three wins the vote."""
    return 2.0 * nu * eps / (3.0 + 3.0 * nu * eps)


def cubic_voting(eps: float, nu: float) -> TargetFunction:
    """u^3 + 3u^2(1-u) + q 3u(1-u)^2, the ternary voting law written as a forcing."""
    q = tie_probability(eps, nu)

    def f(u):
        return u**3 + 3.0 * u**2 * (1.0 - u) + q * 3.0 * u * (1.0 - u) ** 2

    # f'(u) = 6u(1-u) + 3q(1-u)(1-3u) and |(1-u)(1-3u)| <= 1 on [0, 1]
    return TargetFunction(f, 1.5 + 3.0 * q, f"cubic-voting(eps={eps:g},nu={nu:g})")


def classical_selection(s: float) -> TargetFunction:
    def f(p):
        return (1.0 + s) * p / (1.0 + s * p)

    return TargetFunction(f, 1.0 + s, f"classical(s={s:g})")


def _entries() -> list[FunctionRegistryEntry]:
    cubic = cubic_voting(0.5, 0.5)
    classical = classical_selection(1.0)
    return [
        FunctionRegistryEntry(
            "constant-half", "f(p) = 1/2", TargetFunction(lambda p: np.full_like(p, 0.5), 0.0, "constant-half"), 1
        ),
        FunctionRegistryEntry("linear13", "f(p) = (1 + p) / 3", TargetFunction(lambda p: (1.0 + p) / 3.0, 1.0 / 3.0, "linear13"), 1),
        FunctionRegistryEntry(
            "classical",
            "f(p) = (1 + s) p / (1 + s p), s = 1",
            TargetFunction(classical.evaluator, classical.lipschitz_bound, "classical"),
            2,
            # eta roughly doubles every two levels and passes 2^17 at level 38
            levels=28,
            mode="heuristic",
        ),
        FunctionRegistryEntry(
            "cubic-voting",
            "f(u) = u^3 + 3u^2(1-u) + q 3u(1-u)^2, q = 2 nu eps / (3 + 3 nu eps), eps = nu = 1/2",
            TargetFunction(cubic.evaluator, cubic.lipschitz_bound, "cubic-voting"),
            2,
            # past level 30 the Lipschitz refinement needs millions of points per level
            levels=30,
        ),
        FunctionRegistryEntry("identity", "f(p) = p", TargetFunction(lambda p: p * 1.0, 1.0, "identity"), 1),
        FunctionRegistryEntry(
            "clamp2p",
            "f(p) = min(2p, 1); 1 - f vanishes on [1/2, 1], so no factory exists",
            TargetFunction(lambda p: np.minimum(2.0 * p, 1.0), 2.0, "clamp2p"),
            None,
        ),
    ]


_REGISTRY = {e.name: e for e in _entries()}


def registry() -> list[FunctionRegistryEntry]:
    return list(_REGISTRY.values())


def get_entry(name: str) -> FunctionRegistryEntry:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown function {name!r}; known: {', '.join(_REGISTRY)}") from None


def get_function(name: str) -> TargetFunction:
    return get_entry(name).target
