import json
from pathlib import Path

import numpy as np
import pytest

from fedpact.contracts import (
    ContractItem,
    ContractMenu,
    RevenueCurve,
    TypeProfile,
    verify_feasibility,
)

FIXTURES = Path(__file__).parent / "fixtures"
CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture(scope="session")
def canonical_profile() -> TypeProfile:
    """Two types, hand-solvable: theta (0.5, 1.0), equal shares, unit cost 1."""
    return TypeProfile.from_arrays([0.5, 1.0], [0.5, 0.5], 1.0)


@pytest.fixture(scope="session")
def canonical_curve() -> RevenueCurve:
    return RevenueCurve.from_table([0.3, 0.5], [1.0, 2.0])


@pytest.fixture(scope="session")
def canonical_benchmarks() -> list[float]:
    return [0.3, 0.5]


@pytest.fixture(scope="session")
def mnist_settings() -> dict:
    with open(FIXTURES / "mnist_client_settings.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def mnist_config_path() -> Path:
    return CONFIGS / "mnist_contracts.json"


@pytest.fixture(scope="session")
def synthetic_config_path() -> Path:
    return CONFIGS / "synthetic_default.json"


def fee_recursion(thetas: np.ndarray, rewards: np.ndarray, c: float) -> np.ndarray:
    """Independent re-statement of the binding fee recursion used by tests."""
    fees = np.empty_like(rewards, dtype=float)
    fees[0] = (thetas[0] * rewards[0]) ** 2 / (2.0 * c)
    for i in range(1, len(rewards)):
        fees[i] = fees[i - 1] + thetas[i] ** 2 * (rewards[i] ** 2 - rewards[i - 1] ** 2) / (2.0 * c)
    return fees


def random_profile(rng: np.random.Generator, n: int | None = None) -> TypeProfile:
    """Strictly increasing thetas in (0, 1], random shares, random positive cost."""
    if n is None:
        n = int(rng.integers(2, 11))
    while True:
        thetas = np.sort(rng.uniform(0.05, 1.0, n))
        if np.all(np.diff(thetas) > 1e-3):
            break
    betas = rng.uniform(0.2, 1.0, n)
    betas /= betas.sum()
    c = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    return TypeProfile.from_arrays(thetas, betas, c)


def random_increasing_convex_curve(
    rng: np.random.Generator, benchmarks: np.ndarray
) -> RevenueCurve:
    """Either an exponential curve or a table with non-negative second differences."""
    if rng.random() < 0.5:
        return RevenueCurve.exponential(
            a=float(rng.uniform(0.1, 2.0)), b=float(rng.uniform(0.2, 3.0))
        )
    # table with positive, non-decreasing slopes over the (possibly
    # unequal) benchmark spacing, hence increasing and convex
    base = float(rng.uniform(0.1, 1.0))
    first = float(rng.uniform(0.05, 0.5))
    slopes = first + np.cumsum(np.concatenate([[0.0], rng.uniform(0.0, 0.5, len(benchmarks) - 2)]))
    values = base + np.concatenate([[0.0], np.cumsum(slopes * np.diff(benchmarks))])
    return RevenueCurve.from_table(benchmarks, values)


def random_benchmarks(rng: np.random.Generator, n: int) -> np.ndarray:
    while True:
        ms = np.sort(rng.uniform(0.05, 0.95, n))
        if n == 1 or np.all(np.diff(ms) > 1e-3):
            return ms


def random_feasible_menu(
    profile: TypeProfile, rng: np.random.Generator
) -> ContractMenu:
    """Feasible menu with randomized slack: monotone rewards, fees from the
    binding recursion minus rents bounded by the upward IC slack."""
    n = len(profile)
    thetas = profile.thetas
    c = profile.unit_cost
    rewards = np.sort(rng.uniform(0.1, 3.0, n))
    fees = fee_recursion(thetas, rewards, c)
    drop = np.zeros(n)
    drop[0] = rng.uniform(0.0, 0.9) * fees[0]
    for i in range(1, n):
        upward = (thetas[i] ** 2 - thetas[i - 1] ** 2) * (
            rewards[i] ** 2 - rewards[i - 1] ** 2
        ) / (2.0 * c)
        headroom = fees[i] - drop[i - 1]
        delta = rng.uniform(0.0, 1.0) * min(upward, max(headroom, 0.0))
        drop[i] = drop[i - 1] + delta
    fees = np.maximum(fees - drop, 0.0)
    benchmarks = random_benchmarks(rng, n)
    menu = ContractMenu(
        items=tuple(
            ContractItem(index=i + 1, fee=float(f), reward=float(r), benchmark=float(m))
            for i, (f, r, m) in enumerate(zip(fees, rewards, benchmarks))
        )
    )
    assert verify_feasibility(profile, menu).feasible
    return menu
