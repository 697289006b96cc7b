"""Single-round population simulation of the contracting procedure.

Clients drawn from the type distribution face a published menu, pick the
item maximizing their envelope utility (or reject when even the best
item is worse than staying out), exert the clamped best-response effort,
and pass the server-side test with probability theta * effort.  Passers
earn their item's reward; everyone who signed pays the registration fee,
which is forfeited on failure.  Submitted models of passers are weighted
by reward share.

Two accounting modes share the ledger code: ``stochastic`` realizes
Bernoulli successes from the seed, ``analytic`` books every client at
its expected values, so the per-client mean converges to the server's
expected utility as the population grows.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contracts import (
    ClientType,
    ContractItem,
    ContractMenu,
    RevenueCurve,
    TypeProfile,
    best_response_effort,
    client_utility_at_best_response,
    verify_feasibility,
)
from .seeding import as_generator, child_rng

TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ContractChoice:
    """Outcome of one client's menu scan.

    ``index`` is the 1-based item index, or None for rejection.  ``tied``
    flags an exact indifference (within tolerance) between several items;
    the lowest tied index wins deterministically.
    """

    index: int | None
    effort: float
    utility: float
    tied: bool
    tie_indices: tuple[int, ...]

    @property
    def rejected(self) -> bool:
        return self.index is None


def choose_contract(
    theta: float,
    menu: ContractMenu,
    c: float,
    tie_tolerance: float = TIE_TOLERANCE,
) -> ContractChoice:
    """Best item by envelope utility; reject when the maximum is negative.

    A maximum of exactly zero is accepted (participation at the outside
    option's value).  Ties within ``tie_tolerance`` of the maximum are
    broken to the lowest index and flagged.
    """
    utilities = [client_utility_at_best_response(theta, item, c) for item in menu]
    best = max(utilities)
    tied_indices = tuple(
        i + 1 for i, u in enumerate(utilities) if best - u <= tie_tolerance
    )
    if best < 0.0:
        return ContractChoice(
            index=None, effort=0.0, utility=0.0, tied=False, tie_indices=()
        )
    index = tied_indices[0]
    effort = best_response_effort(theta, menu[index - 1].reward, c).effort
    return ContractChoice(
        index=index,
        effort=effort,
        utility=utilities[index - 1],
        tied=len(tied_indices) > 1,
        tie_indices=tied_indices if len(tied_indices) > 1 else (),
    )


def sample_population(
    profile: TypeProfile, n: int, seed: int | np.random.Generator
) -> list[tuple[int, ClientType]]:
    """Draw n client types independently from the type distribution."""
    if n < 1:
        raise ValueError("population size must be >= 1")
    rng = as_generator(seed)
    draws = rng.choice(len(profile), size=n, p=profile.betas)
    return [(cid, profile.types[k]) for cid, k in enumerate(draws)]


def realize_success(
    theta: float, effort: float, seed: int | np.random.Generator
) -> bool:
    """Bernoulli trial at probability min(1, theta * effort)."""
    if not 0.0 <= effort <= 1.0:
        raise ValueError(f"effort must lie in [0, 1], got {effort}")
    p = min(1.0, theta * effort)
    return bool(as_generator(seed).random() < p)


def aggregation_weights(
    succeeded: list[tuple[int, ContractItem]],
) -> dict[int, float]:
    """Reward-share weights over the passing clients.

    Each weight is the client's reward over the total reward paid this
    round.  Equal rewards short-circuit to exactly 1/k so the weights are
    bit-identical to a uniform scheme; an all-zero reward total falls
    back to uniform as well.  Empty input gives an empty map.
    """
    if not succeeded:
        return {}
    rewards = np.array([item.reward for _, item in succeeded])
    total = float(rewards.sum())
    if total <= 0.0 or np.all(rewards == rewards[0]):
        w = 1.0 / len(succeeded)
        return {cid: w for cid, _ in succeeded}
    return {cid: float(item.reward) / total for cid, item in succeeded}


@dataclass(frozen=True)
class SimulatedClient:
    """One client's round: type, menu choice, effort, and realized outcome."""

    id: int
    true_type: ClientType
    chosen_item: ContractItem | None
    effort: float
    succeeded: bool
    success_prob: float
    tied: bool
    local_data: object | None = None

    def __post_init__(self) -> None:
        if self.chosen_item is None and (self.effort != 0.0 or self.succeeded):
            raise ValueError("a rejecting client has zero effort and no success")

    @property
    def rejected(self) -> bool:
        return self.chosen_item is None


@dataclass(frozen=True)
class RoundOutcome:
    """Ledger of one simulated round.

    Stochastic mode books realized fees, rewards, and forfeits; analytic
    mode books their expectations (succeeded flags stay False there, the
    success probabilities carry the accounting).  Forfeited fees are a
    subset of fees_collected, never double counted.
    """

    clients: tuple[SimulatedClient, ...]
    fees_collected: float
    rewards_paid: float
    fees_forfeited: float
    realized_server_utility: float
    aggregation_weights: dict[int, float]
    ties: tuple[int, ...]
    mode: str

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_clients": len(self.clients),
            "participants": sum(1 for cl in self.clients if not cl.rejected),
            "successes": sum(1 for cl in self.clients if cl.succeeded),
            "fees_collected": self.fees_collected,
            "rewards_paid": self.rewards_paid,
            "fees_forfeited": self.fees_forfeited,
            "realized_server_utility": self.realized_server_utility,
            "mean_server_utility_per_client": (
                self.realized_server_utility / len(self.clients)
            ),
            "aggregation_weights": {str(k): v for k, v in self.aggregation_weights.items()},
            "ties": list(self.ties),
        }

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def clients_to_csv(self, path: str | Path) -> None:
        """Per-client rows: id, type, choice, effort, succeeded, fee, reward, success_prob."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["id", "type", "choice", "effort", "succeeded", "fee", "reward", "success_prob"]
            )
            for cl in self.clients:
                writer.writerow(
                    [
                        cl.id,
                        cl.true_type.index,
                        cl.chosen_item.index if cl.chosen_item else "reject",
                        repr(cl.effort),
                        cl.succeeded,
                        repr(cl.chosen_item.fee) if cl.chosen_item else repr(0.0),
                        repr(cl.chosen_item.reward) if cl.chosen_item else repr(0.0),
                        repr(cl.success_prob),
                    ]
                )


def run_round(
    profile: TypeProfile,
    menu: ContractMenu,
    curve: RevenueCurve,
    n: int,
    mode: str,
    seed: int,
) -> RoundOutcome:
    """Sample a population, let it contract, realize or expect outcomes, settle.

    ``mode='stochastic'`` draws Bernoulli successes; ``mode='analytic'``
    books expected fees/rewards/forfeits per client, in which case the
    aggregation weights are expected-reward shares over clients with a
    positive expected reward.  Deterministic per (inputs, seed); an
    infeasible menu is simulated anyway but triggers a warning.
    """
    if mode not in ("analytic", "stochastic"):
        raise ValueError(f"mode must be 'analytic' or 'stochastic', got {mode!r}")
    if n < 1:
        raise ValueError("population size must be >= 1")
    report = verify_feasibility(profile, menu)
    if not report.feasible:
        warnings.warn(
            f"menu is infeasible for this profile: {report.violations()[:3]}",
            stacklevel=2,
        )
    c = profile.unit_cost
    population = sample_population(profile, n, child_rng(seed, 0))
    success_rng = child_rng(seed, 1)

    clients: list[SimulatedClient] = []
    ties: list[int] = []
    fees = 0.0
    rewards = 0.0
    forfeits = 0.0
    utility = 0.0
    succeeded_items: list[tuple[int, ContractItem]] = []
    expected_shares: list[tuple[int, float]] = []

    for cid, ctype in population:
        choice = choose_contract(ctype.theta, menu, c)
        if choice.rejected:
            clients.append(
                SimulatedClient(
                    id=cid,
                    true_type=ctype,
                    chosen_item=None,
                    effort=0.0,
                    succeeded=False,
                    success_prob=0.0,
                    tied=False,
                )
            )
            continue
        item = menu[choice.index - 1]
        if choice.tied:
            ties.append(cid)
        p = min(1.0, ctype.theta * choice.effort)
        margin = curve(item.benchmark) - item.reward
        if mode == "stochastic":
            success = realize_success(ctype.theta, choice.effort, success_rng)
            fees += item.fee
            if success:
                rewards += item.reward
                utility += item.fee + margin
                succeeded_items.append((cid, item))
            else:
                forfeits += item.fee
                utility += item.fee
        else:
            success = False
            fees += item.fee
            rewards += p * item.reward
            forfeits += (1.0 - p) * item.fee
            utility += item.fee + p * margin
            if p * item.reward > 0.0:
                expected_shares.append((cid, p * item.reward))
        clients.append(
            SimulatedClient(
                id=cid,
                true_type=ctype,
                chosen_item=item,
                effort=choice.effort,
                succeeded=success,
                success_prob=p,
                tied=choice.tied,
            )
        )

    if mode == "stochastic":
        weights = aggregation_weights(succeeded_items)
    else:
        total = math.fsum(share for _, share in expected_shares)
        weights = (
            {cid: share / total for cid, share in expected_shares} if total > 0.0 else {}
        )

    return RoundOutcome(
        clients=tuple(clients),
        fees_collected=fees,
        rewards_paid=rewards,
        fees_forfeited=forfeits,
        realized_server_utility=utility,
        aggregation_weights=weights,
        ties=tuple(ties),
        mode=mode,
    )
