"""Desk-scale federated training with coverage-controlled client data.

Makes the aggregation-scheme comparison concrete: every client gets a
synthetic dataset whose coverage quality is calibrated to its type,
trains a small classifier from scratch for a number of epochs scaled by
its contracted effort, and submits the model to a server-side sampling
test over the full unit cube.  Passing models are averaged either by
reward share or uniformly.

Three schemes are compared on the same population:

* ``contract``: contract rewards drive efforts, passing models weighted
  by reward share;
* ``fedavg``: identical rewards and efforts, uniform weights;
* ``flat``: every client earns the beta-weighted average reward and pays
  the average fee (same budget on average, no screening), uniform
  weights.  Pass benchmarks stay per type so only the incentive channel
  differs.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .contracts import ContractItem, ContractMenu, solve_optimal_menu
from .coverage import PointCloud, coverage_quality
from .seeding import as_generator, child_rng
from .simulation import choose_contract


class ArchitectureMismatchError(ValueError):
    """Models with different architecture tags cannot be combined."""


class CalibrationError(ValueError):
    """The requested coverage quality is not reachable; carries the best value."""

    def __init__(self, target: float, best: float):
        self.target = target
        self.best = best
        super().__init__(
            f"coverage quality {target:.4f} unreachable; best achievable is {best:.4f}"
        )


# ---------------------------------------------------------------------------
# model vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelArch:
    """Architecture tag: input dimension, optional single hidden width, classes."""

    input_dim: int
    hidden: tuple[int, ...]
    n_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.input_dim < 1 or self.n_classes < 2:
            raise ValueError("need input_dim >= 1 and n_classes >= 2")
        if len(self.hidden) > 1:
            raise ValueError("at most one hidden layer is supported")

    @property
    def parameter_count(self) -> int:
        if not self.hidden:
            return self.input_dim * self.n_classes + self.n_classes
        h = self.hidden[0]
        return self.input_dim * h + h + h * self.n_classes + self.n_classes


@dataclass(frozen=True, eq=False)
class ModelVector:
    """Flat parameter vector of the toy classifier."""

    arch: ModelArch
    parameters: np.ndarray

    def __post_init__(self) -> None:
        params = np.asarray(self.parameters, dtype=np.float64).ravel().copy()
        if params.size != self.arch.parameter_count:
            raise ArchitectureMismatchError(
                f"expected {self.arch.parameter_count} parameters, got {params.size}"
            )
        params.setflags(write=False)
        object.__setattr__(self, "parameters", params)

    @classmethod
    def zeros(cls, arch: ModelArch) -> "ModelVector":
        return cls(arch=arch, parameters=np.zeros(arch.parameter_count))

    @classmethod
    def random(cls, arch: ModelArch, seed: int | np.random.Generator, scale: float = 0.5) -> "ModelVector":
        rng = as_generator(seed)
        return cls(arch=arch, parameters=rng.normal(0.0, scale, arch.parameter_count))

    def _unpack(self) -> tuple[np.ndarray, ...]:
        d, k = self.arch.input_dim, self.arch.n_classes
        p = self.parameters
        if not self.arch.hidden:
            w = p[: d * k].reshape(d, k)
            b = p[d * k :]
            return w, b
        h = self.arch.hidden[0]
        off = 0
        w1 = p[off : off + d * h].reshape(d, h); off += d * h
        b1 = p[off : off + h]; off += h
        w2 = p[off : off + h * k].reshape(h, k); off += h * k
        b2 = p[off :]
        return w1, b1, w2, b2

    def logits(self, points: np.ndarray) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        if not self.arch.hidden:
            w, b = self._unpack()
            return x @ w + b
        w1, b1, w2, b2 = self._unpack()
        return np.tanh(x @ w1 + b1) @ w2 + b2

    def predict(self, points: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(points), axis=1)

    def to_bytes(self) -> bytes:
        """Length-prefixed little-endian float64 dump (debugging format)."""
        payload = self.parameters.astype("<f8").tobytes()
        return struct.pack("<Q", self.parameters.size) + payload

    @classmethod
    def from_bytes(cls, arch: ModelArch, raw: bytes) -> "ModelVector":
        (count,) = struct.unpack_from("<Q", raw, 0)
        params = np.frombuffer(raw, dtype="<f8", count=count, offset=8)
        return cls(arch=arch, parameters=params.astype(np.float64))


def model_accuracy(model: ModelVector, points: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(model.predict(points) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """Classification task on [0,1]^d with a linear nearest-prototype label rule.

    The rule is fixed by the seed; the global test set is drawn uniformly
    over the whole cube, which is what makes it a sampling test: a model
    fit only to a well-covered corner is graded on everything.
    """

    dimension: int
    n_classes: int
    weights: np.ndarray
    intercepts: np.ndarray
    test_points: np.ndarray
    test_labels: np.ndarray
    seed: int

    @classmethod
    def generate(
        cls, dimension: int, n_classes: int, seed: int, test_size: int = 2000
    ) -> "SyntheticTask":
        rng = child_rng(seed, 911)
        # prototypes on a ring around an anchor on the main diagonal,
        # slightly toward the origin: client data is drawn from
        # origin-anchored sub-cubes, so low-coverage datasets miss the
        # decision boundary entirely while high-coverage ones straddle it
        anchor = np.full(dimension, 0.42)
        if n_classes == 2:
            direction = rng.normal(size=dimension)
            direction /= np.linalg.norm(direction)
            prototypes = np.stack([anchor - 0.25 * direction, anchor + 0.25 * direction])
        else:
            directions = rng.normal(size=(n_classes, dimension))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            prototypes = anchor + 0.25 * directions
        weights = 2.0 * prototypes.T
        intercepts = -np.sum(prototypes**2, axis=1)
        test_points = rng.random((test_size, dimension))
        task = cls(
            dimension=dimension,
            n_classes=n_classes,
            weights=weights,
            intercepts=intercepts,
            test_points=test_points,
            test_labels=np.empty(0, dtype=int),
            seed=seed,
        )
        object.__setattr__(task, "test_labels", task.label(test_points))
        return task

    def label(self, points: np.ndarray) -> np.ndarray:
        scores = np.asarray(points, dtype=float) @ self.weights + self.intercepts
        return np.argmax(scores, axis=1)

    @property
    def arch(self) -> ModelArch:
        return ModelArch(input_dim=self.dimension, hidden=(), n_classes=self.n_classes)


def server_test(model: ModelVector, task: SyntheticTask) -> float:
    """Accuracy on the task's uniform global test set."""
    return model_accuracy(model, task.test_points, task.test_labels)


# ---------------------------------------------------------------------------
# coverage-calibrated client data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClientDataset:
    """Labeled local data plus the coverage quality it was calibrated to."""

    cloud: PointCloud
    labels: np.ndarray
    measured_quality: float
    subcube_side: float

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points


def generate_client_dataset(
    task: SyntheticTask,
    target_theta: float,
    n_points: int,
    seed: int,
    tolerance: float = 0.02,
    radius_steps: int = 24,
    quality_samples: int = 4000,
    max_iterations: int = 40,
) -> ClientDataset:
    """Sample client data whose coverage quality approximates ``target_theta``.

    Points are drawn uniformly from the sub-cube [0, s]^d; the side s is
    found by bisection against the coverage module (larger cubes cover
    more of the space, so quality is monotone in s).  Raises
    ``CalibrationError`` when the target is outside what ``n_points``
    samples can reach, naming the best achievable value.
    """
    if not 0.0 < target_theta <= 1.0:
        raise ValueError(f"target_theta must lie in (0, 1], got {target_theta}")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    unit_draws = child_rng(seed, 1).random((n_points, task.dimension))
    quality_seed = int(child_rng(seed, 2).integers(2**31))

    def quality(side: float) -> float:
        cloud = PointCloud(task.dimension, unit_draws * side)
        return coverage_quality(cloud, radius_steps, quality_samples, quality_seed)

    lo, hi = 1e-3, 1.0
    q_hi = quality(hi)
    if target_theta > q_hi + tolerance:
        raise CalibrationError(target_theta, q_hi)
    q_lo = quality(lo)
    if target_theta < q_lo - tolerance:
        raise CalibrationError(target_theta, q_lo)

    best_side, best_q = (hi, q_hi) if abs(q_hi - target_theta) < abs(q_lo - target_theta) else (lo, q_lo)
    for _ in range(max_iterations):
        if abs(best_q - target_theta) <= 0.25 * tolerance:
            break
        mid = 0.5 * (lo + hi)
        q_mid = quality(mid)
        if abs(q_mid - target_theta) < abs(best_q - target_theta):
            best_side, best_q = mid, q_mid
        if q_mid < target_theta:
            lo = mid
        else:
            hi = mid
    if abs(best_q - target_theta) > tolerance:
        raise CalibrationError(target_theta, best_q)

    points = unit_draws * best_side
    return ClientDataset(
        cloud=PointCloud(task.dimension, points),
        labels=task.label(points),
        measured_quality=best_q,
        subcube_side=best_side,
    )


# ---------------------------------------------------------------------------
# local training and aggregation
# ---------------------------------------------------------------------------

def local_train(
    model: ModelVector,
    points: np.ndarray,
    labels: np.ndarray,
    effort: float,
    max_epochs: int,
    seed: int | np.random.Generator,
    learning_rate: float = 0.8,
    batch_size: int = 32,
) -> ModelVector:
    """Mini-batch cross-entropy gradient descent for round(effort * max_epochs) epochs.

    Zero effort returns the input model unchanged.  Shuffling is driven
    by the seed, so training is bit-reproducible.
    """
    if not 0.0 <= effort <= 1.0:
        raise ValueError(f"effort must lie in [0, 1], got {effort}")
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    epochs = int(math.floor(effort * max_epochs + 0.5))
    if epochs == 0:
        return model
    x = np.asarray(points, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise ArchitectureMismatchError(
            f"data dimension {x.shape} does not match input_dim {model.arch.input_dim}"
        )
    n = x.shape[0]
    k = model.arch.n_classes
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    rng = as_generator(seed)
    params = model.parameters.copy()
    hidden = model.arch.hidden

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            xb, yb = x[batch], onehot[batch]
            m = len(batch)
            if not hidden:
                d = model.arch.input_dim
                w = params[: d * k].reshape(d, k)
                b = params[d * k :]
                logits = xb @ w + b
                probs = _softmax(logits)
                g = (probs - yb) / m
                grad = np.concatenate([(xb.T @ g).ravel(), g.sum(axis=0)])
            else:
                d, h = model.arch.input_dim, hidden[0]
                off = 0
                w1 = params[off : off + d * h].reshape(d, h); off += d * h
                b1 = params[off : off + h]; off += h
                w2 = params[off : off + h * k].reshape(h, k); off += h * k
                b2 = params[off :]
                pre = xb @ w1 + b1
                act = np.tanh(pre)
                probs = _softmax(act @ w2 + b2)
                g2 = (probs - yb) / m
                g1 = (g2 @ w2.T) * (1.0 - act**2)
                grad = np.concatenate(
                    [(xb.T @ g1).ravel(), g1.sum(axis=0), (act.T @ g2).ravel(), g2.sum(axis=0)]
                )
            params -= learning_rate * grad

    return ModelVector(arch=model.arch, parameters=params)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def aggregate(models: list[tuple[ModelVector, float]]) -> ModelVector:
    """Weighted component-wise mean of parameter vectors.

    Weights must sum to 1 within 1e-9 and architectures must match;
    inputs are consumed in the given order so the floating-point sum is
    deterministic.
    """
    if not models:
        raise ValueError("no models to aggregate")
    arch = models[0][0].arch
    for model, _ in models:
        if model.arch != arch:
            raise ArchitectureMismatchError(f"{model.arch} != {arch}")
    weights = np.array([w for _, w in models])
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {float(weights.sum())!r}")
    stacked = np.stack([m.parameters for m, _ in models])
    return ModelVector(arch=arch, parameters=(weights[:, None] * stacked).sum(axis=0))


# ---------------------------------------------------------------------------
# scheme comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchemeRound:
    seed: int
    c: float
    scheme: str
    accuracy: float
    participants: int
    successes: int
    total_fees: float
    total_rewards: float


@dataclass(frozen=True)
class ClientRecord:
    seed: int
    c: float
    scheme: str
    client_id: int
    type_index: int
    theta_target: float
    theta_measured: float
    chosen_index: int | None
    effort: float
    epochs: int
    local_accuracy: float
    server_accuracy: float
    passed: bool


@dataclass(frozen=True)
class SchemeReport:
    rounds: tuple[SchemeRound, ...]
    clients: tuple[ClientRecord, ...]
    c_values: tuple[float, ...]
    schemes: tuple[str, ...]
    flat_items: dict[float, ContractItem]

    def mean_accuracy(self, c: float, scheme: str) -> float:
        vals = [r.accuracy for r in self.rounds if r.c == c and r.scheme == scheme]
        finite = [v for v in vals if not math.isnan(v)]
        return float(np.mean(finite)) if finite else float("nan")

    def orderings(self) -> dict:
        """The directional claims the comparison is designed to probe."""
        per_c = {}
        for c in self.c_values:
            means = {s: self.mean_accuracy(c, s) for s in self.schemes}
            entry = {"means": means}
            if {"contract", "fedavg"} <= set(self.schemes):
                entry["contract_ge_fedavg"] = means["contract"] >= means["fedavg"]
                # a single shared contract makes reward weights uniform and
                # the two schemes coincide exactly
                entry["degenerate_equal"] = means["contract"] == means["fedavg"]
            if {"fedavg", "flat"} <= set(self.schemes):
                entry["fedavg_ge_flat"] = means["fedavg"] >= means["flat"]
            per_c[_c_key(c)] = entry
        out = {"per_c": per_c}
        if len(self.c_values) >= 2 and "contract" in self.schemes:
            lo, hi = min(self.c_values), max(self.c_values)
            out["contract_small_c_ge_large_c"] = (
                self.mean_accuracy(lo, "contract") >= self.mean_accuracy(hi, "contract")
            )
        return out

    def summary(self) -> dict:
        return {
            "seeds": sorted({r.seed for r in self.rounds}),
            "c_values": list(self.c_values),
            "schemes": list(self.schemes),
            "orderings": self.orderings(),
            "flat_items": {
                _c_key(c): item.to_dict() for c, item in sorted(self.flat_items.items())
            },
            "note": (
                "flat scheme signs every client to the beta-weighted average "
                "item of the solved menu"
            ),
        }

    def rounds_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["seed", "c", "scheme", "accuracy", "participants", "successes",
                 "total_fees", "total_rewards"]
            )
            for r in self.rounds:
                writer.writerow(
                    [r.seed, repr(r.c), r.scheme, repr(r.accuracy), r.participants,
                     r.successes, repr(r.total_fees), repr(r.total_rewards)]
                )

    def clients_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["seed", "c", "scheme", "client_id", "type_index", "theta_target",
                 "theta_measured", "chosen_index", "effort", "epochs",
                 "local_accuracy", "server_accuracy", "passed"]
            )
            for r in self.clients:
                writer.writerow(
                    [r.seed, repr(r.c), r.scheme, r.client_id, r.type_index,
                     repr(r.theta_target), repr(r.theta_measured),
                     r.chosen_index if r.chosen_index is not None else "reject",
                     repr(r.effort), r.epochs, repr(r.local_accuracy),
                     repr(r.server_accuracy), r.passed]
                )

    def summary_to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _c_key(c: float) -> str:
    return repr(float(c))


def _flat_item(menu: ContractMenu, betas: np.ndarray) -> ContractItem:
    """Beta-weighted average fee and reward: same expected budget, no screening.

    The benchmark field carries the average only for reporting; the flat
    scheme gates every client on its own type's benchmark.
    """
    return ContractItem(
        index=1,
        fee=float(np.dot(betas, menu.fees)),
        reward=float(np.dot(betas, menu.rewards)),
        benchmark=float(np.dot(betas, menu.benchmarks)),
    )


def run_scheme_comparison(config: ExperimentConfig) -> SchemeReport:
    """Full federated round per (seed, c) under every configured scheme.

    Clients and their datasets are shared across schemes and c values of
    a seed; contract and fedavg schemes also share trained models (same
    rewards, hence same efforts), so their accuracies differ only through
    the aggregation weights.  Everything is deterministic per config.
    """
    if config.mode != "ml":
        raise ValueError("scheme comparison needs mode='ml' (trains real models)")
    curve = config.build_curve()
    task = SyntheticTask.generate(
        config.task.dimension, config.task.classes, config.task.seed,
        config.task.test_size,
    )
    train = config.training
    rounds: list[SchemeRound] = []
    client_rows: list[ClientRecord] = []
    flat_items: dict[float, ContractItem] = {}

    for seed in config.seeds:
        population_rng = child_rng(seed, 10)
        draws = population_rng.choice(
            len(config.thetas), size=config.population, p=np.array(config.betas)
        )
        datasets = {}
        for cid, type_idx in enumerate(draws):
            datasets[cid] = generate_client_dataset(
                task,
                target_theta=config.thetas[type_idx],
                n_points=train.n_points,
                seed=int(child_rng(seed, 20, cid).integers(2**31)),
            )
        init_model = ModelVector.random(task.arch, child_rng(seed, 30))
        model_cache: dict[tuple[int, int], tuple[ModelVector, float, float]] = {}

        def trained(cid: int, effort: float) -> tuple[ModelVector, float, float, int]:
            epochs = int(math.floor(effort * train.max_epochs + 0.5))
            key = (cid, epochs)
            if key not in model_cache:
                data = datasets[cid]
                model = local_train(
                    init_model,
                    data.points,
                    data.labels,
                    effort=epochs / train.max_epochs if train.max_epochs else 0.0,
                    max_epochs=train.max_epochs,
                    seed=child_rng(seed, 40, cid),
                    learning_rate=train.learning_rate,
                    batch_size=train.batch_size,
                )
                model_cache[key] = (
                    model,
                    model_accuracy(model, data.points, data.labels),
                    server_test(model, task),
                )
            model, local_acc, serv_acc = model_cache[key]
            return model, local_acc, serv_acc, epochs

        for c in config.c_values:
            profile = config.build_profile(unit_cost=c)
            menu = solve_optimal_menu(profile, curve, config.benchmarks)
            flat = _flat_item(menu, profile.betas)
            flat_items[c] = flat

            # per-client signup under the two reward policies; the pass
            # benchmark is the same in both so only incentives differ
            signups: dict[str, list[tuple[int, float, float, float, float] | None]] = {
                "contract": [], "flat": [],
            }
            for cid, type_idx in enumerate(draws):
                theta = config.thetas[type_idx]
                choice = choose_contract(theta, menu, c)
                if choice.rejected:
                    gate = float(config.benchmarks[type_idx])
                    signups["contract"].append(None)
                else:
                    item = menu[choice.index - 1]
                    gate = item.benchmark
                    signups["contract"].append(
                        (choice.index, choice.effort, item.fee, item.reward, gate)
                    )
                flat_utility = (theta * flat.reward) ** 2 / (2.0 * c) - flat.fee
                if flat_utility < 0.0:
                    signups["flat"].append(None)
                else:
                    flat_effort = min(1.0, theta * flat.reward / c)
                    signups["flat"].append(
                        (1, flat_effort, flat.fee, flat.reward, gate)
                    )

            for scheme in config.schemes:
                policy = "flat" if scheme == "flat" else "contract"
                passers: list[tuple[int, ModelVector, float]] = []  # id, model, reward
                participants = 0
                total_fees = 0.0
                total_rewards = 0.0
                record_rows = scheme in ("contract", "flat")

                for cid, type_idx in enumerate(draws):
                    signup = signups[policy][cid]
                    if signup is None:
                        if record_rows:
                            client_rows.append(ClientRecord(
                                seed=seed, c=c, scheme=scheme, client_id=cid,
                                type_index=int(type_idx) + 1,
                                theta_target=config.thetas[type_idx],
                                theta_measured=datasets[cid].measured_quality,
                                chosen_index=None, effort=0.0, epochs=0,
                                local_accuracy=float("nan"),
                                server_accuracy=float("nan"), passed=False,
                            ))
                        continue
                    index, effort, fee, reward, gate = signup
                    participants += 1
                    total_fees += fee
                    model, local_acc, serv_acc, epochs = trained(cid, effort)
                    passed = serv_acc >= gate
                    if passed:
                        total_rewards += reward
                        passers.append((cid, model, reward))
                    if record_rows:
                        client_rows.append(ClientRecord(
                            seed=seed, c=c, scheme=scheme, client_id=cid,
                            type_index=int(type_idx) + 1,
                            theta_target=config.thetas[type_idx],
                            theta_measured=datasets[cid].measured_quality,
                            chosen_index=index, effort=effort,
                            epochs=epochs, local_accuracy=local_acc,
                            server_accuracy=serv_acc, passed=passed,
                        ))

                if passers:
                    reward_arr = np.array([r for _, _, r in passers])
                    if scheme == "contract" and reward_arr.sum() > 0 and not np.all(
                        reward_arr == reward_arr[0]
                    ):
                        weights = reward_arr / reward_arr.sum()
                    else:
                        weights = np.full(len(passers), 1.0 / len(passers))
                    global_model = aggregate(
                        [(m, float(w)) for (_, m, _), w in zip(passers, weights)]
                    )
                    accuracy = server_test(global_model, task)
                else:
                    accuracy = float("nan")

                rounds.append(SchemeRound(
                    seed=seed, c=c, scheme=scheme, accuracy=accuracy,
                    participants=participants, successes=len(passers),
                    total_fees=total_fees, total_rewards=total_rewards,
                ))

    return SchemeReport(
        rounds=tuple(rounds),
        clients=tuple(client_rows),
        c_values=tuple(config.c_values),
        schemes=tuple(config.schemes),
        flat_items=flat_items,
    )
