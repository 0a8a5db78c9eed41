"""Edge-level and drug-level splits, plus negative sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

TRAINING_RATIO_GRID = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


class SplitError(ValueError):
    pass


@dataclass
class SplitSpec:
    mode: str
    ratios: tuple
    seed: int
    train: list
    valid: list
    test: list
    train_drugs: frozenset = frozenset()
    test_drugs: frozenset = frozenset()
    discarded: int = 0
    constraint_log: list = field(default_factory=list)


def transductive_split(pairs, ratios=(0.8, 0.1, 0.1), seed=0):
    """Shuffle pairs and cut them into train/valid/test by ``ratios``."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise SplitError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(pairs)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * ratios[0]))
    n_valid = int(round(n * ratios[1]))
    n_test = n - n_train - n_valid
    sizes = {"train": n_train, "valid": n_valid, "test": n_test}
    empty = [k for k, v, r in zip(sizes, sizes.values(), ratios) if v <= 0 and r > 0]
    if empty or n_test < 0:
        raise SplitError(f"{n} pairs at ratios {ratios} leave an empty split: {empty}")
    pick = lambda idx: [pairs[i] for i in idx]  # noqa: E731
    return SplitSpec(
        "transductive", tuple(ratios), seed,
        pick(order[:n_train]), pick(order[n_train:n_train + n_valid]),
        pick(order[n_train + n_valid:]),
    )


def inductive_split(pairs, drug_ratio, seed=0, train_fraction=1.0):
    """Partition drugs; train pairs use only train drugs, test pairs only test drugs.

    ``train_fraction`` keeps that share of the train-side drugs (the
    training-data scaling axis) without moving any drug to the test side.
    """
    if not 0 < drug_ratio <= 1:
        raise SplitError("drug_ratio must lie in (0, 1]")
    if not 0 < train_fraction <= 1:
        raise SplitError("train_fraction must lie in (0, 1]")
    drugs = list(dict.fromkeys(d for p in pairs for d in p[:2]))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(drugs))
    n_train = int(round(drug_ratio * len(drugs)))
    if n_train <= 0 or n_train >= len(drugs):
        raise SplitError(
            f"drug_ratio {drug_ratio} over {len(drugs)} drugs leaves an empty "
            f"{'train' if n_train <= 0 else 'test'} side"
        )
    train_side = [drugs[i] for i in order[:n_train]]
    test_drugs = frozenset(drugs[i] for i in order[n_train:])
    n_keep = max(1, int(round(train_fraction * n_train)))
    train_drugs = frozenset(train_side[:n_keep])
    unused = frozenset(train_side[n_keep:])
    train, test, mixed, dropped_unused = [], [], 0, 0
    for p in pairs:
        a, b = p[0], p[1]
        if a in train_drugs and b in train_drugs:
            train.append(p)
        elif a in test_drugs and b in test_drugs:
            test.append(p)
        elif a in unused or b in unused:
            dropped_unused += 1
        else:
            mixed += 1
    constraint_log = [
        f"drugs: {len(drugs)} total, {len(train_drugs)} train, {len(test_drugs)} test, "
        f"{len(unused)} withheld",
        f"pairs: {len(train)} train, {len(test)} test, {mixed} mixed discarded, "
        f"{dropped_unused} touching withheld drugs discarded",
    ]
    return SplitSpec(
        "inductive", (drug_ratio, train_fraction), seed, train, [], test,
        train_drugs, test_drugs, mixed + dropped_unused, constraint_log,
    )


def sample_negatives(positives, drug_universe, ratio=1.0, seed=0, max_attempts=100):
    """Corrupt head or tail of positives with random drugs; relation ids are kept."""
    if ratio <= 0:
        raise SplitError("ratio must be positive")
    universe = list(dict.fromkeys(drug_universe))
    if len(universe) < 2:
        raise SplitError("need at least two drugs to corrupt pairs")
    rng = np.random.default_rng(seed)
    known = {frozenset(p[:2]) for p in positives}
    made = set()
    out, skipped = [], 0
    target = int(round(ratio * len(positives)))
    for k in range(target):
        a, b, rel = positives[k % len(positives)][:3]
        for _ in range(max_attempts):
            other = universe[int(rng.integers(len(universe)))]
            head, tail = (other, b) if rng.random() < 0.5 else (a, other)
            key = frozenset((head, tail))
            if head != tail and key not in known and (head, tail, rel) not in made:
                made.add((head, tail, rel))
                out.append((head, tail, rel, 0))
                break
        else:
            skipped += 1
    if skipped:
        log.warning("sample_negatives: skipped %d positive(s) after %d attempts", skipped,
                    max_attempts)
    return out
