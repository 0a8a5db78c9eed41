"""Slow reference implementations used only as test oracles."""

from fractions import Fraction


def pairwise_auroc(scores, labels):
    labels = [int(y) for y in labels]
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for p in pos:
        for n in neg:
            total += 1 if p > n else Fraction(1, 2) if p == n else 0
    return total / (len(pos) * len(neg))


def sweep_aupr(scores, labels):
    """Walk items in descending score order (stable on ties), summing precision at each hit."""
    labels = [int(y) for y in labels]
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    P = sum(labels)
    tp, ap = 0, Fraction(0)
    for k, i in enumerate(order, start=1):
        if labels[i] == 1:
            tp += 1
            ap += Fraction(1, P) * Fraction(tp, k)
    return ap


def brute_force_line_edges(g):
    out = set()
    for a, (u1, v1, _) in enumerate(g.bonds):
        for b, (u2, v2, _) in enumerate(g.bonds):
            if a < b and len({u1, v1} & {u2, v2}) == 1:
                out.add((a, b))
    return out
