"""Independent reference implementations used to derive frozen test values.

Nothing here imports the package under test. Conditionals are exact
fractions computed by summing an explicit joint table, rules are re-derived
from their textual definitions, and ordered partitions are enumerated as
surjective step labellings instead of recursive splitting.
"""
from fractions import Fraction
from itertools import permutations, product

MASK = None


def joint_from_corpus(corpus):
    table = {}
    for x in corpus:
        table[tuple(x)] = table.get(tuple(x), 0) + 1
    n = sum(table.values())
    return {x: Fraction(c, n) for x, c in table.items()}


def conditional_rows(joint, z, n_tokens):
    """Exact per-position token distributions given the revealed entries of ``z``."""
    L = len(z)
    consistent = {x: p for x, p in joint.items()
                  if all(zi is MASK or zi == xi for zi, xi in zip(z, x))}
    total = sum(consistent.values())
    rows = []
    for pos in range(L):
        if z[pos] is not MASK:
            rows.append([Fraction(int(v == z[pos])) for v in range(n_tokens)])
        elif total == 0:
            rows.append([Fraction(1, n_tokens)] * n_tokens)
        else:
            rows.append([sum((p for x, p in consistent.items() if x[pos] == v), Fraction(0))
                         / total for v in range(n_tokens)])
    return rows


def top_two(row):
    s = sorted(row, reverse=True)
    return s[0], (s[1] if len(s) > 1 else Fraction(0))


def choose(rule, z, rows):
    """Rule selection re-derived from the rule definitions."""
    name, arg = rule
    masked = [i for i, zi in enumerate(z) if zi is MASK]
    if name == "l2r":
        return set(masked[:arg])
    if name in ("greedy", "margin"):
        def score(i):
            p1, p2 = top_two(rows[i])
            return p1 if name == "greedy" else p1 - p2
        ranked = sorted(masked, key=lambda i: (-score(i), i))
        return set(ranked[:arg])
    if name == "thresh":
        chosen = {i for i in masked if max(rows[i]) >= arg}
        if chosen:
            return chosen
        return {sorted(masked, key=lambda i: (-max(rows[i]), i))[0]}
    if name == "fixed":
        return {next(p for p in arg if z[p] is MASK)}
    raise ValueError(name)


def exact_prob(joint, n_tokens, rule, x):
    z = [MASK] * len(x)
    prob = Fraction(1)
    while any(zi is MASK for zi in z):
        rows = conditional_rows(joint, z, n_tokens)
        for pos in choose(rule, z, rows):
            prob *= rows[pos][x[pos]]
            z[pos] = x[pos]
    return prob


def ordered_partitions(L):
    """Ordered set partitions as surjections from positions onto steps 0..T-1."""
    out = []
    for T in range(1, L + 1):
        for labels in product(range(T), repeat=L):
            if set(labels) == set(range(T)):
                out.append(tuple(frozenset(i for i in range(L) if labels[i] == t)
                                 for t in range(T)))
    return out


def uniform_policy_prob(joint, n_tokens, x):
    L = len(x)
    total = Fraction(0)
    for order in permutations(range(L)):
        z = [MASK] * L
        p = Fraction(1)
        for pos in order:
            p *= conditional_rows(joint, z, n_tokens)[pos][x[pos]]
            z[pos] = x[pos]
        total += p
    n_orders = 1
    for i in range(2, L + 1):
        n_orders *= i
    return total / n_orders
