"""Independent reference values frozen into the C++ unit tests.

Run with plain python3; uses only the standard library (fractions/math).
"""
from fractions import Fraction as F
import math
from collections import Counter


def bleu_hand(cand, ref, max_order=4):
    # Clipped precisions; zero-match orders n >= 2 use 1/(total+1).
    cand, ref = cand.split(), ref.split()
    orders = min(max_order, len(cand))
    precisions = []
    for n in range(1, orders + 1):
        c = Counter(tuple(cand[i:i + n]) for i in range(len(cand) - n + 1))
        r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        match = sum(min(v, r[g]) for g, v in c.items())
        total = sum(c.values())
        if match == 0:
            if n == 1:
                return F(0), 0.0
            precisions.append(F(1, total + 1))
        else:
            precisions.append(F(match, total))
    prod = math.prod(precisions)
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return prod, bp * float(prod) ** (1 / orders)


def log_sigmoid(x):
    return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))


def z_match(target, z):
    lo, hi = min(target), max(target)
    zbar = [0.5] * len(target) if hi == lo else [(t - lo) / (hi - lo) for t in target]
    return -sum(b * log_sigmoid(v) + (1 - b) * log_sigmoid(-v) for b, v in zip(zbar, z)) / len(z)


# Worked 2x2x2 SCM, computed by enumerating the joint with exact fractions.
prior = [F(3, 10), F(7, 10)]
prop = [[F(4, 5), F(1, 5)], [F(1, 4), F(3, 4)]]  # [z][a]
outcome = {(0, 0): [F(3, 5), F(2, 5)], (0, 1): [F(1, 10), F(9, 10)],
           (1, 0): [F(1, 2), F(1, 2)], (1, 1): [F(1, 5), F(4, 5)]}  # (a, z) -> x
proxy = [[F(9, 10), F(1, 10)], [F(3, 10), F(7, 10)]]  # [z][c]

joint = {}
for x in range(2):
    for a in range(2):
        for z in range(2):
            for c in range(2):
                joint[x, a, z, c] = prior[z] * prop[z][a] * outcome[a, z][x] * proxy[z][c]


def conditional(a):
    pa = sum(v for (x_, a_, z_, c_), v in joint.items() if a_ == a)
    return [sum(v for (x_, a_, z_, c_), v in joint.items() if a_ == a and x_ == x) / pa for x in range(2)]


def interventional(a):
    return [sum(prior[z] * outcome[a, z][x] for z in range(2)) for x in range(2)]


def reweighted(a):
    pz = [sum(v for k, v in joint.items() if k[2] == z) for z in range(2)]
    paz = [sum(v for k, v in joint.items() if k[1] == a and k[2] == z) / pz[z] for z in range(2)]
    return [sum(v / paz[k[2]] for k, v in joint.items() if k[1] == a and k[0] == x) for x in range(2)]


if __name__ == "__main__":
    prod, value = bleu_hand("a b c d", "a b c e")
    print(f"bleu('a b c d', ['a b c e']): product of precisions {prod}, value {value:.10f}")
    print(f"z_match([0,2],[-20,20]) = {z_match([0, 2], [-20, 20]):.6e}")
    print(f"z_match([0,2],[0,0]) = {z_match([0, 2], [0, 0]):.12f} (ln 2 = {math.log(2):.12f})")
    print(f"-log(0.99) = {-math.log(0.99):.10f}")
    print(f"3 sigma band, rho=0.9 n=1e4: +-{3 * math.sqrt(0.09 / 1e4):.4f}")
    print(f"3 sigma band, p=0.5 n=1e4: +-{3 * math.sqrt(0.25 / 1e4):.4f}")
    for a in range(2):
        print(f"a={a}: p(x|a) = {[str(v) for v in conditional(a)]}, "
              f"p(x|do a) = {[str(v) for v in interventional(a)]}, "
              f"reweighted = {[str(v) for v in reweighted(a)]}")
