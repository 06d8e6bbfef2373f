"""Independent scalar reference implementations used to cross-check the
engine. Everything here is straight-line Python-float arithmetic with no
numpy vectorization and no shared code with the package under test beyond
the operation definitions themselves.
"""
import math


def softmax_direct(z, tau=1.0):
    """Direct exp(z/tau)/sum evaluation, no max subtraction."""
    e = [math.exp(v / tau) for v in z]
    s = sum(e)
    return [v / s for v in e]


def jsd_direct(p, q):
    m = [(a + b) / 2 for a, b in zip(p, q)]

    def kl(a, b):
        total = 0.0
        for x, y in zip(a, b):
            if x > 0:
                total += x * math.log(x / y)
        return total

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def gain_scan_direct(rows, token, mode, eps=1e-12):
    """Adjacent-layer gain profile and best layer for one token.

    rows is a list of logit lists (layer 1 first); returns (layer, gains)
    with gains[i] belonging to layer i + 2.
    """
    probs = [softmax_direct(row)[token] for row in rows]
    gains = []
    for i in range(1, len(probs)):
        if mode == "change":
            gains.append(probs[i] - probs[i - 1])
        else:
            gains.append(math.log((probs[i] + eps) / (probs[i - 1] + eps)))
    best = 0
    for i in range(1, len(gains)):
        if gains[i] > gains[best]:
            best = i
    return best + 2, gains


def apc_direct(probs, beta):
    top = max(probs)
    return {i for i, p in enumerate(probs) if p >= beta * top}


def amateur_direct(rows, candidates):
    """Highest-JSD candidate against the last row; lowest index on ties."""
    mature = softmax_direct(rows[-1])
    best_layer = None
    best = -1.0
    for layer in candidates:
        d = jsd_direct(mature, softmax_direct(rows[layer - 1]))
        if d > best:
            best = d
            best_layer = layer
    return best_layer


def fused_step_direct(rows, visual, candidates, lam, beta, fusion, tau=1.0):
    """One full decoding step re-derived from scratch.

    Returns (token, amateur_layer). Masked positions never win because only
    plausible ids are scanned, in ascending order so ties keep the lowest.
    """
    num_layers = len(rows)
    mature_probs = softmax_direct(rows[-1], tau)
    plausible = apc_direct(mature_probs, beta)
    amateur = amateur_direct(rows, candidates)
    z_l = rows[-1]
    z_a = rows[amateur - 1]
    z_v = rows[visual - 1]
    best_token = None
    best_score = None
    for t in sorted(plausible):
        if fusion == "tri":
            score = z_l[t] - z_a[t] + lam * z_v[t]
        else:
            score = z_l[t] - lam * z_a[t] + (1.0 - lam) * z_v[t]
        if best_score is None or score > best_score:
            best_score = score
            best_token = t
    return best_token, amateur, num_layers


def mature_greedy_direct(rows):
    row = rows[-1]
    best = 0
    for i in range(1, len(row)):
        if row[i] > row[best]:
            best = i
    return best


def binary_confusion_direct(samples):
    """(tp, fp, fn, tn) with invalid predictions wrong for their side."""
    tp = fp = fn = tn = 0
    for gold, pred in samples:
        if gold == "yes":
            tp, fn = (tp + 1, fn) if pred == "yes" else (tp, fn + 1)
        else:
            tn, fp = (tn + 1, fp) if pred == "no" else (tn, fp + 1)
    return tp, fp, fn, tn
