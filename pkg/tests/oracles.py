"""Brute-force references used by unit and acceptance tests."""
import itertools
import math


def brute_force_total(score):
    """Best total score over all injective maps from the smaller side."""
    n_a, n_b = score.shape
    if n_a > n_b:
        score, n_a, n_b = score.T, n_b, n_a
    best = 0.0
    for perm in itertools.permutations(range(n_b), n_a):
        best = max(best, sum(score[i, j] for i, j in enumerate(perm)))
    return best


def brute_force_frame(preds, gts):
    """(ATE, AOE, ADE, precision, recall) written out directly from the definitions."""
    gt_by_id = {g.gt_id: g for g in gts}
    errs, tp, fp = [], 0, 0
    for gid, g in gt_by_id.items():
        mine = [p for p in preds if p.gt_id == gid]
        if mine:
            tp += 1
            fp += len(mine) - 1
        for p in mine:
            errs.append((p, g))
    for p in preds:
        if p.gt_id not in gt_by_id:
            fp += 1
            if gts:
                near = min(gts, key=lambda g: (math.hypot(p.box.x - g.box.x, p.box.y - g.box.y),
                                               g.gt_id))
                errs.append((p, near))
    fn = sum(1 for gid in gt_by_id if not any(p.gt_id == gid for p in preds))
    n = len(errs)
    if n == 0:
        ate = aoe = ade = 0.0
    else:
        ate = sum(math.sqrt((p.box.x - g.box.x) ** 2 + (p.box.y - g.box.y) ** 2)
                  for p, g in errs) / n
        aoe = 0.0
        for p, g in errs:
            d = abs(p.box.theta - g.box.theta) % (2 * math.pi)
            aoe += min(d, 2 * math.pi - d)
        aoe /= n
        ade = sum(math.sqrt((p.box.w - g.box.w) ** 2 + (p.box.d - g.box.d) ** 2)
                  for p, g in errs) / n
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return ate, aoe, ade, precision, recall


def random_frame(rng, n_gt=None, n_pred=None):
    """Random ground truth plus predictions with duplicate, missing and unknown ids."""
    from latefuse.geometry import BEVBox
    from latefuse.io import LoadedPrediction
    from latefuse.noise import GTObject

    n_gt = int(rng.integers(0, 8)) if n_gt is None else n_gt
    n_pred = int(rng.integers(0, 12)) if n_pred is None else n_pred
    gts = [GTObject(i, "car", BEVBox(*rng.uniform(-30, 30, 2), *rng.uniform(0.5, 5, 2),
                                     rng.uniform(-math.pi, math.pi)), (0.0, 0.0))
           for i in range(n_gt)]
    preds = [LoadedPrediction(BEVBox(*rng.uniform(-30, 30, 2), *rng.uniform(0.5, 5, 2),
                                     rng.uniform(-math.pi, math.pi)),
                              int(rng.integers(0, n_gt + 2)), "car", 0)
             for _ in range(n_pred)]
    return preds, gts
