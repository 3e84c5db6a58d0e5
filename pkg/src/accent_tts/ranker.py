"""Relative-attribute ranking: learn ``R(f) = w·f`` from ordered and similar pairs.

The primal objective with squared slacks is

    ½‖w‖² + C Σ_O max(0, 1 − w·(F_hi − F_lo))² + C Σ_S (w·(F_a − F_b))²

which is convex, once differentiable and piecewise quadratic, so a Newton
method with an active set recomputed at every step solves it exactly.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, OracleTooLarge, SolverDiverged, UnpairedUtterance

logger = logging.getLogger(__name__)

INTENSITY_EPS = 1e-3
DEFAULT_C = 1.0
DEFAULT_K_FACTOR = 2


@dataclass
class ConstraintSets:
    ordered: list
    similar: list
    feature_bank: list

    def __post_init__(self):
        n = len(self.feature_bank)
        for a, b in list(self.ordered) + list(self.similar):
            if not (0 <= a < n and 0 <= b < n):
                raise IndexError(f"pair ({a}, {b}) references outside a bank of {n} vectors")

    @property
    def matrix(self):
        return np.array([_values(f) for f in self.feature_bank], dtype=np.float64)

    def differences(self):
        """``(D_ordered, D_similar)`` with rows F_hi − F_lo and F_a − F_b."""
        F = self.matrix
        dim = F.shape[1] if F.ndim == 2 else 0
        d_o = np.array([F[h] - F[l] for h, l in self.ordered]).reshape(-1, dim)
        d_s = np.array([F[a] - F[b] for a, b in self.similar]).reshape(-1, dim)
        return d_o, d_s


@dataclass
class RankTrainState:
    w: np.ndarray
    C: float
    xi: np.ndarray
    eta: np.ndarray
    iteration: int = 0


@dataclass
class RankModel:
    w: np.ndarray
    C: float
    score_min: float = -0.5
    score_max: float = 0.5
    accent_id: str = ""
    solver_iterations: int = 0
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "accent_id": self.accent_id,
            "C": self.C,
            "w": [float(x) for x in self.w],
            "score_min": self.score_min,
            "score_max": self.score_max,
            "solver_iterations": self.solver_iterations,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["w"], dtype=np.float64), float(d["C"]), float(d["score_min"]),
                   float(d["score_max"]), str(d["accent_id"]), int(d.get("solver_iterations", 0)))

    def with_bounds(self, scores):
        _, lo, hi = normalize_intensities(scores)
        if not hi > lo:
            lo, hi = lo - 0.5, hi + 0.5
        self.score_min, self.score_max = float(lo), float(hi)
        return self

    def intensity(self, f):
        s = score(self, f)
        return float(np.clip((s - self.score_min) / (self.score_max - self.score_min),
                             INTENSITY_EPS, 1.0 - INTENSITY_EPS))


def _values(f):
    return f.values if hasattr(f, "values") else np.asarray(f, dtype=np.float64)


def _key(f):
    return (f.speaker_id, f.utterance_id)


def build_constraint_sets(l1, l2, k=None, seed=0, policy="matched"):
    """Ordered pairs (L2 above L1) and similar pairs (same domain).

    Bank layout is ``l1 + l2``. Under the "matched" policy every L2 vector is
    paired with the L1 vector sharing its (speaker, utterance) key; ``k``
    extra random cross pairs are added, and ``k`` random same-domain pairs are
    drawn from each of L1 and L2. The "random" policy skips the matched pairs.
    ``k`` defaults to twice the number of L2 vectors.
    """
    if not l1 or not l2:
        raise ValueError("both L1 and L2 sets must be non-empty")
    n1, n2 = len(l1), len(l2)
    bank = list(l1) + list(l2)
    rng = np.random.default_rng(seed)
    ordered = []
    partner = {}
    if policy == "matched":
        index = {_key(f): i for i, f in enumerate(l1)}
        for j, f in enumerate(l2):
            i = index.get(_key(f))
            if i is None:
                raise UnpairedUtterance(f"no L1 rendition for {f.speaker_id}/{f.utterance_id}")
            partner[j] = i
            ordered.append((n1 + j, i))
    elif policy != "random":
        raise ValueError(f"unknown pairing policy {policy!r}")
    if k is None:
        k = DEFAULT_K_FACTOR * n2
    for _ in range(k):
        j = int(rng.integers(n2))
        i = int(rng.integers(n1))
        if n1 > 1 and partner.get(j) == i:
            i = (i + 1 + int(rng.integers(n1 - 1))) % n1
        ordered.append((n1 + j, i))
    similar = []
    for offset, n in ((0, n1), (n1, n2)):
        if n < 2:
            continue
        for _ in range(k):
            a, b = rng.choice(n, size=2, replace=False)
            similar.append((offset + int(a), offset + int(b)))
    return ConstraintSets(ordered, similar, bank)


def rank_objective(w, d_o, d_s, C):
    hinge = np.maximum(0.0, 1.0 - d_o @ w)
    sim = d_s @ w
    return 0.5 * w @ w + C * (hinge @ hinge) + C * (sim @ sim)


def train_rank_svm(cs, C=DEFAULT_C, max_iter=100, tol=1e-6, w0=None, accent_id=""):
    """Primal Newton solver with backtracking line search.

    Returns a RankModel whose score bounds come from the L2-side (higher)
    vectors of the ordered pairs. ``model.history`` holds the objective after
    every iteration.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    if not cs.ordered:
        raise ValueError("need at least one ordered pair")
    d_o, d_s = cs.differences()
    dim = d_o.shape[1]
    w = np.zeros(dim) if w0 is None else np.array(w0, dtype=np.float64)
    eye = np.eye(dim)
    hs = 2.0 * C * (d_s.T @ d_s)
    f = rank_objective(w, d_o, d_s, C)
    history = [f]
    gnorm = np.inf
    for it in range(max_iter + 1):
        margin = 1.0 - d_o @ w
        act = margin > 0
        da = d_o[act]
        g = w - 2.0 * C * (da.T @ margin[act]) + hs @ w
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            break
        if it == max_iter:
            raise SolverDiverged(
                f"rank SVM did not converge in {max_iter} Newton steps "
                f"(objective {f:.6g}, gradient norm {gnorm:.3g})",
                objective=f, grad_norm=gnorm,
            )
        H = eye + 2.0 * C * (da.T @ da) + hs
        step = np.linalg.solve(H, g)
        t = 1.0
        while True:
            w_new = w - t * step
            f_new = rank_objective(w_new, d_o, d_s, C)
            if f_new < f or t < 1e-12:
                break
            t *= 0.5
        if not f_new < f:
            raise SolverDiverged("line search failed to decrease the objective",
                                 objective=f, grad_norm=gnorm)
        w, f = w_new, f_new
        history.append(f)
    model = RankModel(w, float(C), accent_id=accent_id, solver_iterations=len(history) - 1)
    model.history = history
    F = cs.matrix
    hi_idx = sorted({h for h, _ in cs.ordered})
    return model.with_bounds(F[hi_idx] @ w)


def qp_oracle(cs, C=DEFAULT_C, seed=None, tol=1e-8, max_sweeps=500000):
    """Minimize the same objective by exact cyclic coordinate descent.

    Written against plain Python lists so it shares nothing with the Newton
    path. Capped at 8 dimensions and 20 pairs.
    """
    bank = [[float(x) for x in _values(f)] for f in cs.feature_bank]
    dim = len(bank[0]) if bank else 0
    if dim > 8 or len(cs.ordered) + len(cs.similar) > 20:
        raise OracleTooLarge(f"oracle handles dim <= 8 and <= 20 pairs (got {dim}, "
                             f"{len(cs.ordered) + len(cs.similar)})")
    ords = [[bank[h][k] - bank[l][k] for k in range(dim)] for h, l in cs.ordered]
    sims = [[bank[a][k] - bank[b][k] for k in range(dim)] for a, b in cs.similar]
    if seed is None:
        w = [0.0] * dim
    else:
        rs = np.random.default_rng(seed)
        w = [float(v) for v in rs.normal(0.0, 1.0, size=dim)]

    def dot(u, v):
        s = 0.0
        for a, b in zip(u, v):
            s += a * b
        return s

    def gradient():
        g = list(w)
        for d in ords:
            m = 1.0 - dot(w, d)
            if m > 0:
                for k in range(dim):
                    g[k] -= 2.0 * C * m * d[k]
        for d in sims:
            s = dot(w, d)
            for k in range(dim):
                g[k] += 2.0 * C * s * d[k]
        return g

    def line_min(j):
        # derivative of the objective along coordinate j, as a function of the shift t
        ms = [(1.0 - dot(w, d), d[j]) for d in ords]
        ss = [(dot(w, d), d[j]) for d in sims]

        def deriv(t):
            v = w[j] + t
            for m, dj in ms:
                r = m - t * dj
                if r > 0:
                    v -= 2.0 * C * r * dj
            for s, dj in ss:
                v += 2.0 * C * (s + t * dj) * dj
            return v

        def slope(t):
            # derivative of deriv(t), constant between breakpoints
            v = 1.0
            for m, dj in ms:
                if m - t * dj > 0:
                    v += 2.0 * C * dj * dj
            for _, dj in ss:
                v += 2.0 * C * dj * dj
            return v

        breaks = sorted(m / dj for m, dj in ms if dj != 0.0)
        pts = [-np.inf] + breaks + [np.inf]
        for lo, hi in zip(pts[:-1], pts[1:]):
            if hi != np.inf and deriv(hi) < 0:
                continue
            if lo == -np.inf and hi == np.inf:
                probe = 0.0
            elif hi == np.inf:
                probe = lo + 1.0
            elif lo == -np.inf:
                probe = hi - 1.0
            else:
                probe = 0.5 * (lo + hi)
            sl = slope(probe)
            t = probe - deriv(probe) / sl
            return min(max(t, lo), hi)
        return 0.0

    for _ in range(max_sweeps):
        if sum(x * x for x in gradient()) ** 0.5 < tol:
            break
        for j in range(dim):
            w[j] += line_min(j)
    w_arr = np.array(w)
    model = RankModel(w_arr, float(C))
    F = np.array(bank)
    hi_idx = sorted({h for h, _ in cs.ordered})
    return model.with_bounds(F[hi_idx] @ w_arr)


def score(m, f):
    v = _values(f)
    if v.shape != m.w.shape:
        raise DimMismatch(f"feature dim {v.shape} does not match weight dim {m.w.shape}")
    return float(m.w @ v)


def normalize_intensities(scores):
    """Min-max map to [1e-3, 1 − 1e-3]; constant input maps to 0.5.

    Returns ``(intensities, score_min, score_max)``.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("need at least one score")
    lo, hi = float(s.min()), float(s.max())
    if not hi > lo:
        return np.full_like(s, 0.5), lo, hi
    out = np.clip((s - lo) / (hi - lo), INTENSITY_EPS, 1.0 - INTENSITY_EPS)
    return out, lo, hi


def fit_accent_model(l1, l2, C=DEFAULT_C, k=None, seed=0, accent_id=""):
    """Train one accent's ranker on z-scored features and fold the scaling back into ``w``.

    Scores of the returned model are computed on raw features; they differ
    from the standardized-space scores by a constant, which min-max
    normalization removes.
    """
    cs = build_constraint_sets(l1, l2, k=k, seed=seed)
    F = cs.matrix
    mu = F.mean(axis=0)
    sd = F.std(axis=0)
    keep = sd > 1e-8
    Z = np.where(keep, (F - mu) / np.where(keep, sd, 1.0), 0.0)
    zcs = ConstraintSets(cs.ordered, cs.similar, list(Z))
    zm = train_rank_svm(zcs, C=C, accent_id=accent_id)
    w_raw = np.where(keep, zm.w / np.where(keep, sd, 1.0), 0.0)
    model = RankModel(w_raw, float(C), accent_id=accent_id, solver_iterations=zm.solver_iterations)
    model.history = zm.history
    return model.with_bounds(np.array([_values(f) for f in l2]) @ w_raw)


def fit_all_accents(l1, l2, C=DEFAULT_C, k_factor=DEFAULT_K_FACTOR, seed=0):
    """One RankModel per accent id found in ``l2``."""
    models = {}
    for acc in sorted({f.accent_id for f in l2}):
        a1 = [f for f in l1 if f.accent_id == acc]
        a2 = [f for f in l2 if f.accent_id == acc]
        if not a1:
            raise UnpairedUtterance(f"accent {acc!r} has no L1 vectors")
        models[acc] = fit_accent_model(a1, a2, C=C, k=int(round(k_factor * len(a2))), seed=seed, accent_id=acc)
        logger.info("accent %s: %d Newton steps", acc, models[acc].solver_iterations)
    return models


def save_models(path, models, seed, k_factor):
    payload = {
        "seed": seed,
        "k_factor": k_factor,
        "models": [models[a].to_dict() for a in sorted(models)],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_models(path):
    with open(path) as fh:
        payload = json.load(fh)
    return {d["accent_id"]: RankModel.from_dict(d) for d in payload["models"]}
