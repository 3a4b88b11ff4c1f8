"""Singular-value diagnostics for the one- and two-pathway operators.

Sound inequalities (submultiplicativity, triangle and reverse triangle,
unit top singular value of the normalized adjacency power) are asserted.
The strict "< 1" claims about row-stochastic attention are only reported,
since a row-stochastic P always has P @ 1 = 1 and hence sigma_max(P) >= 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .kg_data import KnowledgeGraph, SizeError, add_inverse_relations, build_normalized_adjacency
from .numerics import ContractError, ShapeError
from .pathways import ATTENTION_DIAGNOSTIC_CAP, MessageGraph, global_forward

TOL = 1e-9
BOUND_TOL = 1e-6
DEFAULT_ELLS = tuple(range(65))


def sigma_max(m: np.ndarray) -> float:
    """Largest singular value by dense SVD (diagnostic sizes only)."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    return float(np.linalg.svd(m, compute_uv=False)[0])


@dataclass
class PathwayMatrices:
    adjacency: np.ndarray
    attention: np.ndarray
    layers: int
    alpha: float

    def __post_init__(self):
        a, p = np.asarray(self.adjacency, float), np.asarray(self.attention, float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != p.shape:
            raise ShapeError(f"adjacency {a.shape} and attention {p.shape} must be equal square shapes")
        if a.shape[0] > ATTENTION_DIAGNOSTIC_CAP:
            raise SizeError(f"{a.shape[0]} entities exceeds the diagnostic cap")
        if np.abs(a - a.T).max(initial=0.0) > 1e-12:
            raise ContractError("adjacency must be symmetric")
        if np.abs(p.sum(axis=1) - 1.0).max(initial=0.0) > TOL or (p < 0).any():
            raise ContractError("attention must be row-stochastic")
        if not 0.0 < self.alpha < 1.0:
            raise ContractError(f"alpha={self.alpha} outside (0, 1)")
        if self.layers < 0:
            raise ContractError("layer count must be >= 0")
        self.adjacency, self.attention = a, p


def _check_square_pair(p: np.ndarray, a: np.ndarray):
    if p.ndim != 2 or a.ndim != 2 or p.shape[1] != a.shape[0] or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cannot compose P {p.shape} with A {a.shape}")


def compose_single_pathway(p, a, layers: int) -> np.ndarray:
    """P @ A^L: message passing followed by attention."""
    p, a = np.asarray(p, float), np.asarray(a, float)
    _check_square_pair(p, a)
    if layers < 0:
        raise ContractError("layers must be >= 0")
    return p @ np.linalg.matrix_power(a, layers)


def compose_dual_pathway(p, a, layers: int, alpha: float) -> np.ndarray:
    """alpha * A^L + (1 - alpha) * P."""
    p, a = np.asarray(p, float), np.asarray(a, float)
    _check_square_pair(p, a)
    if p.shape != a.shape:
        raise ShapeError(f"P {p.shape} and A {a.shape} differ")
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha={alpha} outside (0, 1)")
    if layers < 0:
        raise ContractError("layers must be >= 0")
    return alpha * np.linalg.matrix_power(a, layers) + (1.0 - alpha) * p


def alpha_threshold(sigma_single: float, sigma_dual: float) -> float:
    if sigma_single < 0 or sigma_dual < 0:
        raise ContractError("singular values must be >= 0")
    return (sigma_dual + sigma_single) / (1.0 + sigma_single)


def gap_upper_bound(lipschitz: float, sigma: float, ell: int, x0_norm: float) -> float:
    """2 * L_f * sigma^ell * ||X0||."""
    if min(lipschitz, sigma, ell, x0_norm) < 0:
        raise ContractError("bound inputs must be >= 0")
    return 2.0 * lipschitz * sigma ** ell * x0_norm


def subtable_gap_lower_bound(n_high: int, n_low: int, sigma: float) -> float:
    if n_high < 1 or n_low < 1:
        raise ContractError("subtable sizes must be >= 1")
    if sigma < 0:
        raise ContractError("sigma must be >= 0")
    return abs((1.0 / (n_high ** 2 + 1) - 1.0 / (n_low ** 2 + 1)) * sigma)


@dataclass
class Check:
    name: str
    inequality: str
    lhs: float
    rhs: float
    passed: bool

    def to_dict(self) -> dict:
        return {"inequality": self.inequality, "lhs": self.lhs, "rhs": self.rhs, "passed": self.passed}


@dataclass
class SpectralReport:
    sigma_adjacency_power: float
    sigma_attention: float
    sigma_single: float
    sigma_dual: float
    alpha: float
    layers: int
    checks: list[Check]
    claims: list[Check]
    threshold: float
    alpha_below_threshold: bool
    curves: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed_checks(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "sigma_max": {
                "adjacency_power": self.sigma_adjacency_power,
                "attention": self.sigma_attention,
                "single_pathway": self.sigma_single,
                "dual_pathway": self.sigma_dual,
            },
            "alpha": self.alpha,
            "layers": self.layers,
            "asserted_checks": {c.name: c.to_dict() for c in self.checks},
            "reported_claims": {c.name: c.to_dict() for c in self.claims},
            "alpha_threshold": self.threshold,
            "alpha_below_threshold": self.alpha_below_threshold,
            "passed": self.passed,
        }

    def curves_csv(self) -> str:
        rows = ["ell,single_bound,dual_bound"]
        rows += [f"{ell},{s:.6e},{d:.6e}" for ell, s, d in self.curves]
        return "\n".join(rows) + "\n"


def singular_report(mats: PathwayMatrices, lipschitz: float = 1.0, x0_norm: float = 1.0,
                    ells=DEFAULT_ELLS, check_unit_adjacency: bool = True) -> SpectralReport:
    """Measure sigma_max of A^L, P, P A^L and the fused operator and test the sound inequalities.

    ``check_unit_adjacency`` should be false when the adjacency has no
    self-loops, where sigma_max(A^L) = 1 need not hold.
    """
    a, p, L, alpha = mats.adjacency, mats.attention, mats.layers, mats.alpha
    a_pow = np.linalg.matrix_power(a, L)
    s_a = sigma_max(a_pow)
    s_p = sigma_max(p)
    s_o = sigma_max(p @ a_pow)
    s_d = sigma_max(alpha * a_pow + (1.0 - alpha) * p)
    checks = []
    if check_unit_adjacency:
        checks.append(Check("unit_adjacency_power", "|sigma_max(A^L) - 1| <= 1e-9", abs(s_a - 1.0), TOL,
                            abs(s_a - 1.0) <= TOL))
    checks += [
        Check("submultiplicative", "sigma_max(P A^L) <= sigma_max(P) * sigma_max(A^L) + 1e-9",
              s_o, s_p * s_a + TOL, s_o <= s_p * s_a + TOL),
        Check("triangle", "sigma_max(M_D) <= alpha * sigma_max(A^L) + (1 - alpha) * sigma_max(P) + 1e-9",
              s_d, alpha * s_a + (1 - alpha) * s_p + TOL, s_d <= alpha * s_a + (1 - alpha) * s_p + TOL),
        Check("reverse_triangle", "sigma_max(M_D) >= |alpha - (1 - alpha) * sigma_max(P)| - 1e-9",
              s_d, abs(alpha - (1 - alpha) * s_p) - TOL, s_d >= abs(alpha - (1 - alpha) * s_p) - TOL),
    ]
    claims = [
        Check("attention_below_one", "sigma_max(P) < 1", s_p, 1.0, s_p < 1.0),
        Check("single_below_one", "sigma_max(P A^L) < 1", s_o, 1.0, s_o < 1.0),
        Check("dual_below_one", "sigma_max(M_D) < 1", s_d, 1.0, s_d < 1.0),
        Check("dual_above_alpha_gap", "sigma_max(M_D) > alpha - (1 - alpha) * sigma_max(P A^L)",
              s_d, alpha - (1 - alpha) * s_o, s_d > alpha - (1 - alpha) * s_o),
        Check("dual_above_single", "sigma_max(M_D) > sigma_max(P A^L)", s_d, s_o, s_d > s_o),
    ]
    thr = alpha_threshold(s_o, s_d)
    curves = [(ell, gap_upper_bound(lipschitz, s_o, ell, x0_norm), gap_upper_bound(lipschitz, s_d, ell, x0_norm))
              for ell in ells]
    return SpectralReport(s_a, s_p, s_o, s_d, alpha, L, checks, claims, thr, alpha < thr, curves)


def bound_strictly_decreasing(sigma: float, lipschitz: float = 1.0, x0_norm: float = 1.0,
                              ells=DEFAULT_ELLS) -> bool:
    vals = [gap_upper_bound(lipschitz, sigma, ell, x0_norm) for ell in ells]
    return all(b < a for a, b in zip(vals, vals[1:]))


# -- model-driven diagnostics ----------------------------------------------

def pathway_matrices(model, kg: KnowledgeGraph, query) -> tuple[PathwayMatrices, np.ndarray]:
    """Normalized adjacency of ``kg``, the model's first attention map for
    ``query``, its local depth and alpha.  Also returns X0."""
    graph = MessageGraph(add_inverse_relations(kg))
    state = model.encode(graph, query)
    _, mats = global_forward(state, model.global_, return_attention=True)
    if not mats:
        raise ContractError("model has no global layers")
    a = build_normalized_adjacency(kg)
    return PathwayMatrices(a, mats[0], model.local.num_layers, model.alpha), state.x0.data.copy()


@dataclass
class GapBoundReport:
    gaps: np.ndarray
    bound: float
    sigma: float
    lipschitz: float
    x0_norm: float
    ell: int

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.gaps > self.bound + BOUND_TOL))

    def to_dict(self) -> dict:
        return {"pairs": int(self.gaps.size), "max_gap": float(self.gaps.max(initial=0.0)), "bound": self.bound,
                "sigma_max": self.sigma, "lipschitz": self.lipschitz, "x0_norm": self.x0_norm,
                "ell": self.ell, "violations": self.violations}


def measure_gap_vs_bound(operator: np.ndarray, x0: np.ndarray, mlp, ell: int, pairs: np.ndarray,
                         sigma: float | None = None, lipschitz: float | None = None) -> GapBoundReport:
    """Scores f(M^ell X0) for the given entity pairs against the bound.

    ``sigma`` and ``lipschitz`` default to the measured values; pass
    smaller ones to probe how tight the bound is.
    """
    from .fusion import estimate_lipschitz

    x = np.linalg.matrix_power(np.asarray(operator, float), ell) @ x0
    scores = mlp.forward_numpy(x)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    gaps = np.abs(scores[pairs[:, 0]] - scores[pairs[:, 1]])
    s = sigma_max(operator) if sigma is None else sigma
    lf = estimate_lipschitz(mlp).value if lipschitz is None else lipschitz
    x0n = sigma_max(x0)
    return GapBoundReport(gaps, gap_upper_bound(lf, s, ell, x0n), s, lf, x0n, ell)


def empirical_gap_vs_bound(model, kg: KnowledgeGraph, query, pair_count: int, rng: np.random.Generator,
                           ell: int = 1) -> GapBoundReport:
    """Random entity pairs scored through the fused linear operator.

    X^(ell) = M_D^ell X0 with the model's adjacency power, attention and
    alpha; scores come from the model's MLP and the bound uses the
    spectral-product Lipschitz estimate.
    """
    mats, x0 = pathway_matrices(model, kg, query)
    m_d = compose_dual_pathway(mats.attention, mats.adjacency, mats.layers, mats.alpha)
    n = m_d.shape[0]
    u = rng.integers(0, n, size=pair_count)
    v = (u + rng.integers(1, n, size=pair_count)) % n
    return measure_gap_vs_bound(m_d, x0, model.mlp, ell, np.stack([u, v], axis=1))


# -- subtable gap Monte Carlo -------------------------------------------------

@dataclass
class MonteCarloReport:
    n_high: int
    n_low: int
    trials: int
    mean_gap: float
    stderr: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.mean_gap > self.bound

    def to_dict(self) -> dict:
        return {"n_high": self.n_high, "n_low": self.n_low, "trials": self.trials, "mean_gap": self.mean_gap,
                "stderr": self.stderr, "bound": self.bound, "passed": self.passed}


def normal_max(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Maximum of ``n`` iid standard normals, ``size`` draws.

    Uses max = Phi^-1(U^(1/n)), written as the upper-tail quantile of
    -expm1(log(U)/n) so that large ``n`` keeps full precision.
    """
    u = rng.random(size)
    tail = -np.expm1(np.log(u) / n)
    return -ndtri(tail)


def subtable_gap_montecarlo(n_high: int, n_low: int, trials: int, rng: np.random.Generator,
                               sampler=None, sigma: float = 1.0, chunk: int = 10_000) -> MonteCarloReport:
    """Mean |max(high scores) - max(low scores)| over iid score draws.

    ``sampler(rng, shape)`` draws raw scores; by default standard normals,
    in which case the two maxima are sampled directly.
    """
    if trials < 10_000:
        raise ContractError("use at least 10^4 trials")
    if n_high < 1 or n_low < 1:
        raise ContractError("subtable sizes must be >= 1")
    gaps = np.empty(trials)
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        if sampler is None:
            hi = normal_max(n_high, m, rng)
            lo = normal_max(n_low, m, rng)
        else:
            s = np.asarray(sampler(rng, (m, n_high + n_low)), dtype=np.float64)
            hi, lo = s[:, :n_high].max(axis=1), s[:, n_high:].max(axis=1)
        gaps[start:start + m] = np.abs(hi - lo)
    return MonteCarloReport(n_high, n_low, trials, float(gaps.mean()),
                            float(gaps.std(ddof=1) / math.sqrt(trials)),
                            subtable_gap_lower_bound(n_high, n_low, sigma))
