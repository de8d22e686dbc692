"""Convergence-rate envelopes and optimality diagnostics.

Evaluates the theoretical optimality-gap bounds for gradient descent with
teleportation schedules (convex, strongly convex, Hessian-stable with line
search or fixed steps) so empirical traces can be checked against them, plus
a matrix-free Newton-collinearity probe and per-teleport progress checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ioutil import atomic_write_bytes, csv_text
from .objectives import Objective
from .optimize import Schedule, Trace


@dataclass
class RateInputs:
    """Constants feeding the rate bounds.

    ``eta`` is the fixed step size (None for line-search results),
    ``lambda_sequence`` maps teleport iterations to their KKT multipliers,
    and the Hessian-stability constants (L_tilde, mu_tilde) are user
    supplied; quadratics satisfy them with (1, 1) exactly.
    """

    L: float
    R: float
    delta0: float
    K: int
    mu: float = 0.0
    L_tilde: float = 1.0
    mu_tilde: float = 1.0
    eta: float | None = None
    eta_sequence: Sequence[float] | None = None
    schedule: Schedule | None = None
    lambda_sequence: Mapping[int, float] | None = None

    def __post_init__(self):
        if not 0 <= self.mu <= self.L:
            raise ValueError("need 0 <= mu <= L")
        if not 0 < self.mu_tilde <= self.L_tilde:
            raise ValueError("need 0 < mu_tilde <= L_tilde")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def steps(self) -> np.ndarray:
        if self.eta_sequence is not None:
            etas = np.asarray(self.eta_sequence, dtype=float)
            if etas.size < self.K:
                raise ValueError("eta_sequence shorter than the horizon")
            return etas[: self.K]
        if self.eta is None:
            raise ValueError("a step size is required for fixed-step bounds")
        return np.full(self.K, float(self.eta))

    def members(self) -> list[int]:
        return [] if self.schedule is None else self.schedule.members()


@dataclass
class BoundCurve:
    """Per-iteration upper bounds on the optimality gap."""

    k: np.ndarray
    bound: np.ndarray
    tag: str

    def __getitem__(self, i: int) -> float:
        return float(self.bound[i])

    def to_csv(self, path) -> None:
        rows = [[int(kk), repr(float(b)), self.tag] for kk, b in zip(self.k, self.bound)]
        atomic_write_bytes(path, csv_text(["k", "bound", "theorem_tag"], rows).encode())


def _stability_ratio(l_tilde: float, mu_tilde: float) -> float:
    """L_tilde / (L_tilde - mu_tilde); infinite when the constants coincide."""
    if l_tilde == mu_tilde:
        return np.inf
    return l_tilde / (l_tilde - mu_tilde)


def convex_bound(inputs: RateInputs) -> BoundCurve:
    """Sub-linear envelope 2R^2 / (k eta (2 - L eta)) for eta < 2/L."""
    etas = inputs.steps()
    eta = float(etas[0])
    if not np.allclose(etas, eta):
        raise ValueError("the convex bound assumes a constant step size")
    if eta >= 2 / inputs.L:
        raise ValueError("need eta < 2/L")
    ks = np.arange(inputs.K + 1)
    with np.errstate(divide="ignore"):
        vals = 2 * inputs.R**2 / (ks * eta * (2 - inputs.L * eta))
    vals[0] = np.inf
    return BoundCurve(ks, vals, "convex")


def strongly_convex_bounds(inputs: RateInputs) -> tuple[BoundCurve, BoundCurve]:
    """Strongly convex envelopes: slow product rate and non-expansive rate.

    slow:          delta_K <= prod_i [1 - 2 mu eta_i (1 - eta_i L / 2)] delta_0
    non-expansive: delta_K <= (L/mu) prod_i max{(1-eta_i L)^2, (1-eta_i mu)^2} delta_0
    """
    if inputs.mu <= 0:
        raise ValueError("strong convexity requires mu > 0")
    etas = inputs.steps()
    if np.any(etas >= 2 / inputs.L):
        raise ValueError("slow rate needs eta_i < 2/L")
    ks = np.arange(inputs.K + 1)
    slow_factors = 1 - 2 * inputs.mu * etas * (1 - etas * inputs.L / 2)
    slow = inputs.delta0 * np.concatenate([[1.0], np.cumprod(slow_factors)])
    ne_factors = np.maximum((1 - etas * inputs.L) ** 2, (1 - etas * inputs.mu) ** 2)
    ne = (inputs.L / inputs.mu) * inputs.delta0 * np.concatenate([[1.0], np.cumprod(ne_factors)])
    return (BoundCurve(ks, slow, "strongly_convex_slow"),
            BoundCurve(ks, ne, "strongly_convex_nonexpansive"))


def stability_ls_bound(inputs: RateInputs, observed_gaps: Mapping[int, float]) -> float:
    """Final-gap bound for Armijo line search with teleportation blocks.

    2 R^2 L / (M + 2 R^2 L sum_{k in B} [(Lt/(Lt-mt))^{b_k} - 1] / delta_{k-1})
    where M counts plain gradient steps and delta_{k-1} is the observed gap
    just before each block (semi-empirical).
    """
    sched = inputs.schedule or Schedule.empty()
    members = sched.members()
    if 0 in members:
        raise ValueError("the first iteration must not be a teleport step")
    ratio = _stability_ratio(inputs.L_tilde, inputs.mu_tilde)
    m = inputs.K - len([i for i in members if i < inputs.K])
    acc = 0.0
    for s, b in zip(sched.block_starts, sched.block_lengths):
        if s >= inputs.K:
            continue
        if (s - 1) not in observed_gaps:
            raise ValueError(f"missing observed gap for block start {s}")
        b_eff = min(b, inputs.K - s)
        acc += (ratio**b_eff - 1) / observed_gaps[s - 1]
    denom = m + 2 * inputs.R**2 * inputs.L * acc
    if not np.isfinite(denom):
        return 0.0
    return float(2 * inputs.R**2 * inputs.L / denom)


def _prefix_weights(members, horizon: int, per_step_weight) -> float:
    """sum over non-teleport indices k in [1, horizon] of the product of
    per-teleport weights over teleport iterations after k (within horizon)."""
    t_m = sorted(i for i in members if i < horizon)
    t_set = set(t_m)
    total = 0.0
    suffix = 1.0
    ptr = len(t_m) - 1
    for k in range(horizon, 0, -1):
        while ptr >= 0 and t_m[ptr] > k:
            suffix *= per_step_weight(t_m[ptr])
            ptr -= 1
        if k not in t_set:
            total += suffix
    return total


def combined_ls_bound(inputs: RateInputs) -> BoundCurve:
    """Fully explicit line-search envelope (weighted telescoping).

    delta_k <= 2 R^2 L / sum_{j not in T, 0 < j <= k} (Lt/(Lt-mt))^{n_j},
    with n_j counting teleport steps after j.  Evaluated for every prefix
    horizon, truncating the schedule to iterations below the horizon.
    """
    sched = inputs.schedule or Schedule.empty()
    members = sched.members()
    if 0 in members:
        raise ValueError("the first iteration must not be a teleport step")
    ratio = _stability_ratio(inputs.L_tilde, inputs.mu_tilde)
    ks = np.arange(inputs.K + 1)
    vals = np.empty(inputs.K + 1)
    vals[0] = np.inf
    for m in range(1, inputs.K + 1):
        denom = _prefix_weights(members, m, lambda i: ratio)
        vals[m] = 2 * inputs.R**2 * inputs.L / denom if np.isfinite(denom) else 0.0
    return BoundCurve(ks, vals, "combined_ls")


def alternating_ls_closed_form(inputs: RateInputs, k: int | None = None) -> float:
    """Closed form of the combined line-search bound for the every-other
    schedule: the geometric series collapses to
    2 R^2 L (ratio - 1) / (ratio^{k/2} - 1) with ratio = Lt/(Lt-mt)."""
    kk = inputs.K if k is None else k
    if kk < 2 or kk % 2:
        raise ValueError("the closed form needs an even horizon >= 2")
    ratio = _stability_ratio(inputs.L_tilde, inputs.mu_tilde)
    if not np.isfinite(ratio):
        return 0.0
    return float(2 * inputs.R**2 * inputs.L * (ratio - 1) / (ratio ** (kk / 2) - 1))


def fixed_step_bounds(inputs: RateInputs,
                      observed_gaps: Mapping[int, float] | None = None,
                      ) -> tuple[BoundCurve, BoundCurve]:
    """Fixed-step envelopes under Hessian stability (eta < 2/(L Lt)).

    Per teleport step i the gap contracts by
    c_i = 1 + lambda_i eta mu_tilde (Lt lambda_i eta - 2) in [0, 1].
    The blockwise curve uses psi_{k-1} = 1 - prod c_i per block together with
    the gap observed before the block (delta_0 when not supplied, which only
    loosens the bound); the combined curve weights plain steps by the product
    of 1/c_i over later teleports.
    """
    eta = float(inputs.steps()[0])
    if not np.allclose(inputs.steps(), eta):
        raise ValueError("fixed-step bounds assume a constant step size")
    if eta >= 2 / (inputs.L * inputs.L_tilde):
        raise ValueError("need eta < 2/(L * L_tilde)")
    sched = inputs.schedule or Schedule.empty()
    members = sched.members()
    if 0 in members:
        raise ValueError("the first iteration must not be a teleport step")
    lam = dict(inputs.lambda_sequence or {})
    for i in members:
        li = lam.get(i, inputs.L)
        if not -1e-9 <= li <= inputs.L * (1 + 1e-9):
            raise ValueError(f"lambda at step {i} outside [0, L]")

    def contraction(i: int) -> float:
        li = min(max(lam.get(i, inputs.L), 0.0), inputs.L)
        return 1 + li * eta * inputs.mu_tilde * (inputs.L_tilde * li * eta - 2)

    def inv_contraction(i: int) -> float:
        c = contraction(i)
        return 1.0 / c if c > 0 else np.inf

    xi = eta * (2 - inputs.L * eta)
    r2 = inputs.R**2
    ks = np.arange(inputs.K + 1)
    blockwise = np.empty(inputs.K + 1)
    combined = np.empty(inputs.K + 1)
    blockwise[0] = combined[0] = np.inf
    for m in range(1, inputs.K + 1):
        t_m = [i for i in members if i < m]
        m_steps = m - len(t_m)
        acc = 0.0
        for s, b in zip(sched.block_starts, sched.block_lengths):
            if s >= m:
                continue
            prod = 1.0
            for i in range(s, min(s + b, m)):
                prod *= contraction(i)
            psi = 1 - prod
            gap = observed_gaps.get(s - 1, inputs.delta0) if observed_gaps else inputs.delta0
            acc += psi / gap
        blockwise[m] = 2 * r2 / (xi * m_steps + 2 * r2 * acc)
        denom = _prefix_weights(members, m, inv_contraction)
        combined[m] = 2 * r2 / (xi * denom) if np.isfinite(denom) else 0.0
    return (BoundCurve(ks, blockwise, "stability_fixed_blockwise"),
            BoundCurve(ks, combined, "stability_fixed_combined"))


def newton_collinearity(obj: Objective, w, tol: float = 1e-10) -> tuple[float, bool]:
    """Cosine between the gradient and the CG Newton direction at w.

    Solves H d = g by conjugate gradient on Hessian-vector products (at most
    10 d iterations).  Returns defined=False when the curvature along the
    gradient is (near-)singular, in which case the Newton direction does not
    exist and the cosine is reported as 0.
    """
    w = np.asarray(w, dtype=float)
    g = obj.grad(w)
    gn = float(np.linalg.norm(g))
    if gn <= 0:
        raise ValueError("Newton collinearity needs a non-zero gradient")
    if float(np.linalg.norm(obj.hvp(w, g))) <= 1e-10 * gn:
        return 0.0, False
    d = np.zeros_like(g)
    r = g.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(10 * obj.dim):
        hp = obj.hvp(w, p)
        curv = float(p @ hp)
        if curv <= 1e-14 * float(p @ p):
            return 0.0, False
        alpha = rs / curv
        d += alpha * p
        r -= alpha * hp
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol * gn:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    dn = float(np.linalg.norm(d))
    if dn <= 0:
        return 0.0, False
    return float(d @ g) / (dn * gn), True


@dataclass
class ProgressReport:
    """Outcome of the per-teleport progress check."""

    checked: int
    violations: list[tuple[int, float, float]]  # (k, observed, allowed)

    @property
    def ok(self) -> bool:
        return not self.violations


def stability_progress_check(trace: Trace, inputs: RateInputs, f_star: float,
                             tol: float = 1e-9) -> ProgressReport:
    """Check the one-step progress guarantee after every teleport step.

    Line-search runs (inputs.eta None) must contract the gap by
    (1 - mu_tilde/L_tilde); fixed-step runs by
    1 + 2 mu_tilde lambda_k eta (eta lambda_k L_tilde / 2 - 1) with the
    recorded multiplier lambda_k.  Plain gradient steps are out of scope.
    """
    gaps = trace.gaps(f_star)
    violations = []
    checked = 0
    for k, ph in enumerate(trace.phase):
        if ph != "teleport":
            continue
        checked += 1
        if inputs.eta is None:
            factor = 1 - inputs.mu_tilde / inputs.L_tilde
        else:
            lam_k = float(trace.teleport_lambda[k])
            factor = 1 + 2 * inputs.mu_tilde * lam_k * inputs.eta * (
                inputs.eta * lam_k * inputs.L_tilde / 2 - 1)
        allowed = factor * gaps[k] + tol * (1 + abs(gaps[k]))
        if gaps[k + 1] > allowed:
            violations.append((k, float(gaps[k + 1]), float(allowed)))
    return ProgressReport(checked=checked, violations=violations)


def estimate_radius(obj: Objective, w_star, w0, extra_points=(),
                    n_probes: int = 100, seed: int = 0, level: float | None = None,
                    max_radius: float = 1e8) -> float:
    """Estimate the sub-level-set diameter R = sup ||w - w*|| over f(w) <= f(w0).

    Takes the maximum distance from the reference minimizer to the start
    point, any supplied iterates, and seeded random probes of the level set
    (directions along which f never reaches the level are skipped).  Used
    for bound reporting only, never inside algorithms.
    """
    w_star = np.asarray(w_star, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    lvl = obj.value(w0) if level is None else level
    best = float(np.linalg.norm(w0 - w_star))
    for p in extra_points:
        best = max(best, float(np.linalg.norm(np.asarray(p) - w_star)))
    rng = np.random.default_rng(seed)
    for _ in range(n_probes):
        u = rng.normal(size=obj.dim)
        u /= np.linalg.norm(u)
        lo, hi = 0.0, 1.0
        while obj.value(w_star + hi * u) < lvl:
            lo, hi = hi, hi * 2
            if hi > max_radius:
                hi = None
                break
        if hi is None:
            continue
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if obj.value(w_star + mid * u) < lvl:
                lo = mid
            else:
                hi = mid
        best = max(best, hi)
    return best
