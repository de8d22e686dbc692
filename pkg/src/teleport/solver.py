"""Sub-level-set teleportation: maximize the gradient norm without increasing f.

The solver is a projected-gradient SQP method.  Each iteration takes an
ascent step along the curvature direction q = H(x) g(x), projects back onto
the linearization of the level set when the step leaves the sub-level set,
and accepts the step only if a merit function (negative half squared
gradient norm plus a hinge penalty on constraint violation) decreases
sufficiently.  Only Hessian-vector products are required.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ioutil import atomic_write_bytes, csv_text
from .objectives import NonFiniteError, Objective

_TINY = 1e-300


@dataclass
class TeleportConfig:
    """Solver hyperparameters (defaults follow the experimental protocol)."""

    rho0: float = 0.1
    eps: float = 1e-10
    delta: float = 1e-10
    max_iters: int = 50
    gamma_safety: float = 2.0
    armijo_relax: float = 1e-3
    max_backtracks: int = 100
    backtrack_factor: float = 0.5

    def __post_init__(self):
        if min(self.rho0, self.eps, self.delta, self.armijo_relax) <= 0:
            raise ValueError("rho0, eps, delta and armijo_relax must be positive")
        if self.gamma_safety < 1:
            raise ValueError("gamma_safety must be >= 1")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.max_iters < 0 or self.max_backtracks < 0:
            raise ValueError("iteration limits must be non-negative")


@dataclass
class SqpStep:
    """One candidate update: ascent direction, projection correction, target."""

    q: np.ndarray
    v: np.ndarray
    x_next: np.ndarray
    rho_used: float
    projected: bool


@dataclass
class IterRecord:
    """Per-iteration solver metrics (one row of the teleport trace CSV)."""

    t: int
    grad_norm_sq: float
    kkt_residual: float
    constraint_gap: float
    rho: float
    backtracks: int
    gamma: float = 0.0
    x: np.ndarray | None = None


@dataclass
class TeleportResult:
    """Certified output of the teleportation solver."""

    x_plus: np.ndarray
    iterations: int
    kkt_residual: float
    constraint_violation: float
    lam: float
    converged: bool
    grad_norm_gain: float
    history: list[IterRecord] = field(default_factory=list)


def kkt_residual(obj: Objective, x) -> tuple[float, float]:
    """Residual ||q - lam g|| and the Rayleigh multiplier lam = <q,g>/||g||^2.

    The residual equals the norm of q projected onto the orthogonal
    complement of the gradient; it vanishes exactly at KKT points of the
    teleportation problem.  A stationary point of f (zero gradient) returns
    (0, 0).
    """
    g = obj.grad(x)
    gsq = float(g @ g)
    if gsq <= _TINY:
        return 0.0, 0.0
    q = obj.hvp(x, g)
    lam = float(q @ g) / gsq
    return float(np.linalg.norm(q - lam * g)), lam


def _direction(g, q, gsq: float, gap: float, rho: float):
    """Projection correction for one candidate rho.

    The raw ascent target is x + rho q / ||g||^2.  Its signed violation of the
    linearized constraint is hinge = rho <g,q>/||g||^2 + gap; when positive
    the target is infeasible and v = -hinge g pulls it back onto the
    linearized level set (an exact half-space projection).
    """
    hinge = rho * float(g @ q) / gsq + gap
    projected = hinge > 0
    v = -max(hinge, 0.0) * g
    return v, projected


def sqp_step(obj: Objective, x_t, level: float, rho: float) -> SqpStep:
    """One projected ascent step from x_t at the given level."""
    x_t = np.asarray(x_t, dtype=float)
    g = obj.grad(x_t)
    gsq = float(g @ g)
    if gsq <= _TINY:
        raise ValueError("zero gradient: f is stationary on the sub-level set")
    q = obj.hvp(x_t, g)
    gap = obj.value(x_t) - level
    v, projected = _direction(g, q, gsq, gap, rho)
    x_next = x_t + (rho * q + v) / gsq
    return SqpStep(q=q, v=v, x_next=x_next, rho_used=rho, projected=projected)


def merit(obj: Objective, x, gamma: float, level: float) -> float:
    """phi_gamma(x) = -1/2 ||grad f(x)||^2 + gamma (f(x) - level)_+."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    g = obj.grad(x)
    return -0.5 * float(g @ g) + gamma * max(obj.value(x) - level, 0.0)


def penalty_strength(q, v, grad_sq: float, gap: float, gamma_safety: float = 2.0) -> float:
    """Penalty strength making the step a merit descent direction.

    Scales the threshold <q,v> / (||g||^2 gap) by a safety factor.  Zero when
    the projection is inactive (v = 0, plain ascent needs no penalty) or the
    constraint is slack (gap <= 0).
    """
    if grad_sq <= 0:
        raise ValueError("grad_sq must be positive")
    if not np.any(v) or gap <= 0:
        return 0.0
    return max(0.0, gamma_safety * float(q @ v) / (grad_sq * gap))


def _ls_rhs(g_sq: float, q, v, rho: float) -> float:
    return -0.5 * g_sq + (float(q @ v) - rho * float(q @ q)) / g_sq


def ls_condition(obj: Objective, step: SqpStep, x_t, level: float,
                 gamma: float, rho: float, relax: float) -> bool:
    """Sufficient-decrease test on the merit function.

    Accepts when phi_gamma(x_next) <= -1/2||g||^2 + (<q,v> - rho||q||^2)/||g||^2,
    relaxed by relax*|rhs| to absorb rounding on nearly-converged iterates.
    """
    g = obj.grad(x_t)
    gsq = float(g @ g)
    rhs = _ls_rhs(gsq, step.q, step.v, rho)
    lhs = merit(obj, step.x_next, gamma, level)
    return lhs <= rhs + relax * abs(rhs)


def solve_teleport(obj: Objective, w_k, config: TeleportConfig | None = None,
                   keep_iterates: bool = False) -> TeleportResult:
    """Solve sub-level-set teleportation from w_k.

    Iterates projected ascent steps with rho halved until the merit test
    passes, and terminates when the KKT residual falls below eps and the
    constraint violation below delta.  Returns the best feasible iterate by
    gradient norm (the start point counts, so the gradient norm never
    shrinks).  rho carries over between iterations without being reset.
    """
    cfg = config or TeleportConfig()
    x = np.asarray(w_k, dtype=float).copy()
    level = obj.value(x)
    fx = level
    g = obj.grad(x)
    gsq = float(g @ g)
    gn0 = float(np.sqrt(gsq))
    history: list[IterRecord] = []

    def finish(best_x, iters, ok) -> TeleportResult:
        resid_b, lam_b = kkt_residual(obj, best_x)
        gn_b = float(np.linalg.norm(obj.grad(best_x)))
        gain = 1.0 if gn0 <= 0 else gn_b / gn0
        return TeleportResult(
            x_plus=best_x, iterations=iters, kkt_residual=resid_b,
            constraint_violation=obj.value(best_x) - level, lam=lam_b,
            converged=ok, grad_norm_gain=gain, history=history)

    if gsq <= _TINY:
        # LICQ fails exactly when f is stationary over the sub-level set
        return finish(x, 0, True)

    q = obj.hvp(x, g)
    best_x, best_gn = x.copy(), gn0
    rho = cfg.rho0
    iters = 0
    converged = False
    prev_backtracks = None

    for t in range(cfg.max_iters + 1):
        gap = fx - level
        lam = float(q @ g) / gsq
        resid = float(np.linalg.norm(q - lam * g))
        row = IterRecord(t=t, grad_norm_sq=gsq, kkt_residual=resid,
                         constraint_gap=gap, rho=rho, backtracks=0,
                         x=x.copy() if keep_iterates else None)
        history.append(row)
        if resid <= cfg.eps and gap <= cfg.delta:
            converged = True
            break
        if t == cfg.max_iters:
            break
        if prev_backtracks == 0:
            # the previous step passed on the first try: probe a larger rho
            # (the merit test below immediately halves it back when too big)
            rho /= cfg.backtrack_factor

        accepted = False
        backtracks = 0
        gamma = 0.0
        x_try = x
        f_try, g_try = fx, g
        for _ in range(cfg.max_backtracks + 1):
            v, _ = _direction(g, q, gsq, gap, rho)
            x_try = x + (rho * q + v) / gsq
            gamma = penalty_strength(q, v, gsq, gap, cfg.gamma_safety)
            try:
                f_try = obj.value(x_try)
                g_try = obj.grad(x_try)
            except NonFiniteError:
                f_try, g_try = np.inf, None
            if g_try is not None and np.isfinite(f_try):
                lhs = -0.5 * float(g_try @ g_try) + gamma * max(f_try - level, 0.0)
                rhs = _ls_rhs(gsq, q, v, rho)
                if lhs <= rhs + cfg.armijo_relax * abs(rhs):
                    accepted = True
                    break
            rho *= cfg.backtrack_factor
            backtracks += 1
        row.rho = rho
        row.backtracks = backtracks
        row.gamma = gamma
        if not accepted:
            break  # line search exhausted: take no step, report non-convergence

        x, fx, g = x_try, f_try, g_try
        gsq = float(g @ g)
        iters += 1
        if gsq <= _TINY:
            converged = fx - level <= cfg.delta
            history.append(IterRecord(t=t + 1, grad_norm_sq=gsq, kkt_residual=0.0,
                                      constraint_gap=fx - level, rho=rho, backtracks=0,
                                      x=x.copy() if keep_iterates else None))
            break
        q = obj.hvp(x, g)
        if fx - level <= cfg.delta and np.sqrt(gsq) > best_gn:
            best_x, best_gn = x.copy(), float(np.sqrt(gsq))

    return finish(best_x, iters, converged)


def write_teleport_trace(history: list[IterRecord], path) -> None:
    """Write per-iteration solver metrics as CSV."""
    header = ["t", "grad_norm_sq", "kkt_residual", "constraint_gap", "rho", "backtracks"]
    rows = [[r.t, repr(r.grad_norm_sq), repr(r.kkt_residual),
             repr(r.constraint_gap), repr(r.rho), r.backtracks] for r in history]
    atomic_write_bytes(path, csv_text(header, rows).encode())
