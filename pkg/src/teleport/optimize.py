"""Gradient methods with block teleportation schedules.

The driver alternates plain gradient steps with teleportation steps
according to a block schedule.  Step sizes come from fixed, normalized,
Polyak, momentum, or Armijo line-search rules; teleportation always operates
on the full-batch objective even inside stochastic runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .ioutil import atomic_write_bytes
from .objectives import NonFiniteError, Objective
from .solver import TeleportConfig, solve_teleport


@dataclass(frozen=True)
class Schedule:
    """Teleportation blocks: sorted start iterations and their lengths.

    The induced membership set is T = union_k {start_k, ..., start_k + len_k - 1}.
    Blocks may not overlap and must be separated by at least one plain
    gradient step.
    """

    block_starts: tuple[int, ...] = ()
    block_lengths: tuple[int, ...] = ()

    def __post_init__(self):
        starts = tuple(int(s) for s in self.block_starts)
        lengths = tuple(int(b) for b in self.block_lengths)
        object.__setattr__(self, "block_starts", starts)
        object.__setattr__(self, "block_lengths", lengths)
        if len(starts) != len(lengths):
            raise ValueError("block_starts and block_lengths must be parallel")
        if any(s < 0 for s in starts) or any(b < 1 for b in lengths):
            raise ValueError("starts must be >= 0 and lengths >= 1")
        for (s0, b0), s1 in zip(zip(starts, lengths), starts[1:]):
            if not s0 + b0 < s1:
                raise ValueError("blocks must be sorted and separated by a plain step")

    def member(self, k: int) -> bool:
        if k < 0:
            raise ValueError("iteration index must be non-negative")
        for s, b in zip(self.block_starts, self.block_lengths):
            if s <= k < s + b:
                return True
        return False

    def members(self) -> list[int]:
        out = []
        for s, b in zip(self.block_starts, self.block_lengths):
            out.extend(range(s, s + b))
        return out

    @property
    def size(self) -> int:
        return sum(self.block_lengths)

    @staticmethod
    def empty() -> "Schedule":
        return Schedule()

    @staticmethod
    def every_other(horizon: int) -> "Schedule":
        """Teleport at 1, 3, 5, ... below the horizon (iteration 0 excluded)."""
        starts = tuple(range(1, horizon, 2))
        return Schedule(starts, (1,) * len(starts))

    @staticmethod
    def every_nth(horizon: int, start: int = 5, period: int = 50, block: int = 1) -> "Schedule":
        """Teleport for `block` iterations every `period`, from `start`."""
        starts = tuple(range(start, horizon, period))
        return Schedule(starts, (block,) * len(starts))

    @staticmethod
    def from_epochs(epoch_starts, iters_per_epoch: int, block: int = 1) -> "Schedule":
        """Convert an epoch-based schedule to iteration indices."""
        starts = tuple(int(e) * int(iters_per_epoch) for e in epoch_starts)
        return Schedule(starts, (block,) * len(starts))


def schedule_member(schedule: Schedule, k: int) -> bool:
    """True iff iteration k is a teleportation step."""
    return schedule.member(k)


# -- step-size rules ---------------------------------------------------------


@dataclass(frozen=True)
class FixedStep:
    eta: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("step size must be positive")


@dataclass(frozen=True)
class NormalizedStep:
    eta: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("step size must be positive")


@dataclass(frozen=True)
class PolyakStep:
    f_star: float = 0.0


@dataclass(frozen=True)
class MomentumStep:
    eta: float
    beta: float = 0.9
    dampening: float = 0.9

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("step size must be positive")
        if not (0 <= self.beta < 1 and 0 <= self.dampening < 1):
            raise ValueError("beta and dampening must lie in [0, 1)")


@dataclass(frozen=True)
class ArmijoStep:
    eta_init: float = 1.0
    forward: float = 1.25
    back: float = 0.8
    c: float = 0.5

    def __post_init__(self):
        if self.eta_init <= 0 or not self.forward > 1 or not 0 < self.back < 1:
            raise ValueError("need eta_init > 0, forward > 1, back in (0, 1)")


StepRule = FixedStep | NormalizedStep | PolyakStep | MomentumStep | ArmijoStep


class ArmijoResult(NamedTuple):
    eta: float
    hit_floor: bool
    growths: int


_ARMIJO_FLOOR = 1e-12
_ARMIJO_MAX_GROWTHS = 1000


def armijo_step(obj: Objective, w, g, eta_init: float, forward: float = 1.25,
                back: float = 0.8, c: float = 0.5, value_fn=None,
                refine_iters: int = 60) -> ArmijoResult:
    """Largest step size satisfying f(w - eta g) <= f(w) - c eta ||g||^2.

    Forward-tracks by `forward` while the condition holds (capped), then
    backtracks by `back`; the bracket around the acceptance boundary is
    refined by bisection so the returned step converges to the largest
    admissible one.  Returns the floor with a flag if nothing is admissible.
    """
    w = np.asarray(w, dtype=float)
    g = np.asarray(g, dtype=float)
    gsq = float(g @ g)
    if gsq <= 0:
        raise ValueError("line search needs a non-zero gradient")
    value = value_fn or obj.value
    fw = value(w)

    def ok(eta: float) -> bool:
        try:
            return value(w - eta * g) <= fw - c * eta * gsq
        except NonFiniteError:
            return False

    eta = float(eta_init)
    growths = 0
    if ok(eta):
        lo = eta
        hi = None
        while growths < _ARMIJO_MAX_GROWTHS:
            trial = lo * forward
            if ok(trial):
                lo = trial
                growths += 1
            else:
                hi = trial
                break
        if hi is None:
            return ArmijoResult(lo, False, growths)
    else:
        hi = eta
        lo = None
        while hi > _ARMIJO_FLOOR:
            trial = hi * back
            if ok(trial):
                lo = trial
                break
            hi = trial
        if lo is None:
            return ArmijoResult(_ARMIJO_FLOOR, True, 0)
    # bisection on [lo, hi]: lo always passes, hi always fails
    for _ in range(refine_iters):
        if hi - lo <= 1e-12 * hi:
            break
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return ArmijoResult(lo, False, growths)


def polyak_step(f_w: float, f_star: float, grad_sq: float) -> float:
    """Polyak step size (f(w) - f*) / ||grad f(w)||^2, clamped at zero."""
    if grad_sq <= 0:
        raise ValueError("grad_sq must be positive")
    return max(f_w - f_star, 0.0) / grad_sq


# -- run driver ---------------------------------------------------------------


@dataclass
class RunConfig:
    max_iters: int
    seed: int = 0
    batch_size: int = 0
    grad_tol: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0 (0 = full batch)")


_CSV_COLUMNS = ["k", "phase", "f", "grad_norm", "step_size", "teleport_iters",
                "kkt_residual", "cumulative_time", "epoch"]


@dataclass
class Trace:
    """Per-iteration optimization metrics.

    Arrays `f`, `grad_norm`, `cumulative_time` and `epoch` have one entry per
    iterate (length steps+1); the remaining arrays describe the step taken at
    each iteration k.  `f_plus`/`grad_norm_plus` hold the post-teleport values
    used by the descent-lemma diagnostics and are not serialized.
    """

    f: np.ndarray
    grad_norm: np.ndarray
    phase: list[str]
    step_size: np.ndarray
    teleport_iters: np.ndarray
    kkt_residual: np.ndarray
    cumulative_time: np.ndarray
    epoch: np.ndarray
    f_plus: np.ndarray
    grad_norm_plus: np.ndarray
    teleport_lambda: np.ndarray
    teleport_failed: np.ndarray
    w_final: np.ndarray
    stopped_early: bool = False

    @property
    def steps(self) -> int:
        return len(self.phase)

    def gaps(self, f_star: float) -> np.ndarray:
        return self.f - f_star

    def rows(self):
        for k in range(self.steps + 1):
            last = k == self.steps
            yield [k,
                   "final" if last else self.phase[k],
                   repr(float(self.f[k])),
                   repr(float(self.grad_norm[k])),
                   "" if last else repr(float(self.step_size[k])),
                   0 if last else int(self.teleport_iters[k]),
                   "" if last else repr(float(self.kkt_residual[k])),
                   repr(float(self.cumulative_time[k])),
                   int(self.epoch[k])]

    def to_csv(self, path) -> None:
        atomic_write_bytes(path, self.csv_bytes())

    def csv_bytes(self, with_time: bool = True) -> bytes:
        """Serialized trace; with_time=False drops the wall-clock column."""
        header = _CSV_COLUMNS if with_time else _CSV_COLUMNS[:7] + _CSV_COLUMNS[8:]
        lines = [",".join(map(str, header))]
        for row in self.rows():
            if not with_time:
                row = row[:7] + row[8:]
            lines.append(",".join(map(str, row)))
        return ("\r\n".join(lines) + "\r\n").encode()


class _BatchSampler:
    """Seeded epoch shuffler: samples without replacement within each epoch."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.bs = batch_size
        self.rng = np.random.default_rng(seed)
        self.epoch = -1
        self._queue = []

    @property
    def per_epoch(self) -> int:
        return (self.n + self.bs - 1) // self.bs

    def next(self):
        if not self._queue:
            self.epoch += 1
            perm = self.rng.permutation(self.n)
            self._queue = [perm[i:i + self.bs] for i in range(0, self.n, self.bs)]
        return self._queue.pop(0)


def run(obj: Objective, w0, rule: StepRule, schedule: Schedule | None = None,
        tconfig: TeleportConfig | None = None, rconfig: RunConfig | None = None) -> Trace:
    """Run (stochastic) gradient descent with a teleportation schedule.

    At each scheduled iteration the iterate is first teleported on the
    full-batch objective, then a gradient step is taken from the teleported
    point.  For the Armijo rule the search starts from the previously
    accepted step size.  Runs are deterministic given (seed, config).
    """
    if rconfig is None:
        rconfig = RunConfig(max_iters=100)
    sched = schedule or Schedule.empty()
    tcfg = tconfig or TeleportConfig()
    w = np.asarray(w0, dtype=float).copy()
    if w.shape != (obj.dim,):
        raise ValueError("w0 dimension does not match the objective")

    stochastic = rconfig.batch_size > 0
    sampler = None
    if stochastic:
        data = getattr(obj, "data", None)
        if data is None:
            raise ValueError("batch_size > 0 requires a data-backed objective")
        sampler = _BatchSampler(data.n, rconfig.batch_size, rconfig.seed)

    members = set(sched.members())
    momentum = np.zeros_like(w)
    eta_prev = rule.eta_init if isinstance(rule, ArmijoStep) else None

    f_hist, gn_hist, time_hist, epoch_hist = [], [], [], []
    phase, steps, tp_iters, tp_resid, tp_lam, tp_failed = [], [], [], [], [], []
    f_plus_hist, gn_plus_hist = [], []
    stopped = False
    t0 = time.perf_counter()

    for k in range(rconfig.max_iters):
        f_k = obj.value(w)
        if not np.isfinite(f_k):
            raise NonFiniteError(f"objective diverged at iteration {k}")
        g_k = obj.grad(w)
        f_hist.append(f_k)
        gn_hist.append(float(np.linalg.norm(g_k)))
        epoch_hist.append(k // sampler.per_epoch if sampler else 0)
        if rconfig.grad_tol > 0 and gn_hist[-1] <= rconfig.grad_tol:
            stopped = True
            break

        if k in members:
            res = solve_teleport(obj, w, tcfg)
            w_plus = res.x_plus
            phase.append("teleport")
            tp_iters.append(res.iterations)
            tp_resid.append(res.kkt_residual)
            tp_lam.append(res.lam)
            tp_failed.append(not res.converged)
        else:
            w_plus = w
            phase.append("gd")
            tp_iters.append(0)
            tp_resid.append(0.0)
            tp_lam.append(0.0)
            tp_failed.append(False)

        f_plus_hist.append(obj.value(w_plus))
        g_plus = g_k if w_plus is w else obj.grad(w_plus)
        gn_plus_hist.append(float(np.linalg.norm(g_plus)))

        if stochastic:
            idx = sampler.next()
            g_dir = obj.grad(w_plus, idx=idx)
            value_fn = lambda x, _i=idx: obj.value(x, idx=_i)  # noqa: E731
            f_at_plus = obj.value(w_plus, idx=idx)
        else:
            g_dir = g_plus
            value_fn = obj.value
            f_at_plus = f_plus_hist[-1]

        dir_sq = float(g_dir @ g_dir)
        if dir_sq <= 0:
            eta = 0.0
            w_next = w_plus
        elif isinstance(rule, FixedStep):
            eta = rule.eta
            w_next = w_plus - eta * g_dir
        elif isinstance(rule, NormalizedStep):
            eta = rule.eta / float(np.sqrt(dir_sq))
            w_next = w_plus - eta * g_dir
        elif isinstance(rule, PolyakStep):
            eta = polyak_step(f_at_plus, rule.f_star, dir_sq)
            w_next = w_plus - eta * g_dir
        elif isinstance(rule, MomentumStep):
            momentum = rule.beta * momentum + (1 - rule.dampening) * g_dir
            eta = rule.eta
            w_next = w_plus - eta * momentum
        elif isinstance(rule, ArmijoStep):
            found = armijo_step(obj, w_plus, g_dir, eta_prev, rule.forward,
                                rule.back, rule.c, value_fn=value_fn)
            eta = found.eta
            eta_prev = eta
            w_next = w_plus - eta * g_dir
        else:
            raise TypeError(f"unknown step rule {rule!r}")

        steps.append(eta)
        w = w_next
        time_hist.append(time.perf_counter() - t0)

    if not stopped:
        f_hist.append(obj.value(w))
        gn_hist.append(float(np.linalg.norm(obj.grad(w))))
        epoch_hist.append(rconfig.max_iters // sampler.per_epoch if sampler else 0)

    # time axis: one entry per iterate, starting at 0
    times = np.concatenate([[0.0], np.asarray(time_hist, dtype=float)])

    return Trace(
        f=np.asarray(f_hist),
        grad_norm=np.asarray(gn_hist),
        phase=phase[: len(f_hist) - 1],
        step_size=np.asarray(steps[: len(f_hist) - 1]),
        teleport_iters=np.asarray(tp_iters[: len(f_hist) - 1], dtype=int),
        kkt_residual=np.asarray(tp_resid[: len(f_hist) - 1]),
        cumulative_time=times,
        epoch=np.asarray(epoch_hist, dtype=int),
        f_plus=np.asarray(f_plus_hist[: len(f_hist) - 1]),
        grad_norm_plus=np.asarray(gn_plus_hist[: len(f_hist) - 1]),
        teleport_lambda=np.asarray(tp_lam[: len(f_hist) - 1]),
        teleport_failed=np.asarray(tp_failed[: len(f_hist) - 1], dtype=bool),
        w_final=w.copy(),
        stopped_early=stopped,
    )
