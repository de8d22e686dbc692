"""Experiment harness: problems, reference solutions, suites, and profiles.

Builds reproducible problem instances, runs method x problem grids in a
small work pool, and summarizes the results as performance profiles
(fraction of problems solved to a relative gap within a budget).
"""

from __future__ import annotations

import csv
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ioutil import atomic_write_bytes, csv_text
from .objectives import (Booth, Dataset, GoldsteinPrice, H2Chain,
                         LogisticRegression, MLP, NonFiniteError, Objective,
                         Quadratic)
from .optimize import ArmijoStep, RunConfig, Schedule, StepRule, Trace, run
from .solver import TeleportConfig


def load_dataset(path, label_column: str, standardize: bool = False) -> Dataset:
    """Read a CSV dataset: header row, numeric features, one label column.

    Two distinct label values map to {-1, +1} in lexicographic order of their
    string form; more than two map to class indices in sorted order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV file") from None
        rows = [row for row in reader if row]
    if label_column not in header:
        raise ValueError(f"label column {label_column!r} not found")
    li = header.index(label_column)
    raw_labels, feats = [], []
    for row in rows:
        raw_labels.append(row[li])
        cells = [c for j, c in enumerate(row) if j != li]
        try:
            feats.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise ValueError(f"non-numeric feature value {bad!r}") from None
    if not feats:
        raise ValueError("dataset has no rows")
    x = np.asarray(feats, dtype=float)
    classes = sorted(set(raw_labels))
    if len(classes) < 2:
        raise ValueError("labels contain a single class")
    if len(classes) == 2:
        mapping = {classes[0]: -1.0, classes[1]: 1.0}
        y = np.array([mapping[v] for v in raw_labels], dtype=float)
    else:
        mapping = {v: i for i, v in enumerate(classes)}
        y = np.array([mapping[v] for v in raw_labels], dtype=int)
    data = Dataset(x, y, name=os.path.basename(os.fspath(path)))
    return data.standardize() if standardize else data


def _is_float(c: str) -> bool:
    try:
        float(c)
        return True
    except ValueError:
        return False


def synthetic_binary(n: int = 200, p: int = 20, seed: int = 0,
                     name: str = "synthetic") -> Dataset:
    """Gaussian features with labels from a noisy random linear teacher."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    teacher = rng.normal(size=p)
    y = np.sign(x @ teacher + 0.1 * rng.normal(size=n))
    y[y == 0] = 1.0
    if np.all(y == y[0]):
        y[0] = -y[0]
    return Dataset(x, y.astype(float), name=name)


@dataclass
class Problem:
    """A reproducible optimization instance."""

    name: str
    objective: Objective
    w0: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=float)


def build_problem(name: str, seed: int = 0, lam: float = 0.0, **kwargs) -> Problem:
    """Construct a named problem; identical (name, seed, lam) give identical
    instances.  Known names: booth, goldstein_price, quadratic<d>, h2_chain<d>,
    logreg, mlp_softplus, mlp_relu."""
    rng = np.random.default_rng(seed)
    m = re.fullmatch(r"quadratic(\d*)", name)
    if m:
        d = int(m.group(1) or 10)
        a = rng.normal(size=(d, d))
        h = a.T @ a / d + 0.1 * np.eye(d)
        c = rng.normal(size=d)
        return Problem(name, Quadratic(h, c), rng.normal(size=d), lam)
    m = re.fullmatch(r"h2_chain(\d*)", name)
    if m:
        d = int(m.group(1) or 5)
        return Problem(name, H2Chain(d), np.full(d, 1.5) + 0.1 * rng.random(d), lam)
    if name == "booth":
        return Problem(name, Booth(), np.array([-4.0, -3.5]), lam)
    if name == "goldstein_price":
        return Problem(name, GoldsteinPrice(), np.array([-0.3, -0.4]), lam)
    if name == "logreg":
        n = kwargs.get("n", 200)
        p = kwargs.get("p", 20)
        data = synthetic_binary(n, p, seed=seed, name=f"synth{seed}")
        return Problem(name, LogisticRegression(data, lam), np.zeros(p), lam)
    if name in ("mlp_softplus", "mlp_relu"):
        n = kwargs.get("n", 60)
        p = kwargs.get("p", 6)
        hidden = kwargs.get("hidden", 8)
        data = synthetic_binary(n, p, seed=seed, name=f"synth{seed}")
        obj = MLP((p, hidden, 1), name.split("_")[1], data, lam)
        return Problem(name, obj, obj.init_params(seed), lam)
    raise ValueError(f"unknown problem {name!r}")


@dataclass
class Reference:
    f_star: float
    w_star: np.ndarray
    exact: bool = False
    diverged: bool = False


def reference_solution(problem: Problem, budget: int = 200,
                       tconfig: TeleportConfig | None = None) -> Reference:
    """Best-known objective value for a problem.

    PSD quadratics are solved exactly; everything else runs Armijo gradient
    descent with every-other teleportation for 10x the experiment budget and
    keeps the best value seen.
    """
    obj = problem.objective
    if isinstance(obj, Booth):
        return Reference(0.0, np.array([1.0, 3.0]), exact=True)
    if isinstance(obj, Quadratic):
        w_star, *_ = np.linalg.lstsq(obj.h, -obj.c, rcond=None)
        if np.linalg.norm(obj.h @ w_star + obj.c) > 1e-8 * (1 + np.linalg.norm(obj.c)):
            raise ValueError("quadratic has no finite minimizer")
        return Reference(obj.value(w_star), w_star, exact=True)
    horizon = 10 * budget
    sched = Schedule.every_other(horizon)
    try:
        trace = run(obj, problem.w0, ArmijoStep(), sched,
                    tconfig or TeleportConfig(),
                    RunConfig(max_iters=horizon, grad_tol=1e-14))
        diverged = False
    except NonFiniteError:
        trace = run(obj, problem.w0, ArmijoStep(), Schedule.empty(),
                    tconfig or TeleportConfig(),
                    RunConfig(max_iters=horizon, grad_tol=1e-14))
        diverged = True
    f_star = float(np.min(trace.f))
    return Reference(f_star, trace.w_final, exact=False, diverged=diverged)


@dataclass(frozen=True)
class Method:
    """A named optimizer configuration for suite runs."""

    name: str
    rule: StepRule
    teleport: bool = False


@dataclass
class RunRecord:
    problem: str
    method: str
    teleport: bool
    trace: Trace | None
    f_star_estimate: float
    stochastic: bool = False
    error: str | None = None


def _safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", s)


def run_suite(problems, methods, schedule: Schedule | None, budget: int,
              seed: int = 0, tconfig: TeleportConfig | None = None,
              batch_size: int = 0, out_dir=None, max_workers: int | None = None,
              reference_budget: int | None = None) -> list[RunRecord]:
    """Run the full problem x method grid deterministically.

    Teleporting methods use `schedule`; the rest run with an empty schedule.
    Individual run failures are recorded and the suite continues.  Per-run
    trace CSVs land in out_dir when given.
    """
    problems = list(problems)
    methods = list(methods)
    if not problems or not methods:
        raise ValueError("need at least one problem and one method")
    tcfg = tconfig or TeleportConfig()
    refs = {p.name: reference_solution(p, reference_budget or budget, tcfg)
            for p in problems}

    def one(job):
        prob, meth = job
        sched = schedule if (meth.teleport and schedule) else Schedule.empty()
        rcfg = RunConfig(max_iters=budget, seed=seed, batch_size=batch_size)
        try:
            trace = run(prob.objective, prob.w0, meth.rule, sched, tcfg, rcfg)
            fstar = min(refs[prob.name].f_star, float(np.min(trace.f)))
            return RunRecord(prob.name, meth.name, meth.teleport, trace, fstar,
                             stochastic=batch_size > 0)
        except (NonFiniteError, ValueError) as exc:
            return RunRecord(prob.name, meth.name, meth.teleport, None,
                             np.inf, stochastic=batch_size > 0, error=str(exc))

    jobs = [(p, m) for p in problems for m in methods]
    if max_workers is None:
        max_workers = int(os.environ.get("TELEPORT_THREADS", "1") or 1)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            records = list(pool.map(one, jobs))
    else:
        records = [one(j) for j in jobs]

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for rec in records:
            if rec.trace is not None:
                name = f"{_safe_name(rec.problem)}__{_safe_name(rec.method)}.csv"
                rec.trace.to_csv(os.path.join(out_dir, name))
    return records


def write_summary_csv(records, path) -> None:
    """Suite summary: one deterministic row per run (no wall-clock columns)."""
    header = ["problem", "method", "teleport", "iterations", "final_f",
              "best_f", "f_star", "teleport_steps", "teleport_failures", "error"]
    rows = []
    for r in records:
        if r.trace is None:
            rows.append([r.problem, r.method, int(r.teleport), 0, "", "", "",
                         0, 0, r.error or "run failed"])
            continue
        rows.append([
            r.problem, r.method, int(r.teleport), r.trace.steps,
            repr(float(r.trace.f[-1])), repr(float(np.min(r.trace.f))),
            repr(float(r.f_star_estimate)),
            int(np.sum([p == "teleport" for p in r.trace.phase])),
            int(np.sum(r.trace.teleport_failed)), ""])
    atomic_write_bytes(path, csv_text(header, rows).encode())


@dataclass
class ProfileTable:
    """Fraction of problems solved per method as the budget grows."""

    methods: list[str]
    budgets: np.ndarray
    proportions: np.ndarray  # shape (len(methods), len(budgets))
    tau: float

    def to_csv(self, path) -> None:
        header = ["method", "budget", "proportion"]
        rows = []
        for i, m in enumerate(self.methods):
            for j, b in enumerate(self.budgets):
                rows.append([m, int(b), repr(float(self.proportions[i, j]))])
        atomic_write_bytes(path, csv_text(header, rows).encode())


def performance_profile(records, tau: float | None = None,
                        budgets=None) -> ProfileTable:
    """Dolan-More-style profile over a shared problem set.

    A run solves its problem at iteration k when
    (f(w_k) - f*) <= tau (f(w_0) - f*), with f* the smallest value found by
    any method on that problem.  Defaults: tau = 0.01 for stochastic records,
    0.05 for deterministic ones.
    """
    records = [r for r in records]
    if not records:
        raise ValueError("no run records")
    if tau is None:
        tau = 0.01 if any(r.stochastic for r in records) else 0.05
    problems = sorted({r.problem for r in records})
    methods = sorted({r.method for r in records})
    fstar = {}
    for p in problems:
        vals = [float(np.min(r.trace.f)) for r in records
                if r.problem == p and r.trace is not None]
        if not vals:
            raise ValueError(f"problem {p!r} has no successful runs")
        fstar[p] = min(vals)
    if budgets is None:
        kmax = max(r.trace.steps for r in records if r.trace is not None)
        budgets = np.arange(kmax + 1)
    budgets = np.asarray(budgets, dtype=int)

    solve_at = {}
    for r in records:
        if r.trace is None:
            solve_at[(r.problem, r.method)] = np.inf
            continue
        gap0 = float(r.trace.f[0]) - fstar[r.problem]
        thresh = fstar[r.problem] + tau * gap0
        hits = np.nonzero(r.trace.f <= thresh)[0]
        solve_at[(r.problem, r.method)] = int(hits[0]) if hits.size else np.inf

    props = np.zeros((len(methods), budgets.size))
    for i, m in enumerate(methods):
        for j, b in enumerate(budgets):
            solved = [solve_at.get((p, m), np.inf) <= b for p in problems]
            props[i, j] = float(np.mean(solved))
    return ProfileTable(methods=methods, budgets=budgets, proportions=props, tau=tau)
