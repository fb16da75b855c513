"""Self-contained LP and MILP solving for desk-scale market models.

The LP solver is a bounded-variable two-phase revised simplex with an
explicit dense basis inverse (refactorized periodically).  It returns
primal values, row duals and reduced costs so the market-clearing layers
can read prices straight off the balance rows.  The MILP solver is a
deterministic best-first branch-and-bound over binary variables.

Dual sign convention: for a problem written in its own sense, the row
dual ``y[i]`` is the marginal change of the optimal objective per unit
increase of the row's right-hand side.  For a cost-minimizing market
clearing this makes the dual of a demand-balance row the market price
directly.  Reduced cost ``d[j]`` is ``c[j] - y @ A[:, j]`` in the
minimized form; a variable at its lower bound has ``d >= 0``, at its
upper bound ``d <= 0``.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dger

INF = float("inf")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
NUMERIC_ERROR = "numeric_error"
LIMIT = "limit"


class LpError(Exception):
    """Raised for malformed problems or file-format violations."""


@dataclass
class LinearProgram:
    """Sparse LP in row-bound form: sense c'x s.t. rl <= Ax <= ru, cl <= x <= cu."""

    sense: str  # "min" or "max"
    c: np.ndarray
    a: sp.csr_matrix
    row_lower: np.ndarray
    row_upper: np.ndarray
    col_lower: np.ndarray
    col_upper: np.ndarray
    row_names: list[str] = field(default_factory=list)
    col_names: list[str] = field(default_factory=list)
    offset: float = 0.0
    name: str = "HYDROBID"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        if self.a is None or (hasattr(self.a, "shape") and 0 in getattr(self.a, "shape", (0,))):
            m = len(self.row_lower) if self.row_lower is not None else 0
            self.a = sp.csr_matrix((m, n))
        if not sp.issparse(self.a):
            self.a = sp.csr_matrix(np.atleast_2d(np.asarray(self.a, dtype=float)))
        else:
            self.a = self.a.tocsr()
        m = self.a.shape[0]
        self.row_lower = np.asarray(self.row_lower, dtype=float).reshape(m)
        self.row_upper = np.asarray(self.row_upper, dtype=float).reshape(m)
        self.col_lower = np.asarray(self.col_lower, dtype=float).reshape(n)
        self.col_upper = np.asarray(self.col_upper, dtype=float).reshape(n)
        if self.a.shape[1] != n:
            raise LpError(f"matrix has {self.a.shape[1]} columns, objective has {n}")
        if self.sense not in ("min", "max"):
            raise LpError(f"unknown sense {self.sense!r}")
        if not self.row_names:
            self.row_names = [f"r{i}" for i in range(m)]
        if not self.col_names:
            self.col_names = [f"x{j}" for j in range(n)]
        if len(self.row_names) != m or len(self.col_names) != n:
            raise LpError("name lists do not match problem dimensions")

    @property
    def num_rows(self) -> int:
        return self.a.shape[0]

    @property
    def num_cols(self) -> int:
        return self.c.size


@dataclass
class MixedIntegerProgram:
    """An LP plus the indices of variables restricted to {0, 1}."""

    lp: LinearProgram
    binary: list[int] = field(default_factory=list)

    def __post_init__(self):
        n = self.lp.num_cols
        seen = set()
        for j in self.binary:
            if not 0 <= j < n:
                raise LpError(f"binary index {j} out of range")
            if j in seen:
                raise LpError(f"duplicate binary index {j}")
            seen.add(j)
            if self.lp.col_lower[j] < -1e-9 or self.lp.col_upper[j] > 1 + 1e-9:
                raise LpError(f"binary variable {j} has bounds outside [0, 1]")


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None  # row duals, problem sense
    reduced_costs: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0
    basis: np.ndarray | None = None  # final basis, reusable as a warm start

    @property
    def dual_objective(self) -> float | None:
        return self._dual_obj

    _dual_obj: float | None = None


@dataclass
class MilpResult:
    status: str
    x: np.ndarray | None
    objective: float | None
    bound: float
    node_count: int
    gap: float
    bound_history: list[float] = field(default_factory=list)
    root_lp: LpSolution | None = None


@dataclass
class MilpOptions:
    abs_gap: float = 1e-6
    rel_gap: float = 0.0
    max_nodes: int | None = None
    time_limit: float | None = None
    int_tol: float = 1e-6
    dive: bool = True


# ---------------------------------------------------------------------------
# simplex core
# ---------------------------------------------------------------------------

_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2
_FREE_NB = 3

_REFACTOR_EVERY = 100
_DEGEN_BLAND_TRIGGER = 60


class _Simplex:
    """Bounded-variable two-phase revised simplex on min c'x, rl<=Ax<=ru."""

    def __init__(self, lp: LinearProgram, max_iters: int, tol: float, refactor_every: int = _REFACTOR_EVERY):
        self.tol = tol
        self.max_iters = max_iters
        self.refactor_every = refactor_every
        self.n = lp.num_cols
        self.m = lp.num_rows
        self.N = self.n + self.m
        sign = 1.0 if lp.sense == "min" else -1.0
        self.sign = sign
        self.cost = np.concatenate([sign * lp.c, np.zeros(self.m)])
        self.a = lp.a.tocsc()
        # logical variable i mirrors row activity: A x - r = 0, r in [rl, ru]
        self.lower = np.concatenate([lp.col_lower, lp.row_lower])
        self.upper = np.concatenate([lp.col_upper, lp.row_upper])
        self.status_ = np.empty(self.N, dtype=np.int8)
        self.x = np.zeros(self.N)
        self.basis = np.arange(self.n, self.N)
        # initial basis is the logical block, B = -I; Fortran order lets the
        # eta update run as one BLAS rank-1 call
        self.binv = np.asfortranarray(-np.eye(self.m))
        # dense column cache pays for itself on desk-scale problems
        self.acols = self.a.toarray() if self.m * self.n <= 8_000_000 else None
        self.at = self.a.T.tocsr()
        self.iters = 0
        self.pivots_since_refactor = 0
        self.degen_streak = 0

    # -- linear algebra helpers ------------------------------------------

    def _column(self, j: int) -> np.ndarray:
        if j < self.n:
            if self.acols is not None:
                return self.acols[:, j]
            col = np.zeros(self.m)
            sl = self.a[:, j]
            col[sl.indices] = sl.data
            return col
        col = np.zeros(self.m)
        col[j - self.n] = -1.0
        return col

    def _refactor(self) -> bool:
        b = np.zeros((self.m, self.m))
        for k, j in enumerate(self.basis):
            b[:, k] = self._column(j)
        try:
            self.binv = np.asfortranarray(np.linalg.inv(b))
        except np.linalg.LinAlgError:
            return False
        self.pivots_since_refactor = 0
        return True

    def _recompute_basics(self):
        z = self.x.copy()
        z[self.basis] = 0.0
        act = self.a @ z[: self.n] - z[self.n :]
        self.x[self.basis] = -self.binv @ act

    def _duals(self, cost: np.ndarray) -> np.ndarray:
        return self.binv.T @ cost[self.basis]

    def _reduced(self, cost: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = np.empty(self.N)
        d[: self.n] = cost[: self.n] - self.at @ y
        d[self.n :] = cost[self.n :] + y
        return d

    # -- setup -------------------------------------------------------------

    def _initial_point(self, warm_basis=None):
        for j in range(self.N):
            lo, hi = self.lower[j], self.upper[j]
            if lo > hi + 1e-12:
                return False
            if np.isfinite(lo):
                self.x[j] = lo
                self.status_[j] = _AT_LOWER
            elif np.isfinite(hi):
                self.x[j] = hi
                self.status_[j] = _AT_UPPER
            else:
                self.x[j] = 0.0
                self.status_[j] = _FREE_NB
        if warm_basis is not None:
            wb = np.asarray(warm_basis, dtype=int)
            if wb.shape == (self.m,) and len(set(wb.tolist())) == self.m and (wb >= 0).all() and (wb < self.N).all():
                saved = self.basis
                self.basis = wb.copy()
                if self._refactor():
                    self.status_[self.basis] = _BASIC
                    self._recompute_basics()
                    return True
                self.basis = saved
                self.binv = np.asfortranarray(-np.eye(self.m))
        self.status_[self.basis] = _BASIC
        self._recompute_basics()
        return True

    # -- phase machinery ---------------------------------------------------

    def _infeasibility(self) -> tuple[float, np.ndarray]:
        xb = self.x[self.basis]
        lo = self.lower[self.basis]
        hi = self.upper[self.basis]
        below = np.maximum(lo - xb, 0.0)
        above = np.maximum(xb - hi, 0.0)
        below[~np.isfinite(below)] = 0.0
        above[~np.isfinite(above)] = 0.0
        return float(below.sum() + above.sum()), below - above

    def _phase1_cost(self) -> np.ndarray:
        c1 = np.zeros(self.N)
        xb = self.x[self.basis]
        lo = self.lower[self.basis]
        hi = self.upper[self.basis]
        ftol = 1e-9
        c1[self.basis[xb < lo - ftol]] = -1.0
        c1[self.basis[xb > hi + ftol]] = 1.0
        return c1

    def _pick_entering(self, d: np.ndarray, bland: bool) -> int:
        tol = self.tol
        st = self.status_
        movable = self.lower != self.upper
        eligible = movable & (
            ((st == _AT_LOWER) & (d < -tol))
            | ((st == _AT_UPPER) & (d > tol))
            | ((st == _FREE_NB) & (np.abs(d) > tol))
        )
        if not eligible.any():
            return -1
        if bland:
            return int(np.argmax(eligible))
        score = np.where(eligible, np.abs(d), -1.0)
        return int(np.argmax(score))

    def _ratio_test(self, q: int, delta: float, w: np.ndarray, phase1: bool, slope0: float = 0.0, longstep: bool = True):
        """Return (t, leaving_pos) for entering q moving delta*t >= 0.

        ``leave`` is -2 for a bound flip of the entering variable, -1 when
        no finite blocking event exists.  In phase 1 the step walks through
        breakpoints for as long as the infeasibility keeps falling (the
        classic long-step rule), which sharply cuts the iteration count.
        """
        tol = 1e-10
        ftol = 1e-9
        xb = self.x[self.basis]
        lo = self.lower[self.basis]
        hi = self.upper[self.basis]
        step = delta * w
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (xb - lo) / step  # blocking when the value falls to lo
            t_hi = (xb - hi) / step  # blocking when it rises to hi
        t_cand = np.full(self.m, INF)
        moving = np.abs(step) > tol
        down = moving & (step > 0)
        up = moving & (step < 0)
        if phase1:
            below = xb < lo - ftol
            above = xb > hi + ftol
            inrange = ~below & ~above
            ok = down & inrange & np.isfinite(lo)
            t_cand[ok] = t_lo[ok]
            ok = up & inrange & np.isfinite(hi)
            t_cand[ok] = t_hi[ok]
            ok = below & up & np.isfinite(lo)  # rising back into range
            t_cand[ok] = t_lo[ok]
            ok = above & down & np.isfinite(hi)
            t_cand[ok] = t_hi[ok]
        else:
            ok = down & np.isfinite(lo)
            t_cand[ok] = t_lo[ok]
            ok = up & np.isfinite(hi)
            t_cand[ok] = t_hi[ok]
        np.maximum(t_cand, 0.0, out=t_cand)
        rng_q = self.upper[q] - self.lower[q]
        t_flip = rng_q if np.isfinite(rng_q) else INF
        if phase1 and longstep:
            # walk breakpoints while the total-violation slope stays negative;
            # a basic can cross both of its bounds, each crossing adding its
            # |step| to the slope (an equality is crossed twice at once)
            owners, times = [], []
            below = xb < lo - ftol
            above = xb > hi + ftol
            inband = ~below & ~above
            def push(mask, tarr):
                idx = np.nonzero(mask)[0]
                owners.append(idx)
                times.append(tarr[idx])
            push(down & above & np.isfinite(hi), t_hi)
            push(down & (above | inband) & np.isfinite(lo), t_lo)
            push(up & below & np.isfinite(lo), t_lo)
            push(up & (below | inband) & np.isfinite(hi), t_hi)
            if owners:
                owner = np.concatenate(owners)
                ts = np.maximum(np.concatenate(times), 0.0)
                keep = np.isfinite(ts)
                owner, ts = owner[keep], ts[keep]
            else:
                owner = np.empty(0, dtype=int)
                ts = np.empty(0)
            if ts.size:
                order = np.lexsort((self.basis[owner], ts))
                slope = slope0
                for k in order:
                    ti = float(ts[k])
                    if ti > t_flip + tol:
                        return t_flip, -2  # the entering flips first
                    slope += abs(step[owner[k]])
                    if slope >= -1e-12:
                        return ti, int(owner[k])
                if np.isfinite(t_flip):
                    return t_flip, -2
                # slope never turned but total violation is bounded below;
                # stop at the last breakpoint rather than diverging
                k = order[-1]
                return float(ts[k]), int(owner[k])
        t_min = float(t_cand.min()) if self.m else INF
        if t_min < INF and t_min <= t_flip + tol:
            idx = np.nonzero(t_cand <= t_min + tol)[0]
            i = idx[np.argmin(self.basis[idx])]  # deterministic tie break
            return t_min, int(i)
        if np.isfinite(t_flip):
            return t_flip, -2
        return INF, -1

    def _pivot(self, q: int, delta: float, w: np.ndarray, t: float, leave: int):
        if leave == -2:
            # bound flip: q travels to its opposite bound; basics shift by
            # the full range along -w
            rng = self.upper[q] - self.lower[q]
            if self.status_[q] == _AT_LOWER:
                self.x[q] = self.upper[q]
                self.status_[q] = _AT_UPPER
                self.x[self.basis] -= rng * w
            else:
                self.x[q] = self.lower[q]
                self.status_[q] = _AT_LOWER
                self.x[self.basis] += rng * w
            return
        xq_new = self.x[q] + delta * t
        out = self.basis[leave]
        self.x[self.basis] -= delta * t * w
        xout = self.x[out]
        # classify the leaving variable at the bound it hit
        if np.isfinite(self.lower[out]) and abs(xout - self.lower[out]) <= abs(xout - self.upper[out]):
            self.x[out] = self.lower[out]
            self.status_[out] = _AT_LOWER
        else:
            self.x[out] = self.upper[out]
            self.status_[out] = _AT_UPPER
        self.basis[leave] = q
        self.status_[q] = _BASIC
        self.x[q] = xq_new
        # eta update of the explicit inverse as a BLAS rank-1 update
        wr = w[leave]
        self.binv[leave, :] /= wr
        row = self.binv[leave, :].copy()
        w_other = w.copy()
        w_other[leave] = 0.0
        dger(-1.0, w_other, row, a=self.binv, overwrite_a=1)
        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= self.refactor_every:
            if not self._refactor():
                raise _NumericBreakdown()
            self._recompute_basics()

    def _run_phase(self, phase1: bool) -> str:
        while True:
            if self.iters >= self.max_iters:
                return ITERATION_LIMIT
            if phase1:
                infeas, _ = self._infeasibility()
                if infeas <= 1e-9 * (1.0 + self.m):
                    return "feasible"
                cost = self._phase1_cost()
            else:
                cost = self.cost
            y = self._duals(cost)
            d = self._reduced(cost, y)
            bland = self.degen_streak >= _DEGEN_BLAND_TRIGGER
            q = self._pick_entering(d, bland)
            if q < 0:
                if phase1:
                    infeas, _ = self._infeasibility()
                    return "feasible" if infeas <= 1e-7 * (1.0 + self.m) else INFEASIBLE
                return OPTIMAL
            self.iters += 1
            st = self.status_[q]
            if st == _AT_UPPER:
                delta = -1.0
            elif st == _AT_LOWER:
                delta = 1.0
            else:
                delta = 1.0 if d[q] < 0 else -1.0
            w = self.binv @ self._column(q)
            # long stepping and Bland's rule do not mix; once the degeneracy
            # guard is up, fall back to the plain first-breakpoint rule
            t, leave = self._ratio_test(q, delta, w, phase1, slope0=d[q] * delta, longstep=not bland)
            if not np.isfinite(t):
                if phase1:
                    raise _NumericBreakdown()
                return UNBOUNDED
            if leave >= 0 and abs(w[leave]) < 1e-11:
                if not self._refactor():
                    raise _NumericBreakdown()
                self._recompute_basics()
                continue
            self.degen_streak = self.degen_streak + 1 if t <= 1e-12 else 0
            self._pivot(q, delta, w, t, leave)

    def solve(self, warm_basis=None) -> LpSolution:
        if not self._initial_point(warm_basis):
            return LpSolution(status=INFEASIBLE, iterations=0)
        bad = self.row_bounds_inconsistent()
        if bad:
            return LpSolution(status=INFEASIBLE, iterations=0)
        try:
            st = self._run_phase(phase1=True)
            if st == INFEASIBLE:
                return LpSolution(status=INFEASIBLE, iterations=self.iters)
            if st == ITERATION_LIMIT:
                return LpSolution(status=ITERATION_LIMIT, iterations=self.iters)
            st = self._run_phase(phase1=False)
        except _NumericBreakdown:
            return LpSolution(status=NUMERIC_ERROR, iterations=self.iters)
        if st in (UNBOUNDED, ITERATION_LIMIT):
            return LpSolution(status=st, iterations=self.iters)
        if not self._refactor():
            return LpSolution(status=NUMERIC_ERROR, iterations=self.iters)
        self._recompute_basics()
        y = self._duals(self.cost)
        d = self._reduced(self.cost, y)
        x = self.x[: self.n].copy()
        sign = self.sign
        obj = float(self.cost[: self.n] @ x) * sign
        # duals reported in the problem's own sense
        y_rows = sign * y
        d_cols = sign * d[: self.n]
        dual_obj = self._dual_objective_value(y, d)
        sol = LpSolution(
            status=OPTIMAL,
            x=x,
            y=y_rows,
            reduced_costs=d_cols,
            objective=obj,
            iterations=self.iters,
            basis=self.basis.copy(),
        )
        sol._dual_obj = sign * dual_obj
        return sol

    def row_bounds_inconsistent(self) -> bool:
        return bool(np.any(self.lower > self.upper + 1e-12))

    def _dual_objective_value(self, y: np.ndarray, d: np.ndarray) -> float:
        """Dual objective of the minimized form: sum of reduced costs times active bounds."""
        total = 0.0
        for j in range(self.N):
            if self.status_[j] == _BASIC:
                continue
            dj = d[j]
            if abs(dj) < 1e-13:
                continue
            total += dj * self.x[j]
        return total


class _NumericBreakdown(Exception):
    pass


def solve_lp(lp: LinearProgram, max_iters: int = 50000, tol: float = 1e-9, warm_basis=None) -> LpSolution:
    """Solve an LP; duals and reduced costs follow the module sign convention.

    ``warm_basis`` (the ``basis`` of a previous solution of a structurally
    identical problem) cuts the iteration count sharply across repeated
    solves.  A numeric breakdown triggers one deterministic retry with the
    basis refactorized on every pivot before the failure is reported.
    """
    sol = _Simplex(lp, max_iters, tol).solve(warm_basis)
    if sol.status == NUMERIC_ERROR:
        sol = _Simplex(lp, max_iters, tol, refactor_every=1).solve(warm_basis)
    if sol.status == OPTIMAL:
        sol.objective += lp.offset
        if sol._dual_obj is not None:
            sol._dual_obj += lp.offset
    return sol


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------


def _is_integral(x: np.ndarray, binary: list[int], int_tol: float) -> bool:
    for j in binary:
        if abs(x[j] - round(x[j])) > int_tol:
            return False
    return True


def _most_fractional(x: np.ndarray, binary: list[int], int_tol: float) -> int:
    best, best_score = -1, -1.0
    for j in binary:
        f = x[j] - np.floor(x[j])
        frac = min(f, 1.0 - f)
        if frac <= int_tol:
            continue
        if frac > best_score + 1e-12:
            best, best_score = j, frac
    return best


def solve_milp(mip: MixedIntegerProgram, options: MilpOptions | None = None) -> MilpResult:
    """Deterministic best-first branch and bound on the binary variables.

    Branching picks the most-fractional binary (ties by lowest index); the
    node queue orders by bound then node index, so identical inputs give
    identical incumbents and node counts.  ``status`` is ``limit`` when a
    node or time budget stops the search, with the best incumbent and bound
    reported.
    """
    opts = options or MilpOptions()
    lp = mip.lp
    sense_max = lp.sense == "max"
    t0 = time.monotonic()

    def node_lp(cl, cu):
        return replace(lp, col_lower=cl, col_upper=cu)

    root = solve_lp(node_lp(lp.col_lower.copy(), lp.col_upper.copy()))
    nodes = 0
    bound_history: list[float] = []
    if root.status == INFEASIBLE:
        return MilpResult(INFEASIBLE, None, None, INF if not sense_max else -INF, 1, INF, [], root)
    if root.status != OPTIMAL:
        return MilpResult(root.status, None, None, -INF if sense_max else INF, 1, INF, [], root)

    # internally treat as minimization of key = sense-adjusted objective
    def key(v):
        return -v if sense_max else v

    incumbent_x = None
    incumbent_obj = None  # in problem sense
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    counter = 0
    heapq.heappush(heap, (key(root.objective), counter, lp.col_lower.copy(), lp.col_upper.copy()))

    def try_update_incumbent(sol: LpSolution):
        nonlocal incumbent_x, incumbent_obj
        if incumbent_obj is None or key(sol.objective) < key(incumbent_obj) - 1e-12:
            incumbent_x = sol.x.copy()
            for j in mip.binary:
                incumbent_x[j] = round(incumbent_x[j])
            incumbent_obj = sol.objective

    def dive(cl, cu, sol):
        # greedy plunge to find an early incumbent; deterministic
        for _ in range(len(mip.binary) + 1):
            if _is_integral(sol.x, mip.binary, opts.int_tol):
                try_update_incumbent(sol)
                return
            j = _most_fractional(sol.x, mip.binary, opts.int_tol)
            v = round(sol.x[j])
            cl, cu = cl.copy(), cu.copy()
            cl[j] = cu[j] = v
            sol = solve_lp(node_lp(cl, cu))
            if sol.status != OPTIMAL:
                return

    if opts.dive:
        dive(lp.col_lower.copy(), lp.col_upper.copy(), root)

    best_bound = root.objective
    status = OPTIMAL
    while heap:
        if opts.max_nodes is not None and nodes >= opts.max_nodes:
            status = LIMIT
            break
        if opts.time_limit is not None and time.monotonic() - t0 > opts.time_limit:
            status = LIMIT
            break
        bound_key, _, cl, cu = heapq.heappop(heap)
        best_bound = bound_key if not sense_max else -bound_key
        bound_history.append(best_bound)
        if incumbent_obj is not None:
            gap_cut = key(incumbent_obj) - max(opts.abs_gap, opts.rel_gap * abs(incumbent_obj))
            if bound_key >= gap_cut - 1e-15:
                break
        nodes += 1
        sol = solve_lp(node_lp(cl, cu))
        if sol.status == INFEASIBLE:
            continue
        if sol.status != OPTIMAL:
            status = NUMERIC_ERROR
            break
        if incumbent_obj is not None and key(sol.objective) >= key(incumbent_obj) - opts.abs_gap:
            continue
        if _is_integral(sol.x, mip.binary, opts.int_tol):
            try_update_incumbent(sol)
            continue
        j = _most_fractional(sol.x, mip.binary, opts.int_tol)
        for v in (0.0, 1.0):
            cl2, cu2 = cl.copy(), cu.copy()
            cl2[j] = cu2[j] = v
            counter += 1
            heapq.heappush(heap, (key(sol.objective), counter, cl2, cu2))

    if not heap and status == OPTIMAL:
        best_bound = incumbent_obj if incumbent_obj is not None else best_bound
    elif heap and status == OPTIMAL:
        best_bound = heap[0][0] if not sense_max else -heap[0][0]
        if incumbent_obj is not None:
            better = key(incumbent_obj) < key(best_bound)
            if better:
                best_bound = incumbent_obj
    if incumbent_obj is None:
        if status == OPTIMAL:
            return MilpResult(INFEASIBLE, None, None, best_bound, nodes, INF, bound_history, root)
        return MilpResult(status, None, None, best_bound, nodes, INF, bound_history, root)
    gap = abs(incumbent_obj - best_bound)
    if status == OPTIMAL and heap:
        pass
    return MilpResult(status, incumbent_x, incumbent_obj, best_bound, nodes, gap, bound_history, root)


# ---------------------------------------------------------------------------
# file export / import
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return format(v, ".12g")


def _lp_terms(names, cols, coefs) -> str:
    parts = []
    for j, cj in zip(cols, coefs):
        sign = "-" if cj < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(cj))} {names[j]}")
    if parts:
        return " ".join(parts)
    return "+ 0 " + names[0] if names else ""


def write_lp_text(problem: LinearProgram | MixedIntegerProgram) -> str:
    """Serialize to a CPLEX-style LP file; ranged rows are split into two rows."""
    mip = problem if isinstance(problem, MixedIntegerProgram) else None
    lp = mip.lp if mip else problem
    out = []
    if lp.offset:
        out.append(f"\\ offset {_fmt(lp.offset)}")
    out.append("Minimize" if lp.sense == "min" else "Maximize")
    nz = np.nonzero(lp.c)[0]
    out.append(" obj: " + _lp_terms(lp.col_names, nz, lp.c[nz]))
    out.append("Subject To")
    acsr = lp.a.tocsr()
    for i in range(lp.num_rows):
        sl = acsr[i]
        terms = _lp_terms(lp.col_names, sl.indices, sl.data)
        lo, hi = lp.row_lower[i], lp.row_upper[i]
        nm = lp.row_names[i]
        if lo == hi:
            out.append(f" {nm}: {terms} = {_fmt(lo)}")
        else:
            if np.isfinite(hi):
                out.append(f" {nm}: {terms} <= {_fmt(hi)}")
            if np.isfinite(lo):
                suffix = "_lo" if np.isfinite(hi) else ""
                out.append(f" {nm}{suffix}: {terms} >= {_fmt(lo)}")
    out.append("Bounds")
    for j in range(lp.num_cols):
        lo, hi, nm = lp.col_lower[j], lp.col_upper[j], lp.col_names[j]
        if lo == hi:
            out.append(f" {nm} = {_fmt(lo)}")
        elif np.isfinite(lo) and np.isfinite(hi):
            out.append(f" {_fmt(lo)} <= {nm} <= {_fmt(hi)}")
        elif np.isfinite(lo):
            out.append(f" {nm} >= {_fmt(lo)}")
        elif np.isfinite(hi):
            out.append(f" -inf <= {nm} <= {_fmt(hi)}")
        else:
            out.append(f" {nm} free")
    if mip and mip.binary:
        out.append("Binaries")
        for j in mip.binary:
            out.append(f" {lp.col_names[j]}")
    out.append("End")
    return "\n".join(out) + "\n"


def parse_lp_text(text: str) -> MixedIntegerProgram:
    """Parse the LP-text dialect produced by :func:`write_lp_text`."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("\\")]
    offset = 0.0
    for ln in text.splitlines():
        if ln.strip().startswith("\\ offset"):
            offset = float(ln.split()[-1])
    section = None
    sense = "min"
    rows = []  # (name, {col: coef}, lo, hi)
    col_ix: dict[str, int] = {}
    col_order: list[str] = []
    obj: dict[str, float] = {}
    bounds: dict[str, tuple[float, float]] = {}
    binaries: list[str] = []

    def col(nm):
        if nm not in col_ix:
            col_ix[nm] = len(col_order)
            col_order.append(nm)
        return nm

    def parse_terms(tokens):
        coefs = {}
        k = 0
        while k < len(tokens):
            sign = 1.0
            tk = tokens[k]
            if tk in ("+", "-"):
                sign = 1.0 if tk == "+" else -1.0
                k += 1
                tk = tokens[k]
            coef = float(tk)
            name = tokens[k + 1]
            col(name)
            coefs[name] = coefs.get(name, 0.0) + sign * coef
            k += 2
        return coefs

    for ln in lines:
        s = ln.strip()
        low = s.lower()
        if low in ("minimize", "maximize"):
            sense = "min" if low == "minimize" else "max"
            section = "obj"
            continue
        if low == "subject to":
            section = "rows"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("binaries", "binary"):
            section = "bin"
            continue
        if low == "end":
            break
        if section == "obj":
            body = s.split(":", 1)[1].strip()
            obj.update(parse_terms(body.split()))
        elif section == "rows":
            name, body = s.split(":", 1)
            toks = body.split()
            if "<=" in toks:
                k = toks.index("<=")
                rows.append((name.strip(), parse_terms(toks[:k]), -INF, float(toks[k + 1])))
            elif ">=" in toks:
                k = toks.index(">=")
                rows.append((name.strip(), parse_terms(toks[:k]), float(toks[k + 1]), INF))
            else:
                k = toks.index("=")
                v = float(toks[k + 1])
                rows.append((name.strip(), parse_terms(toks[:k]), v, v))
        elif section == "bounds":
            toks = s.split()
            if toks[-1] == "free":
                bounds[col(toks[0])] = (-INF, INF)
            elif "<=" in toks:
                k1 = toks.index("<=")
                lo = -INF if toks[0] == "-inf" else float(toks[0])
                nm = toks[k1 + 1]
                hi = float(toks[-1])
                bounds[col(nm)] = (lo, hi)
            elif ">=" in toks:
                bounds[col(toks[0])] = (float(toks[-1]), INF)
            elif "=" in toks:
                v = float(toks[-1])
                bounds[col(toks[0])] = (v, v)
        elif section == "bin":
            binaries.append(col(s))

    n = len(col_order)
    m = len(rows)
    c = np.zeros(n)
    for nm, v in obj.items():
        c[col_ix[nm]] = v
    data, ri, ci = [], [], []
    rlo = np.empty(m)
    rhi = np.empty(m)
    rnames = []
    for i, (nm, coefs, lo, hi) in enumerate(rows):
        rnames.append(nm)
        rlo[i], rhi[i] = lo, hi
        for cn, v in coefs.items():
            ri.append(i)
            ci.append(col_ix[cn])
            data.append(v)
    cl = np.zeros(n)
    cu = np.full(n, INF)
    for nm, (lo, hi) in bounds.items():
        cl[col_ix[nm]] = lo
        cu[col_ix[nm]] = hi
    for nm in binaries:
        cl[col_ix[nm]] = max(cl[col_ix[nm]], 0.0)
        cu[col_ix[nm]] = min(cu[col_ix[nm]], 1.0)
    lp = LinearProgram(
        sense=sense,
        c=c,
        a=sp.csr_matrix((data, (ri, ci)), shape=(m, n)),
        row_lower=rlo,
        row_upper=rhi,
        col_lower=cl,
        col_upper=cu,
        row_names=rnames,
        col_names=col_order,
        offset=offset,
    )
    return MixedIntegerProgram(lp, [col_ix[nm] for nm in binaries])


def write_mps(problem: LinearProgram | MixedIntegerProgram) -> str:
    """Fixed-field MPS with RANGES for two-sided rows; 12 significant digits."""
    mip = problem if isinstance(problem, MixedIntegerProgram) else None
    lp = mip.lp if mip else problem
    binset = set(mip.binary) if mip else set()
    out = [f"NAME          {lp.name}"]
    if lp.sense == "max":
        out.append("OBJSENSE")
        out.append("    MAX")
    out.append("ROWS")
    out.append(" N  OBJ")
    rowtype = []
    for i in range(lp.num_rows):
        lo, hi = lp.row_lower[i], lp.row_upper[i]
        if lo == hi:
            rt = "E"
        elif np.isfinite(hi):
            rt = "L"
        elif np.isfinite(lo):
            rt = "G"
        else:
            rt = "N"
        rowtype.append(rt)
        out.append(f" {rt}  {lp.row_names[i]}")
    out.append("COLUMNS")
    acsc = lp.a.tocsc()

    def entry(cname, rname, v):
        return f"    {cname:<24}  {rname:<24}  {_fmt(v)}"

    for j in range(lp.num_cols):
        nm = lp.col_names[j]
        if j in binset:
            out.append(f"    MARKER                 'MARKER'                 'INTORG'")
        if lp.c[j] != 0.0:
            out.append(entry(nm, "OBJ", lp.c[j]))
        sl = acsc[:, j]
        wrote = lp.c[j] != 0.0
        for k in range(sl.nnz):
            out.append(entry(nm, lp.row_names[sl.indices[k]], sl.data[k]))
            wrote = True
        if not wrote:
            out.append(entry(nm, "OBJ", 0))
        if j in binset:
            out.append(f"    MARKER                 'MARKER'                 'INTEND'")
    out.append("RHS")
    if lp.offset:
        out.append(entry("RHS", "OBJ", -lp.offset))
    for i in range(lp.num_rows):
        rt = rowtype[i]
        if rt == "E" or rt == "G":
            v = lp.row_lower[i]
        elif rt == "L":
            v = lp.row_upper[i]
        else:
            continue
        if v != 0.0:
            out.append(entry("RHS", lp.row_names[i], v))
    ranged = [
        i
        for i in range(lp.num_rows)
        if np.isfinite(lp.row_lower[i]) and np.isfinite(lp.row_upper[i]) and lp.row_lower[i] != lp.row_upper[i]
    ]
    if ranged:
        out.append("RANGES")
        for i in ranged:
            out.append(entry("RNG", lp.row_names[i], lp.row_upper[i] - lp.row_lower[i]))
    out.append("BOUNDS")
    for j in range(lp.num_cols):
        nm = lp.col_names[j]
        lo, hi = lp.col_lower[j], lp.col_upper[j]
        if j in binset:
            out.append(f" BV BND       {nm}")
            continue
        if lo == hi:
            out.append(f" FX BND       {nm:<24}  {_fmt(lo)}")
            continue
        if np.isfinite(lo):
            out.append(f" LO BND       {nm:<24}  {_fmt(lo)}")
        else:
            out.append(f" MI BND       {nm}")
        if np.isfinite(hi):
            out.append(f" UP BND       {nm:<24}  {_fmt(hi)}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def parse_mps(text: str) -> MixedIntegerProgram:
    """Parse the MPS dialect produced by :func:`write_mps` (OBJSENSE supported)."""
    section = None
    name = "HYDROBID"
    sense = "min"
    rowtype: dict[str, str] = {}
    roworder: list[str] = []
    colorder: list[str] = []
    colix: dict[str, int] = {}
    entries: list[tuple[str, str, float]] = []
    rhs: dict[str, float] = {}
    ranges: dict[str, float] = {}
    bounds: list[tuple[str, str, float | None]] = []
    binaries: list[str] = []
    integer_mode = False
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        head = raw.split()
        if raw[0] not in " \t":
            kw = head[0].upper()
            if kw == "NAME":
                name = head[1] if len(head) > 1 else name
                continue
            if kw in ("OBJSENSE", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"):
                section = kw
                if kw == "ENDATA":
                    break
                continue
            raise LpError(f"unknown MPS section {kw}")
        if section == "OBJSENSE":
            sense = "max" if head[0].upper() in ("MAX", "MAXIMIZE") else "min"
        elif section == "ROWS":
            rt, rn = head[0].upper(), head[1]
            if rt == "N" and rn == "OBJ":
                continue
            rowtype[rn] = rt
            roworder.append(rn)
        elif section == "COLUMNS":
            if len(head) >= 3 and head[1] == "'MARKER'":
                integer_mode = head[2] == "'INTORG'"
                continue
            cn = head[0]
            if cn not in colix:
                colix[cn] = len(colorder)
                colorder.append(cn)
                if integer_mode:
                    binaries.append(cn)
            for k in range(1, len(head) - 1, 2):
                entries.append((cn, head[k], float(head[k + 1])))
        elif section == "RHS":
            for k in range(1, len(head) - 1, 2):
                rhs[head[k]] = float(head[k + 1])
        elif section == "RANGES":
            for k in range(1, len(head) - 1, 2):
                ranges[head[k]] = float(head[k + 1])
        elif section == "BOUNDS":
            bt = head[0].upper()
            cn = head[2]
            if cn not in colix:
                colix[cn] = len(colorder)
                colorder.append(cn)
            bounds.append((bt, cn, float(head[3]) if len(head) > 3 else None))
    n = len(colorder)
    m = len(roworder)
    rowix = {nm: i for i, nm in enumerate(roworder)}
    c = np.zeros(n)
    data, ri, ci = [], [], []
    for cn, rn, v in entries:
        if rn == "OBJ":
            c[colix[cn]] += v
        else:
            ri.append(rowix[rn])
            ci.append(colix[cn])
            data.append(v)
    rlo = np.empty(m)
    rhi = np.empty(m)
    for nm, i in rowix.items():
        rt = rowtype[nm]
        b = rhs.get(nm, 0.0)
        if rt == "E":
            rlo[i] = rhi[i] = b
        elif rt == "L":
            rhi[i] = b
            rlo[i] = b - abs(ranges[nm]) if nm in ranges else -INF
        elif rt == "G":
            rlo[i] = b
            rhi[i] = b + abs(ranges[nm]) if nm in ranges else INF
        else:
            rlo[i], rhi[i] = -INF, INF
    offset = -rhs.get("OBJ", 0.0)
    cl = np.zeros(n)
    cu = np.full(n, INF)
    for cn in binaries:
        cl[colix[cn]], cu[colix[cn]] = 0.0, 1.0
    for bt, cn, v in bounds:
        j = colix[cn]
        if bt == "UP":
            cu[j] = v
        elif bt == "LO":
            cl[j] = v
        elif bt == "FX":
            cl[j] = cu[j] = v
        elif bt == "MI":
            cl[j] = -INF
        elif bt == "PL":
            cu[j] = INF
        elif bt == "FR":
            cl[j], cu[j] = -INF, INF
        elif bt == "BV":
            cl[j], cu[j] = 0.0, 1.0
            if cn not in binaries:
                binaries.append(cn)
        else:
            raise LpError(f"unknown bound type {bt}")
    lp = LinearProgram(
        sense=sense,
        c=c,
        a=sp.csr_matrix((data, (ri, ci)), shape=(m, n)),
        row_lower=rlo,
        row_upper=rhi,
        col_lower=cl,
        col_upper=cu,
        row_names=roworder,
        col_names=colorder,
        offset=offset,
        name=name,
    )
    return MixedIntegerProgram(lp, sorted(colix[nm] for nm in binaries))


def export_model(problem: LinearProgram | MixedIntegerProgram, path, fmt: str = "mps") -> None:
    """Write a model file; ``fmt`` is ``"mps"`` or ``"lp"``."""
    lp = problem.lp if isinstance(problem, MixedIntegerProgram) else problem
    names = set(lp.row_names) | {"OBJ"}
    if len(names) != lp.num_rows + 1:
        raise LpError("row name collision")
    if len(set(lp.col_names)) != lp.num_cols:
        raise LpError("column name collision")
    if fmt == "mps":
        text = write_mps(problem)
    elif fmt == "lp":
        text = write_lp_text(problem)
    else:
        raise LpError(f"unknown export format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


def parse_model(path) -> MixedIntegerProgram:
    with open(path) as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("NAME") or stripped.startswith("ROWS"):
        return parse_mps(text)
    return parse_lp_text(text)
