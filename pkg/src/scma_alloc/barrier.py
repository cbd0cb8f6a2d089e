"""Log-barrier interior-point maximizer for smooth concave programs.

Solves

    maximize    f(x)
    subject to  A x <= b,   lo <= x <= hi,   g_i(x) >= 0

with f concave and differentiable on the feasible set and every g_i smooth
and concave, so every barrier subproblem

    minimize  -t * f(x) - sum_i ln(b_i - a_i x) - sum_i ln(g_i(x))

is convex. Subproblems are centered with damped Newton steps and a
backtracking line search confined to the strict interior; the barrier
parameter grows by a factor of 10 per stage. At the central point of stage
t, the duality gap of the original problem is bounded by m/t with m the
total number of inequality constraints, which is the certificate reported
in ``eps_achieved``.

The feasible region must be bounded (the caller's responsibility; for
phase-I purposes unbounded variables are temporarily boxed at +-1e6).
Objectives may supply an exact Hessian callback; otherwise a central
finite-difference Hessian of the gradient is used, which requires the
objective to be evaluable in a small neighborhood of the iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]
Hessian = Callable[[np.ndarray], np.ndarray]

_PHASE1_BOX = 1e6
_STRICT_MARGIN = 1e-9
_HINT_MARGIN = 1e-13  # warm starts barely inside the boundary are still usable
_ARMIJO = 0.1
_CENTER_TOL = 1e-10  # stop centering when decrement^2 / 2 falls below


class NumericalDomainError(RuntimeError):
    """A callback returned NaN or infinity at a strictly feasible point."""

    def __init__(self, message: str, point: np.ndarray):
        self.point = np.asarray(point, dtype=float)
        super().__init__(
            f"{message} at x={np.array2string(self.point, precision=6, threshold=16)}"
        )


@dataclass
class SmoothConstraint:
    """Smooth concave inequality g(x) >= 0.

    ``value_grad`` returns (g(x), grad g(x)); ``hess`` optionally returns
    the (negative semidefinite) Hessian of g.
    """

    value_grad: Objective
    hess: Optional[Hessian] = None


@dataclass
class ConcaveProgram:
    """A concave maximization over linear inequalities, box bounds, and
    optional smooth concave inequalities ``g_i(x) >= 0``.

    ``objective`` returns (value, gradient) and must be concave and
    differentiable on the feasible set; ``hessian`` is optional.
    """

    dim: int
    objective: Objective
    ineq_A: Optional[np.ndarray] = None
    ineq_b: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    hessian: Optional[Hessian] = None
    concave_ineqs: tuple[SmoothConstraint, ...] = ()


@dataclass
class SolveResult:
    x_opt: np.ndarray
    value: float
    iterations: int  # total Newton steps across all barrier stages
    eps_achieved: float  # certified optimality-gap bound m/t
    status: str  # "converged" | "iteration-cap" | "infeasible"
    trace: Optional[list[dict]] = None


def _affine_rows(program: ConcaveProgram) -> tuple[np.ndarray, np.ndarray]:
    """Stack explicit inequalities and finite box bounds into A x <= b."""
    n = program.dim
    blocks_a, blocks_b = [], []
    if program.ineq_A is not None:
        A = np.atleast_2d(np.asarray(program.ineq_A, dtype=float))
        b = np.atleast_1d(np.asarray(program.ineq_b, dtype=float))
        if A.shape != (b.size, n):
            raise ValueError(f"inequality shapes {A.shape} vs b {b.shape} vs dim {n}")
        blocks_a.append(A)
        blocks_b.append(b)
    for bound, sign in ((program.lower, -1.0), (program.upper, 1.0)):
        if bound is None:
            continue
        vec = np.broadcast_to(np.asarray(bound, dtype=float), (n,))
        idx = np.flatnonzero(np.isfinite(vec))
        if idx.size:
            rows = np.zeros((idx.size, n))
            rows[np.arange(idx.size), idx] = sign
            blocks_a.append(rows)
            blocks_b.append(sign * vec[idx])
    if not blocks_a:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(blocks_a), np.concatenate(blocks_b)


def _nl_values(program: ConcaveProgram, x: np.ndarray) -> np.ndarray:
    return np.array([c.value_grad(x)[0] for c in program.concave_ineqs])


def _min_norm_slack(A, b, program, x) -> float:
    """Smallest constraint slack, normalized by max(1, |b_i|)."""
    slacks = []
    if b.size:
        slacks.append(np.min((b - A @ x) / np.maximum(1.0, np.abs(b))))
    if program.concave_ineqs:
        slacks.append(float(_nl_values(program, x).min()))
    return float(min(slacks)) if slacks else np.inf


def _fd_hessian(objective: Objective, x: np.ndarray) -> np.ndarray:
    """Symmetrized central-difference Hessian from gradient evaluations."""
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        h = 1e-6 * (1.0 + abs(x[i]))
        e = np.zeros(n)
        e[i] = h
        gp = objective(x + e)[1]
        gm = objective(x - e)[1]
        H[:, i] = (gp - gm) / (2.0 * h)
    return 0.5 * (H + H.T)


def check_gradient(program: ConcaveProgram, points, rel_tol: float = 1e-5) -> float:
    """Debug check: worst relative gap between the objective gradient and
    central finite differences over the given interior points."""
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        _, g = program.objective(x)
        fd = np.empty_like(g)
        for i in range(x.size):
            h = 1e-6 * (1.0 + abs(x[i]))
            e = np.zeros(x.size)
            e[i] = h
            fd[i] = (program.objective(x + e)[0] - program.objective(x - e)[0]) / (2 * h)
        gap = np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g)))
        worst = max(worst, float(gap))
    if worst > rel_tol:
        raise ValueError(f"gradient check failed: relative gap {worst:.3e}")
    return worst


class _Barrier:
    """Shared centering machinery; one instance per solve."""

    def __init__(self, program: ConcaveProgram):
        self.program = program
        self.A, self.b = _affine_rows(program)
        self.m = self.b.size + len(program.concave_ineqs)
        self.newton_steps = 0

    # -- barrier potential -------------------------------------------------
    def _objective(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        val, grad = self.program.objective(x)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            raise NumericalDomainError("objective returned a non-finite value", x)
        return float(val), np.asarray(grad, dtype=float)

    def _obj_hessian(self, x: np.ndarray) -> np.ndarray:
        if self.program.hessian is not None:
            return np.asarray(self.program.hessian(x), dtype=float)
        return _fd_hessian(self.program.objective, x)

    def _psi(self, x: np.ndarray, t: float) -> float:
        """Barrier potential; +inf outside the strict interior."""
        s = self.b - self.A @ x
        if s.size and s.min() <= 0.0:
            return np.inf
        nl_term = 0.0
        for c in self.program.concave_ineqs:
            g, _ = c.value_grad(x)
            if not np.isfinite(g):
                raise NumericalDomainError("constraint returned a non-finite value", x)
            if g <= 0.0:
                return np.inf
            nl_term -= np.log(g)
        val, _ = self._objective(x)
        psi = -t * val + nl_term
        if s.size:
            psi -= float(np.log(s).sum())
        return psi

    def center(
        self,
        x: np.ndarray,
        t: float,
        max_inner: int = 60,
        tol: float = _CENTER_TOL,
    ) -> np.ndarray:
        """Damped Newton descent on the stage-t barrier potential."""
        for _ in range(max_inner):
            val, fgrad = self._objective(x)
            s = self.b - self.A @ x
            inv_s = 1.0 / s
            grad = -t * fgrad + self.A.T @ inv_s
            H = -t * self._obj_hessian(x) + self.A.T @ (self.A * (inv_s**2)[:, None])
            nl_state = []
            for c in self.program.concave_ineqs:
                g, gg = c.value_grad(x)
                gh = (
                    np.asarray(c.hess(x), dtype=float)
                    if c.hess is not None
                    else _fd_hessian(c.value_grad, x)
                )
                grad -= gg / g
                H += np.outer(gg, gg) / g**2 - gh / g
                nl_state.append((g, gg))

            step = self._solve_newton(H, -grad)
            dec2 = float(-grad @ step)
            if dec2 <= 0.0:
                # numerically flat or slightly indefinite; retreat to gradient
                step = -grad
                dec2 = float(grad @ grad)
                if dec2 == 0.0:
                    break
            if 0.5 * dec2 <= tol:
                break

            # clamp to the affine boundary exactly and to the nonlinear
            # boundary's linear extrapolation (an upper bound, since the
            # constraints are concave), then backtrack on the potential
            alpha = 1.0
            As = self.A @ step
            hit = As > 0
            if hit.any():
                alpha = min(alpha, 0.99 * float(np.min(s[hit] / As[hit])))
            for g, gg in nl_state:
                dg = float(gg @ step)
                if dg < 0:
                    alpha = min(alpha, 0.99 * g / (-dg))
            psi_x = self._psi(x, t)
            while alpha > 1e-14:
                cand = x + alpha * step
                if self._psi(cand, t) <= psi_x - _ARMIJO * alpha * dec2:
                    break
                alpha *= 0.5
            else:
                break  # stalled on the boundary; current center is as good as it gets
            x = x + alpha * step
            self.newton_steps += 1
        return x

    @staticmethod
    def _solve_newton(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        ridge = 0.0
        scale = max(float(np.max(np.abs(np.diag(H)))), 1e-300)
        for _ in range(8):
            try:
                L = np.linalg.cholesky(H + ridge * np.eye(H.shape[0]))
                y = np.linalg.solve(L, rhs)
                return np.linalg.solve(L.T, y)
            except np.linalg.LinAlgError:
                ridge = scale * 1e-10 if ridge == 0.0 else ridge * 100.0
        return np.linalg.lstsq(H, rhs, rcond=None)[0]


def find_feasible(program: ConcaveProgram) -> Optional[np.ndarray]:
    """Return a strictly feasible interior point, or None when none exists.

    Tries the box midpoint first, then runs a phase-I barrier solve that
    minimizes the worst constraint violation, exiting early as soon as the
    iterate is strictly feasible for the original program.
    """
    n = program.dim
    A, b = _affine_rows(program)

    lo = np.full(n, -np.inf) if program.lower is None else np.broadcast_to(
        np.asarray(program.lower, dtype=float), (n,)
    ).copy()
    hi = np.full(n, np.inf) if program.upper is None else np.broadcast_to(
        np.asarray(program.upper, dtype=float), (n,)
    ).copy()
    lo_box = np.where(np.isfinite(lo), lo, -_PHASE1_BOX)
    hi_box = np.where(np.isfinite(hi), hi, _PHASE1_BOX)
    x0 = 0.5 * (lo_box + hi_box)

    def strict(x: np.ndarray) -> bool:
        return _min_norm_slack(A, b, program, x) > _STRICT_MARGIN

    if b.size == 0 and not program.concave_ineqs:
        return x0
    if strict(x0):
        return x0

    # phase-I over (x, s): minimize s subject to Ax - b <= s, -g_i(x) <= s
    viol = 0.0
    if b.size:
        viol = max(viol, float(np.max(A @ x0 - b)))
    if program.concave_ineqs:
        viol = max(viol, float(np.max(-_nl_values(program, x0))))
    s0 = viol + 1.0

    m_a = b.size
    aug_A = np.hstack([A, -np.ones((m_a, 1))]) if m_a else np.zeros((0, n + 1))

    def aug_objective(y: np.ndarray):
        grad = np.zeros(n + 1)
        grad[-1] = -1.0
        return -y[-1], grad

    def wrap(c: SmoothConstraint) -> SmoothConstraint:
        def vg(y: np.ndarray):
            g, gg = c.value_grad(y[:n])
            return g + y[-1], np.concatenate([gg, [1.0]])

        def hs(y: np.ndarray):
            H = np.zeros((n + 1, n + 1))
            block = (
                np.asarray(c.hess(y[:n]), dtype=float)
                if c.hess is not None
                else _fd_hessian(c.value_grad, y[:n])
            )
            H[:n, :n] = block
            return H

        return SmoothConstraint(vg, hs)

    aug = ConcaveProgram(
        dim=n + 1,
        objective=aug_objective,
        ineq_A=aug_A if m_a else None,
        ineq_b=b if m_a else None,
        lower=np.concatenate([lo_box, [-_PHASE1_BOX]]),
        upper=np.concatenate([hi_box, [s0 + 1.0]]),
        hessian=lambda y: np.zeros((n + 1, n + 1)),
        concave_ineqs=tuple(wrap(c) for c in program.concave_ineqs),
    )
    solver = _Barrier(aug)
    y = np.concatenate([x0, [s0]])
    t = solver.m / max(1.0, s0)
    for _ in range(60):
        y = solver.center(y, t)
        if strict(y[:n]):
            return y[:n]
        if solver.m / t <= 1e-10:
            break
        t *= 10.0
    return None


def maximize(
    program: ConcaveProgram,
    eps: float,
    x0: Optional[np.ndarray] = None,
    mu: float = 10.0,
    max_total_newton: int = 20000,
    collect_trace: bool = False,
) -> SolveResult:
    """Barrier-certified eps-optimal maximization of a concave program.

    Returns a strictly feasible point whose objective value is within
    ``eps_achieved`` (= m/t at the final stage, <= eps on convergence) of
    the constrained maximum. ``x0``, when given and strictly feasible, is
    used as the starting point; otherwise phase-I runs first.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    solver = _Barrier(program)
    if solver.m == 0:
        raise ValueError("program needs at least one constraint (bounded region)")

    x = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if _min_norm_slack(solver.A, solver.b, program, x0) > _HINT_MARGIN:
            x = x0.copy()
        elif program.lower is not None and program.upper is not None:
            # nudge a boundary-grazing warm start toward the box center
            mid = 0.5 * (
                np.broadcast_to(np.asarray(program.lower, float), (program.dim,))
                + np.broadcast_to(np.asarray(program.upper, float), (program.dim,))
            )
            if np.all(np.isfinite(mid)):
                cand = 0.9 * x0 + 0.1 * mid
                if _min_norm_slack(solver.A, solver.b, program, cand) > _HINT_MARGIN:
                    x = cand
    if x is None:
        x = find_feasible(program)
        if x is None:
            nan = np.full(program.dim, np.nan)
            return SolveResult(nan, np.nan, 0, np.inf, "infeasible", None)

    trace: Optional[list[dict]] = [] if collect_trace else None
    val0, _ = solver._objective(x)
    t = solver.m / max(1.0, abs(val0))  # first gap bound <= objective scale
    best_x, best_val = x.copy(), val0
    status = "iteration-cap"
    while True:
        final_stage = solver.m / t <= eps
        # intermediate stages only need rough centering; the certificate
        # rests on the tightly centered final stage
        x = solver.center(x, t, tol=_CENTER_TOL if final_stage else 1e-4)
        val, _ = solver._objective(x)
        if val > best_val:
            best_x, best_val = x.copy(), val
        gap = solver.m / t
        if trace is not None:
            trace.append(
                {"t": t, "gap": gap, "value": val, "newton": solver.newton_steps}
            )
        if gap <= eps:
            status = "converged"
            break
        if solver.newton_steps >= max_total_newton:
            break
        t *= mu
    return SolveResult(
        x_opt=best_x,
        value=best_val,
        iterations=solver.newton_steps,
        eps_achieved=solver.m / t,
        status=status,
        trace=trace,
    )
