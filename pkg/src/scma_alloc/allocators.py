"""Joint subcarrier and power allocation by block successive lower-bound
maximization.

Both allocators relax the binary assignment matrix F to [0, 1], add the
integrality penalty

    gamma(F) = weight * sum_{k,j} (f_kj^2 - f_kj)   (<= 0, zero iff binary)

and alternate two convex block updates per cycle: the assignment block with
the power matrix held fixed, then the power block with the fresh
assignment held fixed. Each block maximizes a concave surrogate that
touches the penalized objective at the previous iterate (value and
gradient) and lower-bounds it everywhere, so the penalized objective never
decreases across cycles:

* sum-rate blocks keep the concave rate term and linearize the convex
  penalty around the anchor;
* max-min blocks additionally linearize, per user, the concave
  accumulated-interference term ln(sigma2 + sum_{i<j} |h|^2 f p) around the
  anchor, leaving a pointwise minimum of concave functions that is solved
  exactly through an epigraph variable.

The relaxed fixed point is binarized by thresholding plus a greedy repair,
and the power matrix is re-optimized once against the final binary
assignment.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .barrier import ConcaveProgram, SmoothConstraint, SolveResult, maximize
from .system import (
    Allocation,
    SystemConfig,
    gain_power,
    max_violation,
    rates_from_gain_power,
)

# Absolute per-entry power cap, in units of the user budget. The budget
# constraint sum_k f*p <= P_max leaves single entries unbounded wherever the
# relaxed f is pushed to ~0; the cap keeps every block's feasible region
# bounded while staying far above any power a meaningfully assigned
# subcarrier can carry.
_POWER_CAP = 1.0


@dataclass
class SurrogateContext:
    """Anchor pair and channel constants shared by one block update."""

    anchor_F: np.ndarray  # (K, J) previous assignment iterate
    anchor_P: np.ndarray  # (K, J) previous power iterate, watts
    gain_sq: np.ndarray  # (K, J) squared channel magnitudes |h|^2
    sigma2: float
    penalty_weight: float


@dataclass
class BslmTrace:
    """Per-cycle record of one allocator run."""

    penalized_objective: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    delta_f: list = field(default_factory=list)
    delta_p: list = field(default_factory=list)
    inner_newton: list = field(default_factory=list)
    max_residual: list = field(default_factory=list)
    cycles: int = 0
    converged: bool = False
    status: str = "max-cycles"
    final_objective: float = float("nan")
    wall_ms: float = 0.0


def penalty(F: np.ndarray, weight: float) -> float:
    """Integrality penalty weight * sum(f^2 - f); zero exactly on binary F."""
    F = np.asarray(F, dtype=float)
    return float(weight * (F * F - F).sum())


def penalty_gradient(F: np.ndarray, weight: float) -> np.ndarray:
    """Entrywise penalty gradient weight * (2f - 1)."""
    return weight * (2.0 * np.asarray(F, dtype=float) - 1.0)


def penalized_sum_rate(gain_sq, F, P, sigma2, weight) -> float:
    loads = (gain_sq * F * P).sum(axis=1)
    return float(np.log1p(loads / sigma2).sum()) + penalty(F, weight)


def penalized_min_rate(gain_sq, F, P, sigma2, weight) -> float:
    rates = rates_from_gain_power(gain_sq, F, P, sigma2).per_user
    return float(rates.min()) + penalty(F, weight)


# ---------------------------------------------------------------------------
# sum-rate surrogates
# ---------------------------------------------------------------------------


def maxsr_surrogate_value_grad(F: np.ndarray, ctx: SurrogateContext):
    """Assignment-block surrogate of the penalized sum rate.

    Rate term evaluated exactly at (F, anchor_P); penalty replaced by its
    tangent plane at anchor_F. Concave in F, equal to the penalized
    objective at F = anchor_F, and below it everywhere.
    """
    F = np.asarray(F, dtype=float)
    W = ctx.gain_sq * ctx.anchor_P
    loads = (W * F).sum(axis=1)
    den = ctx.sigma2 + loads
    pen_g = penalty_gradient(ctx.anchor_F, ctx.penalty_weight)
    val = (
        float(np.log1p(loads / ctx.sigma2).sum())
        + penalty(ctx.anchor_F, ctx.penalty_weight)
        + float((pen_g * (F - ctx.anchor_F)).sum())
    )
    grad = W / den[:, None] + pen_g
    return val, grad


def _maxsr_f_hessian(ctx: SurrogateContext):
    W = ctx.gain_sq * ctx.anchor_P
    K, J = W.shape

    def hess(x: np.ndarray) -> np.ndarray:
        F = x.reshape(K, J)
        den = ctx.sigma2 + (W * F).sum(axis=1)
        H = np.zeros((K * J, K * J))
        for k in range(K):
            w = W[k] / den[k]
            sl = slice(k * J, (k + 1) * J)
            H[sl, sl] = -np.outer(w, w)
        return H

    return hess


# ---------------------------------------------------------------------------
# max-min surrogates
# ---------------------------------------------------------------------------


def theta_value_grad_F(user: int, F: np.ndarray, ctx: SurrogateContext):
    """Accumulated-interference term of ``user`` (zero-based) as a function
    of the assignment, with the power fixed at the anchor.

    theta_user(F) = sum_k ln(sigma2 + sum_{i<user} |h|^2 f p'). The gradient
    is zero in every column i >= user.
    """
    F = np.asarray(F, dtype=float)
    W = ctx.gain_sq * ctx.anchor_P
    prior = (W[:, :user] * F[:, :user]).sum(axis=1)
    den = ctx.sigma2 + prior
    val = float(np.log(den).sum())
    grad = np.zeros_like(W)
    grad[:, :user] = W[:, :user] / den[:, None]
    return val, grad


def theta_value_grad_P(user: int, P: np.ndarray, ctx: SurrogateContext):
    """Same accumulated-interference term as a function of the power, with
    the assignment fixed at the anchor."""
    P = np.asarray(P, dtype=float)
    V = ctx.gain_sq * ctx.anchor_F
    prior = (V[:, :user] * P[:, :user]).sum(axis=1)
    den = ctx.sigma2 + prior
    val = float(np.log(den).sum())
    grad = np.zeros_like(V)
    grad[:, :user] = V[:, :user] / den[:, None]
    return val, grad


def _sic_pieces(coef: np.ndarray, anchor: np.ndarray, sigma2: float):
    """Anchor-side constants of the linearized SIC terms.

    Returns (den_prev, thetas) where den_prev[:, j] = sigma2 + the anchor
    interference seen by user j and thetas[j] is the gradient of theta_j at
    the anchor (columns >= j zero).
    """
    K, J = coef.shape
    cums = np.cumsum(coef * anchor, axis=1)
    den_prev = np.empty((K, J))
    den_prev[:, 0] = sigma2
    if J > 1:
        den_prev[:, 1:] = sigma2 + cums[:, :-1]
    thetas = []
    for j in range(J):
        g = np.zeros((K, J))
        g[:, :j] = coef[:, :j] / den_prev[:, j][:, None]
        thetas.append(g)
    return den_prev, thetas


def _sic_terms(X: np.ndarray, anchor: np.ndarray, coef: np.ndarray, sigma2: float):
    """Linearized per-user SIC terms term_j(X) for coefficient matrix coef.

    term_j(X) = sum_k ln((sigma2 + sum_{i<=j} coef*X) / den_prev[k, j])
                - <theta_j_grad, X - anchor>
    Equals user j's rate at X = anchor; concave in X.
    """
    den_prev, thetas = _sic_pieces(coef, anchor, sigma2)
    cums = sigma2 + np.cumsum(coef * X, axis=1)
    terms = np.empty(coef.shape[1])
    for j in range(coef.shape[1]):
        terms[j] = float(np.log(cums[:, j] / den_prev[:, j]).sum()) - float(
            (thetas[j] * (X - anchor)).sum()
        )
    return terms


def maxmin_surrogate_terms_F(F: np.ndarray, ctx: SurrogateContext) -> np.ndarray:
    """Per-user terms of the assignment-block max-min surrogate (no penalty)."""
    W = ctx.gain_sq * ctx.anchor_P
    return _sic_terms(np.asarray(F, dtype=float), ctx.anchor_F, W, ctx.sigma2)


def maxmin_surrogate_terms_P(P: np.ndarray, ctx: SurrogateContext) -> np.ndarray:
    """Per-user terms of the power-block max-min surrogate (no penalty)."""
    V = ctx.gain_sq * ctx.anchor_F
    return _sic_terms(np.asarray(P, dtype=float), ctx.anchor_P, V, ctx.sigma2)


def maxmin_surrogate_value_F(F: np.ndarray, ctx: SurrogateContext) -> float:
    """Full assignment-block surrogate: min over users plus linearized penalty."""
    pen_g = penalty_gradient(ctx.anchor_F, ctx.penalty_weight)
    lin = penalty(ctx.anchor_F, ctx.penalty_weight) + float(
        (pen_g * (np.asarray(F) - ctx.anchor_F)).sum()
    )
    return float(maxmin_surrogate_terms_F(F, ctx).min()) + lin


def maxmin_surrogate_value_P(P: np.ndarray, ctx: SurrogateContext) -> float:
    """Full power-block surrogate; the penalty is constant in this block."""
    return float(maxmin_surrogate_terms_P(P, ctx).min()) + penalty(
        ctx.anchor_F, ctx.penalty_weight
    )


# ---------------------------------------------------------------------------
# block updates
# ---------------------------------------------------------------------------


def _f_polytope(ctx: SurrogateContext, cfg: SystemConfig, extra: int = 0):
    """Linear constraints of the assignment block over vec(F) (+ epigraph
    column when extra=1): column sums <= N, row sums <= d_f, and the power
    budget, which is linear in F with P fixed at the anchor."""
    K, J = ctx.gain_sq.shape
    n = K * J
    rows, rhs = [], []
    for j in range(J):
        r = np.zeros(n + extra)
        r[j : n : J] = 1.0
        rows.append(r)
        rhs.append(float(cfg.N))
    for k in range(K):
        r = np.zeros(n + extra)
        r[k * J : (k + 1) * J] = 1.0
        rows.append(r)
        rhs.append(float(cfg.d_f))
    pmax = cfg.p_max_w
    for j in range(J):
        r = np.zeros(n + extra)
        r[j : n : J] = ctx.anchor_P[:, j] / pmax[j]
        rows.append(r)
        rhs.append(1.0)
    return np.array(rows), np.array(rhs)


def update_F_maxsr(ctx: SurrogateContext, cfg: SystemConfig):
    """Assignment-block update of the sum-rate allocator.

    Maximizes the tangent-penalty surrogate over the relaxed assignment
    polytope. Returns (new F, SolveResult); the new iterate never scores
    below the anchor on the surrogate.
    """
    K, J = ctx.gain_sq.shape
    A, b = _f_polytope(ctx, cfg)

    def objective(x: np.ndarray):
        val, grad = maxsr_surrogate_value_grad(x.reshape(K, J), ctx)
        return val, grad.ravel()

    program = ConcaveProgram(
        dim=K * J,
        objective=objective,
        ineq_A=A,
        ineq_b=b,
        lower=np.zeros(K * J),
        upper=np.ones(K * J),
        hessian=_maxsr_f_hessian(ctx),
    )
    res = maximize(program, cfg.solver_eps, x0=ctx.anchor_F.ravel())
    _require_solved(res, "sum-rate assignment update")
    F_new = res.x_opt.reshape(K, J)
    if maxsr_surrogate_value_grad(F_new, ctx)[0] < maxsr_surrogate_value_grad(
        ctx.anchor_F, ctx
    )[0]:
        F_new = ctx.anchor_F.copy()
    return F_new, res


def _zero_power_result(ctx: SurrogateContext):
    """Degenerate power block: nothing is assigned, so P = 0 is optimal."""
    return np.zeros_like(ctx.anchor_P), SolveResult(
        x_opt=np.zeros(0),
        value=0.0,
        iterations=0,
        eps_achieved=0.0,
        status="converged",
    )


def _p_block_pieces(ctx: SurrogateContext, cfg: SystemConfig):
    """Active-variable bookkeeping shared by both power-block updates.

    Entries with a zero anchor assignment carry no rate and no budget and
    are fixed at zero; the rest are solved over [0, cap] under the per-user
    budget."""
    K, J = ctx.gain_sq.shape
    active = np.flatnonzero(ctx.anchor_F.ravel() > 0.0)
    pmax = cfg.p_max_w
    cols = active % J
    rows_of = active // J
    upper = _POWER_CAP * pmax[cols]

    arows, rhs = [], []
    f_flat = ctx.anchor_F.ravel()
    for j in range(J):
        sel = cols == j
        if not sel.any():
            continue
        r = np.zeros(active.size + 1)  # epigraph-ready; plain block drops last col
        r[:-1][sel] = f_flat[active[sel]] / pmax[j]
        arows.append(r)
        rhs.append(1.0)
    return active, rows_of, cols, upper, np.array(arows), np.array(rhs)


def _scatter(x: np.ndarray, active: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape[0] * shape[1])
    out[active] = x
    return out.reshape(shape)


def update_P_maxsr(ctx: SurrogateContext, cfg: SystemConfig):
    """Power-block update of the sum-rate allocator.

    The penalty is constant here, so this maximizes the exact sum rate over
    the per-user budgets with the assignment fixed at the anchor."""
    K, J = ctx.gain_sq.shape
    active, rows_of, cols, upper, A, b = _p_block_pieces(ctx, cfg)
    if active.size == 0:
        return _zero_power_result(ctx)
    V = (ctx.gain_sq * ctx.anchor_F).ravel()[active]
    sigma2 = ctx.sigma2

    def objective(x: np.ndarray):
        loads = np.bincount(rows_of, weights=V * x, minlength=K)
        val = float(np.log1p(loads / sigma2).sum())
        grad = V / (sigma2 + loads)[rows_of]
        return val, grad

    def hessian(x: np.ndarray):
        loads = np.bincount(rows_of, weights=V * x, minlength=K)
        w = V / (sigma2 + loads)[rows_of]
        H = np.zeros((x.size, x.size))
        for k in range(K):
            idx = np.flatnonzero(rows_of == k)
            if idx.size:
                H[np.ix_(idx, idx)] = -np.outer(w[idx], w[idx])
        return H

    program = ConcaveProgram(
        dim=active.size,
        objective=objective,
        ineq_A=A[:, :-1] if A.size else None,
        ineq_b=b if A.size else None,
        lower=np.zeros(active.size),
        upper=upper,
        hessian=hessian,
    )
    res = maximize(program, cfg.solver_eps, x0=ctx.anchor_P.ravel()[active])
    _require_solved(res, "sum-rate power update")
    if res.value < objective(ctx.anchor_P.ravel()[active])[0]:
        return ctx.anchor_P.copy(), res
    return _scatter(res.x_opt, active, (K, J)), res


def _epigraph_bounds(terms_at_anchor: np.ndarray):
    a0 = float(terms_at_anchor.min())
    t_lo = a0 - 10.0 * (1.0 + abs(a0))
    t_start = a0 - 0.5 * (1.0 + abs(a0))
    return t_lo, t_start


class _Memo:
    """Single-slot memo keyed on the raw bytes of x; the J epigraph
    constraints share their cumulative-load computation, and the line
    search evaluates all of them at the same candidate points."""

    def __init__(self, fn):
        self._fn = fn
        self._key = None
        self._val = None

    def __call__(self, x: np.ndarray):
        key = x.tobytes()
        if key != self._key:
            self._key = key
            self._val = self._fn(x)
        return self._val


def update_F_maxmin(ctx: SurrogateContext, cfg: SystemConfig):
    """Assignment-block update of the max-min allocator.

    Maximizes the pointwise minimum of the per-user linearized SIC terms
    (plus the linearized penalty) through an epigraph variable t with one
    smooth concave constraint t <= term_j per user."""
    K, J = ctx.gain_sq.shape
    n = K * J
    W = ctx.gain_sq * ctx.anchor_P
    den_prev, thetas = _sic_pieces(W, ctx.anchor_F, ctx.sigma2)
    sigma2 = ctx.sigma2
    anchor = ctx.anchor_F

    cums = _Memo(
        lambda x: sigma2 + np.cumsum(W * x[:n].reshape(K, J), axis=1)
    )

    def make_constraint(j: int) -> SmoothConstraint:
        log_den_prev = float(np.log(den_prev[:, j]).sum())
        theta = thetas[j]

        def value_grad(x: np.ndarray):
            F = x[:n].reshape(K, J)
            cj = cums(x)[:, j]
            val = (
                float(np.log(cj).sum())
                - log_den_prev
                - float((theta * (F - anchor)).sum())
                - x[-1]
            )
            gF = -theta.copy()
            gF[:, : j + 1] += W[:, : j + 1] / cj[:, None]
            return val, np.concatenate([gF.ravel(), [-1.0]])

        def hess(x: np.ndarray):
            cj = cums(x)[:, j]
            H = np.zeros((n + 1, n + 1))
            for k in range(K):
                w = W[k, : j + 1] / cj[k]
                sl = slice(k * J, k * J + j + 1)
                H[sl, sl] = -np.outer(w, w)
            return H

        return SmoothConstraint(value_grad, hess)

    pen_g = penalty_gradient(anchor, ctx.penalty_weight).ravel()
    pen_c = penalty(anchor, ctx.penalty_weight) - float(pen_g @ anchor.ravel())

    def objective(x: np.ndarray):
        val = x[-1] + pen_c + float(pen_g @ x[:n])
        grad = np.concatenate([pen_g, [1.0]])
        return val, grad

    A, b = _f_polytope(ctx, cfg, extra=1)
    t_lo, t_start = _epigraph_bounds(maxmin_surrogate_terms_F(anchor, ctx))
    program = ConcaveProgram(
        dim=n + 1,
        objective=objective,
        ineq_A=A,
        ineq_b=b,
        lower=np.concatenate([np.zeros(n), [t_lo]]),
        upper=np.concatenate([np.ones(n), [np.inf]]),
        hessian=lambda x: np.zeros((n + 1, n + 1)),
        concave_ineqs=tuple(make_constraint(j) for j in range(J)),
    )
    x0 = np.concatenate([anchor.ravel(), [t_start]])
    res = maximize(program, cfg.solver_eps, x0=x0)
    _require_solved(res, "max-min assignment update")
    F_new = res.x_opt[:n].reshape(K, J)
    if maxmin_surrogate_value_F(F_new, ctx) < maxmin_surrogate_value_F(anchor, ctx):
        F_new = anchor.copy()
    return F_new, res


def update_P_maxmin(ctx: SurrogateContext, cfg: SystemConfig):
    """Power-block update of the max-min allocator (epigraph form, penalty
    constant in this block)."""
    K, J = ctx.gain_sq.shape
    active, rows_of, cols, upper, A, b = _p_block_pieces(ctx, cfg)
    if active.size == 0:
        return _zero_power_result(ctx)
    V = ctx.gain_sq * ctx.anchor_F
    den_prev, thetas = _sic_pieces(V, ctx.anchor_P, ctx.sigma2)
    sigma2 = ctx.sigma2
    anchor_flat = ctx.anchor_P.ravel()[active]
    nv = active.size
    idx_per_k = [np.flatnonzero(rows_of == k) for k in range(K)]

    cums = _Memo(
        lambda x: sigma2 + np.cumsum(V * _scatter(x[:nv], active, (K, J)), axis=1)
    )

    def make_constraint(j: int) -> SmoothConstraint:
        log_den_prev = float(np.log(den_prev[:, j]).sum())
        theta_flat = thetas[j].ravel()[active]
        vj_flat = np.where(cols <= j, V.ravel()[active], 0.0)

        def value_grad(x: np.ndarray):
            cj = cums(x)[:, j]
            val = (
                float(np.log(cj).sum())
                - log_den_prev
                - float(theta_flat @ (x[:nv] - anchor_flat))
                - x[-1]
            )
            g = vj_flat / cj[rows_of] - theta_flat
            return val, np.concatenate([g, [-1.0]])

        def hess(x: np.ndarray):
            cj = cums(x)[:, j]
            w = vj_flat / cj[rows_of]
            H = np.zeros((nv + 1, nv + 1))
            for k, idx in enumerate(idx_per_k):
                if idx.size:
                    H[np.ix_(idx, idx)] = -np.outer(w[idx], w[idx])
            return H

        return SmoothConstraint(value_grad, hess)

    def objective(x: np.ndarray):
        grad = np.zeros(nv + 1)
        grad[-1] = 1.0
        return float(x[-1]), grad

    t_lo, t_start = _epigraph_bounds(maxmin_surrogate_terms_P(ctx.anchor_P, ctx))
    program = ConcaveProgram(
        dim=nv + 1,
        objective=objective,
        ineq_A=A if A.size else None,
        ineq_b=b if A.size else None,
        lower=np.concatenate([np.zeros(nv), [t_lo]]),
        upper=np.concatenate([upper, [np.inf]]),
        hessian=lambda x: np.zeros((nv + 1, nv + 1)),
        concave_ineqs=tuple(make_constraint(j) for j in range(J)),
    )
    x0 = np.concatenate([anchor_flat, [t_start]])
    res = maximize(program, cfg.solver_eps, x0=x0)
    _require_solved(res, "max-min power update")
    P_new = _scatter(res.x_opt[:nv], active, (K, J))
    if maxmin_surrogate_value_P(P_new, ctx) < maxmin_surrogate_value_P(ctx.anchor_P, ctx):
        P_new = ctx.anchor_P.copy()
    return P_new, res


def _require_solved(res: SolveResult, what: str) -> None:
    if res.status == "infeasible":
        raise RuntimeError(f"{what}: block subproblem reported infeasible")


# ---------------------------------------------------------------------------
# initialization, binarization, full runs
# ---------------------------------------------------------------------------


def greedy_softened_init(channel, cfg: SystemConfig, criterion: str = "sum_rate"):
    """Deterministic warm start: a greedy assignment pulled just inside the
    relaxed box, with an interior equal-split power.

    For the sum-rate criterion users claim in descending overall channel
    quality (the strong users exploit their best subcarriers); for the
    max-min criterion in ascending quality, so the weakest users claim
    their best subcarriers first. Block updates started here can only
    improve on the corresponding greedy baseline (the power block
    water-fills the greedy claim); random starts explore other basins.
    """
    from .baselines import allocate_sorted  # baselines builds on system only

    quality = gain_power(channel).sum(axis=0)
    order = np.argsort(-quality) if criterion == "sum_rate" else np.argsort(quality)
    base = allocate_sorted(channel, cfg, order)
    F = np.where(base.F > 0.5, 0.93, 0.02)
    counts = np.maximum(base.F.sum(axis=0), 1.0)
    P = np.where(base.F > 0.5, (0.9 * cfg.p_max_w / counts)[None, :], 0.0)
    P += 1e-4 * cfg.p_max_w[None, :] / cfg.K  # strictly positive everywhere
    return F, P


def initial_allocation(cfg: SystemConfig, rng: np.random.Generator):
    """Random strictly feasible starting pair.

    F is sampled uniformly then scaled column- and row-wise (iterative
    proportional fitting, downscaling only) until the per-user and
    per-subcarrier sums sit strictly inside their caps; P is sampled
    uniformly and scaled per user to 90% of the budget under F."""
    K, J = cfg.K, cfg.J
    margin = 0.98
    F = rng.uniform(0.02, 0.98, size=(K, J))
    for _ in range(50):
        col = F.sum(axis=0)
        over_c = col > margin * cfg.N
        if over_c.any():
            F[:, over_c] *= margin * cfg.N / col[over_c]
        row = F.sum(axis=1)
        over_r = row > margin * cfg.d_f
        if over_r.any():
            F[over_r, :] *= (margin * cfg.d_f / row[over_r])[:, None]
        if not over_c.any() and not over_r.any():
            break
    P_raw = rng.uniform(0.1, 1.0, size=(K, J))
    load = (F * P_raw).sum(axis=0)
    P = P_raw * (0.9 * cfg.p_max_w / np.maximum(load, 1e-300))[None, :]
    return F, P


def binarize_and_repair(
    F_relaxed: np.ndarray,
    cfg: SystemConfig,
    gain_sq: np.ndarray,
    P: np.ndarray,
    objective: Union[str, Callable] = "sum_rate",
) -> np.ndarray:
    """Threshold the relaxed assignment at 0.5 and repair any oversubscribed
    row or column by dropping, one at a time, the entry whose removal costs
    the least objective. Dropping only ever lowers sums, so the repair
    terminates with a binary feasible assignment; an already binary
    feasible input comes back unchanged.

    ``objective`` selects the marginal-loss criterion: "sum_rate",
    "min_rate", or a callable (gain_sq, F, P, sigma2) -> float.
    """
    gain_sq = gain_power(gain_sq)
    sigma2 = cfg.sigma2
    if objective == "sum_rate":
        def score(Fb):
            return float(np.log1p((gain_sq * Fb * P).sum(axis=1) / sigma2).sum())
    elif objective == "min_rate":
        def score(Fb):
            return float(rates_from_gain_power(gain_sq, Fb, P, sigma2).per_user.min())
    elif callable(objective):
        def score(Fb):
            return float(objective(gain_sq, Fb, P, sigma2))
    else:
        raise ValueError(f"unknown objective {objective!r}")

    F = (np.asarray(F_relaxed, dtype=float) >= 0.5).astype(float)
    while True:
        col = F.sum(axis=0)
        row = F.sum(axis=1)
        if (col <= cfg.N).all() and (row <= cfg.d_f).all():
            break
        if (col > cfg.N).any():
            j = int(np.argmax(col > cfg.N))
            candidates = [(int(k), j) for k in np.flatnonzero(F[:, j] > 0)]
        else:
            k = int(np.argmax(row > cfg.d_f))
            candidates = [(k, int(j)) for j in np.flatnonzero(F[k, :] > 0)]
        best, best_val = None, -np.inf
        for k, j in candidates:
            F[k, j] = 0.0
            val = score(F)
            F[k, j] = 1.0
            if val > best_val:
                best, best_val = (k, j), val
        F[best] = 0.0
    return F


def _fill_spare_claims(
    F_bin: np.ndarray, cfg: SystemConfig, gain_sq: np.ndarray, criterion: str
) -> np.ndarray:
    """Let users holding fewer than N subcarriers claim the strongest still
    uncapped ones. Together with the power re-optimization this is a pure
    improvement step: extra claims can always carry zero power.

    Pick order favors the criterion: weakest users first for max-min,
    strongest first for sum rate."""
    F = F_bin.copy()
    occupancy = F.sum(axis=1)
    quality = gain_sq.sum(axis=0)
    order = np.argsort(quality) if criterion == "min_rate" else np.argsort(-quality)
    for j in order:
        while F[:, j].sum() < cfg.N:
            avail = np.flatnonzero((occupancy < cfg.d_f) & (F[:, j] == 0))
            if avail.size == 0:
                break
            k = avail[np.argmax(gain_sq[avail, j])]
            F[k, j] = 1.0
            occupancy[k] += 1
    return F


def _equal_split_power(F_bin: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Interior power start: half the budget split evenly over assigned
    subcarriers per user."""
    counts = np.maximum(F_bin.sum(axis=0), 1.0)
    return F_bin * (0.5 * cfg.p_max_w / counts)[None, :]


def _polish_power(
    F_bin: np.ndarray, cfg: SystemConfig, gain_sq: np.ndarray, criterion: str
):
    """Re-optimize the power against the final binary assignment."""
    if not F_bin.any():
        return np.zeros_like(F_bin)
    P = _equal_split_power(F_bin, cfg)
    if criterion == "sum_rate":
        ctx = SurrogateContext(F_bin, P, gain_sq, cfg.sigma2, cfg.penalty_weight)
        P_new, _ = update_P_maxsr(ctx, cfg)
        return P_new
    for _ in range(10):  # power-only ascent of the min rate, fresh anchor each pass
        ctx = SurrogateContext(F_bin, P, gain_sq, cfg.sigma2, cfg.penalty_weight)
        P_new, _ = update_P_maxmin(ctx, cfg)
        step = float(np.linalg.norm(P_new - P))
        P = P_new
        if step <= cfg.eps_p:
            break
    return P


def _run_bslm(channel, cfg: SystemConfig, criterion: str, rng, init):
    start = time.perf_counter()
    gain_sq = gain_power(channel)
    if gain_sq.shape != (cfg.K, cfg.J):
        raise ValueError(
            f"channel shape {gain_sq.shape} does not match config ({cfg.K}, {cfg.J})"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    F, P = init if init is not None else initial_allocation(cfg, rng)
    F, P = np.asarray(F, dtype=float).copy(), np.asarray(P, dtype=float).copy()
    sigma2, weight = cfg.sigma2, cfg.penalty_weight

    if criterion == "sum_rate":
        update_f, update_p = update_F_maxsr, update_P_maxsr
        penalized = penalized_sum_rate

        def true_objective(Fc, Pc):
            return float(np.log1p((gain_sq * Fc * Pc).sum(axis=1) / sigma2).sum())

    else:
        update_f, update_p = update_F_maxmin, update_P_maxmin
        penalized = penalized_min_rate

        def true_objective(Fc, Pc):
            return float(rates_from_gain_power(gain_sq, Fc, Pc, sigma2).per_user.min())

    trace = BslmTrace()
    for cycle in range(1, cfg.max_cycles + 1):
        ctx = SurrogateContext(F, P, gain_sq, sigma2, weight)
        F_new, res_f = update_f(ctx, cfg)
        ctx_p = SurrogateContext(F_new, P, gain_sq, sigma2, weight)
        P_new, res_p = update_p(ctx_p, cfg)

        d_f = float(np.linalg.norm(F_new - F))
        d_p = float(np.linalg.norm(P_new - P))
        F, P = F_new, P_new
        trace.penalized_objective.append(penalized(gain_sq, F, P, sigma2, weight))
        trace.objective.append(true_objective(F, P))
        trace.delta_f.append(d_f)
        trace.delta_p.append(d_p)
        trace.inner_newton.append(res_f.iterations + res_p.iterations)
        trace.max_residual.append(max_violation(Allocation(F, P), cfg))
        trace.cycles = cycle
        if d_f <= cfg.eps_f or d_p <= cfg.eps_p:
            trace.converged = True
            break

    trace.status = "converged" if trace.converged else "max-cycles"
    F_bin = binarize_and_repair(F, cfg, gain_sq, P, objective=criterion)
    F_bin = _fill_spare_claims(F_bin, cfg, gain_sq, criterion)
    P_fin = _polish_power(F_bin, cfg, gain_sq, criterion)
    trace.final_objective = true_objective(F_bin, P_fin)
    trace.wall_ms = (time.perf_counter() - start) * 1e3
    return Allocation(F_bin, P_fin), trace


def _run_multistart(channel, cfg, criterion, rng, init, restarts, greedy_seed):
    if init is not None:
        return _run_bslm(channel, cfg, criterion, rng, init)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    starts = []
    if greedy_seed:
        starts.append(greedy_softened_init(channel, cfg, criterion))
    while len(starts) < max(restarts, 0) + (1 if greedy_seed else 0) or not starts:
        starts.append(initial_allocation(cfg, rng))
    best = None
    for start in starts:
        alloc, trace = _run_bslm(channel, cfg, criterion, rng, start)
        if best is None or trace.final_objective > best[1].final_objective:
            best = (alloc, trace)
    return best


def run_max_sr(
    channel,
    cfg: SystemConfig,
    rng: Optional[np.random.Generator] = None,
    init=None,
    restarts: int = 1,
    greedy_seed: bool = False,
):
    """Sum-rate allocator: cyclic surrogate block updates from a feasible
    start until neither block moves, then binarize and re-optimize the
    power. Returns (Allocation, BslmTrace); a run that exhausts max_cycles
    is returned with status "max-cycles", never silently.

    ``restarts`` > 1 reruns from fresh random starts and keeps the best
    final objective; ``greedy_seed`` adds the deterministic warm start of
    greedy_softened_init as one more candidate. An explicit ``init``
    bypasses both.
    """
    return _run_multistart(channel, cfg, "sum_rate", rng, init, restarts, greedy_seed)


def run_max_min(
    channel,
    cfg: SystemConfig,
    rng: Optional[np.random.Generator] = None,
    init=None,
    restarts: int = 1,
    greedy_seed: bool = False,
):
    """Fairness allocator: identical loop with the max-min block updates and
    the worst-user rate as the tracked objective."""
    return _run_multistart(channel, cfg, "min_rate", rng, init, restarts, greedy_seed)
