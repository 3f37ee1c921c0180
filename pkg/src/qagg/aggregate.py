"""Convex aggregation over the simplex and classical selection baselines.

The aggregation weights minimize a penalized unbiased-risk criterion

    H(theta) = Cp(A_theta) + 1/2 sum_j theta_j ||(A_theta - A_j) y||^2

over the probability simplex.  A bias-variance decomposition turns this
into the manifestly convex quadratic program

    H(theta) = 1/2 ||A_theta y - y||^2 + 2 sigma^2 trace(A_theta)
               + 1/2 sum_j theta_j ||A_j y - y||^2,

a QP with M variables and M + 1 linear constraints.  Optimality is
certified by the first-order condition at the simplex vertices:
min_k grad H(theta) . (e_k - theta) >= 0 at a global optimum, and a
negative value bounds the suboptimality gap of any feasible point.

For members sharing one eigenbasis the whole program is assembled in
spectral coordinates, so a solve costs O((n + M) r) per pivot instead
of anything involving dense n x n matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from qagg.smoother import families_of
from qagg.spectral import SpectralFamily, _frozen_array, apply_weights

__all__ = [
    "SimplexWeights",
    "SolveReport",
    "project_to_simplex",
    "member_fits",
    "aggregate_fit",
    "make_weights",
    "cp_criterion",
    "cp_values",
    "q_objective",
    "q_objective_penalized",
    "q_gradient",
    "certify_kkt",
    "solve_q_aggregation",
    "select_cp",
    "select_gcv",
    "exponential_weights",
    "excess_bound_gap",
]

DEFAULT_KKT_TOL = 1e-7

# Relative Tikhonov term added to active-set face systems; keeps the
# face solve unique when near-duplicate members make it singular.
FACE_RIDGE = 1e-10


@dataclass(frozen=True)
class SimplexWeights:
    """A point of the simplex together with the fit it induces.

    Weights are clipped at zero and renormalized to sum exactly to one;
    ``fitted`` caches the aggregated fit sum_j theta_j A_j y and
    ``response`` the vector y it was computed from.
    """

    theta: np.ndarray
    fitted: np.ndarray
    response: np.ndarray | None = None

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if theta.ndim != 1 or theta.size == 0:
            raise ValueError(f"weights must form a nonempty vector, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("weights must be finite")
        if theta.min() < -1e-9:
            raise ValueError(f"weights must be nonnegative, got min {theta.min():.3e}")
        theta = np.clip(theta, 0.0, None)
        total = theta.sum()
        if not total > 0:
            raise ValueError("weights must have positive total mass")
        theta = theta / total
        object.__setattr__(self, "theta", _frozen_array(theta))
        object.__setattr__(self, "fitted", _frozen_array(np.asarray(self.fitted, dtype=float)))
        if self.response is not None:
            object.__setattr__(self, "response", _frozen_array(self.response))

    @property
    def member_count(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class SolveReport:
    """Solver output: weights, objective value and optimality certificate."""

    weights: SimplexWeights
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = idx[u * idx > css][-1]
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def member_fits(family_or_union, y: np.ndarray) -> np.ndarray:
    """Stacked member fits A_j y as an (M, n) matrix, globally indexed."""
    blocks = []
    for fam in families_of(family_or_union):
        z = fam.spectral_coords(y)
        blocks.append((fam.alphas * z) @ fam.basis.T)
    return np.vstack(blocks)


def aggregate_fit(family_or_union, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Aggregated fit sum_j theta_j A_j y across one family or a union."""
    fams = families_of(family_or_union)
    theta = np.asarray(theta, dtype=float)
    total = sum(f.member_count for f in fams)
    if theta.shape != (total,):
        raise ValueError(f"expected {total} weights, got shape {theta.shape}")
    if len(fams) == 1:
        return apply_weights(fams[0], theta, y)
    fit = np.zeros(fams[0].n)
    lo = 0
    for fam in fams:
        hi = lo + fam.member_count
        fit += apply_weights(fam, theta[lo:hi], y)
        lo = hi
    return fit


def make_weights(family_or_union, theta: np.ndarray, y: np.ndarray) -> SimplexWeights:
    """Bundle a weight vector with the fit it induces on response y."""
    return SimplexWeights(
        theta=theta, fitted=aggregate_fit(family_or_union, theta, y), response=y
    )


def df_vector(family_or_union) -> np.ndarray:
    """Degrees of freedom trace(A_j) of every member, globally indexed."""
    return np.concatenate([f.alphas.sum(axis=1) for f in families_of(family_or_union)])


@dataclass(frozen=True)
class _QpData:
    """Spectral assembly of the aggregation QP.

    H(theta) = 1/2 ||phi^T theta - target||^2 + lin . theta + offset with
    lin = 2 sigma^2 df + c / 2 and c_j = ||A_j y - y||^2.  For a single
    shared-basis family phi holds spectral coordinates (target = U^T y,
    offset = ||P_perp y||^2 / 2); for a union phi holds the member fits
    in R^n (target = y, offset = 0).
    """

    phi: np.ndarray
    target: np.ndarray
    offset: float
    df: np.ndarray
    resid_sq: np.ndarray  # c_j = ||A_j y - y||^2
    lin: np.ndarray
    sigma: float
    n: int


def _qp_data(family_or_union, y: np.ndarray, sigma: float) -> _QpData:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    fams = families_of(family_or_union)
    y = np.asarray(y, dtype=float)
    df = np.concatenate([f.alphas.sum(axis=1) for f in fams])
    if len(fams) == 1:
        fam = fams[0]
        z = fam.spectral_coords(y)
        perp = max(float(y @ y - z @ z), 0.0)
        phi = fam.alphas * z
        target = z
        offset = 0.5 * perp
        resid_sq = (fam.alphas - 1.0) ** 2 @ z**2 + perp
    else:
        phi = member_fits(family_or_union, y)
        target = y
        offset = 0.0
        diff = phi - y
        resid_sq = np.einsum("ij,ij->i", diff, diff)
    lin = 2.0 * sigma**2 * df + 0.5 * resid_sq
    return _QpData(
        phi=phi,
        target=target,
        offset=offset,
        df=df,
        resid_sq=resid_sq,
        lin=lin,
        sigma=float(sigma),
        n=fams[0].n,
    )


def cp_values(family_or_union, y: np.ndarray, sigma: float) -> np.ndarray:
    """Unbiased-risk criterion ||A_j y - y||^2 + 2 sigma^2 trace(A_j) per member."""
    qp = _qp_data(family_or_union, y, sigma)
    return qp.resid_sq + 2.0 * sigma**2 * qp.df


def cp_criterion(family: SpectralFamily, j: int, y: np.ndarray, sigma: float) -> float:
    """Criterion value of a single member."""
    values = cp_values(family, y, sigma)
    if not 0 <= int(j) < values.size:
        raise IndexError(f"member index {j} out of range")
    return float(values[int(j)])


def _check_theta(theta, count: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (count,):
        raise ValueError(f"expected weight vector of length {count}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("weights must be finite")
    return theta


def q_objective(family_or_union, theta: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """Convex form of the aggregation objective at theta.

    The formula extends smoothly off the simplex, which is what the
    finite-difference gradient checks differentiate.
    """
    qp = _qp_data(family_or_union, y, sigma)
    theta = _check_theta(theta, qp.lin.size)
    r = qp.phi.T @ theta - qp.target
    return float(0.5 * r @ r + qp.lin @ theta + qp.offset)


def q_objective_penalized(
    family_or_union, theta: np.ndarray, y: np.ndarray, sigma: float
) -> float:
    """Penalized form Cp(A_theta) + 1/2 sum_j theta_j ||(A_theta - A_j) y||^2.

    Computed from member fits in R^n, independently of the spectral
    shortcut used by :func:`q_objective`; the two must agree on the
    simplex.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    fits = member_fits(family_or_union, y)
    theta = _check_theta(theta, fits.shape[0])
    y = np.asarray(y, dtype=float)
    fit = fits.T @ theta
    df = df_vector(family_or_union)
    cp_at_theta = float((fit - y) @ (fit - y)) + 2.0 * sigma**2 * float(df @ theta)
    gaps = fits - fit
    penalty = 0.5 * float(theta @ np.einsum("ij,ij->i", gaps, gaps))
    return cp_at_theta + penalty


def q_gradient(family_or_union, theta: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    """Analytic gradient of the convex objective form."""
    qp = _qp_data(family_or_union, y, sigma)
    theta = _check_theta(theta, qp.lin.size)
    return qp.phi @ (qp.phi.T @ theta - qp.target) + qp.lin


def certify_kkt(family_or_union, theta: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """Vertex-direction optimality certificate min_k grad H(theta) . (e_k - theta).

    Nonnegative at a global optimum of the convex program; a negative
    value is a bound on how far theta is from optimal.
    """
    g = q_gradient(family_or_union, theta, y, sigma)
    theta = np.asarray(theta, dtype=float)
    return float(g.min() - g @ theta)


def _solve_face(phi, pt, lin, support, ridge):
    """Minimize the objective on one face (support fixed, weights summing to one)."""
    S = np.asarray(support)
    k = len(S)
    KKT = np.empty((k + 1, k + 1))
    Q = phi[S] @ phi[S].T
    Q[np.diag_indices(k)] += ridge
    KKT[:k, :k] = Q
    KKT[:k, k] = 1.0
    KKT[k, :k] = 1.0
    KKT[k, k] = 0.0
    rhs = np.empty(k + 1)
    rhs[:k] = pt[S] - lin[S]
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    return sol[:k]


def _polish_face(phi, pt, lin, support):
    """Exact (unregularized) re-solve of the terminal face; None if infeasible."""
    S = np.asarray(support)
    k = len(S)
    KKT = np.zeros((k + 1, k + 1))
    KKT[:k, :k] = phi[S] @ phi[S].T
    KKT[:k, k] = 1.0
    KKT[k, :k] = 1.0
    rhs = np.empty(k + 1)
    rhs[:k] = pt[S] - lin[S]
    rhs[k] = 1.0
    sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    cand = sol[:k]
    if cand.min() < -1e-12 or cand.sum() <= 0:
        return None
    cand = np.clip(cand, 0.0, None)
    return cand / cand.sum()


def _solve_simplex_qp(phi, target, lin, kkt_tol, max_pivots):
    """Active-set solve of min 1/2 ||phi^T th - target||^2 + lin . th over the simplex.

    Pivots one member at a time starting from the best vertex, solving
    each face through its KKT system and pruning coordinates that are
    driven negative.  Finite and exact up to the face-system ridge; the
    returned certificate is evaluated on the unmodified objective.
    """
    M = phi.shape[0]
    pt = phi @ target
    sqn = np.einsum("ij,ij->i", phi, phi)
    ridge = FACE_RIDGE * max(float(sqn.max()), 1.0)
    support = [int(np.argmin(0.5 * sqn - pt + lin))]
    theta_s = np.ones(1)
    pivots = 0
    converged = False

    def evaluate(support, theta_s):
        S = np.asarray(support)
        resid = phi[S].T @ theta_s - target
        g = phi @ resid + lin
        fval = 0.5 * float(resid @ resid) + float(lin[S] @ theta_s)
        res = float(g.min() - g[S] @ theta_s)
        return g, fval, res

    for _ in range(max_pivots):
        pivots += 1
        th_new = _solve_face(phi, pt, lin, support, ridge)
        prune_guard = 0
        while th_new.min() < -1e-12 and len(support) > 1 and prune_guard <= 2 * M + 10:
            prune_guard += 1
            neg = th_new < 1e-15
            denom = theta_s[neg] - th_new[neg]
            # a coordinate already at zero contributes a zero-length step
            ratio = np.where(denom > 1e-300, theta_s[neg] / np.maximum(denom, 1e-300), 0.0)
            a = max(0.0, min(1.0, float(ratio.min())))
            theta_s = theta_s + a * (th_new - theta_s)
            keep = theta_s > 1e-12
            if keep.all():
                keep[np.argmin(theta_s)] = False
            if not keep.any():
                keep[np.argmax(theta_s)] = True
            support = [s for s, k_ in zip(support, keep) if k_]
            theta_s = theta_s[keep]
            theta_s = theta_s / theta_s.sum()
            th_new = _solve_face(phi, pt, lin, support, ridge)
        theta_s = np.clip(th_new, 0.0, None)
        mass = theta_s.sum()
        if mass > 0:
            theta_s = theta_s / mass
        else:  # degenerate face solve: fall back to the flat face point
            theta_s = np.full(len(support), 1.0 / len(support))
        g, fval, res = evaluate(support, theta_s)
        if res >= -kkt_tol * (1.0 + abs(fval)):
            converged = True
            break
        jadd = int(np.argmin(g))
        if jadd in support:
            break  # face system too ill-conditioned to make progress
        support.append(jadd)
        theta_s = np.append(theta_s, 0.0)

    polished = _polish_face(phi, pt, lin, support)
    if polished is not None:
        g, fval_p, res_p = evaluate(support, polished)
        if res_p > res:
            theta_s, fval, res = polished, fval_p, res_p
            converged = res >= -kkt_tol * (1.0 + abs(fval))

    theta = np.zeros(M)
    theta[np.asarray(support)] = theta_s
    return theta, fval, res, pivots, converged


def solve_q_aggregation(
    family_or_union,
    y: np.ndarray,
    sigma: float,
    *,
    kkt_tol: float = DEFAULT_KKT_TOL,
    max_iters: int = 10_000,
) -> SolveReport:
    """Solve the aggregation program and certify the result.

    Convergence means kkt_residual >= -kkt_tol * (1 + |objective|); on
    non-convergence within the pivot budget the best iterate is
    returned with ``converged=False``.
    """
    qp = _qp_data(family_or_union, y, sigma)
    max_pivots = min(3 * qp.lin.size + 100, max_iters)
    theta, fval, res, pivots, converged = _solve_simplex_qp(
        qp.phi, qp.target, qp.lin, kkt_tol, max_pivots
    )
    return SolveReport(
        weights=make_weights(family_or_union, theta, y),
        objective=float(fval + qp.offset),
        kkt_residual=res,
        iterations=pivots,
        converged=converged,
    )


def select_cp(family_or_union, y: np.ndarray, sigma: float) -> int:
    """Index of the member with the smallest criterion; ties to the smallest index."""
    return int(np.argmin(cp_values(family_or_union, y, sigma)))


def select_gcv(family_or_union, y: np.ndarray, tol: float | None = None) -> int:
    """Generalized cross-validation selection.

    Minimizes ||A_j y - y||^2 / (n - trace A_j)^2; members whose trace
    comes within tol of n are excluded with a warning because the
    denominator degenerates.
    """
    fams = families_of(family_or_union)
    n = fams[0].n
    if tol is None:
        tol = 1e-8 * n
    df = df_vector(family_or_union)
    y = np.asarray(y, dtype=float)
    blocks = []
    for fam in fams:
        z = fam.spectral_coords(y)
        perp = max(float(y @ y - z @ z), 0.0)
        blocks.append((fam.alphas - 1.0) ** 2 @ z**2 + perp)
    resid_sq = np.concatenate(blocks)
    degenerate = df >= n - tol
    for j in np.flatnonzero(degenerate):
        warnings.warn(
            f"excluding member {j} from GCV selection: trace {df[j]:.6g} "
            f"leaves a degenerate denominator (n = {n})",
            RuntimeWarning,
            stacklevel=2,
        )
    if degenerate.all():
        raise ValueError("every member has trace within tol of n; GCV is undefined")
    scores = np.full(df.size, np.inf)
    scores[~degenerate] = resid_sq[~degenerate] / (n - df[~degenerate]) ** 2
    return int(np.argmin(scores))


def exponential_weights(
    family_or_union, y: np.ndarray, sigma: float, temperature: float | None = None
) -> SimplexWeights:
    """Softmax weights theta_j proportional to exp(-Cp_j / temperature).

    The default temperature is 4 sigma^2.  Guarded against overflow by
    subtracting the best criterion value before exponentiating.
    """
    if temperature is None:
        temperature = 4.0 * sigma**2
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature!r}")
    cp = cp_values(family_or_union, y, sigma)
    w = np.exp(-(cp - cp.min()) / temperature)
    return make_weights(family_or_union, w / w.sum(), y)


def excess_bound_gap(
    family_or_union, theta: np.ndarray, y: np.ndarray, sigma: float, mu: np.ndarray
) -> float:
    """Worst-case slack of the pointwise excess-risk bound at theta.

    For every reference member k the excess ||A_theta y - mu||^2 -
    ||A_k y - mu||^2 is bounded by
    max_j (2 eps^T (A_j - A_k) y - 2 sigma^2 tr(A_j - A_k)
           - ||(A_j - A_k) y||^2 / 2) plus the optimality slack of
    theta.  Returns max_k (excess_k - bound_k); at a certified optimum
    this is at most -kkt_residual up to rounding.
    """
    fits = member_fits(family_or_union, y)
    theta = _check_theta(theta, fits.shape[0])
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    eps = y - mu
    fit = fits.T @ theta
    df = df_vector(family_or_union)
    loss_theta = float((fit - mu) @ (fit - mu))
    diffs = fits - mu
    losses = np.einsum("ij,ij->i", diffs, diffs)
    proj = fits @ eps
    gram = fits @ fits.T
    sq = np.diag(gram)
    pair_sq = sq[:, None] + sq[None, :] - 2.0 * gram
    # a[j, k] = 2 eps.(f_j - f_k) - 2 sigma^2 (df_j - df_k) - ||f_j - f_k||^2 / 2
    row = proj - sigma**2 * df
    a = 2.0 * (row[:, None] - row[None, :]) - 0.5 * pair_sq
    bound = a.max(axis=0)
    excess = loss_theta - losses
    return float((excess - bound).max())
