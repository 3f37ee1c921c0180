"""Ordered-smoother axiom checks, exact risks and the risk metric.

Risks here are exact expectations under the Gaussian mean model
y = mu + eps, eps ~ N(0, sigma^2 I):

    E ||A y - mu||^2 = sigma^2 ||A||_F^2 + ||(A - I) mu||^2

evaluated spectrally for families in shared-eigenbasis form.  The same
module validates the defining axioms of an ordered family on arbitrary
dense matrices: spectra in [0, 1], pairwise commutation, and pairwise
comparability in the positive-semidefinite order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qagg.spectral import SpectralFamily, _frozen_array

__all__ = [
    "GroundTruth",
    "FamilyUnion",
    "OrderedCheckReport",
    "check_ordered",
    "families_of",
    "member_count",
    "exact_risk",
    "member_risks",
    "pair_distance",
    "oracle_index",
]


@dataclass(frozen=True)
class GroundTruth:
    """Unknown mean and noise level of the Gaussian mean model."""

    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mu.shape}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        object.__setattr__(self, "mu", _frozen_array(mu))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class FamilyUnion:
    """Candidate set formed by several ordered families on one response space.

    Each member family keeps its own eigenbasis; members are indexed
    globally by concatenating the families in order.
    """

    families: tuple[SpectralFamily, ...]

    def __post_init__(self):
        families = tuple(self.families)
        if not families:
            raise ValueError("a family union needs at least one family")
        ids = [f.family_id for f in families]
        if len(set(ids)) != len(ids):
            raise ValueError(f"family ids must be distinct, got {ids}")
        n = families[0].n
        if any(f.n != n for f in families):
            raise ValueError("all families in a union must share the response dimension")
        object.__setattr__(self, "families", families)

    @property
    def q(self) -> int:
        return len(self.families)

    @property
    def n(self) -> int:
        return self.families[0].n

    @property
    def member_count(self) -> int:
        return sum(f.member_count for f in self.families)

    def locate(self, j: int) -> tuple[SpectralFamily, int]:
        """Map a global member index to (family, local index)."""
        j = int(j)
        if j < 0:
            raise IndexError(f"member index {j} out of range")
        for fam in self.families:
            if j < fam.member_count:
                return fam, j
            j -= fam.member_count
        raise IndexError("member index out of range for union")


def families_of(obj) -> tuple[SpectralFamily, ...]:
    """Normalize a SpectralFamily or FamilyUnion to a tuple of families."""
    if isinstance(obj, SpectralFamily):
        return (obj,)
    if isinstance(obj, FamilyUnion):
        return obj.families
    raise TypeError(f"expected SpectralFamily or FamilyUnion, got {type(obj).__name__}")


def member_count(obj) -> int:
    return sum(f.member_count for f in families_of(obj))


@dataclass(frozen=True)
class OrderedCheckReport:
    """Per-axiom outcome of an ordered-family check on dense matrices."""

    shrinkage_ok: bool  # axiom (i): symmetric with spectrum in [0, 1]
    commute_ok: bool  # axiom (ii): pairwise commutation
    comparable_ok: bool  # axiom (iii): pairwise PSD comparability
    tol: float
    failures: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.shrinkage_ok and self.commute_ok and self.comparable_ok


def check_ordered(matrices, tol: float | None = None) -> OrderedCheckReport:
    """Check the three ordered-family axioms on a list of square matrices.

    (i) each matrix is symmetric with eigenvalues in [-tol, 1 + tol],
    (ii) every pair commutes up to tol in Frobenius norm,
    (iii) for every pair, one of the two differences is PSD up to -tol.

    When tol is None it defaults to 1e-8 times the largest eigenvalue
    scale of the (symmetrized) inputs.
    """
    mats = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
    if not mats:
        raise ValueError("need at least one matrix to check")
    n = mats[0].shape[0]
    for A in mats:
        if A.shape != (n, n):
            raise ValueError(
                f"all matrices must be square of equal size, got {A.shape} vs ({n}, {n})"
            )
    sym = [0.5 * (A + A.T) for A in mats]
    spectra = [np.linalg.eigvalsh(S) for S in sym]
    if tol is None:
        scale = max(1.0, max(float(np.abs(w).max()) for w in spectra))
        tol = 1e-8 * scale
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol!r}")

    failures: list[str] = []
    shrinkage_ok = True
    for idx, (A, w) in enumerate(zip(mats, spectra)):
        asym = float(np.abs(A - A.T).max())
        if asym > tol:
            shrinkage_ok = False
            failures.append(f"axiom (i): matrix {idx} is not symmetric (|A-A^T| = {asym:.3e})")
        if w[0] < -tol or w[-1] > 1.0 + tol:
            shrinkage_ok = False
            failures.append(
                f"axiom (i): matrix {idx} has spectrum [{w[0]:.6g}, {w[-1]:.6g}] outside [0, 1]"
            )

    commute_ok = True
    comparable_ok = True
    for j in range(len(mats)):
        for k in range(j + 1, len(mats)):
            comm = float(np.linalg.norm(mats[j] @ mats[k] - mats[k] @ mats[j], "fro"))
            if comm > tol:
                commute_ok = False
                failures.append(
                    f"axiom (ii): matrices {j} and {k} do not commute (||[A,B]||_F = {comm:.3e})"
                )
            diff = sym[k] - sym[j]
            w = np.linalg.eigvalsh(diff)
            if w[0] < -tol and -w[-1] < -tol:
                comparable_ok = False
                failures.append(
                    f"axiom (iii): matrices {j} and {k} are not comparable "
                    f"(min eig of both differences: {w[0]:.3e}, {-w[-1]:.3e})"
                )
    return OrderedCheckReport(
        shrinkage_ok=shrinkage_ok,
        commute_ok=commute_ok,
        comparable_ok=comparable_ok,
        tol=float(tol),
        failures=tuple(failures),
    )


def _risks_one_family(family: SpectralFamily, truth: GroundTruth) -> np.ndarray:
    if truth.n != family.n:
        raise ValueError(
            f"truth dimension {truth.n} does not match family dimension {family.n}"
        )
    m = family.basis.T @ truth.mu
    perp = float(truth.mu @ truth.mu - m @ m)
    variance = truth.sigma**2 * (family.alphas**2).sum(axis=1)
    bias = (family.alphas - 1.0) ** 2 @ m**2 + max(perp, 0.0)
    return variance + bias


def exact_risk(family: SpectralFamily, j: int, truth: GroundTruth) -> float:
    """Exact prediction risk E ||A_j y - mu||^2 of one member."""
    risks = _risks_one_family(family, truth)
    if not 0 <= int(j) < family.member_count:
        raise IndexError(f"member index {j} out of range")
    return float(risks[int(j)])


def member_risks(family_or_union, truth: GroundTruth) -> np.ndarray:
    """Exact risks of every member, globally indexed."""
    return np.concatenate(
        [_risks_one_family(f, truth) for f in families_of(family_or_union)]
    )


def pair_distance(family: SpectralFamily, j: int, k: int, truth: GroundTruth) -> float:
    """Metric d(A_j, A_k) = sqrt(sigma^2 ||A_j - A_k||_F^2 + ||(A_j - A_k) mu||^2)."""
    M = family.member_count
    if not (0 <= int(j) < M and 0 <= int(k) < M):
        raise IndexError(f"member index pair ({j}, {k}) out of range")
    if truth.n != family.n:
        raise ValueError(
            f"truth dimension {truth.n} does not match family dimension {family.n}"
        )
    delta = family.alphas[int(j)] - family.alphas[int(k)]
    m = family.basis.T @ truth.mu
    return float(np.sqrt(truth.sigma**2 * (delta @ delta) + delta**2 @ m**2))


def oracle_index(family_or_union, truth: GroundTruth) -> tuple[int, float]:
    """Member with minimal exact risk and that risk R*; ties go to the smallest index."""
    risks = member_risks(family_or_union, truth)
    j_star = int(np.argmin(risks))
    return j_star, float(risks[j_star])
