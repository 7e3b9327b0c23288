"""Closed-form and oracle analytics for the clamped-weight distribution.

For La(0, b) weights clamped at the tau quantile Q = -b ln(2 - 2 tau), the
clamped distribution is the interior Laplace density plus two boundary
atoms of mass (1 - tau). This module evaluates, as functions of (b, tau):

  * the quantization error of scaled binarization, in a cubic
    polynomial-log closed form (`qe_closed_form`) and in the equivalent
    pre-simplification arrangement (`qe_unsimplified`);
  * an independent oracle (`qe_oracle`) that evaluates the defining
    integral directly, by adaptive Simpson quadrature over the interior
    plus the analytically-added boundary atoms, or by Monte Carlo over
    clamped inverse-CDF samples;
  * the information entropy of the clamped distribution, closed form and
    quadrature oracle;
  * the derivative factor G(tau) of the closed-form error and its root
    tau* (approximately 0.82), located by bisection, which is where the
    closed-form error curve bottoms out independently of b.

Known discrepancy, pinned by the test suite: the closed-form error
expressions exceed the defining integral by exactly
2 exp(-Q/b) (alpha - b)^2, vanishing at tau = 1. The closed forms are kept
as the curve the clamp schedule reasons about (convex, minimum near 0.82);
the oracle reports the literal integral. Both routes are exposed and the
gap identity is asserted in tests rather than hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .laplace import quantile_from_scale

# Laplace tail exp(-w/b) is below 3e-20 past 45 b; integration cutoff for
# the unclamped (tau = 1) case, far beyond every stated tolerance.
_TAIL_CUTOFF_SCALES = 45.0


def _check_b_tau(b: float, tau: float, tau_max_inclusive: bool = True) -> None:
    if b <= 0.0:
        raise ValueError(f"scale must be positive, got {b}")
    hi_ok = tau <= 1.0 if tau_max_inclusive else tau < 1.0
    if not (0.5 < tau and hi_ok):
        rng = "(0.5, 1]" if tau_max_inclusive else "(0.5, 1)"
        raise ValueError(f"tau must be in {rng}, got {tau}")


def qe_closed_form(b: float, tau: float) -> float:
    """Polynomial-log closed form of the quantization error.

    b^2 (-16 tau^3 + 44 tau^2 - 40 tau - 4 (tau - 1) ln(2 - 2 tau) + 13);
    the log term is taken as its limit 0 at tau = 1 (x ln x -> 0), where
    the expression degenerates to the unclamped error b^2.
    """
    _check_b_tau(b, tau)
    log_term = 0.0 if tau == 1.0 else -4.0 * (tau - 1.0) * math.log(2.0 - 2.0 * tau)
    return b * b * (-16.0 * tau**3 + 44.0 * tau**2 - 40.0 * tau + log_term + 13.0)


def qe_unsimplified(b: float, tau: float) -> float:
    """The same closed form before algebraic simplification.

    (alpha-b)^2 (1 + e^{-Q/b}) + b^2 - ((b+Q)^2 - 2 alpha Q) e^{-Q/b}
    + 2 (1-tau) (Q - alpha)^2, with alpha = b (2 tau - 1). Must agree with
    :func:`qe_closed_form` to floating rounding.
    """
    _check_b_tau(b, tau)
    if tau == 1.0:
        return b * b  # e^{-Q/b} -> 0 and (1 - tau) Q^2 -> 0
    q = quantile_from_scale(b, tau)
    alpha = b * (2.0 * tau - 1.0)
    decay = math.exp(-q / b)
    return ((alpha - b) ** 2 * (1.0 + decay) + b * b
            - ((b + q) ** 2 - 2.0 * alpha * q) * decay
            + 2.0 * (1.0 - tau) * (q - alpha) ** 2)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 60) -> float:
    """Adaptive Simpson quadrature with absolute tolerance.

    Standard interval-halving with the 1/15 Richardson correction; the
    tolerance is split between halves so the total error stays below tol.
    """
    if a == b:
        return 0.0

    def recurse(x0, x2, f0, f1, f2, whole, eps, depth):
        x1 = 0.5 * (x0 + x2)
        xl, xr = 0.5 * (x0 + x1), 0.5 * (x1 + x2)
        fl, fr = f(xl), f(xr)
        left = (x1 - x0) / 6.0 * (f0 + 4.0 * fl + f1)
        right = (x2 - x1) / 6.0 * (f1 + 4.0 * fr + f2)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        return (recurse(x0, x1, f0, fl, f1, left, 0.5 * eps, depth - 1)
                + recurse(x1, x2, f1, fr, f2, right, 0.5 * eps, depth - 1))

    mid = 0.5 * (a + b)
    fa, fm, fb = f(a), f(mid), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return recurse(a, b, fa, fm, fb, whole, tol, max_depth)


def bisect(f: Callable[[float], float], lo: float, hi: float,
           tol: float = 1e-8, max_iter: int = 200) -> float:
    """Bisection root of f on [lo, hi]; requires a sign change."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0 or hi - lo < tol:
            return mid
        if flo * fmid < 0:
            hi = mid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def _interior_bound(b: float, tau: float) -> tuple[float, float]:
    """(Q, boundary atom mass per side); tau = 1 uses the tail cutoff."""
    if tau == 1.0:
        return _TAIL_CUTOFF_SCALES * b, 0.0
    return quantile_from_scale(b, tau), 1.0 - tau


def qe_oracle(b: float, tau: float, method: str = "quadrature",
              n_samples: int = 10_000_000, rng: np.random.Generator | None = None,
              tol: float = 1e-10) -> float:
    """Quantization error straight from its defining integral.

    quadrature: alpha and the error integral are both evaluated by
    adaptive Simpson over the interior density (1/b) e^{-w/b}, with the
    two boundary atoms (mass 1 - tau each) added analytically.

    mc: inverse-CDF Laplace samples are clamped at +-Q; alpha is the
    sample mean magnitude and the error the sample mean of
    (w - alpha sign(w))^2.
    """
    _check_b_tau(b, tau)
    if method == "quadrature":
        q, atom = _interior_bound(b, tau)
        alpha = (adaptive_simpson(lambda w: (w / b) * math.exp(-w / b), 0.0, q, tol)
                 + 2.0 * q * atom)
        interior = adaptive_simpson(
            lambda w: (1.0 / b) * math.exp(-w / b) * (w - alpha) ** 2, 0.0, q, tol)
        return interior + 2.0 * atom * (q - alpha) ** 2
    if method == "mc":
        if rng is None:
            rng = np.random.default_rng(0)
        w = sample_laplace(rng, b, n_samples)
        if tau < 1.0:
            q = quantile_from_scale(b, tau)
            w = np.clip(w, -q, q)
        alpha = np.abs(w).mean()
        signs = np.where(w >= 0, 1.0, -1.0)
        return float(np.mean((w - alpha * signs) ** 2))
    raise ValueError(f"unknown method {method!r}")


def sample_laplace(rng: np.random.Generator, b: float, n: int) -> np.ndarray:
    """Inverse-CDF La(0, b) sampler (independent of numpy's generator)."""
    u = rng.random(n)
    return -b * np.sign(u - 0.5) * np.log1p(-2.0 * np.abs(u - 0.5))


def entropy_closed_form(b: float, tau: float) -> float:
    """Entropy of the clamped distribution: 2 (ln b + 1) tau + ln(2/b) - 1.

    Linear in tau with slope 2 (ln b + 1): decreasing for b < 1/e,
    constant ln 2 at b = 1/e, increasing for b > 1/e. At tau = 1 it is
    the differential entropy of La(0, b), 1 + ln(2 b).
    """
    _check_b_tau(b, tau)
    return 2.0 * (math.log(b) + 1.0) * tau + math.log(2.0 / b) - 1.0


def entropy_oracle(b: float, tau: float, tol: float = 1e-10) -> float:
    """Mixed-entropy quadrature: -integral of f ln f plus the atom term.

    The interior contributes -2 int_0^Q f ln f with f = (1/(2b)) e^{-w/b};
    the two boundary atoms contribute -2 (1 - tau) ln(1 - tau) (taken as
    the limit 0 at tau = 1).
    """
    _check_b_tau(b, tau)
    q, atom = _interior_bound(b, tau)

    def neg_f_ln_f(w: float) -> float:
        f = (0.5 / b) * math.exp(-w / b)
        return -f * math.log(f)

    interior = 2.0 * adaptive_simpson(neg_f_ln_f, 0.0, q, tol)
    discrete = -2.0 * atom * math.log(atom) if atom > 0.0 else 0.0
    return interior + discrete


def g_tau(tau: float) -> float:
    """Derivative factor of the closed-form error curve.

    G(tau) = -12 tau^2 + 22 tau - ln(2 - 2 tau) - 11; the curve's
    derivative in tau equals 4 b^2 G(tau), so its sign pattern (negative
    then positive, one root) is independent of b.
    """
    if not 0.5 < tau < 1.0:
        raise ValueError(f"tau must be in (0.5, 1), got {tau}")
    return -12.0 * tau**2 + 22.0 * tau - math.log(2.0 - 2.0 * tau) - 11.0


def find_tau_star(tol: float = 1e-8) -> float:
    """Bisection root of G on (0.5, 1); the closed-form error minimum.

    G is strictly increasing on the interval (its derivative
    -24 tau + 1/(1 - tau) + 22 is positive there), so the sign change
    guarantees a unique root, approximately 0.82.
    """
    delta = 1e-12
    return bisect(g_tau, 0.5 + delta, 1.0 - delta, tol=tol)


@dataclass(frozen=True)
class AnalysisPoint:
    """One (tau, b) evaluation: bounds, scale factor, error, entropy.

    qe and entropy are the closed forms; the _oracle fields hold the
    quadrature values so curve files carry both routes.
    """

    tau: float
    b: float
    q_tau: float
    alpha: float
    qe: float
    entropy: float
    qe_oracle: float
    entropy_oracle: float


def sweep(b_grid: Sequence[float], tau_grid: Sequence[float]) -> list[AnalysisPoint]:
    """Evaluate closed forms and oracles over the cartesian grid."""
    b_values = [float(b) for b in b_grid]
    tau_values = [float(t) for t in tau_grid]
    if not b_values or not tau_values:
        raise ValueError("grids must be nonempty")
    for b in b_values:
        if b <= 0.0:
            raise ValueError(f"scale must be positive, got {b}")
    for tau in tau_values:
        if not 0.5 < tau <= 1.0:
            raise ValueError(f"tau must be in (0.5, 1], got {tau}")
    points = []
    for b in b_values:
        for tau in tau_values:
            q = math.inf if tau == 1.0 else quantile_from_scale(b, tau)
            points.append(AnalysisPoint(
                tau=tau, b=b, q_tau=q,
                alpha=b * (2.0 * tau - 1.0),
                qe=qe_closed_form(b, tau),
                entropy=entropy_closed_form(b, tau),
                qe_oracle=qe_oracle(b, tau),
                entropy_oracle=entropy_oracle(b, tau)))
    return points
