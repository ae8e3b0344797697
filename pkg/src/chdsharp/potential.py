"""Double-well potentials, the capped Modica-Mortola transform and its constants.

The shipped potential is the normalized quartic ``a (1 - s^2)^2`` with
``a = 9/32``, the unique scale for which ``int_{-1}^{1} sqrt(2 Psi) = 1``.  The
transform

    W(y) = int_{-1}^{y} sqrt(2 Psi~(s)) ds,   Psi~ = min(Psi, 1 + s^2)

is tabulated once per potential (Gauss-Legendre on a 1e-3 grid that also
contains every kink of the integrand) so that array evaluation is cheap.  A
scalar reference path using adaptive quadrature is kept alongside it; the two
are compared in the test suite.

None of the inequality constants are hard-coded: :func:`discover_constants`
finds them by brute-force scans and checks them on finer grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from chdsharp.errors import ConfigError, VerificationError

QUARTIC_SCALE = 9.0 / 32.0


def _quartic_psi(a: float, y):
    return a * (1.0 - y * y) ** 2


def _quartic_dpsi(a: float, y):
    return 4.0 * a * (y * y * y - y)


def _quartic_ddpsi(a: float, y):
    return 4.0 * a * (3.0 * y * y - 1.0)


@dataclass(frozen=True)
class DoubleWell:
    """A potential together with its first two derivatives.

    The callables must accept numpy arrays.  ``q`` is the growth exponent
    in the lower bound ``Psi''(y) >= c0 |y|^(q-2)``.
    """

    psi: Callable
    dpsi: Callable
    ddpsi: Callable
    q: float = 4.0
    name: str = "custom"

    @classmethod
    def quartic(cls, scale: float = QUARTIC_SCALE) -> DoubleWell:
        if not scale > 0:
            raise ConfigError(f"potential scale must be positive, got {scale}")
        return cls(partial(_quartic_psi, scale), partial(_quartic_dpsi, scale),
                   partial(_quartic_ddpsi, scale), q=4.0, name=f"quartic(a={scale:.17g})")

    def psi_tilde(self, y):
        return np.minimum(self.psi(y), 1.0 + np.square(y))

    def surface_tension(self) -> float:
        """``int_{-1}^{1} sqrt(2 Psi)``; equals 1 for a normalized well."""
        val, _ = integrate.quad(lambda s: math.sqrt(2.0 * max(float(self.psi(s)), 0.0)),
                                -1.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
        return val


def psi_tilde(well: DoubleWell, y):
    """``min(Psi(y), 1 + y^2)``."""
    return well.psi_tilde(y)


def _cap_switch_points(well: DoubleWell, lo: float = 1.0, hi: float = 50.0,
                       n: int = 20001) -> list[float]:
    """Points with |s| >= 1 where ``Psi`` crosses the cap ``1 + s^2``."""
    out = []
    for sign in (1.0, -1.0):
        s = sign * np.linspace(lo, hi, n)
        g = well.psi(s) - (1.0 + s * s)
        idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
        for k in idx:
            f = lambda t: float(well.psi(t) - (1.0 + t * t))
            out.append(optimize.brentq(f, s[k], s[k + 1], xtol=1e-15, rtol=1e-15))
    return sorted(out)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _antideriv_cap(s):
    """Antiderivative of ``sqrt(2 (1 + s^2))``."""
    s = np.asarray(s, dtype=float)
    return math.sqrt(2.0) * 0.5 * (s * np.sqrt(1.0 + s * s) + np.arcsinh(s))


@dataclass
class WTransform:
    """Tabulated ``W`` with a scalar adaptive-quadrature reference.

    Parameters
    ----------
    well:
        The potential whose capped version is integrated.
    radius:
        Half-width of the tabulated interval.  Outside it the cap must be the
        active branch of the minimum (checked), so the tail is closed-form.
    step:
        Nominal spacing of the table nodes.
    """

    well: DoubleWell
    radius: float = 8.0
    step: float = 1e-3
    kinks: list[float] = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        R = self.radius
        self.kinks = sorted(set([-1.0, 1.0] + _cap_switch_points(self.well)))
        probe = np.array([-R, R])
        if np.any(self.well.psi(probe) < 1.0 + probe ** 2):
            raise ConfigError("W table radius too small: the cap is not active at its ends")
        if any(abs(k) >= R for k in self.kinks):
            raise ConfigError("W table radius must exceed every kink of the capped potential")
        base = np.linspace(-R, R, int(round(2 * R / self.step)) + 1)
        nodes = np.union1d(base, np.array(self.kinks))
        # drop base nodes that sit within roundoff of an inserted kink
        keep = np.ones(nodes.size, dtype=bool)
        gaps = np.diff(nodes)
        keep[1:] = gaps > 1e-12
        self.nodes = nodes[keep]
        a, b = self.nodes[:-1], self.nodes[1:]
        seg = self._gl(a, b)
        table = np.concatenate([[0.0], np.cumsum(seg)])
        # anchor W(-1) = 0
        i_m1 = int(np.argmin(np.abs(self.nodes + 1.0)))
        self.table = table - table[i_m1]

    def _integrand(self, s):
        return np.sqrt(2.0 * np.maximum(self.well.psi_tilde(s), 0.0))

    def _gl(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        pts = mid[..., None] + half[..., None] * _GL_X
        return half * (self._integrand(pts) @ _GL_W)

    def __call__(self, y):
        return self.w_array(y)

    def w_array(self, y):
        """Vectorized ``W``; agrees with :meth:`w_of` to about 1e-12."""
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        out = np.empty_like(flat)
        R = self.radius
        inside = np.abs(flat) <= R
        yi = flat[inside]
        idx = np.clip(np.searchsorted(self.nodes, yi, side="right") - 1, 0, self.nodes.size - 2)
        out[inside] = self.table[idx] + self._gl(self.nodes[idx], yi)
        hi = flat > R
        out[hi] = self.table[-1] + _antideriv_cap(flat[hi]) - _antideriv_cap(R)
        lo = flat < -R
        out[lo] = self.table[0] - (_antideriv_cap(-R) - _antideriv_cap(flat[lo]))
        if y.ndim == 0:
            return float(out[0])
        return out.reshape(y.shape)

    def w_of(self, y: float) -> float:
        """Reference value of ``W(y)`` by adaptive quadrature (tolerance 1e-12)."""
        y = float(y)
        lo, hi = (-1.0, y) if y >= -1.0 else (y, -1.0)
        pts = [k for k in self.kinks if lo < k < hi]
        f = lambda s: math.sqrt(2.0 * max(float(self.well.psi_tilde(s)), 0.0))
        val, _ = integrate.quad(f, lo, hi, points=pts or None, epsabs=1e-12, epsrel=1e-13,
                                limit=500)
        return val if y >= -1.0 else -val

    def derivative(self, y):
        return self._integrand(np.asarray(y, dtype=float))

    def w_inv(self, z: float, tol: float = 1e-12) -> float:
        """Solve ``W(y) = z`` by bracketed bisection with a Newton polish."""
        z = float(z)
        if not math.isfinite(z):
            raise ConfigError("w_inv needs a finite argument")
        lo, hi = -1.0, 1.0
        width = 1.0
        while self.w_array(lo) > z:
            width *= 2.0
            lo = -1.0 - width
        width = 1.0
        while self.w_array(hi) < z:
            width *= 2.0
            hi = 1.0 + width
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.w_array(mid) < z:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-6:
                break
        y = 0.5 * (lo + hi)
        for _ in range(50):
            r = self.w_array(y) - z
            if abs(r) <= tol:
                break
            d = float(self.derivative(y))
            y_new = y - r / d if d > 0 else 0.5 * (lo + hi)
            if not lo <= y_new <= hi:
                # fall back to bisection where W' vanishes (y = +-1)
                y_new = 0.5 * (lo + hi)
            if self.w_array(y_new) < z:
                lo = y_new
            else:
                hi = y_new
            y = y_new
        return y


@dataclass
class ConstantsReport:
    """Constants found by brute force, plus the evidence that they hold."""

    C0: float
    C1: float
    c0: float
    k0: float
    k1: float
    q: float
    C0_argmax: float
    C1_argmin: tuple[float, float]
    c0_points: int
    c0_violations: int
    c1_pairs: int
    c1_lower_violations: int
    c1_upper_violations: int

    def __iter__(self):
        yield self.C0
        yield self.C1

    @property
    def ok(self) -> bool:
        return (self.c0_violations == 0 and self.c1_lower_violations == 0
                and self.c1_upper_violations == 0)


def _c0_ratio(well: DoubleWell, y: np.ndarray) -> np.ndarray:
    """``(|y| - 1)^2 / Psi(y)`` with the second-derivative limit at the wells."""
    num = (np.abs(y) - 1.0) ** 2
    den = well.psi(y)
    out = np.empty_like(y)
    near = np.abs(np.abs(y) - 1.0) < 1e-6
    out[~near] = num[~near] / den[~near]
    out[near] = 2.0 / well.ddpsi(np.sign(y[near]))
    return out


def _scan_growth_c0(well: DoubleWell, ymax: float = 50.0) -> float:
    """Largest ``c`` on a 1e-3 grid with ``Psi'' >= c |y|^(q-2)`` for ``|y| > 1 - c``."""
    y = np.linspace(0.0, ymax, 200001)
    y = np.concatenate([-y[::-1], y])
    lhs = well.ddpsi(y)
    ay = np.abs(y)
    keep = ay > 0.0
    ay, lhs = ay[keep], lhs[keep]
    order = np.argsort(ay, kind="stable")
    ay = ay[order]
    ratio = lhs[order] / ay ** (well.q - 2.0)
    # tail[k] = min of the ratio over the k-th smallest |y| and everything above it
    tail = np.minimum.accumulate(ratio[::-1])[::-1]
    tail = np.append(tail, np.inf)
    for c in np.arange(0.999, 0.0, -1e-3):
        if tail[np.searchsorted(ay, 1.0 - c, side="right")] >= c:
            return float(c)
    return 0.0


def _scan_k(well: DoubleWell, c0: float) -> tuple[float, float]:
    big = 1e3
    k0 = 0.5 * float(min(well.psi(big), well.psi(-big))) / big ** well.q
    y = np.linspace(1.0 - c0, 50.0, 200001)
    y = np.concatenate([-y[::-1], y])
    gap = k0 * np.abs(y) ** well.q - well.psi(y)
    k1 = max(float(gap.max()), 0.0) * (1.0 + 1e-9) + 1e-15
    return k0, k1


def discover_constants(well: DoubleWell | None = None, wt: WTransform | None = None,
                       pairs: int = 10_000, seed: int = 20240611) -> ConstantsReport:
    """Brute-force the constants of the two potential inequalities and verify them.

    ``C0`` maximizes ``(|y|-1)^2 / Psi`` and ``C1`` minimizes
    ``|W(y1) - W(y2)| / |y1 - y2|^2`` over a 1e-3 grid on ``[-3, 3]``.  Both are
    then checked on a 1e-4 grid, on random pairs, on near-diagonal
    fine pairs and on pairs straddling the wells.

    Raises
    ------
    VerificationError
        If a discovered constant fails its own verification.
    """
    well = well or DoubleWell.quartic()
    wt = wt or WTransform(well)
    y = np.linspace(-3.0, 3.0, 6001)

    r0 = _c0_ratio(well, y)
    i0 = int(np.argmax(r0))
    C0 = float(r0[i0]) * (1.0 + 1e-6)

    W = wt.w_array(y)
    C1_raw = math.inf
    arg = (0.0, 0.0)
    for i in range(y.size - 1):
        d = y[i + 1:] - y[i]
        r = (W[i + 1:] - W[i]) / (d * d)
        j = int(np.argmin(r))
        if r[j] < C1_raw:
            C1_raw = float(r[j])
            arg = (float(y[i]), float(y[i + 1 + j]))
    C1 = C1_raw * (1.0 - 1e-3)

    yf = np.linspace(-3.0, 3.0, 60001)
    lhs = (np.abs(yf) - 1.0) ** 2
    v21 = int(np.count_nonzero(lhs > C0 * well.psi(yf)))

    rng = np.random.default_rng(seed)
    y1 = rng.uniform(-3.0, 3.0, pairs)
    y2 = rng.uniform(-3.0, 3.0, pairs)
    # near-diagonal pairs on the fine grid and pairs straddling the wells
    base = rng.uniform(-3.0, 3.0, 2000)
    gap = rng.uniform(1e-4, 1e-2, 2000)
    mid = np.repeat([-1.0, 1.0], 1000) + rng.uniform(-2e-3, 2e-3, 2000)
    half = rng.uniform(1e-5, 1e-2, 2000)
    a = np.concatenate([y1, base, mid - half])
    b = np.concatenate([y2, base + gap, mid + half])
    sel = a != b
    a, b = a[sel], b[sel]
    dW = np.abs(wt.w_array(a) - wt.w_array(b))
    d = np.abs(a - b)
    low_v = int(np.count_nonzero(dW < C1 * d * d))
    up_v = int(np.count_nonzero(dW > math.sqrt(2.0) * d * (1.0 + np.abs(a) + np.abs(b))))

    c0 = _scan_growth_c0(well)
    k0, k1 = _scan_k(well, c0)
    rep = ConstantsReport(C0=C0, C1=C1, c0=c0, k0=k0, k1=k1, q=well.q,
                          C0_argmax=float(y[i0]), C1_argmin=arg,
                          c0_points=yf.size, c0_violations=v21,
                          c1_pairs=int(a.size), c1_lower_violations=low_v,
                          c1_upper_violations=up_v)
    if not rep.ok:
        raise VerificationError(
            f"discovered constants fail verification: C0 violations={v21}, "
            f"C1 violations={low_v}, upper-bound violations={up_v}")
    if not (C1 > 0 and c0 > 0 and k0 > 0):
        raise VerificationError("a discovered constant is not positive")
    return rep


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def property_suite(well: DoubleWell | None = None, with_constants: bool = True
                   ) -> tuple[list[CheckResult], ConstantsReport | None]:
    """Run the potential checks used by the ``check`` command."""
    well = well or DoubleWell.quartic()
    out: list[CheckResult] = []
    st = well.surface_tension()
    out.append(CheckResult("normalization", abs(st - 1.0) <= 1e-8,
                           f"int sqrt(2 Psi) over [-1,1] = {st:.12f}"))
    s = np.linspace(-5.0, 5.0, 100001)
    out.append(CheckResult("nonnegative", bool(np.all(well.psi(s) >= 0.0)), "scan on [-5,5]"))
    wells = np.array([-1.0, 1.0])
    out.append(CheckResult("minima at +-1", bool(np.all(np.abs(well.psi(wells)) <= 1e-14)
                                                  and np.all(np.abs(well.dpsi(wells)) <= 1e-14)),
                           "Psi(+-1) = Psi'(+-1) = 0"))
    u = np.linspace(-1.0, 1.0, 20001)
    out.append(CheckResult("cap on [-1,1]", bool(np.all(well.psi(u) <= 1.0 + u * u)),
                           "Psi(y) <= 1 + y^2"))
    out.append(CheckResult("growth exponent", well.q >= 4.0, f"q = {well.q:g}"))
    rep = None
    if with_constants:
        try:
            rep = discover_constants(well)
            out.append(CheckResult("constants C0, C1", True,
                                   f"C0 = {rep.C0:.6f}, C1 = {rep.C1:.6f}, "
                                   f"{rep.c0_points} points, {rep.c1_pairs} pairs"))
            out.append(CheckResult("growth constants", True,
                                   f"c0 = {rep.c0:.3f}, k0 = {rep.k0:.6f}, k1 = {rep.k1:.6f}"))
        except (VerificationError, ConfigError) as exc:
            out.append(CheckResult("constants C0, C1", False, str(exc)))
    return out, rep
