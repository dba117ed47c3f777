"""Composition-operator norms and eigenvalue transfer under quasiconformal maps.

Given the analytic data of a K-quasiconformal homeomorphism (distortion
coefficient, operator-norm derivative samples or a closed form, Jacobians,
integrability exponent), these operations push Poincare constants and
Neumann eigenvalue bounds from a base domain to its image. Every transfer
returns its full factor chain so the product can be recomputed by an
auditor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .poincare import PoincareBound, pi_p

Q_GRID_SIZE = 64
QC_SLACK = 1e-9  # additive slack for the pointwise distortion check

# first positive zero of the derivative of the first-kind Bessel function
# of order one; its square is the first nontrivial Neumann eigenvalue of
# the planar unit disk
BESSEL_J1_PRIME_FIRST_ZERO = 1.84118


class TransferError(ValueError):
    """Invalid transfer input (exponent ranges, missing derivative data, ...)."""


@dataclass(frozen=True)
class ClosedFormDerivative:
    """Constant derivative data: operator norm and Jacobian magnitude."""

    op_norm: float
    jacobian: float

    def __post_init__(self) -> None:
        if self.op_norm <= 0.0 or self.jacobian <= 0.0:
            raise TransferError("closed-form derivative data must be positive")


@dataclass(frozen=True)
class SampledDerivative:
    """Quadrature samples of |D phi| and |J| over the base domain."""

    weights: np.ndarray
    dphi: np.ndarray
    jac: np.ndarray
    nodes: np.ndarray | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        d = np.asarray(self.dphi, dtype=float)
        j = np.asarray(self.jac, dtype=float)
        if not (len(w) == len(d) == len(j)) or len(w) == 0:
            raise TransferError("sampled derivative arrays must share a positive length")
        if np.any(w <= 0.0):
            raise TransferError("quadrature weights must be positive")
        if np.any(j <= 0.0):
            raise TransferError("Jacobian samples must be positive (orientation fixed)")
        if np.any(d < 0.0):
            raise TransferError("derivative-norm samples must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dphi", d)
        object.__setattr__(self, "jac", j)


@dataclass(frozen=True)
class SampledField:
    """Weighted samples of a scalar field (e.g. an inverse Jacobian)."""

    weights: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if len(w) != len(v) or len(w) == 0:
            raise TransferError("field samples must share a positive length")
        if np.any(w <= 0.0) or np.any(v <= 0.0):
            raise TransferError("field samples and weights must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class QCMapData:
    """All analytic data of a quasiconformal map needed by the transfers."""

    n: int
    K: float
    domain_volume: float
    derivative_field: ClosedFormDerivative | SampledDerivative
    alpha: float = math.inf
    lipschitz: bool = True

    def __post_init__(self) -> None:
        if self.n not in (2, 3):
            raise TransferError("map dimension must be 2 or 3")
        if self.K < 1.0:
            raise TransferError("distortion coefficient K must be >= 1")
        if self.domain_volume <= 0.0:
            raise TransferError("domain volume must be positive")
        f = self.derivative_field
        if isinstance(f, ClosedFormDerivative):
            if f.op_norm**self.n > self.K * f.jacobian + QC_SLACK:
                raise TransferError("derivative data violates |D phi|^n <= K |J|")
        else:
            with np.errstate(over="ignore"):
                if np.any(f.dphi**self.n > self.K * f.jac + QC_SLACK):
                    raise TransferError("a sample violates |D phi|^n <= K |J|")

    @classmethod
    def from_linear(cls, matrix, domain_volume: float) -> "QCMapData":
        """Map data of a linear map: L is the spectral norm, J = |det|."""
        m = np.asarray(matrix, dtype=float)
        if m.shape not in ((2, 2), (3, 3)):
            raise TransferError("linear map matrix must be 2x2 or 3x3")
        op_norm = float(np.linalg.norm(m, 2))
        jac = float(abs(np.linalg.det(m)))
        if jac <= 0.0:
            raise TransferError("linear map must be invertible")
        n = m.shape[0]
        return cls(
            n=n,
            K=op_norm**n / jac,
            domain_volume=domain_volume,
            derivative_field=ClosedFormDerivative(op_norm, jac),
            alpha=math.inf,
            lipschitz=True,
        )

    def ess_sup_dphi(self) -> float:
        f = self.derivative_field
        return f.op_norm if isinstance(f, ClosedFormDerivative) else float(f.dphi.max())

    def dphi_integral_norm(self, alpha: float) -> float:
        """L_alpha norm of |D phi|; the alpha = inf convention drops the
        volume factor and returns the essential supremum."""
        if math.isinf(alpha):
            return self.ess_sup_dphi()
        f = self.derivative_field
        if isinstance(f, ClosedFormDerivative):
            return f.op_norm * self.domain_volume ** (1.0 / alpha)
        value = float((f.weights * f.dphi**alpha).sum()) ** (1.0 / alpha)
        if not math.isfinite(value):
            raise TransferError("derivative integral norm diverges")
        return value


@dataclass(frozen=True)
class ChainFactor:
    """One multiplicative factor of a transfer certificate."""

    rule: str
    value: float
    inputs: tuple[tuple[str, float], ...] = ()

    def to_dict(self) -> dict:
        return {"rule": self.rule, "value": self.value, "inputs": {k: v for k, v in self.inputs}}


@dataclass(frozen=True)
class TransferResult:
    """A transferred Poincare constant; bound is the product of the chain."""

    bound: float
    q_star: float
    chain: tuple[ChainFactor, ...]
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        product = math.prod(f.value for f in self.chain)
        if abs(product - self.bound) > 1e-12 * max(abs(product), abs(self.bound)):
            raise TransferError("transfer chain does not multiply to the bound")

    def to_dict(self) -> dict:
        return {
            "bound": self.bound,
            "q_star": self.q_star,
            "chain": [f.to_dict() for f in self.chain],
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class EigenBound:
    """A certified lower bound for the first nontrivial Neumann eigenvalue."""

    mu_lower: float
    p: float
    provenance: tuple[ChainFactor, ...] = ()
    notes: tuple[str, ...] = ()
    domain: str | None = None

    def __post_init__(self) -> None:
        if self.mu_lower <= 0.0:
            raise TransferError("eigenvalue lower bound must be positive")

    def to_dict(self) -> dict:
        return {
            "mu_lower": self.mu_lower,
            "p": self.p,
            "provenance": [f.to_dict() for f in self.provenance],
            "notes": list(self.notes),
            "domain": self.domain,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EigenBound":
        return cls(
            mu_lower=float(data["mu_lower"]),
            p=float(data["p"]),
            provenance=tuple(
                ChainFactor(
                    f["rule"], float(f["value"]), tuple((k, float(v)) for k, v in f.get("inputs", {}).items())
                )
                for f in data.get("provenance", [])
            ),
            notes=tuple(data.get("notes", [])),
            domain=data.get("domain"),
        )


def q_grid(p: float, size: int = Q_GRID_SIZE) -> np.ndarray:
    """Geometric scan grid for the exponent minimization over q in [1, p)."""
    top = p - 1e-6
    if top <= 1.0:
        raise TransferError("empty q-grid: p is too close to 1")
    return np.unique(np.concatenate([[1.0], np.geomspace(1.0, top, size)]))


def q_pq_norm(map_data: QCMapData, p: float, q: float) -> float:
    """Distortion integral norm (int |D phi|^((p-n)q/(p-q)))^((p-q)/(pq)).

    Closed-form derivative data integrates exactly; sampled data uses the
    supplied quadrature. At p = n the integrand is identically one and the
    result is the domain volume to the outer power.
    """
    if not 1.0 <= q < p:
        raise TransferError(f"need 1 <= q < p, got q={q}, p={p}")
    inner = (p - map_data.n) * q / (p - q)
    outer = (p - q) / (p * q)
    f = map_data.derivative_field
    if isinstance(f, ClosedFormDerivative):
        # evaluated in log space: the combined exponent inner * outer equals
        # (p - n)/p, so the value is benign even when q approaches p and the
        # inner exponent blows up
        log_integral = inner * math.log(f.op_norm) + math.log(map_data.domain_volume)
        return math.exp(outer * log_integral)
    with np.errstate(over="ignore"):
        integral = float((f.weights * f.dphi**inner).sum())
    if not math.isfinite(integral) or integral <= 0.0:
        raise TransferError("distortion integral diverges")
    return integral**outer


def q_p_sup_norm(map_data: QCMapData, p: float) -> float:
    """Supremum distortion factor (ess sup |D phi|)^((p-n)/p) for Lipschitz maps."""
    if not map_data.lipschitz:
        raise TransferError("supremum distortion factor needs a Lipschitz map")
    return map_data.ess_sup_dphi() ** ((p - map_data.n) / p)


def lebesgue_comp_norm(inverse_jacobian_samples: SampledField, r: float, s: float) -> float:
    """Norm of the composition operator between Lebesgue spaces.

    (int |J(y, phi^-1)|^(r/(r-s)) dy)^((r-s)/(rs)) for s < r; the essential
    supremum of |J(y, phi^-1)|^(1/s) when s = r.
    """
    if not 1.0 <= s <= r:
        raise TransferError(f"need 1 <= s <= r, got s={s}, r={r}")
    field = inverse_jacobian_samples
    if s == r:
        return float(field.values.max()) ** (1.0 / s)
    integral = float((field.weights * field.values ** (r / (r - s))).sum())
    if not math.isfinite(integral):
        raise TransferError("composition norm integral diverges")
    return integral ** ((r - s) / (r * s))


def sobolev_comp_norm(map_data: QCMapData, p: float, q: float) -> float:
    """Norm bound K^(1/p) * q_pq_norm for the gradient-seminorm composition."""
    return map_data.K ** (1.0 / p) * q_pq_norm(map_data, p, q)


def poincare_transfer(map_data: QCMapData, base: PoincareBound, p: float) -> TransferResult:
    """Push a base (r, q) Poincare constant to the image domain.

    Produces a valid (s, p) constant with s = (alpha - n) r / alpha; the
    composition factor is minimized over a geometric q-grid in [1, p), so
    the result is a valid (possibly suboptimal) certificate regardless of
    grid density.
    """
    n = map_data.n
    alpha = map_data.alpha
    if alpha <= n:
        raise TransferError("alpha too small: need integrability exponent above the dimension")
    r = base.r_exponent
    if not p < r:
        raise TransferError(f"need p < r, got p={p}, r={r}")
    s = r if math.isinf(alpha) else (alpha - n) * r / alpha
    if s < 1.0:
        raise TransferError("alpha too small: the image exponent s drops below 1")
    norm_alpha = map_data.dphi_integral_norm(alpha) ** (n / s)
    grid = q_grid(p)
    factors = np.array([q_pq_norm(map_data, p, q) for q in grid]) * norm_alpha
    best = int(np.argmin(factors))
    k_factor = map_data.K ** (1.0 / p)
    bound = k_factor * factors[best] * base.value
    notes = ()
    if math.isinf(alpha):
        notes = ("alpha = inf: derivative norm taken as the essential supremum, volume factor dropped",)
    return TransferResult(
        bound=bound,
        q_star=float(grid[best]),
        chain=(
            ChainFactor("distortion-coefficient-root", k_factor, (("K", map_data.K), ("p", p))),
            ChainFactor(
                "min-q-composition-factor",
                float(factors[best]),
                (("q_star", float(grid[best])), ("s", s), ("alpha", alpha)),
            ),
            ChainFactor("base-constant", base.value, (("r", r), ("q", base.p))),
        ),
        notes=notes,
    )


def eigen_transfer(map_data: QCMapData, base: PoincareBound, p: float) -> EigenBound:
    """Eigenvalue lower bound on the image from a base (r, q) constant.

    Uses the integrability exponent alpha = n r / (r - p) (so the image
    inequality lands at exponent p) and returns
    mu_lower = 1 / (K * min_q(Q^p * ||D phi||_alpha^n) * B^p).
    """
    n = map_data.n
    r = base.r_exponent
    if r <= p:
        raise TransferError(f"need r > p, got r={r}, p={p}")
    alpha_req = n * r / (r - p)
    if map_data.alpha + 1e-12 < alpha_req:
        raise TransferError(
            f"map integrability alpha={map_data.alpha} below the required {alpha_req}"
        )
    norm_alpha = map_data.dphi_integral_norm(alpha_req) ** n
    grid = q_grid(p)
    factors = np.array([q_pq_norm(map_data, p, q) ** p for q in grid]) * norm_alpha
    best = int(np.argmin(factors))
    denom = map_data.K * float(factors[best]) * base.bound_power()
    mu = 1.0 / denom
    return EigenBound(
        mu_lower=mu,
        p=p,
        provenance=(
            ChainFactor("distortion-coefficient", map_data.K),
            ChainFactor(
                "min-q-composition-power",
                float(factors[best]),
                (("q_star", float(grid[best])), ("alpha", alpha_req)),
            ),
            ChainFactor("base-constant-power", base.bound_power(), (("r", r),)),
        ),
        notes=("lower bound is the reciprocal of the recorded factor product",),
    )


def eigen_transfer_lipschitz(map_data: QCMapData, base_mu: EigenBound, p: float) -> EigenBound:
    """Eigenvalue lower bound on the image of a Lipschitz quasiconformal map.

    mu_lower(image) = mu_lower(base) / (K * Q_p^p * L^n); the identity
    Q_p^p * L^n = L^p for L the essential supremum of |D phi| is asserted
    and recorded in the certificate.
    """
    if not map_data.lipschitz:
        raise TransferError("Lipschitz transfer needs a Lipschitz map")
    sup = map_data.ess_sup_dphi()
    qp = q_p_sup_norm(map_data, p)
    product = qp**p * sup**map_data.n
    direct = sup**p
    if abs(product - direct) > 1e-12 * max(product, direct):
        raise TransferError("internal identity Q_p^p * L^n = L^p violated")
    denom = map_data.K * product
    mu = base_mu.mu_lower / denom
    return EigenBound(
        mu_lower=mu,
        p=p,
        provenance=(
            ChainFactor("base-eigenvalue-lower-bound", base_mu.mu_lower),
            ChainFactor("distortion-coefficient", map_data.K),
            ChainFactor(
                "sup-derivative-power",
                product,
                (("ess_sup", sup), ("identity_check", product - direct)),
            ),
        ),
        notes=("sup-derivative power verified equal to L^p to 1e-12",),
    )


def _ball3_radial_stationarity(t: float) -> float:
    """Vanishes where the radial derivative of the first 3D ball mode does.

    Equals t^2 sin t + 2 t cos t - 2 sin t, proportional to t^3 times the
    derivative of sin(t)/t^2 - cos(t)/t.
    """
    return t * t * math.sin(t) + 2.0 * t * math.cos(t) - 2.0 * math.sin(t)


def ball_lower_bound(n: int, p: float) -> EigenBound:
    """Lower bound for the first nontrivial Neumann eigenvalue of the unit ball.

    p = 2 uses the exact values: the squared first zero of the radial mode
    derivative (the stored planar Bessel-derivative zero for n = 2, a
    bracketed root for n = 3). p > 2 uses the convex-domain bound
    (pi_p / 2)^p, which is also the fallback at p = 2 for n > 3. No bound
    is available for p < 2.
    """
    if p < 2.0:
        raise TransferError("no ball lower bound implemented for p < 2")
    if p == 2.0 and n == 2:
        zero = BESSEL_J1_PRIME_FIRST_ZERO
        return EigenBound(
            mu_lower=zero**2,
            p=p,
            provenance=(ChainFactor("disk-radial-derivative-zero", zero),),
            notes=("exact planar value: squared first zero of the radial mode derivative",),
        )
    if p == 2.0 and n == 3:
        zero = brentq(_ball3_radial_stationarity, 1.0, 3.0, xtol=1e-14)
        return EigenBound(
            mu_lower=zero**2,
            p=p,
            provenance=(ChainFactor("ball3-radial-derivative-zero", float(zero)),),
            notes=("exact 3D value: squared bracketed root of the radial stationarity equation",),
        )
    value = (pi_p(p) / 2.0) ** p
    return EigenBound(
        mu_lower=value,
        p=p,
        provenance=(ChainFactor("convex-half-period-power", value, (("pi_p", pi_p(p)),)),),
        notes=("convex-domain bound (pi_p / 2)^p",),
    )


def example_c(delta: float, p: float, base_mu: EigenBound) -> EigenBound:
    """Eigenvalue lower bound for the two-cone star domain as a ball image.

    Uses the published distortion and derivative bounds of the radial
    quasiconformal map taking the unit 3D ball onto the star domain:
    K^2 <= 2 sqrt(4 + sqrt6 + sqrt2) / (4 - sqrt6 - sqrt2) and
    L <= 2 delta (sqrt(4 + sqrt6 - sqrt2) + sqrt(4 - sqrt6 + sqrt2)) / (sqrt6 - sqrt2),
    composed through the Lipschitz transfer. Valid for p > 3.
    """
    if p <= 3.0:
        raise TransferError("the star-domain transfer needs p > 3")
    if delta <= 0.0:
        raise TransferError("delta must be positive")
    s6, s2 = math.sqrt(6.0), math.sqrt(2.0)
    k_squared = 2.0 * math.sqrt(4.0 + s6 + s2) / (4.0 - s6 - s2)
    k_bound = math.sqrt(k_squared)
    l_bound = 2.0 * delta * (math.sqrt(4.0 + s6 - s2) + math.sqrt(4.0 - s6 + s2)) / (s6 - s2)
    map_data = QCMapData(
        n=3,
        K=k_bound,
        domain_volume=4.0 * math.pi / 3.0,
        derivative_field=ClosedFormDerivative(l_bound, l_bound**3 / k_bound),
        alpha=math.inf,
        lipschitz=True,
    )
    result = eigen_transfer_lipschitz(map_data, base_mu, p)
    return EigenBound(
        mu_lower=result.mu_lower,
        p=p,
        provenance=result.provenance
        + (
            ChainFactor("star-distortion-bound", k_bound, (("K_squared", k_squared),)),
            ChainFactor("star-derivative-bound", l_bound, (("delta", delta),)),
        ),
        notes=result.notes
        + (
            "an alternative printed closed form for this bound differs in two radical "
            "signs and in the delta exponent; this certificate follows the factored "
            "route through the Lipschitz transfer and records both factors",
        ),
        domain="star3d",
    )


def whitney_qc_bound(chain_bound: PoincareBound, map_data: QCMapData, p: float) -> EigenBound:
    """Eigenvalue lower bound for the image of an aggregated cell complex.

    Converts the aggregated Poincare bound B into mu_p >= B^-p on the base
    complex, then applies the Lipschitz transfer to the image.
    """
    if abs(chain_bound.p - p) > 1e-12:
        raise TransferError("chain bound exponent does not match the transfer exponent")
    base_mu = EigenBound(
        mu_lower=chain_bound.value ** (-p),
        p=p,
        provenance=(ChainFactor("constant-to-eigenvalue", chain_bound.value ** (-p),
                                (("poincare_bound", chain_bound.value),)),),
    )
    return eigen_transfer_lipschitz(map_data, base_mu, p)
