"""Chain description and the closed-form per-attempt physics.

States are carried as the ``(mu, f)`` pair of the Bell-diagonal family: a
depolarizing weight ``mu`` and the Psi+/Psi- split ``f``.  Everything here is
a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

ALPHA_PER_KM = 0.046  # 0.2 dB/km
C_FIBER_M_PER_S = 2e8

# Secret fractions at or below this are reported as vanished.  The expression
# 1 - h(e_x) - h(e_z) cannot resolve values near 1e-16 in double precision.
SECRET_FRACTION_RESOLUTION = 1e-12

MODES = ("fidelity", "skr")


@dataclass(frozen=True)
class LinkSpec:
    length_km: float
    p_link: float = 1.0
    fidelity_F: float = 1.0
    mu_link: float = 1.0

    def __post_init__(self):
        if not (self.length_km > 0 and math.isfinite(self.length_km)):
            raise ValueError(f"link length must be positive and finite, got {self.length_km}")
        if not 0.0 < self.p_link <= 1.0:
            raise ValueError(f"p_link must lie in (0, 1], got {self.p_link}")
        if not 0.5 <= self.fidelity_F <= 1.0:
            raise ValueError(f"fidelity_F must lie in [0.5, 1], got {self.fidelity_F}")
        if not 0.0 <= self.mu_link <= 1.0:
            raise ValueError(f"mu_link must lie in [0, 1], got {self.mu_link}")


@dataclass(frozen=True)
class ChainSpec:
    """One sender-to-receiver path: ``n`` repeaters and ``n + 1`` links.

    ``tau_coh_s`` may be ``math.inf`` (perfect memories); ``cutoff_s=None``
    disables the memory cutoff.
    """

    links: tuple
    mu_swap: float = 1.0
    tau_coh_s: float = math.inf
    alpha_per_km: float = ALPHA_PER_KM
    c_m_per_s: float = C_FIBER_M_PER_S
    cutoff_s: Optional[float] = None
    taus: np.ndarray = field(init=False, repr=False, compare=False)
    probs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        links = tuple(self.links)
        if not links:
            raise ValueError("a chain needs at least one link")
        if not all(isinstance(l, LinkSpec) for l in links):
            raise TypeError("links must be LinkSpec instances")
        object.__setattr__(self, "links", links)
        if not 0.0 <= self.mu_swap <= 1.0:
            raise ValueError(f"mu_swap must lie in [0, 1], got {self.mu_swap}")
        if not self.tau_coh_s > 0:
            raise ValueError(f"tau_coh_s must be positive, got {self.tau_coh_s}")
        if self.alpha_per_km < 0:
            raise ValueError("alpha_per_km must be non-negative")
        if not self.c_m_per_s > 0:
            raise ValueError("c_m_per_s must be positive")
        if self.cutoff_s is not None and not self.cutoff_s > 0:
            raise ValueError(f"cutoff_s must be positive when given, got {self.cutoff_s}")
        taus = np.array([l.length_km * 1000.0 / self.c_m_per_s for l in links])
        probs = np.array([link_success_prob(l, self.alpha_per_km) for l in links])
        taus.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_lengths(
        cls,
        lengths_km: Sequence[float],
        *,
        p_link: float = 1.0,
        fidelity_F: float = 1.0,
        mu_link: float = 1.0,
        **kwargs,
    ) -> "ChainSpec":
        links = tuple(LinkSpec(float(L), p_link, fidelity_F, mu_link) for L in lengths_km)
        return cls(links, **kwargs)

    @classmethod
    def uniform(cls, total_km: float, n_repeaters: int, **kwargs) -> "ChainSpec":
        if n_repeaters < 0:
            raise ValueError("n_repeaters must be >= 0")
        seg = total_km / (n_repeaters + 1)
        return cls.from_lengths([seg] * (n_repeaters + 1), **kwargs)

    @property
    def n_repeaters(self) -> int:
        return len(self.links) - 1

    @property
    def lengths_km(self) -> tuple:
        return tuple(l.length_km for l in self.links)

    @property
    def total_length_km(self) -> float:
        return float(sum(self.lengths_km))

    @property
    def tau_e2e(self) -> float:
        return float(np.sum(self.taus))

    @property
    def has_cutoff(self) -> bool:
        return self.cutoff_s is not None

    def with_cutoff(self, cutoff_s: Optional[float]) -> "ChainSpec":
        return replace(self, cutoff_s=cutoff_s)

    def with_tau_coh(self, tau_coh_s: float) -> "ChainSpec":
        return replace(self, tau_coh_s=tau_coh_s)


@dataclass(frozen=True)
class EndToEndNoise:
    mu_e2e: float
    mean_decoherence: float
    product_2F_minus_1: float = 1.0

    def __post_init__(self):
        for name in ("mu_e2e", "mean_decoherence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not -1.0 <= self.product_2F_minus_1 <= 1.0:
            raise ValueError("product_2F_minus_1 must lie in [-1, 1]")

    @property
    def f_e2e(self) -> float:
        return 0.5 + 0.5 * self.product_2F_minus_1 * self.mean_decoherence


def success_probability(length_km, p_link: float = 1.0, alpha_per_km: float = ALPHA_PER_KM):
    """``p_link * exp(-alpha * L)``; accepts arrays and a zero length."""
    return p_link * np.exp(-alpha_per_km * np.asarray(length_km, dtype=float))


def link_success_prob(link: LinkSpec, alpha_per_km: float = ALPHA_PER_KM) -> float:
    return float(success_probability(link.length_km, link.p_link, alpha_per_km))


def mu_e2e(chain: ChainSpec) -> float:
    prod = 1.0
    for l in chain.links:
        prod *= l.mu_link
    return chain.mu_swap ** chain.n_repeaters * prod


def product_2F_minus_1(chain: ChainSpec) -> float:
    prod = 1.0
    for l in chain.links:
        prod *= 2.0 * l.fidelity_F - 1.0
    return prod


def decoherence_factor(idle_s, tau_coh_s: float):
    """``exp(-idle / tau_coh)``, elementwise for arrays."""
    idle = np.asarray(idle_s, dtype=float)
    if np.any(idle < 0):
        raise ValueError("idle time must be non-negative")
    if math.isinf(tau_coh_s):
        out = np.ones_like(idle)
    else:
        out = np.exp(-idle / tau_coh_s)
    return float(out) if out.ndim == 0 else out


def f_e2e_mean(chain: ChainSpec, mean_decoherence: float) -> float:
    # linear in the decoherence factor, so averaging commutes with this map
    return 0.5 + 0.5 * product_2F_minus_1(chain) * mean_decoherence


def fidelity_e2e(noise: EndToEndNoise) -> float:
    mu = noise.mu_e2e
    return mu * noise.f_e2e + (1.0 - mu) / 4.0


def qber(noise: EndToEndNoise) -> tuple:
    mu = noise.mu_e2e
    e_z = (1.0 - mu) / 2.0
    e_x = (1.0 + mu) / 2.0 - mu * noise.f_e2e
    return e_z, e_x


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def secret_fraction(e_z: float, e_x: float) -> float:
    """Asymptotic secret bits per pair; negative means no key."""
    return 1.0 - binary_entropy(e_x) - binary_entropy(e_z)


def skr(ebit_rate_hz: float, r: float) -> float:
    if ebit_rate_hz < 0:
        raise ValueError("ebit rate must be non-negative")
    if r <= SECRET_FRACTION_RESOLUTION:
        return 0.0
    return ebit_rate_hz * r


def _dh(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return math.log2((1.0 - p) / p)


@dataclass(frozen=True)
class PerformanceReport:
    """Figures of merit for one chain under one protocol.

    ``mode`` records which idle-time definition produced ``mean_decoherence``:
    ``"fidelity"`` counts the end-user memories, ``"skr"`` leaves them out.
    ``status`` is ``"ok"``, ``"infeasible_cutoff"`` (no attempt can ever pass
    the cutoff) or ``"budget_exceeded"`` (the sampler gave up).
    """

    ebit_rate_hz: float
    mean_decoherence: float
    mean_f_e2e: float
    fidelity_e2e: float
    qber_z: float
    qber_x: float
    secret_fraction: float
    skr_hz: float
    n_samples: int = 0
    stderr_rate: float = 0.0
    stderr_decoherence: float = 0.0
    mu_e2e: float = 1.0
    product_2F_minus_1: float = 1.0
    mode: str = "skr"
    status: str = "ok"

    @property
    def infeasible(self) -> bool:
        return self.status != "ok"

    @property
    def stderr_fidelity(self) -> float:
        return 0.5 * self.mu_e2e * abs(self.product_2F_minus_1) * self.stderr_decoherence

    @property
    def stderr_qber_x(self) -> float:
        return self.stderr_fidelity

    @property
    def stderr_skr(self) -> float:
        """First-order error of the SKR, treating rate and decoherence as independent."""
        if self.skr_hz <= 0.0:
            return 0.0
        dr_dd = _dh(self.qber_x) * 0.5 * self.mu_e2e * self.product_2F_minus_1
        a = self.secret_fraction * self.stderr_rate
        b = self.ebit_rate_hz * dr_dd * self.stderr_decoherence
        return math.hypot(a, b)

    def as_dict(self) -> dict:
        return {
            "ebit_rate_hz": self.ebit_rate_hz,
            "stderr_rate": self.stderr_rate,
            "mean_decoherence": self.mean_decoherence,
            "stderr_decoherence": self.stderr_decoherence,
            "mean_f_e2e": self.mean_f_e2e,
            "fidelity_e2e": self.fidelity_e2e,
            "qber_z": self.qber_z,
            "qber_x": self.qber_x,
            "secret_fraction": self.secret_fraction,
            "skr_hz": self.skr_hz,
            "n_samples": self.n_samples,
            "mode": self.mode,
            "status": self.status,
        }


def assemble_report(
    chain: ChainSpec,
    ebit_rate_hz: float,
    mean_decoherence: float,
    *,
    mode: str = "skr",
    n_samples: int = 0,
    stderr_rate: float = 0.0,
    stderr_decoherence: float = 0.0,
) -> PerformanceReport:
    """Compose the end-to-end metrics from a rate and a mean decoherence factor."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    mean_decoherence = min(max(mean_decoherence, 0.0), 1.0)
    noise = EndToEndNoise(mu_e2e(chain), mean_decoherence, product_2F_minus_1(chain))
    e_z, e_x = qber(noise)
    r = secret_fraction(e_z, e_x)
    return PerformanceReport(
        ebit_rate_hz=ebit_rate_hz,
        mean_decoherence=mean_decoherence,
        mean_f_e2e=noise.f_e2e,
        fidelity_e2e=fidelity_e2e(noise),
        qber_z=e_z,
        qber_x=e_x,
        secret_fraction=r,
        skr_hz=skr(ebit_rate_hz, r),
        n_samples=n_samples,
        stderr_rate=stderr_rate,
        stderr_decoherence=stderr_decoherence,
        mu_e2e=noise.mu_e2e,
        product_2F_minus_1=noise.product_2F_minus_1,
        mode=mode,
    )


def infeasible_report(chain: ChainSpec, mode: str = "skr", status: str = "infeasible_cutoff",
                      n_samples: int = 0) -> PerformanceReport:
    nan = float("nan")
    return PerformanceReport(
        ebit_rate_hz=0.0,
        mean_decoherence=nan,
        mean_f_e2e=nan,
        fidelity_e2e=nan,
        qber_z=(1.0 - mu_e2e(chain)) / 2.0,
        qber_x=nan,
        secret_fraction=nan,
        skr_hz=0.0,
        n_samples=n_samples,
        mu_e2e=mu_e2e(chain),
        product_2F_minus_1=product_2F_minus_1(chain),
        mode=mode,
        status=status,
    )
