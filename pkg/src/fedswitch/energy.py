"""Per-round energy of a UE: local computation plus gradient upload."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import DELTA_MIN

__all__ = [
    "ComputeProfile",
    "PayloadSizes",
    "computation_energy",
    "transmission_delay",
    "communication_energy",
    "round_energy",
    "relaxed_energy",
]


@dataclass(frozen=True)
class ComputeProfile:
    """Chip parameters of one UE.

    Attributes
    ----------
    f_k : float
        Processor frequency (Hz).
    varrho_k : float
        Effective switched-capacitance coefficient (J s^2 / cycle).
    M_k : float
        Cycles needed per processed bit.
    tau : int
        Local iterations per round.
    """

    f_k: float = 1.5e9
    varrho_k: float = 1e-27
    M_k: float = 737.5
    tau: int = 4

    def __post_init__(self):
        if not (self.f_k > 0 and self.varrho_k > 0 and self.M_k > 0):
            raise ValueError("compute profile entries must be positive")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError("tau must be an integer >= 1")


@dataclass(frozen=True)
class PayloadSizes:
    """Bits processed locally (``G_w``) and bits uploaded (``G_dw``)."""

    G_w: float
    G_dw: float

    def __post_init__(self):
        if not (self.G_w > 0 and self.G_dw > 0):
            raise ValueError("payload sizes must be positive")
        if self.G_dw > self.G_w:
            raise ValueError("upload payload G_dw cannot exceed G_w")


def computation_energy(profile: ComputeProfile, sizes: PayloadSizes, D_k: float) -> float:
    if D_k < 0:
        raise ValueError("sample count must be non-negative")
    return profile.tau * D_k * sizes.G_w * profile.f_k**2 * profile.varrho_k * profile.M_k


def transmission_delay(G_dw: float, W: float, delta: float, sinr_value: float) -> float:
    """Seconds needed to push ``G_dw`` bits over ``W * delta`` Hz at the given SINR."""
    if not sinr_value > 0:
        raise ValueError(f"SINR must be positive, got {sinr_value}")
    if delta < DELTA_MIN:
        raise ValueError(f"delta={delta} below the minimum share {DELTA_MIN}")
    return G_dw / (W * delta * math.log2(1.0 + sinr_value))


def communication_energy(P_k: float, sizes: PayloadSizes, W: float, delta: float, sinr_value: float) -> float:
    if P_k < 0:
        raise ValueError("transmit power must be non-negative")
    return P_k * transmission_delay(sizes.G_dw, W, delta, sinr_value)


def round_energy(profile, sizes, D_k, P_k, delta, sinr_value, link) -> float:
    """Exact energy (J): computation plus ``P * G_dw / (W delta log2(1 + SINR))``."""
    return computation_energy(profile, sizes, D_k) + communication_energy(P_k, sizes, link.W, delta, sinr_value)


def relaxed_energy(profile, sizes, D_k, P_k, E_t) -> float:
    """Energy with the upload time replaced by the common delay target ``E_t``."""
    if not E_t > 0:
        raise ValueError("delay target must be positive")
    if P_k < 0:
        raise ValueError("transmit power must be non-negative")
    return computation_energy(profile, sizes, D_k) + P_k * E_t
