"""System parameters and their JSON parameter-file format."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RotorGeometry:
    k_f: float = 8.5e-6  # thrust coefficient, N s^2/rad^2
    k_m: float = 1.4e-7  # torque coefficient, N m s^2/rad^2
    a: float = 0.12  # arm length, m
    beta: float = math.radians(45.0)  # arm angle from body x, rad
    I_p: float = 1e-5  # propeller inertia, kg m^2
    dt_m: float = 0.05  # motor time constant, s
    n_max: float = 1200.0  # rad/s

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"rotor geometry field {name!r} must be finite and > 0, got {value}")

    @property
    def a_x(self) -> float:
        return self.a * math.cos(self.beta)

    @property
    def a_y(self) -> float:
        return self.a * math.sin(self.beta)

    def G1(self) -> np.ndarray:
        """Thrust/torque map applied to squared rotor speeds."""
        kf, km, ax, ay = self.k_f, self.k_m, self.a_x, self.a_y
        return np.array(
            [
                [kf, kf, kf, kf],
                [ay * kf, -ay * kf, -ay * kf, ay * kf],
                [-ax * kf, -ax * kf, ax * kf, ax * kf],
                [-km, km, -km, km],
            ]
        )

    def G2(self) -> np.ndarray:
        """Yaw reaction of rotor accelerations.

        A spinning-up rotor pushes the body the same way as its drag torque,
        so the row carries the sign pattern of the ``k_m`` row of :meth:`G1`.
        """
        G = np.zeros((4, 4))
        G[3] = self.I_p * np.array([-1.0, 1.0, -1.0, 1.0])
        return G

    @property
    def max_thrust(self) -> float:
        return 4.0 * self.k_f * self.n_max**2


def _default_inertia() -> np.ndarray:
    return np.diag([8.1e-3, 8.1e-3, 1.42e-2])


@dataclass(frozen=True)
class SystemParams:
    m_Q: float = 1.0
    m_L: float = 0.285
    l: float = 0.6
    J: np.ndarray = field(default_factory=_default_inertia)
    g: float = 9.81
    rotor: RotorGeometry = field(default_factory=RotorGeometry)

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        object.__setattr__(self, "J", J)
        for name in ("m_Q", "m_L", "l", "g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if J.shape != (3, 3) or not np.allclose(J, J.T):
            raise ValueError("inertia J must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(J).min() <= 0:
            raise ValueError("inertia J must be positive definite")

    @property
    def m_total(self) -> float:
        return self.m_Q + self.m_L

    @property
    def hover_thrust(self) -> float:
        return self.m_total * self.g

    def with_payload_mass(self, m_L: float) -> "SystemParams":
        return replace(self, m_L=m_L)

    def to_dict(self) -> dict:
        return {
            "m_Q": self.m_Q,
            "m_L": self.m_L,
            "l": self.l,
            "J": self.J.tolist(),
            "g": self.g,
            "rotor_geom": asdict(self.rotor),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SystemParams":
        data = dict(data)
        rotor = RotorGeometry(**data.pop("rotor_geom", {}))
        unknown = set(data) - {"m_Q", "m_L", "l", "J", "g"}
        if unknown:
            raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(rotor=rotor, **data)


def default_params() -> SystemParams:
    return SystemParams()


def load_params(path: str | Path) -> SystemParams:
    """Read a JSON parameter file (SI units)."""
    with open(path) as fh:
        return SystemParams.from_dict(json.load(fh))


def save_params(params: SystemParams, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2)
