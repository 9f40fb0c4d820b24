"""Particle detector on a periodic 1D grid.

Classical state 0 is "on", state 1 is "off".  While on, the detector couples
to the particle through the multiplication operator ``g(x - a(t))`` with

    g(x)^2 = kappa * sqrt(2 w / pi) * exp(-2 w x^2),

so that ``g^2`` integrates to ``kappa`` and tends to ``kappa * delta(x)`` as the
width parameter ``w`` grows.  Detection switches the detector off for good.

The Hamiltonian is either zero or ``-i d/dx`` (free streaming to the right at
unit speed).  Its flow is a pure shift, so the no-jump evolution is solved
along characteristics instead of by differencing.

Grid vectors carry ``psi(x_j) * sqrt(dx)`` so the Euclidean norm is the L2 norm.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import erf

from ..errors import GridTooCoarse, NonCommensurateTime
from ..model import HybridModel, Operator, build_model

ON, OFF = 0, 1
Position = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class DetectorSpec:
    kappa: float = 1.0
    width: float = 1024.0
    a: Position = 0.0
    L: float = 16.0
    N: int = 2048
    n_dims: int = 1
    hamiltonian: str = "shift"

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def x(self) -> np.ndarray:
        return -0.5 * self.L + self.dx * np.arange(self.N)

    @property
    def stationary(self) -> bool:
        return not callable(self.a)

    @property
    def velocity(self) -> float:
        return 1.0 if self.hamiltonian == "shift" else 0.0

    def position(self, t: float) -> float:
        return float(self.a(t)) if callable(self.a) else float(self.a)

    @property
    def detector_sigma(self) -> float:
        """Standard deviation of the ``g^2`` profile."""
        return 0.5 / np.sqrt(self.width)

    @property
    def point_regime(self) -> bool:
        """Profile narrower than four grid cells: the point-detector regime."""
        return self.detector_sigma < 4.0 * self.dx


def profile_sq(spec: DetectorSpec, u) -> np.ndarray:
    """``g(u)^2`` at displacement ``u`` from the detector."""
    u = np.asarray(u, dtype=float)
    return spec.kappa * np.sqrt(2.0 * spec.width / np.pi) * np.exp(-2.0 * spec.width * u * u)


def _wrap(spec: DetectorSpec, u):
    return (np.asarray(u) + 0.5 * spec.L) % spec.L - 0.5 * spec.L


def coupling_diag(spec: DetectorSpec, t: float) -> np.ndarray:
    return np.sqrt(profile_sq(spec, _wrap(spec, spec.x - spec.position(t)))).astype(complex)


def shift_hamiltonian(spec: DetectorSpec) -> np.ndarray:
    """Dense spectral matrix of ``-i d/dx`` on the periodic grid."""
    k = 2.0 * np.pi * np.fft.fftfreq(spec.N, spec.dx)
    return np.fft.ifft(k[:, None] * np.fft.fft(np.eye(spec.N), axis=0), axis=0)


def shift(spec: DetectorSpec, psi: np.ndarray, tau: float) -> np.ndarray:
    """Translate a grid vector right by ``tau`` (a roll when commensurate)."""
    if tau == 0.0:
        return psi
    steps = tau / spec.dx
    n = round(steps)
    if abs(steps - n) < 1e-9:
        return np.roll(psi, n)
    k = 2.0 * np.pi * np.fft.fftfreq(spec.N, spec.dx)
    return np.fft.ifft(np.fft.fft(psi) * np.exp(-1j * k * tau))


def damping_exponent(spec: DetectorSpec, t0: float, t1: float) -> np.ndarray:
    """``int_{t0}^{t1} Lambda_s(y_j + v (s - t0)) ds`` for each grid point ``y_j``.

    Closed form through ``erf`` for a stationary detector (summing periodic
    images); composite Gauss-Legendre quadrature for a moving one.
    """
    y = spec.x
    tau = t1 - t0
    v = spec.velocity
    if spec.stationary and v != 0.0:
        c = np.sqrt(2.0 * spec.width)
        u0 = y - spec.position(0.0)
        n_img = int(np.ceil(tau / spec.L)) + 1
        cut = 10.0 * spec.detector_sigma
        total = np.zeros_like(y)
        for k in range(-n_img, 2):
            lo, hi = u0.min() + k * spec.L, u0.max() + tau + k * spec.L
            if hi < -cut or lo > cut:
                continue  # both erf terms saturate to the same value
            total += erf(c * (u0 + tau + k * spec.L)) - erf(c * (u0 + k * spec.L))
        return 0.5 * spec.kappa * total
    if spec.stationary:
        return profile_sq(spec, _wrap(spec, y - spec.position(0.0))) * tau
    panels = max(1, int(np.ceil(abs(tau) / (0.25 * spec.detector_sigma))))
    nodes, weights = np.polynomial.legendre.leggauss(6)
    edges = np.linspace(t0, t1, panels + 1)
    total = np.zeros_like(y)
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        for s_ref, w in zip(nodes, weights):
            s = lo + half * (s_ref + 1.0)
            pos = y + v * (s - t0) - spec.position(s)
            total += w * half * profile_sq(spec, _wrap(spec, pos))
    return total


class DetectorFlow:
    """Exact no-jump flow in one detector state."""

    def __init__(self, spec: DetectorSpec, detector_on: bool):
        self.spec = spec
        self.on = detector_on

    def norm_sq(self, psi, t0, t1) -> float:
        w = np.abs(psi) ** 2
        if self.on:
            w = w * np.exp(-damping_exponent(self.spec, t0, t1))
        return float(w.sum())

    def advance(self, psi, t0, t1) -> np.ndarray:
        if t1 == t0:
            return psi
        if self.on:
            psi = psi * np.exp(-0.5 * damping_exponent(self.spec, t0, t1))
        return shift(self.spec, psi, self.spec.velocity * (t1 - t0))


def validate_detector(spec: DetectorSpec) -> None:
    if spec.n_dims != 1:
        raise NotImplementedError("only one space dimension is implemented")
    if spec.kappa < 0 or spec.width <= 0 or spec.L <= 0 or spec.N < 2:
        raise ValueError("kappa >= 0, width > 0, L > 0 and N >= 2 are required")
    if spec.hamiltonian not in ("shift", "zero"):
        raise ValueError(f"unknown detector Hamiltonian {spec.hamiltonian!r}")
    if spec.width * spec.dx ** 2 > 0.1:
        raise GridTooCoarse(
            f"width*dx^2 = {spec.width * spec.dx ** 2:.3g} > 0.1; refine the grid")


def build_detector_model(spec: DetectorSpec) -> HybridModel:
    validate_detector(spec)
    n = spec.N
    if spec.hamiltonian == "shift":
        ham = Operator.lazy(lambda: shift_hamiltonian(spec), shape=(n, n), hermitian=True)
    else:
        ham = Operator.constant(np.zeros(n))
    if spec.stationary:
        g = Operator.constant(coupling_diag(spec, 0.0))
    else:
        g = Operator(fn=lambda t: coupling_diag(spec, t))
    return build_model(
        2, [n, n], [ham, ham], {(OFF, ON): g},
        propagators={ON: DetectorFlow(spec, True), OFF: DetectorFlow(spec, False)},
        name="detector1d", meta={"spec": spec})


def gaussian_packet(spec: DetectorSpec, x0: float, sigma: float, k0: float = 0.0) -> np.ndarray:
    """Grid vector of a Gaussian packet whose ``|psi|^2`` is N(x0, sigma^2)."""
    x = spec.x
    amp = (2.0 * np.pi * sigma ** 2) ** -0.25 * np.exp(-((x - x0) ** 2) / (4.0 * sigma ** 2))
    psi = amp * np.exp(1j * k0 * x) * np.sqrt(spec.dx)
    return psi / np.linalg.norm(psi)


def exact_propagate(spec: DetectorSpec, psi0: np.ndarray, t: float) -> np.ndarray:
    """Damped characteristic solution at time ``t`` for the streaming Hamiltonian.

    ``psi(x, t) = exp(-1/2 int_0^t Lambda_s(x + s - t) ds) psi(x - t, 0)``, with
    the exponent integrated by the trapezoid rule in steps of ``dx``.  ``t``
    must be a whole number of grid cells.
    """
    if spec.hamiltonian != "shift":
        raise ValueError("exact_propagate needs the streaming Hamiltonian")
    steps = t / spec.dx
    n = round(steps)
    if abs(steps - n) > 1e-9 or n < 0:
        raise NonCommensurateTime(f"t={t} is not a non-negative multiple of dx={spec.dx}")
    if n == 0:
        return np.asarray(psi0, dtype=complex).copy()
    exponent = np.zeros(spec.N)
    for k in range(n + 1):
        s = k * spec.dx
        lam = profile_sq(spec, _wrap(spec, spec.x + s - t - spec.position(s)))
        exponent += (0.5 if k in (0, n) else 1.0) * lam
    return np.exp(-0.5 * spec.dx * exponent) * np.roll(psi0, n)


def detection_prob_closed_form(spec: DetectorSpec, psi0: np.ndarray, t: float) -> float:
    """Point-detector detection probability ``(1 - e^-kappa) * mass in (a - t, a)``.

    The mass is a grid quadrature of ``|psi0|^2`` with half weight on points
    that sit exactly on an interval end.
    """
    if not spec.stationary:
        raise ValueError("closed form assumes a stationary detector")
    if t <= 0:
        return 0.0
    a = spec.position(0.0)
    x = spec.x
    eps = 1e-9 * spec.dx
    weight = np.where((x > a - t + eps) & (x < a - eps), 1.0, 0.0)
    weight[np.abs(x - a) <= eps] = 0.5
    weight[np.abs(x - (a - t)) <= eps] = 0.5
    mass = float(np.sum(weight * np.abs(psi0) ** 2))
    return (1.0 - np.exp(-spec.kappa)) * mass


def check_no_wrap(spec: DetectorSpec, psi0: np.ndarray, horizon: float, tol: float = 1e-10) -> None:
    """Raise if more than ``tol`` of the packet's mass reaches the grid edge by ``horizon``."""
    x = spec.x
    edge = 0.5 * spec.L - spec.velocity * horizon
    leaked = float(np.sum(np.abs(psi0[x >= edge]) ** 2))
    if leaked > tol:
        raise ValueError(f"packet mass {leaked:.3g} wraps around the periodic grid")
