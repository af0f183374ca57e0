"""Rician user channels and the uplink pilot phase.

The channel between the outermost layer and user k is
h = sqrt(beta/(1+kappa)) (sqrt(kappa) h_los + h_nlos) with h_nlos drawn
CN(0, R). Users send mutually orthonormal pilots; the base station
de-spreads the received block into one observation vector per user.
"""

from dataclasses import dataclass, replace

import numpy as np

from .geometry import CorrelationModel, SimLayout, SimStack, steering_vector


@dataclass(frozen=True)
class UserChannel:
    """Large-scale parameters, LoS response and (optionally) one realization."""

    beta: float
    kappa: float
    azimuth: float
    elevation: float
    los: np.ndarray
    realization: np.ndarray | None = None

    @property
    def q(self) -> float:
        """NLoS power share beta / (1 + kappa)."""
        return self.beta / (1.0 + self.kappa)


@dataclass(frozen=True)
class PilotBook:
    """Orthonormal pilot matrix with the powers of the training phase."""

    matrix: np.ndarray  # (tau, K), matrix^H matrix = I_K
    tau: int
    rho: float
    sigma2: float

    @property
    def num_users(self) -> int:
        return self.matrix.shape[1]

    @property
    def noise_over_train(self) -> float:
        """Regularizer sigma^2 / (tau rho) of the MMSE estimator."""
        return self.sigma2 / (self.tau * self.rho)


@dataclass(frozen=True)
class PilotObservation:
    """Received pilot block and its per-user de-spread observations."""

    received: np.ndarray  # (N_t, tau)
    despread: np.ndarray  # (K, N_t)


def sample_nlos(rng: np.random.Generator, correlation: CorrelationModel, size: int | None = None) -> np.ndarray:
    """Draw CN(0, R) vectors as F w with F a square root of R.

    Returns one length-N vector, or a (size, N) block when ``size`` is given.
    """
    n = correlation.num_elements
    shape = (n,) if size is None else (size, n)
    white = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return white @ correlation.sqrt_factor.T


def assemble_realization(beta: float, kappa: float, los: np.ndarray, nlos: np.ndarray) -> np.ndarray:
    """Combine LoS and NLoS parts with the Rician power split."""
    return np.sqrt(beta / (1.0 + kappa)) * (np.sqrt(kappa) * los + nlos)


def make_user_channel(
    rng: np.random.Generator,
    beta: float,
    kappa: float,
    aoa: tuple,
    layout: SimLayout,
    correlation: CorrelationModel,
) -> UserChannel:
    """Build a user channel and draw one fading realization."""
    if beta <= 0:
        raise ValueError(f"beta must be positive (got {beta})")
    if kappa < 0:
        raise ValueError(f"kappa must be non-negative (got {kappa})")
    azimuth, elevation = aoa
    los = steering_vector(
        azimuth, elevation, layout.num_elements, layout.d_h, layout.wavelength, n_y=layout.n_y
    )
    nlos = sample_nlos(rng, correlation)
    return UserChannel(
        beta=beta,
        kappa=kappa,
        azimuth=azimuth,
        elevation=elevation,
        los=los,
        realization=assemble_realization(beta, kappa, los, nlos),
    )


def resample_user(rng: np.random.Generator, user: UserChannel, correlation: CorrelationModel) -> UserChannel:
    """New fading realization with the user's large-scale parameters kept."""
    nlos = sample_nlos(rng, correlation)
    return replace(user, realization=assemble_realization(user.beta, user.kappa, user.los, nlos))


def pilot_matrix(tau: int, num_users: int) -> np.ndarray:
    """First ``num_users`` columns of the unitary tau-point DFT matrix."""
    if tau < num_users:
        raise ValueError(f"tau must be >= number of users (got {tau} < {num_users})")
    dft = np.fft.fft(np.eye(tau)) / np.sqrt(tau)
    return dft[:, :num_users]


def make_pilot_book(tau: int, num_users: int, rho: float, sigma2: float) -> PilotBook:
    if rho <= 0 or sigma2 <= 0:
        raise ValueError("pilot power and noise power must be positive")
    return PilotBook(matrix=pilot_matrix(tau, num_users), tau=tau, rho=rho, sigma2=sigma2)


def despread(received: np.ndarray, pilot: np.ndarray, tau: int, rho: float) -> np.ndarray:
    """Project the received block onto one user's pilot, Y x / sqrt(tau rho)."""
    return received @ pilot / np.sqrt(tau * rho)


def transmit_pilots(
    rng: np.random.Generator,
    stack: SimStack,
    users: list,
    book: PilotBook,
) -> PilotObservation:
    """Simulate the training block Y = sqrt(tau rho) (W^1)^H G^H H X^H + Z.

    Noise entries are i.i.d. CN(0, sigma2). The de-spread rows equal the
    effective per-user channels plus Z x_k / sqrt(tau rho).
    """
    if len(users) != book.num_users:
        raise ValueError(
            f"user count mismatch: {len(users)} channels, {book.num_users} pilots"
        )
    h = np.column_stack([u.realization for u in users])
    if h.shape[0] != stack.num_elements:
        raise ValueError(
            f"channel length {h.shape[0]} does not match stack elements {stack.num_elements}"
        )
    uplink = stack.effective_map.conj().T  # (W^1)^H G^H, (N_t, N)
    n_t = uplink.shape[0]
    noise = np.sqrt(book.sigma2 / 2.0) * (
        rng.standard_normal((n_t, book.tau)) + 1j * rng.standard_normal((n_t, book.tau))
    )
    received = np.sqrt(book.tau * book.rho) * (uplink @ h) @ book.matrix.conj().T + noise
    per_user = despread(received, book.matrix, book.tau, book.rho).T
    return PilotObservation(received=received, despread=np.ascontiguousarray(per_user))
