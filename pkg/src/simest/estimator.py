"""MMSE estimation of the effective uplink channel g = (W^1)^H G^H h.

The estimate is affine in the de-spread observation,
ghat = m + q Psi Q (y - m), with

    m   = sqrt(q kappa) (W^1)^H G^H a        (prior mean),
    Psi = (W^1)^H G^H R G W^1,
    Q   = (q Psi + (sigma^2 / tau rho) I)^{-1}.

Two closed-form NMSE expressions are provided. The ``consistent`` mode,
1 - q tr(Psi Q Psi) / tr(Psi), follows from the error covariance
q Psi - q^2 Psi Q Psi normalized by the channel covariance trace and is the
one validated against the Monte-Carlo oracle. The ``paper-literal`` mode
additionally carries a LoS energy term, kappa N tr((W^1)^H G^H G W^1), in
the numerator; it is reported for reference but not asserted against the
oracle.
"""

from dataclasses import dataclass, replace

import numpy as np

from .channel import PilotBook, UserChannel, assemble_realization, sample_nlos, transmit_pilots
from .errors import NumericalError
from .geometry import CorrelationModel, SimStack
from .seeding import ROLE_CHANNEL, ROLE_NOISE, spawn_rng

NMSE_MODES = ("consistent", "paper-literal")


@dataclass(frozen=True)
class EstimationArtifacts:
    """Per-user quantities the estimator and its analysis reuse."""

    effective_mean: np.ndarray  # (N_t,)
    psi: np.ndarray             # (N_t, N_t)
    qmat: np.ndarray            # (N_t, N_t), inverse regularized covariance
    gain: np.ndarray            # q Psi Q, (N_t, N_t)
    gw_gram: np.ndarray         # (G W^1)^H (G W^1), (N_t, N_t)
    q: float
    kappa: float
    num_elements: int
    noise_over_train: float


def effective_channel(stack: SimStack, h: np.ndarray) -> np.ndarray:
    """Channel seen at the antennas after the stack, (W^1)^H G^H h."""
    if h.shape[0] != stack.num_elements:
        raise ValueError(
            f"channel length {h.shape[0]} does not match stack elements {stack.num_elements}"
        )
    return stack.effective_map.conj().T @ h


def build_artifacts(
    stack: SimStack,
    user: UserChannel,
    book: PilotBook,
    correlation: CorrelationModel,
) -> EstimationArtifacts:
    """Assemble mean, covariances and the estimator gain for one user."""
    c = book.noise_over_train
    if c <= 0:
        raise ValueError("sigma^2 / (tau rho) must be positive")
    gw = stack.effective_map
    rgw = correlation.matrix @ gw
    psi = gw.conj().T @ rgw
    psi = (psi + psi.conj().T) / 2.0
    n_t = psi.shape[0]
    qmat = np.linalg.inv(user.q * psi + c * np.eye(n_t))
    qmat = (qmat + qmat.conj().T) / 2.0
    gram = gw.conj().T @ gw
    gram = (gram + gram.conj().T) / 2.0
    mean = np.sqrt(user.q * user.kappa) * (gw.conj().T @ user.los)
    return EstimationArtifacts(
        effective_mean=mean,
        psi=psi,
        qmat=qmat,
        gain=user.q * (psi @ qmat),
        gw_gram=gram,
        q=user.q,
        kappa=user.kappa,
        num_elements=stack.num_elements,
        noise_over_train=c,
    )


def mmse_estimate(artifacts: EstimationArtifacts, observation: np.ndarray) -> np.ndarray:
    """Affine MMSE estimate m + q Psi Q (y - m)."""
    innovation = observation - artifacts.effective_mean
    return artifacts.effective_mean + artifacts.gain @ innovation


def estimate_covariance(artifacts: EstimationArtifacts) -> np.ndarray:
    """Covariance of the estimate, q kappa N gram + q^2 Psi Q Psi."""
    a = artifacts
    second = a.q**2 * (a.psi @ a.qmat @ a.psi)
    cov = a.q * a.kappa * a.num_elements * a.gw_gram + second
    return (cov + cov.conj().T) / 2.0


def _signal_trace(artifacts: EstimationArtifacts) -> float:
    """tr(Psi Q Psi), real and non-negative for valid artifacts."""
    return float(np.trace(artifacts.psi @ artifacts.qmat @ artifacts.psi).real)


def nmse_closed_form(artifacts: EstimationArtifacts, mode: str = "consistent") -> float:
    """Closed-form NMSE of the estimate; see the module docstring for modes."""
    if mode not in NMSE_MODES:
        raise ValueError(f"unknown NMSE mode {mode!r}")
    denom = float(np.trace(artifacts.psi).real)
    if not denom > 0.0:
        raise NumericalError(
            "degenerate geometry: tr((W^1)^H G^H R G W^1) is not positive"
        )
    signal = artifacts.q * _signal_trace(artifacts)
    if mode == "paper-literal":
        signal += artifacts.kappa * artifacts.num_elements * float(
            np.trace(artifacts.gw_gram).real
        )
    return 1.0 - signal / denom


@dataclass(frozen=True)
class McNmse:
    """Monte-Carlo NMSE estimate with its standard error."""

    mean: float
    stderr: float
    user_means: np.ndarray
    user_stderrs: np.ndarray

    def __iter__(self):
        return iter((self.mean, self.stderr))


def nmse_monte_carlo(
    seed: int,
    stack: SimStack,
    users: list,
    book: PilotBook,
    correlation: CorrelationModel,
    trials: int,
) -> McNmse:
    """Empirical NMSE over independent (fading, noise) realizations.

    Per user, the error energy |g - ghat|^2 is averaged over trials and
    normalized by the empirical centered channel energy, matching the
    covariance-based NMSE definition. Draws are keyed per (trial, user,
    role) from ``seed``, so results do not depend on execution order.
    """
    if trials < 2:
        raise ValueError(f"trials must be >= 2 (got {trials})")
    n_users = len(users)
    artifacts = [build_artifacts(stack, u, book, correlation) for u in users]

    g_all = np.empty((trials, n_users, stack.num_antennas), dtype=complex)
    err = np.empty((trials, n_users))
    uplink = stack.effective_map.conj().T
    for t in range(trials):
        realized = []
        for k, user in enumerate(users):
            rng_h = spawn_rng(seed, ROLE_CHANNEL, t, k)
            nlos = sample_nlos(rng_h, correlation)
            realized.append(
                assemble_realization(user.beta, user.kappa, user.los, nlos)
            )
        rng_z = spawn_rng(seed, ROLE_NOISE, t)
        obs = transmit_pilots(
            rng_z,
            stack,
            [replace(users[k], realization=realized[k]) for k in range(n_users)],
            book,
        )
        for k in range(n_users):
            g = uplink @ realized[k]
            ghat = mmse_estimate(artifacts[k], obs.despread[k])
            g_all[t, k] = g
            err[t, k] = float(np.sum(np.abs(g - ghat) ** 2))

    centered = g_all - g_all.mean(axis=0, keepdims=True)
    denom = np.mean(np.sum(np.abs(centered) ** 2, axis=-1), axis=0)  # (K,)
    normalized = err / denom[None, :]
    user_means = normalized.mean(axis=0)
    user_stderrs = normalized.std(axis=0, ddof=1) / np.sqrt(trials)
    return McNmse(
        mean=float(user_means.mean()),
        stderr=float(np.sqrt(np.sum(user_stderrs**2)) / n_users),
        user_means=user_means,
        user_stderrs=user_stderrs,
    )
