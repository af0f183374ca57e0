"""Phase-shift optimization minimizing the average estimation NMSE.

The objective is the per-user NMSE averaged over users, seen as a function
of the per-layer phase vectors. Its gradient with respect to the conjugate
phases is available in closed form from the cascade factorization
G = A_l Theta_l C_l: every term reduces to the diagonal of a product of the
factor matrices with the correlation and coupling maps. The optimizer
cycles over layers and takes projected gradient steps with a backtracking
(Armijo) line search, so the objective trace is non-increasing by
construction. A central-finite-difference oracle is included to validate
the closed form, plus a random-codebook search baseline.

All gradients here are with respect to the conjugated coefficients, i.e.
(df/dRe + j df/dIm) / 2, so a step along the negative gradient decreases
the objective.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .geometry import PhaseStack, PropagationSet, ones_phases, random_phases

NMSE_MODES = ("consistent", "paper-literal")


@dataclass(frozen=True)
class NmseProblem:
    """Everything the objective needs: geometry, statistics and powers.

    ``q`` and ``kappa`` hold the per-user NLoS power share and Rician
    factor; ``noise_over_train`` is sigma^2 / (tau rho).
    """

    props: PropagationSet
    correlation: np.ndarray
    q: np.ndarray
    kappa: np.ndarray
    noise_over_train: float
    mode: str = "consistent"

    def __post_init__(self):
        if self.mode not in NMSE_MODES:
            raise ValueError(f"unknown NMSE mode {self.mode!r}")
        if self.noise_over_train <= 0:
            raise ValueError("noise_over_train must be positive")

    @property
    def num_layers(self) -> int:
        return self.props.num_layers

    @property
    def num_elements(self) -> int:
        return self.props.num_elements

    @property
    def num_users(self) -> int:
        return self.q.shape[0]


def effective_map(theta: np.ndarray, props: PropagationSet) -> np.ndarray:
    """G W^1 evaluated right-to-left, avoiding the full N x N cascade."""
    m = theta[0][:, None] * props.w1
    for l in range(1, theta.shape[0]):
        m = theta[l][:, None] * (props.inter_layer[l - 1] @ m)
    return m


def _per_user_stats(gw: np.ndarray, problem: NmseProblem):
    """Shared estimator quantities at one phase setting.

    Returns (psi, psi2, qmats, s_vals, denom, gram_trace) with qmats and
    s_vals per user; s_vals carry the mode-dependent NMSE numerator.
    """
    rgw = problem.correlation @ gw
    psi = gw.conj().T @ rgw
    psi = (psi + psi.conj().T) / 2.0
    denom = float(np.trace(psi).real)
    if not denom > 0.0:
        raise NumericalError(
            "degenerate geometry: tr((W^1)^H G^H R G W^1) is not positive"
        )
    psi2 = psi @ psi
    n_t = psi.shape[0]
    eye = np.eye(n_t)
    gram_trace = float(np.sum(np.abs(gw) ** 2))
    qmats = []
    s_vals = np.empty(problem.num_users)
    for k in range(problem.num_users):
        qmat = np.linalg.inv(problem.q[k] * psi + problem.noise_over_train * eye)
        qmats.append(qmat)
        s_k = problem.q[k] * float(np.sum(psi2 * qmat.T).real)  # tr(Psi^2 Q)
        if problem.mode == "paper-literal":
            s_k += problem.kappa[k] * problem.num_elements * gram_trace
        s_vals[k] = s_k
    return psi, psi2, qmats, s_vals, denom, gram_trace


def per_user_nmse(phases: PhaseStack, problem: NmseProblem) -> np.ndarray:
    """Closed-form NMSE of every user at the given phase setting."""
    gw = effective_map(phases.theta, problem.props)
    _, _, _, s_vals, denom, _ = _per_user_stats(gw, problem)
    return 1.0 - s_vals / denom


def objective_avg_nmse(phases: PhaseStack, problem: NmseProblem) -> float:
    """Average NMSE over users, the quantity the optimizer descends."""
    return float(np.mean(per_user_nmse(phases, problem)))


def _rowdot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """diag(X Y^H) for N x N_t factors without forming the N x N product."""
    return np.einsum("nj,nj->n", x, y.conj())


def _build_suffixes(theta: np.ndarray, props: PropagationSet) -> list:
    """A_l for every layer: the cascade factors strictly above layer l."""
    num_layers = theta.shape[0]
    n = theta.shape[1]
    suffixes = [None] * num_layers
    suffixes[num_layers - 1] = np.eye(n, dtype=complex)
    for l in range(num_layers - 1, 0, -1):
        suffixes[l - 1] = suffixes[l] @ (theta[l][:, None] * props.inter_layer[l - 1])
    return suffixes


def _build_prefixes(theta: np.ndarray, props: PropagationSet) -> list:
    """C_l for every layer: the cascade factors strictly below layer l."""
    num_layers = theta.shape[0]
    n = theta.shape[1]
    prefixes = [np.eye(n, dtype=complex)]
    for l in range(num_layers - 1):
        prefixes.append(props.inter_layer[l] @ (theta[l][:, None] * prefixes[l]))
    return prefixes


def _assemble_gradient(
    a_mat: np.ndarray,
    cw1: np.ndarray,
    gw: np.ndarray,
    rgw: np.ndarray,
    psi: np.ndarray,
    psi2: np.ndarray,
    qmats: list,
    s_vals: np.ndarray,
    denom: float,
    problem: NmseProblem,
) -> np.ndarray:
    """Conjugate gradient of the average NMSE for one layer.

    ``a_mat`` is the suffix factor A_l, ``cw1`` the prefix applied to the
    antenna map (C_l W^1); ``gw``/``rgw`` are G W^1 and R G W^1 at the
    current phases. User terms are folded into one small matrix before the
    diagonal extractions, so the per-layer cost beyond the factor matrices
    is O(N^2 N_t).
    """
    e2 = a_mat.conj().T @ rgw
    grad_denom = _rowdot(e2, cw1)
    num_users = problem.num_users
    bsum = np.zeros_like(psi)
    for k in range(num_users):
        qk = qmats[k]
        qpsi = qk @ psi
        b_k = qpsi + qpsi.conj().T - problem.q[k] * (qk @ psi2 @ qk)
        bsum += (problem.q[k] / num_users) * b_k
    grad = (float(np.mean(s_vals)) / denom**2) * grad_denom
    grad -= _rowdot(e2 @ (bsum / denom), cw1)
    if problem.mode == "paper-literal":
        e1 = a_mat.conj().T @ gw
        weight = problem.num_elements * float(np.mean(problem.kappa)) / denom
        grad -= weight * _rowdot(e1, cw1)
    return grad


class GradientContext:
    """Snapshot of the cascade factorization at one phase setting.

    Exposes the suffix/prefix factors A_l and C_l, the factorization
    identity A_l Theta_l C_l = G, and the cached estimator quantities the
    per-layer gradients reuse.
    """

    def __init__(self, problem: NmseProblem, phases: PhaseStack):
        self.problem = problem
        self.phases = phases
        theta = phases.theta
        self.suffixes = _build_suffixes(theta, problem.props)
        self.prefixes = _build_prefixes(theta, problem.props)
        self.cascade = self.suffixes[0] @ (theta[0][:, None] * self.prefixes[0])
        self.gw = self.cascade @ problem.props.w1
        self.rgw = problem.correlation @ self.gw
        (self.psi, self.psi2, self.qmats, self.s_vals, self.denom, self.gram_trace) = (
            _per_user_stats(self.gw, problem)
        )

    @property
    def objective(self) -> float:
        return float(np.mean(1.0 - self.s_vals / self.denom))

    def prefix_map(self, layer: int) -> np.ndarray:
        """C_l W^1 for the requested layer."""
        return self.prefixes[layer] @ self.problem.props.w1


def gradient_layer(layer: int, context: GradientContext) -> np.ndarray:
    """Closed-form conjugate gradient of the average NMSE for one layer."""
    if not 0 <= layer < context.problem.num_layers:
        raise IndexError(f"layer {layer} out of range")
    return _assemble_gradient(
        context.suffixes[layer],
        context.prefix_map(layer),
        context.gw,
        context.rgw,
        context.psi,
        context.psi2,
        context.qmats,
        context.s_vals,
        context.denom,
        context.problem,
    )


def gradient_terms(layer: int, context: GradientContext):
    """Raw per-layer gradient pieces (grad_denom, grad_los, grad_signal).

    ``grad_signal`` is stacked per user and carries the correlated-signal
    part of the numerator gradient; ``grad_los`` is the shared LoS-energy
    piece used by the paper-literal mode. Useful for inspecting degenerate
    cases and cross-checking the assembled gradient.
    """
    a_mat = context.suffixes[layer]
    cw1 = context.prefix_map(layer)
    e2 = a_mat.conj().T @ context.rgw
    grad_denom = _rowdot(e2, cw1)
    e1 = a_mat.conj().T @ context.gw
    grad_los = _rowdot(e1, cw1)
    per_user = []
    for k in range(context.problem.num_users):
        qk = context.qmats[k]
        qpsi = qk @ context.psi
        b_k = qpsi + qpsi.conj().T - context.problem.q[k] * (qk @ context.psi2 @ qk)
        per_user.append(_rowdot(e2 @ b_k, cw1))
    return grad_denom, grad_los, np.stack(per_user)


def finite_difference_gradient(objective, phases: PhaseStack, layer: int, step: float = 1e-6) -> np.ndarray:
    """Central-difference conjugate gradient of a scalar phase objective.

    Perturbs the real and imaginary parts of each coefficient of the given
    layer and reconstructs (df/dRe + j df/dIm) / 2, the same convention as
    :func:`gradient_layer`.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    theta = phases.theta
    n = theta.shape[1]
    grad = np.empty(n, dtype=complex)
    for idx in range(n):
        samples = []
        for delta in (step, -step, 1j * step, -1j * step):
            perturbed = theta.copy()
            perturbed[layer, idx] += delta
            samples.append(objective(PhaseStack(perturbed)))
        d_re = (samples[0] - samples[1]) / (2.0 * step)
        d_im = (samples[2] - samples[3]) / (2.0 * step)
        grad[idx] = (d_re + 1j * d_im) / 2.0
    return grad


def project_unit_modulus(v: np.ndarray) -> np.ndarray:
    """Nearest unit-modulus vector; exact zeros map to 1."""
    mags = np.abs(v)
    out = np.where(mags > 0.0, v / np.where(mags > 0.0, mags, 1.0), 1.0 + 0.0j)
    return out


@dataclass(frozen=True)
class OptimizerSchedule:
    """Step, stopping and initialization policy of the descent loop.

    Per layer, each line search starts at the previously accepted step
    scaled by ``grow`` (capped at ``step_max``), so the step size adapts to
    the local gradient scale instead of crawling at a fixed stride.
    """

    max_rounds: int = 500
    tol: float = 1e-6
    step0: float = 1.0
    shrink: float = 0.5
    slope: float = 1e-4
    max_backtracks: int = 40
    grow: float = 2.0
    step_max: float = 1e8
    init: str = "ones"
    restarts: int = 0

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if self.grow < 1.0:
            raise ValueError("grow must be >= 1")
        if self.init not in ("ones", "random"):
            raise ValueError(f"unknown init policy {self.init!r}")


@dataclass
class OptimizerResult:
    """Final phases plus the bookkeeping of one descent run."""

    phases: PhaseStack
    objective: float
    objective_trace: list = field(default_factory=list)  # (round, value)
    step_trace: list = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0


def _initial_phases(problem: NmseProblem, init, schedule: OptimizerSchedule) -> PhaseStack:
    if isinstance(init, PhaseStack):
        return PhaseStack(init.theta.copy())
    if isinstance(init, (int, np.integer)):
        rng = np.random.default_rng(int(init))
        return random_phases(rng, problem.num_layers, problem.num_elements)
    if init is not None:
        raise TypeError("init must be a PhaseStack, an integer seed or None")
    if schedule.init == "random":
        raise ValueError("schedule.init='random' requires an integer seed as init")
    return ones_phases(problem.num_layers, problem.num_elements)


def optimize(problem: NmseProblem, init=None, schedule: OptimizerSchedule | None = None) -> OptimizerResult:
    """Alternating projected gradient descent over the layer phase vectors.

    Layers are swept in ascending order; each update is a projected step
    theta - mu * grad with mu from a backtracking line search that only
    accepts a sufficient decrease, so the recorded objective trace never
    increases. Terminates when the relative objective change over a full
    sweep drops below ``tol`` or after ``max_rounds`` sweeps.
    """
    schedule = schedule or OptimizerSchedule()
    phases = _initial_phases(problem, init, schedule)
    theta = phases.theta.copy()
    props = problem.props
    num_layers = problem.num_layers

    def evaluate(gw):
        stats = _per_user_stats(gw, problem)
        s_vals, denom = stats[3], stats[4]
        return stats, float(np.mean(1.0 - s_vals / denom))

    _, current = evaluate(effective_map(theta, props))
    trace = [(0, current)]
    steps = []
    converged = False
    rounds = 0
    step_init = [schedule.step0] * num_layers

    for round_idx in range(1, schedule.max_rounds + 1):
        rounds = round_idx
        round_start = current
        suffixes = _build_suffixes(theta, props)
        prefix = np.eye(problem.num_elements, dtype=complex)
        for layer in range(num_layers):
            if layer > 0:
                prefix = props.inter_layer[layer - 1] @ (theta[layer - 1][:, None] * prefix)
            cw1 = prefix @ props.w1
            a_mat = suffixes[layer]
            gw = a_mat @ (theta[layer][:, None] * cw1)
            # Stats here feed only the gradient; ``current`` is carried from
            # the last accepted step so the trace cannot drift upward by
            # rounding when the product grouping changes between layers.
            psi, psi2, qmats, s_vals, denom, _ = _per_user_stats(gw, problem)
            grad = _assemble_gradient(
                a_mat, cw1, gw, problem.correlation @ gw,
                psi, psi2, qmats, s_vals, denom, problem,
            )
            gnorm2 = float(np.sum(np.abs(grad) ** 2))
            if not gnorm2 > 0.0:
                continue
            mu = step_init[layer]
            for _ in range(schedule.max_backtracks):
                candidate = project_unit_modulus(theta[layer] - mu * grad)
                gw_cand = a_mat @ (candidate[:, None] * cw1)
                try:
                    _, cand_value = evaluate(gw_cand)
                except NumericalError:
                    mu *= schedule.shrink
                    continue
                if cand_value <= current - schedule.slope * mu * gnorm2:
                    theta[layer] = candidate
                    current = cand_value
                    steps.append(mu)
                    step_init[layer] = min(mu * schedule.grow, schedule.step_max)
                    break
                mu *= schedule.shrink
        trace.append((round_idx, current))
        change = abs(round_start - current)
        if change <= schedule.tol * max(abs(round_start), np.finfo(float).tiny):
            converged = True
            break

    return OptimizerResult(
        phases=PhaseStack(theta),
        objective=current,
        objective_trace=trace,
        step_trace=steps,
        converged=converged,
        iterations_used=rounds,
    )


def optimize_with_restarts(
    problem: NmseProblem,
    schedule: OptimizerSchedule,
    seed: int,
    rng_path: tuple = (),
) -> OptimizerResult:
    """Best of one all-ones run plus ``schedule.restarts`` random restarts.

    Restart initializations are keyed off ``seed`` and ``rng_path`` so that
    sweeps stay reproducible. Each individual run keeps the monotone-trace
    contract; only the best final objective is returned.
    """
    from .seeding import ROLE_INIT, spawn_rng

    best = optimize(problem, init=None, schedule=schedule)
    for restart in range(schedule.restarts):
        rng = spawn_rng(seed, ROLE_INIT, *rng_path, restart)
        init = random_phases(rng, problem.num_layers, problem.num_elements)
        result = optimize(problem, init=init, schedule=schedule)
        if result.objective < best.objective:
            best = result
    return best


def codebook_search(rng: np.random.Generator, problem: NmseProblem, size: int):
    """Best of ``size`` independent uniform-phase drawings.

    Candidates are drawn sequentially from ``rng``, so a longer search over
    the same generator state extends (and can only improve on) a shorter
    one. Returns ``(best_phases, best_objective)``.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    best_phases = None
    best_value = np.inf
    for _ in range(size):
        candidate = random_phases(rng, problem.num_layers, problem.num_elements)
        value = objective_avg_nmse(candidate, problem)
        if value < best_value:
            best_value = value
            best_phases = candidate
    return best_phases, float(best_value)


def default_codebook_size(num_layers: int, num_elements: int) -> int:
    """Codebook sizing rule 10 L N used by the baseline scheme."""
    return 10 * num_layers * num_elements
