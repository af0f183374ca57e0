"""Scenario assembly, baselines and the figure-family sweeps.

A sweep produces one :class:`SweepResult`: a flat list of records in a
fixed column layout (see :mod:`simest.reporting`), tagged with the config
hash and master seed. Sweep points can run on a thread pool; records are
always reduced in grid order and every random draw is keyed by the master
seed, so results are identical for any worker count.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import channel, estimator, geometry, optimizer
from .errors import ConfigError
from .scenario import ScenarioConfig, _resolve_grid
from .seeding import (
    ROLE_AOA,
    ROLE_CODEBOOK,
    ROLE_PLACEMENT,
    spawn_rng,
)


@dataclass(frozen=True)
class ScenarioInstance:
    """A config realized into geometry, statistics and user profiles."""

    config: ScenarioConfig
    layout: geometry.SimLayout
    props: geometry.PropagationSet
    correlation: geometry.CorrelationModel
    users: list
    book: channel.PilotBook

    @property
    def q_values(self) -> np.ndarray:
        return np.array([u.q for u in self.users])

    @property
    def kappa_values(self) -> np.ndarray:
        return np.array([u.kappa for u in self.users])


def place_users(config: ScenarioConfig, layout: geometry.SimLayout) -> list:
    """Draw or read user positions and build channel profiles (no fading).

    Ground distances are uniform on [d_min, d_max]; the path loss uses the
    3-D distance to the elevated stack. Angles default to uniform azimuth
    in [-pi/2, pi/2] and elevation in [0, pi/2].
    """
    users = []
    for k in range(config.k):
        if config.user_distances is not None:
            ground = config.user_distances[k]
        else:
            ground = spawn_rng(config.seed, ROLE_PLACEMENT, k).uniform(
                config.d_min, config.d_max
            )
        rng_aoa = spawn_rng(config.seed, ROLE_AOA, k)
        azimuth = rng_aoa.uniform(-np.pi / 2.0, np.pi / 2.0)
        elevation = rng_aoa.uniform(0.0, np.pi / 2.0)
        if config.user_azimuths is not None:
            azimuth = config.user_azimuths[k]
        if config.user_elevations is not None:
            elevation = config.user_elevations[k]
        distance = float(np.hypot(ground, config.height))
        beta = geometry.path_loss(
            distance, config.d0, config.pathloss_exponent, config.pathloss_c0
        )
        los = geometry.steering_vector(
            azimuth, elevation, layout.num_elements, layout.d_h,
            layout.wavelength, n_y=layout.n_y,
        )
        users.append(
            channel.UserChannel(
                beta=beta, kappa=config.kappa_for(k),
                azimuth=azimuth, elevation=elevation, los=los,
            )
        )
    return users


def assemble(config: ScenarioConfig) -> ScenarioInstance:
    """Build geometry, propagation, correlation, users and pilots."""
    layout = geometry.build_layout(
        num_layers=config.l, num_elements=config.n,
        n_x=config.n_x, n_y=config.n_y,
        wavelength=config.wavelength, thickness=config.t_sim,
        num_antennas=config.n_t, d_h=config.d_h, d_v=config.d_v,
    )
    correlation = geometry.correlation_matrix(
        layout, config.correlation_model, path=config.correlation_path
    )
    props = geometry.build_propagation_set(layout)
    users = place_users(config, layout)
    book = channel.make_pilot_book(config.tau, config.k, config.rho, config.sigma2)
    return ScenarioInstance(
        config=config, layout=layout, props=props,
        correlation=correlation, users=users, book=book,
    )


def make_problem(
    instance: ScenarioInstance,
    noise_over_train: float | None = None,
    kappa_override: float | None = None,
    mode: str | None = None,
) -> optimizer.NmseProblem:
    """Objective bundle at the instance's (or an overridden) operating point."""
    q = instance.q_values
    kappa = instance.kappa_values
    if kappa_override is not None:
        beta = np.array([u.beta for u in instance.users])
        kappa = np.full_like(kappa, kappa_override)
        q = beta / (1.0 + kappa)
    return optimizer.NmseProblem(
        props=instance.props,
        correlation=instance.correlation.matrix,
        q=q,
        kappa=kappa,
        noise_over_train=(
            instance.book.noise_over_train if noise_over_train is None else noise_over_train
        ),
        mode=instance.config.nmse_mode if mode is None else mode,
    )


def closed_form_rows(instance: ScenarioInstance, stack: geometry.SimStack):
    """Per-user (paper, consistent) NMSE pairs plus their averages."""
    pairs = []
    for user in instance.users:
        artifacts = estimator.build_artifacts(stack, user, instance.book, instance.correlation)
        pairs.append(
            (
                estimator.nmse_closed_form(artifacts, "paper-literal"),
                estimator.nmse_closed_form(artifacts, "consistent"),
            )
        )
    avg = tuple(float(np.mean([p[i] for p in pairs])) for i in (0, 1))
    return pairs, avg


def conventional_baseline(instance: ScenarioInstance, noise_over_train: float | None = None) -> float:
    """Full-digital reference: one antenna per element, direct observation.

    The single all-ones layer with an identity antenna map turns the
    estimator's Psi into the correlation matrix itself, so the bound is the
    same closed form evaluated at Psi = R. Returns the average consistent
    NMSE over the instance's users.
    """
    c = instance.book.noise_over_train if noise_over_train is None else noise_over_train
    psi = instance.correlation.matrix
    denom = float(np.trace(psi).real)
    values = []
    for user in instance.users:
        qmat = np.linalg.inv(user.q * psi + c * np.eye(instance.config.n))
        signal = user.q * float(np.trace(psi @ qmat @ psi).real)
        values.append(1.0 - signal / denom)
    return float(np.mean(values))


@dataclass(frozen=True)
class SweepRecord:
    """One row of a sweep table."""

    sweep_var: str
    sweep_value: float
    user_id: str
    nmse_paper: float | None = None
    nmse_consistent: float | None = None
    nmse_mc_mean: float | None = None
    nmse_mc_stderr: float | None = None
    baseline: float | None = None
    iterations: int | None = None
    seed: int = 0


@dataclass
class SweepResult:
    """All records of one sweep plus reproducibility metadata."""

    variable: str
    grid: list
    records: list
    config_hash: str
    seed: int
    wall_time_s: float = 0.0


def _point_rows(
    tag: str,
    value: float,
    instance: ScenarioInstance,
    stack: geometry.SimStack,
    iterations: int,
    baseline: float | None,
    mc: estimator.McNmse | None,
    per_user: bool = True,
):
    """Rows for one optimized grid point: per-user rows then the average."""
    pairs, avg = closed_form_rows(instance, stack)
    seed = instance.config.seed
    rows = []
    if per_user:
        for k, (paper, consistent) in enumerate(pairs):
            rows.append(
                SweepRecord(
                    sweep_var=tag, sweep_value=value, user_id=str(k),
                    nmse_paper=paper, nmse_consistent=consistent,
                    nmse_mc_mean=None if mc is None else float(mc.user_means[k]),
                    nmse_mc_stderr=None if mc is None else float(mc.user_stderrs[k]),
                    baseline=baseline, iterations=iterations, seed=seed,
                )
            )
    rows.append(
        SweepRecord(
            sweep_var=tag, sweep_value=value, user_id="avg",
            nmse_paper=avg[0], nmse_consistent=avg[1],
            nmse_mc_mean=None if mc is None else mc.mean,
            nmse_mc_stderr=None if mc is None else mc.stderr,
            baseline=baseline, iterations=iterations, seed=seed,
        )
    )
    return rows


def _map_points(fn, points, workers: int):
    """Evaluate ``fn`` over indexed points, reducing in grid order."""
    if workers <= 1:
        return [fn(i, p) for i, p in enumerate(points)]
    results = [None] * len(points)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(fn, i, p): i for i, p in enumerate(points)}
        for future, idx in futures.items():
            results[idx] = future.result()
    return results


def variant_config(config: ScenarioConfig, n: int | None = None, l: int | None = None) -> ScenarioConfig:
    """Copy of the config at a different stack size, grid re-inferred."""
    updates = {}
    if l is not None:
        updates["l"] = l
    if n is not None and n != config.n:
        n_x, n_y = _resolve_grid({}, n)
        updates.update(n=n, n_x=n_x, n_y=n_y)
    return replace(config, **updates) if updates else config


def run_convergence_sweep(config: ScenarioConfig, pairs=None) -> SweepResult:
    """Optimizer objective traces for (N, L) pairs on a common seed."""
    pairs = list(pairs if pairs is not None else config.sweep.pairs)
    start = time.perf_counter()
    records = []
    max_rounds = 0
    for n, l in pairs:
        cfg = variant_config(config, n=n, l=l)
        instance = assemble(cfg)
        problem = make_problem(instance)
        result = optimizer.optimize(problem, init=None, schedule=cfg.optimizer)
        max_rounds = max(max_rounds, result.iterations_used)
        tag = f"iteration(N={n},L={l})"
        consistent = cfg.nmse_mode == "consistent"
        for round_idx, value in result.objective_trace:
            records.append(
                SweepRecord(
                    sweep_var=tag, sweep_value=round_idx, user_id="avg",
                    nmse_paper=None if consistent else value,
                    nmse_consistent=value if consistent else None,
                    seed=cfg.seed,
                )
            )
    return SweepResult(
        variable="iterations",
        grid=list(range(max_rounds + 1)),
        records=records,
        config_hash=config.config_hash(),
        seed=config.seed,
        wall_time_s=time.perf_counter() - start,
    )


def run_layer_sweep(config: ScenarioConfig, layer_grid=None, workers: int = 1) -> SweepResult:
    """Optimized NMSE against the layer count, with both baselines.

    The geometry is rebuilt per point (the layer spacing is the total depth
    divided by the layer count). The full-digital bound does not depend on
    the layer count and is attached to every row.
    """
    grid = [int(v) for v in (layer_grid if layer_grid is not None else config.sweep.layers)]
    if not grid:
        raise ConfigError("layer sweep: grid must be non-empty")
    start = time.perf_counter()
    bound = conventional_baseline(assemble(variant_config(config, l=grid[0])))

    def point(idx, l):
        cfg = variant_config(config, l=l)
        instance = assemble(cfg)
        problem = make_problem(instance)
        best = optimizer.optimize_with_restarts(
            problem, cfg.optimizer, cfg.seed, rng_path=(idx,)
        )
        stack = geometry.SimStack.build(instance.props, best.phases)
        rows = _point_rows(
            "layers", float(l), instance, stack,
            iterations=best.iterations_used, baseline=bound, mc=None,
        )
        rng = spawn_rng(cfg.seed, ROLE_CODEBOOK, idx)
        size = optimizer.default_codebook_size(cfg.l, cfg.n)
        _, best_random = optimizer.codebook_search(rng, problem, size)
        rows.append(
            SweepRecord(
                sweep_var="layers:codebook", sweep_value=float(l), user_id="avg",
                nmse_consistent=best_random, baseline=bound, seed=cfg.seed,
            )
        )
        return rows

    rows = _map_points(point, grid, workers)
    records = [r for point_rows in rows for r in point_rows]
    return SweepResult(
        variable="layers", grid=grid, records=records,
        config_hash=config.config_hash(), seed=config.seed,
        wall_time_s=time.perf_counter() - start,
    )


def run_snr_sweep(config: ScenarioConfig, snr_grid_db=None, workers: int = 1) -> SweepResult:
    """Optimized NMSE against the training SNR tau rho / sigma^2.

    The grid is swept by scaling the pilot power at fixed noise power. Each
    point records the optimized closed forms, a Monte-Carlo verification,
    the codebook and full-digital baselines, and closed-form variants at
    Rician factors 0 and 10.
    """
    grid = [float(v) for v in (snr_grid_db if snr_grid_db is not None else config.sweep.snr_db)]
    if not grid:
        raise ConfigError("snr sweep: grid must be non-empty")
    start = time.perf_counter()
    base_instance = assemble(config)

    def point(idx, snr_db):
        rho = config.sigma2 * 10.0 ** (snr_db / 10.0) / config.tau
        cfg = replace(config, rho=rho)
        instance = replace(
            base_instance,
            config=cfg,
            book=channel.make_pilot_book(cfg.tau, cfg.k, rho, cfg.sigma2),
        )
        problem = make_problem(instance)
        best = optimizer.optimize_with_restarts(
            problem, cfg.optimizer, cfg.seed, rng_path=(idx, 0)
        )
        stack = geometry.SimStack.build(instance.props, best.phases)
        mc = estimator.nmse_monte_carlo(
            cfg.seed, stack, instance.users, instance.book,
            instance.correlation, cfg.trials,
        )
        bound = conventional_baseline(instance)
        rows = _point_rows(
            "snr", snr_db, instance, stack,
            iterations=best.iterations_used, baseline=bound, mc=mc,
        )
        rng = spawn_rng(cfg.seed, ROLE_CODEBOOK, idx)
        size = optimizer.default_codebook_size(cfg.l, cfg.n)
        _, best_random = optimizer.codebook_search(rng, problem, size)
        rows.append(
            SweepRecord(
                sweep_var="snr:codebook", sweep_value=snr_db, user_id="avg",
                nmse_consistent=best_random, baseline=bound, seed=cfg.seed,
            )
        )
        for variant_kappa in (0.0, 10.0):
            vproblem = make_problem(instance, kappa_override=variant_kappa)
            vbest = optimizer.optimize_with_restarts(
                vproblem, cfg.optimizer, cfg.seed, rng_path=(idx, 1 + int(variant_kappa))
            )
            rows.append(
                SweepRecord(
                    sweep_var=f"snr:kappa{variant_kappa:g}", sweep_value=snr_db,
                    user_id="avg", nmse_consistent=vbest.objective,
                    iterations=vbest.iterations_used, seed=cfg.seed,
                )
            )
        return rows

    rows = _map_points(point, grid, workers)
    records = [r for point_rows in rows for r in point_rows]
    return SweepResult(
        variable="snr", grid=grid, records=records,
        config_hash=config.config_hash(), seed=config.seed,
        wall_time_s=time.perf_counter() - start,
    )


def run_single(config: ScenarioConfig):
    """Optimize one scenario and verify the result by Monte Carlo.

    Returns the result table and the winning optimizer run.
    """
    start = time.perf_counter()
    instance = assemble(config)
    problem = make_problem(instance)
    init_value = optimizer.objective_avg_nmse(
        geometry.ones_phases(config.l, config.n), problem
    )
    best = optimizer.optimize_with_restarts(problem, config.optimizer, config.seed)
    stack = geometry.SimStack.build(instance.props, best.phases)
    mc = estimator.nmse_monte_carlo(
        config.seed, stack, instance.users, instance.book,
        instance.correlation, config.trials,
    )
    bound = conventional_baseline(instance)
    records = _point_rows(
        "scenario", 0.0, instance, stack,
        iterations=best.iterations_used, baseline=bound, mc=mc,
    )
    records.append(
        SweepRecord(
            sweep_var="scenario:init", sweep_value=0.0, user_id="avg",
            nmse_consistent=init_value if config.nmse_mode == "consistent" else None,
            nmse_paper=init_value if config.nmse_mode == "paper-literal" else None,
            baseline=bound, seed=config.seed,
        )
    )
    result = SweepResult(
        variable="scenario", grid=[0.0], records=records,
        config_hash=config.config_hash(), seed=config.seed,
        wall_time_s=time.perf_counter() - start,
    )
    return result, best


def random_problem(rng, n: int, l: int, n_t: int, k: int, mode: str = "consistent") -> optimizer.NmseProblem:
    """Random well-posed instance for gradient and estimator checks."""
    def crandn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    w1 = crandn(n, n_t) / np.sqrt(n)
    inter = [crandn(n, n) / np.sqrt(n) for _ in range(l - 1)]
    props = geometry.PropagationSet(w1=w1, inter_layer=inter)
    a = crandn(n, n)
    corr = a @ a.conj().T
    scale = np.sqrt(np.real(np.diag(corr)))
    corr = corr / np.outer(scale, scale)
    corr = (corr + corr.conj().T) / 2.0
    q = rng.uniform(0.2, 2.0, size=k)
    kappa = rng.uniform(0.0, 10.0, size=k)
    noise_over_train = 10.0 ** rng.uniform(-2.0, 0.0)
    return optimizer.NmseProblem(
        props=props, correlation=corr, q=q, kappa=kappa,
        noise_over_train=noise_over_train, mode=mode,
    )


def gradient_check(
    seed: int = 0,
    instances: int = 50,
    mode: str = "consistent",
    sizes=((4, 1), (8, 2), (16, 3)),
    n_t: int = 2,
    k: int = 2,
    step: float = 1e-6,
):
    """Analytic against finite-difference gradients on random instances.

    Cycles through the (N, L) sizes, checks every layer of every instance
    and returns (max relative l2 error, per-instance list of
    (n, l, layer, error)).
    """
    rng = np.random.default_rng(seed)
    report = []
    worst = 0.0
    for i in range(instances):
        n, l = sizes[i % len(sizes)]
        problem = random_problem(rng, n, l, n_t, k, mode=mode)
        phases = geometry.random_phases(rng, l, n)
        context = optimizer.GradientContext(problem, phases)

        def objective(candidate):
            return optimizer.objective_avg_nmse(candidate, problem)

        for layer in range(l):
            analytic = optimizer.gradient_layer(layer, context)
            numeric = optimizer.finite_difference_gradient(objective, phases, layer, step=step)
            scale = np.linalg.norm(numeric)
            err = np.linalg.norm(analytic - numeric) / (scale if scale > 0 else 1.0)
            report.append((n, l, layer, float(err)))
            worst = max(worst, float(err))
    return worst, report
