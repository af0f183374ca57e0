"""Scenario configuration: schema, defaults, validation and hashing.

Documents are TOML (canonical) or JSON. Absent fields take the default
uplink setup: a 4-antenna station serving 4 users through a 32-element,
6-layer stack of half-wavelength cells, 5-wavelength total depth, users
placed 60 to 80 m away at 10 m station height, Rician factor 10, 1 W pilot
power, -110 dBm noise and as many pilot slots as users.
"""

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .optimizer import OptimizerSchedule

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

SPEED_OF_LIGHT = 299792458.0
DEFAULT_CARRIER_HZ = 28e9

CORRELATION_TAGS = ("sinc-isotropic", "identity", "custom-file")
NMSE_TAGS = ("consistent", "paper-literal")


@dataclass(frozen=True)
class SweepDefaults:
    """Grids used when the CLI does not pass one explicitly."""

    layers: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    snr_db: tuple = (115.0, 125.0, 135.0, 145.0, 155.0)
    pairs: tuple = ((32, 2), (32, 6), (64, 6))  # (N, L) convergence traces


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated physical and protocol parameters of one scenario."""

    n_t: int = 4
    k: int = 4
    n: int = 32
    l: int = 6
    n_x: int = 8
    n_y: int = 4
    wavelength: float = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ
    t_sim: float = 5.0 * SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ
    d_h: float = 0.5 * SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ
    d_v: float = 0.5 * SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ
    height: float = 10.0
    d_min: float = 60.0
    d_max: float = 80.0
    d0: float = 1.0
    pathloss_exponent: float = 3.5
    pathloss_constant: float | None = None  # default (lambda / 4 pi d0)^2
    kappa: tuple = (10.0,)  # broadcast to all users when length 1
    rho: float = 1.0
    sigma2: float = 1e-14  # -110 dBm
    tau: int = 4
    tau_c: int | None = None   # coherence length, carried as metadata
    p: float | None = None     # data-phase power, carried as metadata
    correlation_model: str = "sinc-isotropic"
    correlation_path: str | None = None
    nmse_mode: str = "consistent"
    seed: int = 0
    trials: int = 1000
    reoptimize_every: int = 1
    user_distances: tuple | None = None
    user_azimuths: tuple | None = None
    user_elevations: tuple | None = None
    optimizer: OptimizerSchedule = field(default_factory=OptimizerSchedule)
    sweep: SweepDefaults = field(default_factory=SweepDefaults)

    @property
    def pathloss_c0(self) -> float:
        if self.pathloss_constant is not None:
            return self.pathloss_constant
        return (self.wavelength / (4.0 * np.pi * self.d0)) ** 2

    def kappa_for(self, user: int) -> float:
        return self.kappa[0] if len(self.kappa) == 1 else self.kappa[user]

    def training_snr_db(self) -> float:
        return 10.0 * np.log10(self.tau * self.rho / self.sigma2)

    def normalized(self) -> dict:
        """Plain serializable dict of every resolved field."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, OptimizerSchedule):
                value = dict(sorted(value.__dict__.items()))
            elif isinstance(value, SweepDefaults):
                value = {
                    "layers": list(value.layers),
                    "snr_db": list(value.snr_db),
                    "pairs": [list(p) for p in value.pairs],
                }
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def config_hash(self) -> str:
        payload = json.dumps(self.normalized(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _as_int(raw, name: str) -> int:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{name}: expected an integer (got {raw!r})")
    if isinstance(raw, float):
        if not raw.is_integer():
            raise ConfigError(f"{name}: expected an integer (got {raw!r})")
        raw = int(raw)
    return int(raw)


def _as_float(raw, name: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{name}: expected a number (got {raw!r})")
    return float(raw)


def _as_str(raw, name: str) -> str:
    if not isinstance(raw, str):
        raise ConfigError(f"{name}: expected a string (got {raw!r})")
    return raw


def _as_number_list(raw, name: str) -> tuple:
    if not isinstance(raw, (list, tuple)):
        raise ConfigError(f"{name}: expected a list of numbers (got {raw!r})")
    return tuple(_as_float(v, f"{name}[{i}]") for i, v in enumerate(raw))


_KNOWN_KEYS = {
    "n_t", "k", "n", "l", "n_x", "n_y",
    "wavelength", "carrier_hz", "t_sim", "t_sim_lambda", "d_h", "d_v",
    "height", "d_min", "d_max", "d0", "pathloss_exponent", "pathloss_constant",
    "kappa", "rho", "sigma2", "sigma2_dbm", "tau", "tau_c", "p",
    "correlation", "correlation_model", "correlation_path",
    "nmse_mode", "seed", "trials", "reoptimize_every",
    "user_distances", "user_azimuths", "user_elevations",
    "optimizer", "sweep",
}

_OPTIMIZER_KEYS = {
    "max_rounds", "tol", "step0", "shrink", "slope", "max_backtracks",
    "init", "restarts",
}


def _resolve_grid(doc: dict, n: int) -> tuple:
    """Infer (n_x, n_y) from whatever subset the document provides."""
    n_x = doc.get("n_x")
    n_y = doc.get("n_y")
    if n_x is not None:
        n_x = _as_int(n_x, "n_x")
    if n_y is not None:
        n_y = _as_int(n_y, "n_y")
    if n_x is not None and n_y is not None:
        _require(n_x * n_y == n, f"n_x*n_y: must equal n (got {n_x}*{n_y} != {n})")
        return n_x, n_y
    if n_x is not None:
        _require(n % n_x == 0, f"n_x: {n_x} does not divide n={n}")
        return n_x, n // n_x
    if n_y is not None:
        _require(n % n_y == 0, f"n_y: {n_y} does not divide n={n}")
        return n // n_y, n_y
    if n % 8 == 0:
        return 8, n // 8
    root = int(round(np.sqrt(n)))
    if root * root == n:
        return root, root
    raise ConfigError(f"n: cannot infer a grid for n={n}; give n_x and/or n_y")


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    """Validate a parsed document and fill every default."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a table/object")
    unknown = set(doc) - _KNOWN_KEYS
    _require(not unknown, f"unknown configuration keys: {sorted(unknown)}")

    n_t = _as_int(doc.get("n_t", 4), "n_t")
    k = _as_int(doc.get("k", 4), "k")
    n = _as_int(doc.get("n", 32), "n")
    l = _as_int(doc.get("l", 6), "l")
    _require(n_t >= 1, f"n_t: must be >= 1 (got {n_t})")
    _require(k >= 1, f"k: must be >= 1 (got {k})")
    _require(n >= 1, f"n: must be >= 1 (got {n})")
    _require(l >= 1, f"l: must be >= 1 (got {l})")
    n_x, n_y = _resolve_grid(doc, n)

    if "wavelength" in doc and "carrier_hz" in doc:
        raise ConfigError("wavelength and carrier_hz are mutually exclusive")
    if "carrier_hz" in doc:
        carrier = _as_float(doc["carrier_hz"], "carrier_hz")
        _require(carrier > 0, "carrier_hz: must be positive")
        wavelength = SPEED_OF_LIGHT / carrier
    else:
        wavelength = _as_float(doc.get("wavelength", SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ), "wavelength")
    _require(wavelength > 0, "wavelength: must be positive")

    if "t_sim" in doc and "t_sim_lambda" in doc:
        raise ConfigError("t_sim and t_sim_lambda are mutually exclusive")
    if "t_sim" in doc:
        t_sim = _as_float(doc["t_sim"], "t_sim")
    else:
        t_sim = _as_float(doc.get("t_sim_lambda", 5.0), "t_sim_lambda") * wavelength
    _require(t_sim > 0, "t_sim: must be positive")

    d_h = _as_float(doc.get("d_h", wavelength / 2.0), "d_h")
    d_v = _as_float(doc.get("d_v", wavelength / 2.0), "d_v")
    _require(d_h > 0 and d_v > 0, "d_h/d_v: must be positive")

    height = _as_float(doc.get("height", 10.0), "height")
    d_min = _as_float(doc.get("d_min", 60.0), "d_min")
    d_max = _as_float(doc.get("d_max", 80.0), "d_max")
    d0 = _as_float(doc.get("d0", 1.0), "d0")
    _require(d0 > 0, "d0: must be positive")
    _require(d_min >= d0, f"d_min: must be >= d0 (got {d_min} < {d0})")
    _require(d_max >= d_min, f"d_max: must be >= d_min (got {d_max} < {d_min})")
    pathloss_exponent = _as_float(doc.get("pathloss_exponent", 3.5), "pathloss_exponent")
    _require(pathloss_exponent > 0, "pathloss_exponent: must be positive")
    pathloss_constant = None
    if "pathloss_constant" in doc:
        pathloss_constant = _as_float(doc["pathloss_constant"], "pathloss_constant")
        _require(pathloss_constant > 0, "pathloss_constant: must be positive")

    raw_kappa = doc.get("kappa", 10.0)
    if isinstance(raw_kappa, (list, tuple)):
        kappa = _as_number_list(raw_kappa, "kappa")
        _require(len(kappa) in (1, k), f"kappa: expected 1 or {k} values (got {len(kappa)})")
    else:
        kappa = (_as_float(raw_kappa, "kappa"),)
    _require(all(v >= 0 for v in kappa), "kappa: values must be >= 0")

    rho = _as_float(doc.get("rho", 1.0), "rho")
    _require(rho > 0, f"rho: must be positive (got {rho})")
    if "sigma2" in doc and "sigma2_dbm" in doc:
        raise ConfigError("sigma2 and sigma2_dbm are mutually exclusive")
    if "sigma2" in doc:
        sigma2 = _as_float(doc["sigma2"], "sigma2")
    else:
        sigma2 = dbm_to_watts(_as_float(doc.get("sigma2_dbm", -110.0), "sigma2_dbm"))
    _require(sigma2 > 0, f"sigma2: must be positive (got {sigma2})")

    tau = _as_int(doc.get("tau", k), "tau")
    _require(tau >= k, f"tau: must be >= k (got {tau} < {k})")
    tau_c = _as_int(doc["tau_c"], "tau_c") if "tau_c" in doc else None
    p = _as_float(doc["p"], "p") if "p" in doc else None
    if p is not None:
        _require(p > 0, f"p: must be positive (got {p})")

    corr = doc.get("correlation", {})
    if corr and not isinstance(corr, dict):
        raise ConfigError("correlation: expected a table with model/path")
    correlation_model = _as_str(
        doc.get("correlation_model", corr.get("model", "sinc-isotropic")),
        "correlation.model",
    )
    _require(
        correlation_model in CORRELATION_TAGS,
        f"correlation.model: unknown tag {correlation_model!r}",
    )
    correlation_path = doc.get("correlation_path", corr.get("path"))
    if correlation_model == "custom-file":
        _require(correlation_path is not None, "correlation.path: required for custom-file")

    nmse_mode = _as_str(doc.get("nmse_mode", "consistent"), "nmse_mode")
    _require(nmse_mode in NMSE_TAGS, f"nmse_mode: unknown tag {nmse_mode!r}")

    seed = _as_int(doc.get("seed", 0), "seed")
    trials = _as_int(doc.get("trials", 1000), "trials")
    _require(trials >= 2, f"trials: must be >= 2 (got {trials})")
    reoptimize_every = _as_int(doc.get("reoptimize_every", 1), "reoptimize_every")
    _require(reoptimize_every >= 1, "reoptimize_every: must be >= 1")

    def _user_list(key):
        if key not in doc:
            return None
        values = _as_number_list(doc[key], key)
        _require(len(values) == k, f"{key}: expected {k} values (got {len(values)})")
        return values

    user_distances = _user_list("user_distances")
    if user_distances is not None:
        _require(
            all(d0 <= d for d in user_distances),
            "user_distances: every distance must be >= d0",
        )
    user_azimuths = _user_list("user_azimuths")
    user_elevations = _user_list("user_elevations")

    opt_doc = doc.get("optimizer", {})
    if not isinstance(opt_doc, dict):
        raise ConfigError("optimizer: expected a table")
    unknown = set(opt_doc) - _OPTIMIZER_KEYS
    _require(not unknown, f"optimizer: unknown keys {sorted(unknown)}")
    try:
        optimizer = OptimizerSchedule(
            max_rounds=_as_int(opt_doc.get("max_rounds", 500), "optimizer.max_rounds"),
            tol=_as_float(opt_doc.get("tol", 1e-6), "optimizer.tol"),
            step0=_as_float(opt_doc.get("step0", 1.0), "optimizer.step0"),
            shrink=_as_float(opt_doc.get("shrink", 0.5), "optimizer.shrink"),
            slope=_as_float(opt_doc.get("slope", 1e-4), "optimizer.slope"),
            max_backtracks=_as_int(opt_doc.get("max_backtracks", 40), "optimizer.max_backtracks"),
            init=_as_str(opt_doc.get("init", "ones"), "optimizer.init"),
            restarts=_as_int(opt_doc.get("restarts", 4), "optimizer.restarts"),
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from exc

    sweep_doc = doc.get("sweep", {})
    if not isinstance(sweep_doc, dict):
        raise ConfigError("sweep: expected a table")
    unknown = set(sweep_doc) - {"layers", "snr_db", "pairs"}
    _require(not unknown, f"sweep: unknown keys {sorted(unknown)}")
    defaults = SweepDefaults()
    layers = tuple(
        _as_int(v, "sweep.layers") for v in sweep_doc.get("layers", defaults.layers)
    )
    _require(all(v >= 1 for v in layers), "sweep.layers: entries must be >= 1")
    snr_db = tuple(
        _as_float(v, "sweep.snr_db") for v in sweep_doc.get("snr_db", defaults.snr_db)
    )
    pairs_raw = sweep_doc.get("pairs", defaults.pairs)
    pairs = []
    for i, pair in enumerate(pairs_raw):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"sweep.pairs[{i}]: expected [n, l]")
        pairs.append((_as_int(pair[0], f"sweep.pairs[{i}].n"), _as_int(pair[1], f"sweep.pairs[{i}].l")))
    sweep = SweepDefaults(layers=layers, snr_db=snr_db, pairs=tuple(pairs))

    return ScenarioConfig(
        n_t=n_t, k=k, n=n, l=l, n_x=n_x, n_y=n_y,
        wavelength=wavelength, t_sim=t_sim, d_h=d_h, d_v=d_v,
        height=height, d_min=d_min, d_max=d_max, d0=d0,
        pathloss_exponent=pathloss_exponent, pathloss_constant=pathloss_constant,
        kappa=kappa, rho=rho, sigma2=sigma2, tau=tau, tau_c=tau_c, p=p,
        correlation_model=correlation_model,
        correlation_path=None if correlation_path is None else str(correlation_path),
        nmse_mode=nmse_mode, seed=seed, trials=trials,
        reoptimize_every=reoptimize_every,
        user_distances=user_distances, user_azimuths=user_azimuths,
        user_elevations=user_elevations,
        optimizer=optimizer, sweep=sweep,
    )


def _parse_text(text: str) -> dict:
    stripped = text.strip()
    if not stripped:
        return {}
    if stripped.startswith("{"):
        try:
            return json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON document: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML document: {exc}") from exc


def load_scenario(source=None) -> ScenarioConfig:
    """Build a config from a path, inline TOML/JSON text, a dict or None."""
    if source is None:
        return scenario_from_dict({})
    if isinstance(source, dict):
        return scenario_from_dict(source)
    if isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source and Path(source).suffix in (".toml", ".json")
    ):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"scenario file not found: {path}")
        text = path.read_text()
        if path.suffix == ".json":
            try:
                return scenario_from_dict(json.loads(text) if text.strip() else {})
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return scenario_from_dict(_parse_text(text))
    if isinstance(source, str):
        return scenario_from_dict(_parse_text(source))
    raise ConfigError(f"cannot load a scenario from {type(source).__name__}")


# Document keys that override a stored counterpart: setting one half of a
# pair must drop the other half so the exclusivity check stays meaningful.
_EXCLUSIVE = {
    "sigma2": "sigma2_dbm", "sigma2_dbm": "sigma2",
    "wavelength": "carrier_hz", "carrier_hz": "wavelength",
    "t_sim": "t_sim_lambda", "t_sim_lambda": "t_sim",
}


def apply_overrides(config: ScenarioConfig, overrides: dict) -> ScenarioConfig:
    """Re-validate the config with dotted-path overrides merged in.

    Keys use the document schema, e.g. ``optimizer.tol`` or ``n``.
    """
    doc = _config_to_doc(config)
    for key, value in overrides.items():
        parts = key.split(".")
        if len(parts) == 1 and key in _EXCLUSIVE:
            doc.pop(_EXCLUSIVE[key], None)
        cursor = doc
        for part in parts[:-1]:
            cursor = cursor.setdefault(part, {})
            if not isinstance(cursor, dict):
                raise ConfigError(f"override {key}: {part} is not a table")
        cursor[parts[-1]] = value
    return scenario_from_dict(doc)


def _config_to_doc(config: ScenarioConfig) -> dict:
    """Config back to document form so overrides re-run full validation.

    Values still sitting at their derived defaults (grid shape, pilot slot
    count, wavelength-relative sizes) are omitted so that overriding their
    driver, e.g. ``n`` or ``wavelength``, re-derives them.
    """
    doc = {
        "n_t": config.n_t, "k": config.k, "n": config.n, "l": config.l,
        "wavelength": config.wavelength,
        "height": config.height, "d_min": config.d_min, "d_max": config.d_max,
        "d0": config.d0, "pathloss_exponent": config.pathloss_exponent,
        "kappa": list(config.kappa), "rho": config.rho, "sigma2": config.sigma2,
        "correlation_model": config.correlation_model,
        "nmse_mode": config.nmse_mode, "seed": config.seed,
        "trials": config.trials, "reoptimize_every": config.reoptimize_every,
        "optimizer": dict(config.optimizer.__dict__),
        "sweep": {
            "layers": list(config.sweep.layers),
            "snr_db": list(config.sweep.snr_db),
            "pairs": [list(p) for p in config.sweep.pairs],
        },
    }
    try:
        inferred_grid = _resolve_grid({}, config.n)
    except ConfigError:
        inferred_grid = None
    if (config.n_x, config.n_y) != inferred_grid:
        doc["n_x"] = config.n_x
        doc["n_y"] = config.n_y
    if config.tau != config.k:
        doc["tau"] = config.tau
    if config.t_sim != 5.0 * config.wavelength:
        doc["t_sim"] = config.t_sim
    if config.d_h != config.wavelength / 2.0:
        doc["d_h"] = config.d_h
    if config.d_v != config.wavelength / 2.0:
        doc["d_v"] = config.d_v
    if config.pathloss_constant is not None:
        doc["pathloss_constant"] = config.pathloss_constant
    if config.correlation_path is not None:
        doc["correlation_path"] = config.correlation_path
    if config.tau_c is not None:
        doc["tau_c"] = config.tau_c
    if config.p is not None:
        doc["p"] = config.p
    if config.user_distances is not None:
        doc["user_distances"] = list(config.user_distances)
    if config.user_azimuths is not None:
        doc["user_azimuths"] = list(config.user_azimuths)
    if config.user_elevations is not None:
        doc["user_elevations"] = list(config.user_elevations)
    return doc
