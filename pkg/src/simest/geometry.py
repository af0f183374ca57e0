"""Deterministic geometry of a stacked-metasurface front end.

Builds the element/antenna coordinates, the free-space coupling matrices
between consecutive layers (Rayleigh-Sommerfeld diffraction), the cascaded
wave-domain beamforming matrix, plane-wave steering vectors, the isotropic
spatial correlation matrix of a layer and the distance-power path-loss law.

Conventions: layers are parallel to the x-y plane and stacked along +z.
The antenna plane sits at z = 0; layer ``l`` (1-based) sits at
``z = l * layer_spacing`` so the outermost layer is at ``z = thickness``.
Element ``n`` of a layer occupies grid cell ``(n // n_y, n % n_y)``
(horizontal index first), matching the index decomposition used by
:func:`steering_vector`.
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, GeometryError

# Relative eigenvalue tolerance below which a correlation matrix is
# considered indefinite and gets clipped back to the PSD cone.
PSD_EPS = 1e-10

CORRELATION_MODELS = ("sinc-isotropic", "identity", "custom-file")


@dataclass(frozen=True)
class SimLayout:
    """Element and antenna coordinates of one stacked-surface configuration."""

    num_layers: int
    num_elements: int
    n_x: int
    n_y: int
    d_h: float
    d_v: float
    layer_spacing: float
    thickness: float
    wavelength: float
    element_area: float
    num_antennas: int
    element_positions: np.ndarray  # (num_layers, num_elements, 3)
    antenna_positions: np.ndarray  # (num_antennas, 3)


@dataclass(frozen=True)
class PropagationSet:
    """Coupling matrices of the stack.

    ``w1[n, a]`` couples antenna ``a`` to element ``n`` of layer 1;
    ``inter_layer[l][n, m]`` couples element ``m`` of layer ``l+1`` to
    element ``n`` of layer ``l+2`` (1-based layer numbering).
    """

    w1: np.ndarray
    inter_layer: list

    @property
    def num_layers(self) -> int:
        return len(self.inter_layer) + 1

    @property
    def num_elements(self) -> int:
        return self.w1.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.w1.shape[1]


@dataclass(frozen=True)
class PhaseStack:
    """Per-layer unit-modulus phase coefficients, shape (num_layers, N)."""

    theta: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.theta.shape[0]

    @property
    def num_elements(self) -> int:
        return self.theta.shape[1]

    def feasibility_error(self) -> float:
        """Largest deviation of any coefficient modulus from 1."""
        return float(np.max(np.abs(np.abs(self.theta) - 1.0)))


def ones_phases(num_layers: int, num_elements: int) -> PhaseStack:
    """All-zero phase shifts (every coefficient equals 1)."""
    return PhaseStack(np.ones((num_layers, num_elements), dtype=complex))


def random_phases(rng: np.random.Generator, num_layers: int, num_elements: int) -> PhaseStack:
    """Independent phases drawn uniformly from [0, 2pi)."""
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(num_layers, num_elements))
    return PhaseStack(np.exp(1j * phi))


def build_layout(
    num_layers: int,
    num_elements: int,
    n_x: int,
    n_y: int,
    wavelength: float,
    thickness: float,
    num_antennas: int,
    d_h: float | None = None,
    d_v: float | None = None,
) -> SimLayout:
    """Construct the element grids and the antenna line array.

    Element pitch defaults to half a wavelength in both directions. Each
    layer is the same grid centered on the stacking axis; the antennas form
    a half-wavelength-spaced linear array along x in the z = 0 plane.
    """
    if num_layers < 1:
        raise ConfigError(f"num_layers: must be >= 1 (got {num_layers})")
    if num_antennas < 1:
        raise ConfigError(f"num_antennas: must be >= 1 (got {num_antennas})")
    if n_x * n_y != num_elements:
        raise ConfigError(
            f"grid: n_x*n_y must equal num_elements (got {n_x}*{n_y} != {num_elements})"
        )
    if wavelength <= 0 or thickness <= 0:
        raise ConfigError("wavelength and thickness must be positive")
    d_h = wavelength / 2.0 if d_h is None else d_h
    d_v = wavelength / 2.0 if d_v is None else d_v
    if d_h <= 0 or d_v <= 0:
        raise ConfigError("element dimensions must be positive")

    spacing = thickness / num_layers
    idx = np.arange(num_elements)
    col = idx // n_y
    row = idx % n_y
    x = (col - (n_x - 1) / 2.0) * d_h
    y = (row - (n_y - 1) / 2.0) * d_v
    grid = np.column_stack([x, y, np.zeros(num_elements)])

    layers = np.stack(
        [grid + np.array([0.0, 0.0, (l + 1) * spacing]) for l in range(num_layers)]
    )

    ant_x = (np.arange(num_antennas) - (num_antennas - 1) / 2.0) * (wavelength / 2.0)
    antennas = np.column_stack(
        [ant_x, np.zeros(num_antennas), np.zeros(num_antennas)]
    )

    return SimLayout(
        num_layers=num_layers,
        num_elements=num_elements,
        n_x=n_x,
        n_y=n_y,
        d_h=d_h,
        d_v=d_v,
        layer_spacing=spacing,
        thickness=thickness,
        wavelength=wavelength,
        element_area=d_h * d_v,
        num_antennas=num_antennas,
        element_positions=layers,
        antenna_positions=antennas,
    )


def _rs_coefficients(delta: np.ndarray, element_area: float, wavelength: float) -> np.ndarray:
    """Rayleigh-Sommerfeld coupling for displacement vectors ``delta``.

    ``delta`` has shape (..., 3) and points from source to destination; the
    source surface normal is +z. Raises on any zero-length displacement.
    """
    r = np.sqrt(np.sum(delta * delta, axis=-1))
    if np.any(r <= 0.0):
        raise GeometryError("coincident source and destination points")
    cos_x = delta[..., 2] / r
    amp = element_area * cos_x / r
    return amp * (1.0 / (2.0 * np.pi * r) - 1j / wavelength) * np.exp(2j * np.pi * r / wavelength)


def diffraction_coefficient(src, dst, element_area: float, wavelength: float) -> complex:
    """Free-space coupling from a source element at ``src`` to a point ``dst``.

    Implements w = (A_t cos x / r) (1/(2 pi r) - j/lambda) e^{j 2 pi r/lambda}
    with cos x the direction cosine of the displacement against the source
    plane's +z normal.
    """
    delta = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    return complex(_rs_coefficients(delta, element_area, wavelength))


def build_propagation_set(layout: SimLayout) -> PropagationSet:
    """Evaluate the coupling matrices for every hop of the stack."""
    first = layout.element_positions[0][:, None, :] - layout.antenna_positions[None, :, :]
    w1 = _rs_coefficients(first, layout.element_area, layout.wavelength)
    inter = []
    for l in range(1, layout.num_layers):
        delta = (
            layout.element_positions[l][:, None, :]
            - layout.element_positions[l - 1][None, :, :]
        )
        inter.append(_rs_coefficients(delta, layout.element_area, layout.wavelength))
    return PropagationSet(w1=w1, inter_layer=inter)


def compose_cascade(phases: PhaseStack, props: PropagationSet) -> np.ndarray:
    """Wave-domain beamforming matrix Theta_L W^L ... Theta_2 W^2 Theta_1."""
    if phases.num_layers != props.num_layers:
        raise ValueError(
            f"layer count mismatch: phases {phases.num_layers}, propagation {props.num_layers}"
        )
    if phases.num_elements != props.num_elements:
        raise ValueError(
            f"element count mismatch: phases {phases.num_elements}, propagation {props.num_elements}"
        )
    cascade = np.diag(phases.theta[0])
    for l in range(1, phases.num_layers):
        cascade = phases.theta[l][:, None] * (props.inter_layer[l - 1] @ cascade)
    return cascade


def steering_vector(
    azimuth: float,
    elevation: float,
    num_elements: int,
    d_elem: float,
    wavelength: float,
    n_y: int | None = None,
) -> np.ndarray:
    """Plane-wave array response of one layer's grid.

    Entry n carries the phase 2 pi (d/lambda) (i sin(el) sin(az) + j cos(el))
    with (i, j) = (n // n_y, n % n_y). ``n_y`` defaults to sqrt(N), which
    requires a perfect-square element count.
    """
    if num_elements < 1:
        raise ValueError(f"num_elements must be positive (got {num_elements})")
    if d_elem <= 0:
        raise ValueError("element spacing must be positive")
    if n_y is None:
        root = int(round(np.sqrt(num_elements)))
        if root * root != num_elements:
            raise ValueError(
                f"num_elements={num_elements} is not a perfect square; pass n_y explicitly"
            )
        n_y = root
    idx = np.arange(num_elements)
    i = idx // n_y
    j = idx % n_y
    phase = (
        2.0 * np.pi * (d_elem / wavelength)
        * (i * np.sin(elevation) * np.sin(azimuth) + j * np.cos(elevation))
    )
    return np.exp(1j * phase)


@dataclass
class CorrelationModel:
    """Spatial correlation matrix of a layer plus its sampling factor."""

    matrix: np.ndarray
    model: str

    @property
    def num_elements(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def sqrt_factor(self) -> np.ndarray:
        """Factor F with F F^H = R, from an eigendecomposition.

        Tolerates semidefinite matrices, which a Cholesky factor would not.
        """
        vals, vecs = np.linalg.eigh(self.matrix)
        vals = np.clip(vals, 0.0, None)
        return vecs * np.sqrt(vals)


def _project_psd(matrix: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero and re-symmetrize."""
    vals, vecs = np.linalg.eigh(matrix)
    scale = max(float(vals[-1]), 1.0)
    if float(vals[0]) >= -PSD_EPS * scale:
        return matrix
    clipped = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
    return (clipped + clipped.conj().T) / 2.0


def _load_custom_correlation(path, num_elements: int) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        raw = np.loadtxt(path, delimiter=",").ravel()
    else:
        raw = np.fromfile(path, dtype=np.float64)
    expected = 2 * num_elements * num_elements
    if raw.size != expected:
        raise ConfigError(
            f"correlation file {path}: expected {expected} real values "
            f"(2*N^2 interleaved re/im), got {raw.size}"
        )
    flat = raw[0::2] + 1j * raw[1::2]
    matrix = flat.reshape(num_elements, num_elements)
    if not np.allclose(matrix, matrix.conj().T, atol=1e-8):
        raise ConfigError(f"correlation file {path}: matrix is not Hermitian")
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-8):
        raise ConfigError(f"correlation file {path}: diagonal entries must equal 1")
    return matrix


def correlation_matrix(layout: SimLayout, model: str = "sinc-isotropic", path=None) -> CorrelationModel:
    """Correlation of the outermost layer's elements.

    The isotropic model gives R[n, m] = sinc(2 d(n, m) / lambda) with the
    normalized sinc; it depends only on pairwise element distances. A
    custom file holds 2 N^2 row-major interleaved re/im float values.
    """
    if model not in CORRELATION_MODELS:
        raise ConfigError(f"correlation model: unknown tag {model!r}")
    n = layout.num_elements
    if model == "identity":
        matrix = np.eye(n, dtype=complex)
    elif model == "sinc-isotropic":
        pos = layout.element_positions[-1]
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        matrix = np.sinc(2.0 * dist / layout.wavelength).astype(complex)
    else:
        if path is None:
            raise ConfigError("correlation model custom-file requires a path")
        matrix = _load_custom_correlation(path, n)
    return CorrelationModel(matrix=_project_psd(matrix), model=model)


def path_loss(distance: float, d0: float, exponent: float, c0: float) -> float:
    """Distance-power law beta = c0 (d/d0)^(-b), valid for d >= d0."""
    if d0 <= 0 or exponent <= 0 or c0 <= 0:
        raise ValueError("path-loss parameters must be positive")
    if distance < d0:
        raise ValueError(f"distance {distance} is below the reference distance {d0}")
    return c0 * (distance / d0) ** (-exponent)


def free_space_reference_gain(wavelength: float, d0: float = 1.0) -> float:
    """Free-space power gain at the reference distance, (lambda / 4 pi d0)^2."""
    return (wavelength / (4.0 * np.pi * d0)) ** 2


@dataclass(frozen=True)
class SimStack:
    """Propagation matrices plus a phase setting, with cached products."""

    props: PropagationSet
    phases: PhaseStack
    cascade: np.ndarray = field(repr=False)        # G, (N, N)
    effective_map: np.ndarray = field(repr=False)  # G W^1, (N, N_t)

    @classmethod
    def build(cls, props: PropagationSet, phases: PhaseStack) -> "SimStack":
        cascade = compose_cascade(phases, props)
        return cls(
            props=props,
            phases=phases,
            cascade=cascade,
            effective_map=cascade @ props.w1,
        )

    def with_phases(self, phases: PhaseStack) -> "SimStack":
        return SimStack.build(self.props, phases)

    @property
    def num_elements(self) -> int:
        return self.props.num_elements

    @property
    def num_antennas(self) -> int:
        return self.props.num_antennas


def identity_stack(num_elements: int) -> SimStack:
    """Single all-ones layer with an identity antenna map.

    Gives a direct observation of the layer-domain channel (G W^1 = I),
    which realizes the conventional full-digital reference system.
    """
    props = PropagationSet(w1=np.eye(num_elements, dtype=complex), inter_layer=[])
    return SimStack.build(props, ones_phases(1, num_elements))
