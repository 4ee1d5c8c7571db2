"""Diagonal linear operators, their eigenbases and the semigroup they generate.

States are stored internally as spectral arrays of shape ``(..., n_components, M)``.
For periodic grids the last axis holds the first ``M`` complex rfft coefficients
(the Nyquist mode is always dropped); for Dirichlet grids it holds real sine
coefficients. The public coordinates of a field are the coefficients in the
H-orthonormal real basis ``e_k``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


class SpectralError(ValueError):
    pass


class DegenerateSpectrumError(SpectralError):
    pass


@dataclass(frozen=True)
class Grid:
    n_points: int
    length: float
    boundary: str = "periodic"

    def __post_init__(self):
        n = int(self.n_points)
        if n < 8 or n & (n - 1):
            raise SpectralError(f"n_points must be a power of two >= 8, got {self.n_points}")
        if not self.length > 0:
            raise SpectralError(f"length must be positive, got {self.length}")
        if self.boundary not in ("periodic", "dirichlet"):
            raise SpectralError(f"unknown boundary {self.boundary!r}")

    def max_modes(self):
        return self.n_points // 2 if self.boundary == "periodic" else self.n_points


class FourierBasis:
    """Real Fourier basis [1, cos k1 x, sin k1 x, ...] on a periodic interval."""

    boundary = "periodic"
    has_symmetry = True

    def __init__(self, grid, n_modes, n_components=1):
        if n_modes > grid.n_points // 2:
            raise SpectralError(f"n_modes={n_modes} exceeds resolvable {grid.n_points // 2}")
        if n_modes < 1:
            raise SpectralError("n_modes must be positive")
        self.grid = grid
        self.n = grid.n_points
        self.M = int(n_modes)
        self.ncomp = int(n_components)
        ell = grid.length
        self.x = np.arange(self.n) * ell / self.n
        self.k = 2 * np.pi * np.arange(self.M) / ell
        self.mu = self.k**2
        # translation x -> x - alpha multiplies mode j by exp(i kappa_j alpha)
        self.kappa = -self.k
        self.period = ell
        w = np.full(self.M, 2.0 * ell / self.n**2)
        w[0] = ell / self.n**2
        self.weights = w
        self.dim_per_comp = 2 * self.M - 1
        self.dim = self.ncomp * self.dim_per_comp
        self.dtype = complex
        self._s0 = self.n / np.sqrt(ell)
        self._s1 = self.n / np.sqrt(2 * ell)
        # E-norm of each real basis function, per-component ordering
        en = np.full(self.dim_per_comp, np.sqrt(2 / ell))
        en[0] = 1 / np.sqrt(ell)
        self.e_norms_comp = en
        # frequency index of each real coordinate
        self.freq_of_coord = np.concatenate([[0], np.repeat(np.arange(1, self.M), 2)])

    @property
    def spec_shape(self):
        return (self.ncomp, self.M)

    def to_values(self, Y):
        full = np.zeros(Y.shape[:-1] + (self.n // 2 + 1,), complex)
        full[..., : self.M] = Y
        return np.fft.irfft(full, n=self.n, axis=-1)

    def to_spec(self, U):
        return np.fft.rfft(U, axis=-1)[..., : self.M]

    def to_coeffs(self, Y):
        c = np.empty(Y.shape[:-1] + (self.dim_per_comp,))
        c[..., 0] = Y[..., 0].real / self._s0
        c[..., 1::2] = Y[..., 1:].real / self._s1
        c[..., 2::2] = -Y[..., 1:].imag / self._s1
        return c.reshape(Y.shape[:-2] + (self.dim,))

    def from_coeffs(self, c):
        c = np.asarray(c, float)
        c = c.reshape(c.shape[:-1] + (self.ncomp, self.dim_per_comp))
        Y = np.empty(c.shape[:-1] + (self.M,), complex)
        Y[..., 0] = c[..., 0] * self._s0
        Y[..., 1:] = (c[..., 1::2] - 1j * c[..., 2::2]) * self._s1
        return Y

    def inner(self, A, B):
        """H inner product over the trailing two axes."""
        return np.sum(self.weights * (A * np.conj(B)).real, axis=(-2, -1))

    def e_norm(self, Y):
        return np.max(np.abs(self.to_values(Y)), axis=(-2, -1))

    def act(self, Y, alpha):
        """Translate by alpha; alpha broadcasts against the leading axes of Y."""
        alpha = np.asarray(alpha, float)
        return Y * np.exp(1j * self.kappa * alpha[..., None, None])

    def generator(self, Y):
        return 1j * self.kappa * Y

    def derivative(self, Y):
        return 1j * self.k * Y


class SineBasis:
    """Dirichlet sine basis sqrt(2/l) sin(k pi x / l), k = 1..M, on interior points."""

    boundary = "dirichlet"
    has_symmetry = False

    def __init__(self, grid, n_modes, n_components=1):
        if n_modes > grid.n_points:
            raise SpectralError(f"n_modes={n_modes} exceeds resolvable {grid.n_points}")
        if n_modes < 1:
            raise SpectralError("n_modes must be positive")
        self.grid = grid
        self.n = grid.n_points
        self.M = int(n_modes)
        self.ncomp = int(n_components)
        ell = grid.length
        self.x = np.arange(1, self.n + 1) * ell / (self.n + 1)
        self.k = np.pi * np.arange(1, self.M + 1) / ell
        self.mu = self.k**2
        self.weights = np.ones(self.M)
        self.dim_per_comp = self.M
        self.dim = self.ncomp * self.M
        self.dtype = float
        self._scale = np.sqrt(ell / 2) / (self.n + 1)
        self.e_norms_comp = np.full(self.M, np.sqrt(2 / ell))
        self.freq_of_coord = np.arange(1, self.M + 1)

    @property
    def spec_shape(self):
        return (self.ncomp, self.M)

    def to_values(self, Y):
        full = np.zeros(Y.shape[:-1] + (self.n,))
        full[..., : self.M] = Y
        return sfft.idst(full, type=1, axis=-1) * (self.n + 1) * np.sqrt(2 / self.grid.length)

    def to_spec(self, U):
        return sfft.dst(np.asarray(U, float), type=1, axis=-1)[..., : self.M] * self._scale

    def to_coeffs(self, Y):
        return np.asarray(Y, float).reshape(Y.shape[:-2] + (self.dim,))

    def from_coeffs(self, c):
        c = np.asarray(c, float)
        return c.reshape(c.shape[:-1] + (self.ncomp, self.M)).copy()

    def inner(self, A, B):
        return np.sum(A * B, axis=(-2, -1))

    def e_norm(self, Y):
        return np.max(np.abs(self.to_values(Y)), axis=(-2, -1))


class PlaneBasis:
    """The plane R^2 viewed as one complex coordinate z = x + iy.

    Used by the planar oscillator. Rotation z -> z e^{i alpha} is the symmetry.
    """

    boundary = "plane"
    has_symmetry = True

    def __init__(self):
        self.n = 2
        self.M = 1
        self.ncomp = 1
        self.kappa = np.array([1.0])
        self.mu = np.zeros(1)
        self.period = 2 * np.pi
        self.weights = np.ones(1)
        self.dim_per_comp = 2
        self.dim = 2
        self.dtype = complex
        self.e_norms_comp = np.ones(2)
        self.freq_of_coord = np.array([1, 1])
        self.x = np.array([0.0, 1.0])

    @property
    def spec_shape(self):
        return (1, 1)

    def to_values(self, Y):
        z = Y[..., 0, 0]
        return np.stack([z.real, z.imag], axis=-1)[..., None, :]

    def to_spec(self, U):
        U = np.asarray(U, float)
        return (U[..., 0] + 1j * U[..., 1])[..., None]

    def to_coeffs(self, Y):
        z = Y[..., 0, 0]
        return np.stack([z.real, z.imag], axis=-1)

    def from_coeffs(self, c):
        c = np.asarray(c, float)
        return (c[..., 0] + 1j * c[..., 1])[..., None, None]

    def inner(self, A, B):
        return np.sum((A * np.conj(B)).real, axis=(-2, -1))

    def e_norm(self, Y):
        return np.abs(Y[..., 0, 0])

    def act(self, Y, alpha):
        alpha = np.asarray(alpha, float)
        return Y * np.exp(1j * alpha[..., None, None])

    def generator(self, Y):
        return 1j * Y


def make_basis(grid, n_modes, n_components=1):
    if grid.boundary == "periodic":
        return FourierBasis(grid, n_modes, n_components)
    return SineBasis(grid, n_modes, n_components)


class Field:
    """A state held as spectral coefficients, with collocation values on demand."""

    def __init__(self, basis, spec):
        self.basis = basis
        self.spec = np.asarray(spec, dtype=basis.dtype)
        if self.spec.shape[-2:] != basis.spec_shape:
            raise SpectralError(f"spectral shape {self.spec.shape} does not match {basis.spec_shape}")

    @classmethod
    def from_values(cls, basis, values):
        values = np.asarray(values, float)
        if values.ndim == 1:
            values = values[None, :]
        return cls(basis, basis.to_spec(values))

    @classmethod
    def from_coeffs(cls, basis, coeffs):
        return cls(basis, basis.from_coeffs(coeffs))

    @classmethod
    def zeros(cls, basis):
        return cls(basis, np.zeros(basis.spec_shape, basis.dtype))

    @classmethod
    def basis_element(cls, basis, k):
        c = np.zeros(basis.dim)
        c[k] = 1.0
        return cls.from_coeffs(basis, c)

    @property
    def coeffs(self):
        return self.basis.to_coeffs(self.spec)

    @property
    def values(self):
        return self.basis.to_values(self.spec)

    @property
    def n_components(self):
        return self.basis.ncomp

    def h_norm(self):
        return float(np.sqrt(self.basis.inner(self.spec, self.spec)))

    def e_norm(self):
        return float(self.basis.e_norm(self.spec))

    def inner(self, other):
        return float(self.basis.inner(self.spec, other.spec))

    def __add__(self, other):
        return Field(self.basis, self.spec + other.spec)

    def __sub__(self, other):
        return Field(self.basis, self.spec - other.spec)

    def __mul__(self, a):
        return Field(self.basis, self.spec * a)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.basis, -self.spec)

    def __repr__(self):
        return f"Field(ncomp={self.n_components}, dim={self.basis.dim}, h_norm={self.h_norm():.4g})"


class SpectralOperator:
    """L = diag_j(D_j * Laplacian - a_j) in the eigenbasis of the Laplacian.

    ``lam`` has the internal shape ``(n_components, M)``; ``eigenvalues`` is the
    ascending list over all real basis functions.
    """

    def __init__(self, basis, damping, diffusion=1.0):
        self.basis = basis
        self.grid = getattr(basis, "grid", None)
        nc = basis.ncomp
        self.damping = np.broadcast_to(np.asarray(damping, float), (nc,)).copy()
        self.diffusion = np.broadcast_to(np.asarray(diffusion, float), (nc,)).copy()
        if np.any(self.damping < 0) or np.any(self.diffusion < 0):
            raise SpectralError("damping and diffusion must be non-negative")
        self.lam = self.diffusion[:, None] * basis.mu[None, :] + self.damping[:, None]
        lam_coord = self.coord_eigenvalues()
        self.order = np.argsort(lam_coord, kind="stable")
        self.eigenvalues = lam_coord[self.order]
        if self.eigenvalues[0] <= 0:
            raise SpectralError("L must be strictly dissipative (all eigenvalues positive)")
        self.omega = float(self.eigenvalues[0])
        self.n_modes = basis.M

    def coord_eigenvalues(self):
        """Eigenvalue of each real basis coordinate, in coefficient order."""
        b = self.basis
        per = self.diffusion[:, None] * b.mu[b.freq_of_coord - (1 if b.boundary == "dirichlet" else 0)][None, :]
        return (per + self.damping[:, None]).ravel()

    def coord_e_norms(self):
        return np.tile(self.basis.e_norms_comp, self.basis.ncomp)

    def symbol(self):
        return -self.lam


def make_operator(grid, damping, n_modes, n_components=1, diffusion=1.0):
    """Build L = D * Laplacian - a on ``grid`` truncated to ``n_modes`` frequencies."""
    if not isinstance(grid, Grid):
        raise SpectralError("grid must be a Grid")
    if n_modes > grid.max_modes():
        raise SpectralError(f"n_modes={n_modes} exceeds resolvable {grid.max_modes()}")
    basis = make_basis(grid, n_modes, n_components)
    return SpectralOperator(basis, damping, diffusion)


def semigroup_apply(op, t, x):
    if t < 0:
        raise SpectralError("semigroup time must be non-negative")
    return Field(x.basis, x.spec * np.exp(-op.lam * t))


def trace_constant(op, s, r, n_times=64):
    """Partial-sum estimate of sup_{t in [s, r]} sum_k ||Lambda_t e_k||_E.

    Each summand is decreasing in t, so the sup is attained at t = s; the time
    mesh is still scanned so that non-monotone generalisations stay honest.
    """
    if not s > 0:
        raise SpectralError("s must be positive")
    if not r > s:
        raise SpectralError("r must exceed s")
    lam = op.coord_eigenvalues()
    en = op.coord_e_norms()
    ts = np.linspace(s, r, n_times)
    sums = np.exp(-np.outer(ts, lam)) @ en
    return float(sums.max())


def trace_tail_bound(op, s):
    """Bound on the omitted tail sum_{k > K} e^{-lambda_k s} ||e_k||_E for the Laplacian."""
    b = op.basis
    if getattr(b, "grid", None) is None:
        return 0.0
    lamK = op.lam[:, -1]
    ell = b.grid.length
    step = (2 * np.pi / ell) if b.boundary == "periodic" else (np.pi / ell)
    mult = 2 if b.boundary == "periodic" else 1
    tot = 0.0
    for D, a, lk in zip(op.diffusion, op.damping, lamK):
        if D == 0:
            return np.inf
        # sum_{j > J} e^{-(D (step j)^2 + a) s} <= e^{-lk s} / (1 - e^{-2 D step^2 J s}) crude
        J = b.M
        ratio = np.exp(-D * step**2 * (2 * J + 1) * s)
        tot += mult * b.e_norms_comp.max() * np.exp(-(lk + D * step**2 * (2 * J + 1)) * s) / (1 - ratio)
    return float(tot)


def gap_constant(op=None, eigenvalues=None):
    """max_k ln(lambda_{k+1}/lambda_k) / (lambda_{k+1} - lambda_k) over distinct levels.

    Periodic bases carry paired (cos, sin) eigenvalues; these are one level each.
    An explicitly supplied eigenvalue list with repeats is rejected.
    """
    if eigenvalues is not None:
        lam = np.asarray(eigenvalues, float)
        if np.any(np.diff(lam) == 0):
            raise DegenerateSpectrumError("repeated eigenvalues: gap constant undefined")
    else:
        levels = []
        for c in range(op.basis.ncomp):
            levels.append(op.lam[c])
        lam = np.unique(np.concatenate(levels))
        if any(np.unique(l).size < l.size for l in levels):
            raise DegenerateSpectrumError("repeated eigenvalue levels within a component")
    if lam.size < 2:
        raise SpectralError("need at least two modes")
    if np.any(np.diff(lam) <= 0):
        raise DegenerateSpectrumError("eigenvalues must be strictly increasing")
    if lam[0] <= 0:
        raise SpectralError("eigenvalues must be positive")
    g = np.log(lam[1:] / lam[:-1]) / np.diff(lam)
    return float(g.max())
