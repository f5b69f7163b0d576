"""One-particle structures, truncated Fock spaces and quasi-free states.

Finite models only: Cauchy data live in R^{2n}, bilinear forms are matrices
and Fock spaces are truncated by total occupation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from .errors import ValidationError


class DegeneracyError(ValidationError):
    """A bilinear form that must be nondegenerate or positive is not."""


class SaturationError(ValidationError):
    """The chosen mu does not saturate the l.u.b. condition, so J^2 != -I."""


@dataclass(frozen=True)
class ModeSpace:
    """Real phase space R^{2n} with symplectic form ``omega`` and optional ``mu``."""

    omega: np.ndarray
    mu: np.ndarray | None = None

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        if om.ndim != 2 or om.shape[0] != om.shape[1] or om.shape[0] % 2:
            raise ValidationError("omega must be a square matrix of even size")
        if np.max(np.abs(om + om.T)) > 1e-12 * max(1.0, np.max(np.abs(om))):
            raise ValidationError("omega must be antisymmetric")
        if abs(np.linalg.det(om)) < 1e-300 or np.linalg.matrix_rank(om) < om.shape[0]:
            raise DegeneracyError("omega is degenerate")
        object.__setattr__(self, "omega", om)
        if self.mu is not None:
            mu = np.asarray(self.mu, dtype=float)
            if mu.shape != om.shape or np.max(np.abs(mu - mu.T)) > 1e-12 * max(1.0, np.max(np.abs(mu))):
                raise ValidationError("mu must be symmetric with the shape of omega")
            object.__setattr__(self, "mu", mu)

    @property
    def dim(self):
        return self.omega.shape[0]

    def Omega(self, a, b):
        return np.asarray(a) @ self.omega @ np.asarray(b)

    def Mu(self, a, b):
        return np.asarray(a) @ self.mu @ np.asarray(b)


def canonical_omega(n, weight=1.0):
    """Omega((phi1, pi1), (phi2, pi2)) = weight * (pi1 . phi2 - pi2 . phi1)."""
    I = np.eye(n)
    Z = np.zeros((n, n))
    return weight * np.block([[Z, -I], [I, Z]])


def mode_space_from_split(freq, weight=1.0) -> ModeSpace:
    """Phase space of oscillators with positive frequency matrix ``freq``.

    mu = (weight/2) diag(freq, freq^{-1}) is the inner product selected by the
    positive/negative frequency split of the quadratic Hamiltonian.
    """
    freq = np.atleast_2d(np.asarray(freq, dtype=float))
    freq = 0.5 * (freq + freq.T)
    evals = np.linalg.eigvalsh(freq)
    if evals.min() <= 0:
        raise DegeneracyError("frequency matrix must be positive definite")
    n = freq.shape[0]
    inv = np.linalg.inv(freq)
    mu = 0.5 * weight * np.block([[freq, np.zeros((n, n))], [np.zeros((n, n)), 0.5 * (inv + inv.T)]])
    return ModeSpace(canonical_omega(n, weight), mu)


def transform_mode_space(space: ModeSpace, T) -> ModeSpace:
    """Pull back both forms through the invertible change of variables T."""
    T = np.asarray(T, dtype=float)
    om = T.T @ space.omega @ T
    mu = None if space.mu is None else T.T @ space.mu @ T
    return ModeSpace(0.5 * (om - om.T), None if mu is None else 0.5 * (mu + mu.T))


# ----------------------------------------------------------------------
# complex structure


@dataclass(frozen=True)
class OneParticleStructure:
    """J with Omega = 2 mu J, and K: R^{2n} -> C^n onto the J = +i eigenspace.

    ``basis`` holds an orthonormal basis (columns) of that eigenspace for the
    complex product <a, b> = 2 mu(conj a, b); K psi are the coordinates of
    the orthogonal projection of psi in this basis.
    """

    J: np.ndarray
    K: np.ndarray
    basis: np.ndarray
    space: ModeSpace = field(repr=False)

    @property
    def n(self):
        return self.K.shape[0]

    def project(self, psi):
        return self.K @ np.asarray(psi)


def saturation_defect(space: ModeSpace) -> float:
    """Relative defect of mu(psi, psi) = 1/4 sup_chi Omega(psi, chi)^2 / mu(chi, chi).

    The supremum is the quadratic form Omega mu^{-1} Omega^T, so the condition
    is the matrix identity mu = 1/4 Omega mu^{-1} Omega^T.
    """
    mu, om = space.mu, space.omega
    rhs = 0.25 * om @ np.linalg.solve(mu, om.T)
    return float(np.max(np.abs(rhs - mu)) / np.max(np.abs(mu)))


def lub_ratio(space: ModeSpace, psi) -> float:
    """1/4 sup_chi Omega(psi, chi)^2 / mu(chi, chi) evaluated in closed form."""
    v = space.omega.T @ np.asarray(psi, dtype=float)
    return 0.25 * float(v @ np.linalg.solve(space.mu, v))


def validate_saturation(space: ModeSpace, tol=1e-10) -> bool:
    return saturation_defect(space) <= tol


def complex_structure(space: ModeSpace, tol=1e-10) -> OneParticleStructure:
    if space.mu is None:
        raise DegeneracyError("mu is required")
    mu = space.mu
    try:
        chol = np.linalg.cholesky(mu)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("mu is not positive definite") from exc
    if np.min(np.diag(chol)) < 1e-14 * np.max(np.diag(chol)):
        raise DegeneracyError("mu is numerically singular")
    J = np.linalg.solve(2.0 * mu, space.omega)
    dim = space.dim
    defect = float(np.max(np.abs(J @ J + np.eye(dim))))
    if defect > tol:
        raise SaturationError(f"J^2 + I has size {defect:.3e}; mu fails the saturation condition")
    # +i eigenspace of J: range of (I - iJ)/2; orthonormalise in 2 mu
    P = 0.5 * (np.eye(dim) - 1j * J)
    # Work in coordinates where 2 mu is the identity: y = L^T x with 2mu = L L^T
    L = np.sqrt(2.0) * chol
    Pt = L.T @ P @ np.linalg.inv(L.T)
    # Pt is an orthogonal projector of rank n in the standard product
    w, v = np.linalg.eigh(0.5 * (Pt + Pt.conj().T))
    cols = v[:, w > 0.5]
    if cols.shape[1] != dim // 2:
        raise SaturationError("eigenspace of J has the wrong dimension")
    basis = np.linalg.solve(L.T, cols)
    K = cols.conj().T @ L.T
    return OneParticleStructure(J, K, basis, space)


def complex_product(space: ModeSpace, a, b) -> complex:
    """<a, b> = 2 mu(conj a, b)."""
    return complex(2.0 * np.conj(a) @ space.mu @ b)


def verify_projection(structure: OneParticleStructure, space: ModeSpace, psi1, psi2) -> dict:
    """Deviations of the projection identities for the pair (psi1, psi2)."""
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    k1, k2 = structure.project(psi1), structure.project(psi2)
    inner = complex(np.vdot(k1, k2))
    target = space.Mu(psi1, psi2) - 0.5j * space.Omega(psi1, psi2)
    f1 = structure.basis @ k1
    f2 = structure.basis @ k2
    # -i Omega(conj(K psi1), K psi2) with Omega extended complex-bilinearly
    alt = -1j * (np.conj(f1) @ space.omega @ f2)
    report = {
        "inner_product": abs(inner - target),
        "omega_form": abs(alt - target),
        "imaginary_part": abs(inner.imag + 0.5 * space.Omega(psi1, psi2)),
        "positivity": max(0.0, -complex_product(space, f1, f1).real),
        "conjugate_orthogonality": abs(2.0 * np.conj(f1) @ space.mu @ np.conj(f2)),
        "J_antisymmetry": float(np.max(np.abs(space.mu @ structure.J + (space.mu @ structure.J).T))),
        "J_squared": float(np.max(np.abs(structure.J @ structure.J + np.eye(space.dim)))),
    }
    report["max"] = max(report.values())
    return report


# ----------------------------------------------------------------------
# lattice Klein-Gordon evolution and the commutator function


@dataclass(frozen=True)
class LatticeKG:
    """Periodic lattice Klein-Gordon field with conformal factor sigma(t, x).

    In two dimensions the equation reads phi_tt - phi_xx + m^2 exp(2 sigma) phi = 0
    and the momentum conjugate to phi is phi_t.  Time stepping is kick-drift-kick
    leapfrog, which is a symplectic map for the lattice form
    Omega = h (pi1 . phi2 - pi2 . phi1).
    """

    sites: int
    spacing: float
    mass: float
    dt: float
    conformal: Callable | None = None

    def __post_init__(self):
        if self.dt > 0.9 * self.spacing:
            raise ValidationError("time step violates the CFL bound dt < h")

    @property
    def x(self):
        return self.spacing * np.arange(self.sites)

    def laplacian(self):
        n, h = self.sites, self.spacing
        L = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
        L[0, -1] = L[-1, 0] = -1.0
        return L / h**2

    def potential(self, t):
        if self.conformal is None:
            return np.full(self.sites, self.mass**2)
        return self.mass**2 * np.exp(2.0 * self.conformal(t, self.x))

    def step_matrix(self, t):
        """Linear map (phi, pi) at t -> (phi, pi) at t + dt."""
        n, dt = self.sites, self.dt
        L = self.laplacian()
        I = np.eye(n)
        Z = np.zeros((n, n))

        def kick(tt):
            return np.block([[I, Z], [-0.5 * dt * (L + np.diag(self.potential(tt))), I]])

        drift = np.block([[I, dt * I], [Z, I]])
        return kick(t + dt) @ drift @ kick(t)

    def propagator(self, t_from_index, t_to_index):
        """Evolution map between lattice times k*dt (either direction)."""
        M = np.eye(2 * self.sites)
        if t_to_index >= t_from_index:
            for k in range(t_from_index, t_to_index):
                M = self.step_matrix(k * self.dt) @ M
        else:
            for k in range(t_from_index - 1, t_to_index - 1, -1):
                M = np.linalg.solve(self.step_matrix(k * self.dt), M)
        return M

    def omega(self):
        return canonical_omega(self.sites, self.spacing)

    def mode_space(self) -> ModeSpace:
        """Flat static frequency split sqrt(L + m^2)."""
        freq = sla.sqrtm(self.laplacian() + self.mass**2 * np.eye(self.sites)).real
        return mode_space_from_split(freq, self.spacing)


@dataclass(frozen=True)
class Source:
    """Test function as impulses: rows of ``values`` act at lattice times ``times``."""

    times: tuple
    values: np.ndarray


def commutator_solution(lattice: LatticeKG, f: Source, ref_index: int = 0):
    """Cauchy data at the reference slice of (advanced - retarded) applied to f."""
    n = lattice.sites
    out = np.zeros(2 * n)
    for k, g in zip(f.times, f.values):
        kick = np.concatenate([np.zeros(n), lattice.dt * np.asarray(g, dtype=float)])
        out -= lattice.propagator(k, ref_index) @ kick
    return out


def commutator_function(lattice: LatticeKG, f1: Source, f2: Source, ref_index: int = 0) -> float:
    """Delta(f1 x f2) = sum over the support of f1 of f1 * (Delta f2) dt h."""
    d2 = commutator_solution(lattice, f2, ref_index)
    total = 0.0
    for k, g in zip(f1.times, f1.values):
        phi = (lattice.propagator(ref_index, k) @ d2)[: lattice.sites]
        total += lattice.dt * lattice.spacing * float(np.dot(g, phi))
    return total


# ----------------------------------------------------------------------
# truncated Fock spaces


class TruncatedFock:
    """Fock space over C^n truncated at total occupation ``n_max``.

    Bosonic matrices obey the CCR exactly on vectors with occupation at most
    n_max - 1, and products of two field operators are exact on occupation
    at most n_max - 2.  Fermionic spaces are complete (n_max = n) and use the
    Jordan-Wigner sign convention.
    """

    def __init__(self, n_modes: int, n_max: int = 6, fermionic: bool = False):
        self.n = int(n_modes)
        self.fermionic = bool(fermionic)
        if fermionic:
            n_max = self.n
            states = list(itertools.product((0, 1), repeat=self.n))
        else:
            states = [s for s in itertools.product(range(n_max + 1), repeat=self.n) if sum(s) <= n_max]
        states.sort(key=lambda s: (sum(s), s))
        self.n_max = n_max
        self.states = states
        self.index = {s: i for i, s in enumerate(states)}
        self.total = np.array([sum(s) for s in states])
        self._a = [self._build(i) for i in range(self.n)]

    @property
    def dim(self):
        return len(self.states)

    def _build(self, mode):
        rows, cols, vals = [], [], []
        for j, s in enumerate(self.states):
            occ = s[mode]
            if occ == 0:
                continue
            t = list(s)
            t[mode] -= 1
            i = self.index[tuple(t)]
            if self.fermionic:
                sign = (-1) ** sum(s[:mode])
                vals.append(float(sign))
            else:
                vals.append(np.sqrt(occ))
            rows.append(i)
            cols.append(j)
        return sps.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim), dtype=complex)

    def a(self, mode):
        return self._a[mode]

    def adag(self, mode):
        return self._a[mode].conj().T.tocsr()

    def annihilation(self, v):
        """a(conj v) = sum_i conj(v_i) a_i, the adjoint of creation(v)."""
        v = np.asarray(v, dtype=complex)
        out = sps.csr_matrix((self.dim, self.dim), dtype=complex)
        for i, c in enumerate(v):
            if c != 0:
                out = out + np.conj(c) * self._a[i]
        return out

    def creation(self, v):
        v = np.asarray(v, dtype=complex)
        out = sps.csr_matrix((self.dim, self.dim), dtype=complex)
        for i, c in enumerate(v):
            if c != 0:
                out = out + c * self.adag(i)
        return out

    def vacuum(self):
        e = np.zeros(self.dim, dtype=complex)
        e[self.index[(0,) * self.n]] = 1.0
        return e

    def sector(self, max_occupation):
        """Indices of basis states with total occupation <= max_occupation."""
        return np.nonzero(self.total <= max_occupation)[0]

    def guaranteed_sector(self):
        return self.sector(self.n_max if self.fermionic else self.n_max - 2)

    def number(self, mode):
        return (self.adag(mode) @ self.a(mode)).tocsr()


@dataclass(frozen=True)
class OperatorMatrix:
    matrix: sps.spmatrix
    warning: str | None = None


def field_operator(structure: OneParticleStructure, fock: TruncatedFock, data) -> OperatorMatrix:
    """phi(f) = i a(conj K psi) - i a^dagger(K psi) for Cauchy data psi = Delta f."""
    k = structure.project(np.asarray(data, dtype=float))
    if fock.fermionic:
        raise ValidationError("field_operator needs a bosonic Fock space")
    op = 1j * fock.annihilation(k) - 1j * fock.creation(k)
    warning = (
        f"matrix elements reaching occupation {fock.n_max} are truncated; "
        f"commutators are exact on occupation <= {fock.n_max - 2}"
    )
    return OperatorMatrix(op.tocsr(), warning)


def commutator(a, b):
    return (a @ b - b @ a).tocsr() if sps.issparse(a) else a @ b - b @ a


def anticommutator(a, b):
    return (a @ b + b @ a).tocsr() if sps.issparse(a) else a @ b + b @ a


def restricted(matrix, rows, cols=None):
    """Dense block of ``matrix`` on the given basis indices."""
    cols = rows if cols is None else cols
    m = matrix.tocsr() if sps.issparse(matrix) else np.asarray(matrix)
    block = m[rows][:, cols]
    return block.toarray() if sps.issparse(block) else block


def vacuum_expectation(fock: TruncatedFock, *ops) -> complex:
    v = fock.vacuum()
    w = v.copy()
    for op in reversed(ops):
        w = op @ w
    return complex(np.vdot(v, w))


# ----------------------------------------------------------------------
# fermions


@dataclass(frozen=True)
class FermionStructure:
    """Complex structure compatible with Lambda, with projection K and CAR Fock space."""

    lam: np.ndarray
    J: np.ndarray
    K: np.ndarray
    fock: TruncatedFock

    def field(self, v):
        """a(conj K v) + a^dagger(K v) for real mode data v."""
        k = self.K @ np.asarray(v, dtype=float)
        return (self.fock.annihilation(k) + self.fock.creation(k)).tocsr()

    def propagator_kernel(self, v, u):
        """S(v, u) with {psi(v), psibar(u)} = i S(v, u): here S = -i Lambda(v, u)."""
        return -1j * float(np.asarray(v) @ self.lam @ np.asarray(u))


def fermion_structure(lam, J=None) -> FermionStructure:
    """CAR representation for the real inner product ``lam`` on R^{2n}.

    ``J`` is a Lambda-orthogonal complex structure selecting the one-particle
    space; by default the one obtained from the canonical pairing in a
    Lambda-orthonormal frame.
    """
    lam = np.asarray(lam, dtype=float)
    dim = lam.shape[0]
    if dim % 2 or lam.shape != (dim, dim) or np.max(np.abs(lam - lam.T)) > 1e-12:
        raise ValidationError("Lambda must be a symmetric matrix of even size")
    try:
        L = np.linalg.cholesky(lam)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("Lambda is not positive definite") from exc
    n = dim // 2
    if J is None:
        J0 = canonical_omega(n)
        J = np.linalg.solve(L.T, J0 @ L.T)
    J = np.asarray(J, dtype=float)
    if np.max(np.abs(J @ J + np.eye(dim))) > 1e-10:
        raise ValidationError("J must square to -1")
    if np.max(np.abs(J.T @ lam @ J - lam)) > 1e-10:
        raise ValidationError("J must preserve Lambda")
    return FermionStructure(lam, J, _fermion_K(lam, J), TruncatedFock(n, fermionic=True))


def _fermion_K(lam, J):
    dim = lam.shape[0]
    L = np.linalg.cholesky(lam)
    Jt = L.T @ J @ np.linalg.inv(L.T)
    P = 0.5 * (np.eye(dim) - 1j * Jt)
    w, v = np.linalg.eigh(0.5 * (P + P.conj().T))
    cols = v[:, w > 0.5]
    # with Lambda = L L^T the projection onto the +i space has Gram matrix P;
    # K v = cols^H L^T v gives <K v, K u> = (Lambda(v, u) - i Lambda(v, J u)) / 2
    return cols.conj().T @ L.T


# ----------------------------------------------------------------------
# quasi-free states


@dataclass(frozen=True)
class QuasiFreeState:
    """State determined by a two-point kernel ``omega(a, b)``; ``sign`` = -1 for the eta field."""

    kernel: Callable
    sign: int = 1

    def two_point(self, a, b):
        return self.sign * self.kernel(a, b)


def _pairings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, partner in enumerate(rest):
        remaining = rest[:i] + rest[i + 1:]
        for tail in _pairings(remaining):
            yield [(first, partner)] + tail


def pairings(n):
    """All perfect matchings of range(n) as ordered pairs (i < j)."""
    if n % 2:
        return []
    return list(_pairings(list(range(n))))


def quasifree_npoint(state: QuasiFreeState, args: Sequence):
    """Sum over perfect pairings of products of ordered two-point values; zero for odd n."""
    n = len(args)
    if n % 2:
        return 0
    if n == 0:
        return 1
    total = 0
    for match in _pairings(list(range(n))):
        term = 1
        for i, j in match:
            term = term * state.two_point(args[i], args[j])
        total = total + term
    return total


def count_pairings(n):
    """(n - 1)!! for even n."""
    if n % 2:
        return 0
    return comb(n, n // 2) * _fact(n // 2) // 2 ** (n // 2)


def _fact(k):
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out
