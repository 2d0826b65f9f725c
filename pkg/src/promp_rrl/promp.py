"""Probabilistic trajectory model: Gaussian distribution over basis weights.

A trajectory point at phase z is y_z = Phi_z^T w with Phi_z = I_d (x) phi_z,
where phi_z are normalized Gaussian radial basis activations and the weight
vector w ~ N(mu_w, Sigma_w) is learned from demonstrations by per-demo ridge
regression followed by a sample mean/covariance. Conditioning on a via-point
(y_z, Sigma_y) is the standard Gaussian posterior update; the inner d x d
system is solved by Cholesky factorization rather than explicit inversion.

Weight vectors are laid out dimension-major: w = [w_x (N), w_y (N), w_z (N)],
matching the Kronecker structure of Phi_z.

The model encodes positions only (d = 3 in this project); orientations travel
separately as a per-step mean-quaternion schedule (:func:`orientation_schedule`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import Pose, quat_mean, quat_normalize, quat_slerp


def phase(t: int, horizon: int) -> float:
    """Normalized time index z = t / (H - 1) in [0, 1]."""
    if horizon < 2:
        raise ValueError(f"horizon must be >= 2, got {horizon}")
    if not 0 <= t < horizon:
        raise ValueError(f"step {t} outside [0, {horizon})")
    return t / (horizon - 1)


def phase_grid(horizon: int) -> np.ndarray:
    if horizon < 2:
        raise ValueError(f"horizon must be >= 2, got {horizon}")
    return np.linspace(0.0, 1.0, horizon)


@dataclass
class BasisSet:
    """Normalized Gaussian radial basis functions over phase [0, 1].

    ``width`` is the squared scale in exp(-(z - c)^2 / (2 * width)). Centers
    sit slightly outside [0, 1] so the boundary activations are not starved.
    """

    n: int
    centers: np.ndarray
    width: float

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(self.n)
        if self.n < 2:
            raise ValueError("need at least 2 basis functions")
        if not np.all(np.diff(self.centers) > 0):
            raise ValueError("basis centers must be strictly increasing")
        if self.width <= 0:
            raise ValueError("basis width must be positive")

    @staticmethod
    def default(n: int) -> "BasisSet":
        width = 1.0 / (2.0 * n * n)
        centers = np.linspace(-2.0 * width, 1.0 + 2.0 * width, n)
        return BasisSet(n=n, centers=centers, width=width)

    def eval(self, z: float) -> np.ndarray:
        """Activation vector at phase z; components sum to one."""
        if not 0.0 <= z <= 1.0:
            raise ValueError(f"phase {z} outside [0, 1]")
        raw = np.exp(-((z - self.centers) ** 2) / (2.0 * self.width))
        return raw / raw.sum()

    def eval_grid(self, phases: np.ndarray) -> np.ndarray:
        """(T, n) activation matrix over a phase vector."""
        phases = np.asarray(phases, dtype=float)
        raw = np.exp(-((phases[:, None] - self.centers[None, :]) ** 2) / (2.0 * self.width))
        return raw / raw.sum(axis=1, keepdims=True)


def basis_eval(basis: BasisSet, z: float) -> np.ndarray:
    return basis.eval(z)


@dataclass
class Demonstration:
    """One recorded trajectory: timestamps in seconds and poses in the target frame."""

    timestamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if len(self.timestamps) < 2:
            raise ValueError("demonstration needs at least 2 samples")
        if len(self.poses) != len(self.timestamps):
            raise ValueError("timestamps and poses length mismatch")
        if not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.timestamps)):
            raise ValueError("non-finite timestamp")

    def __len__(self):
        return len(self.timestamps)

    @property
    def phases(self) -> np.ndarray:
        t = self.timestamps
        return (t - t[0]) / (t[-1] - t[0])

    @property
    def positions(self) -> np.ndarray:
        return np.array([pose.p for pose in self.poses])

    @property
    def quaternions(self) -> np.ndarray:
        return np.array([pose.q for pose in self.poses])

    def resample_positions(self, phases: np.ndarray) -> np.ndarray:
        """Linear interpolation of positions onto an arbitrary phase grid."""
        own = self.phases
        pos = self.positions
        return np.column_stack([np.interp(phases, own, pos[:, i]) for i in range(pos.shape[1])])

    def resample_quaternions(self, phases: np.ndarray) -> np.ndarray:
        """Slerp between neighbouring samples onto an arbitrary phase grid."""
        own = self.phases
        quats = self.quaternions
        out = np.empty((len(phases), 4))
        for k, z in enumerate(phases):
            j = int(np.searchsorted(own, z, side="right")) - 1
            j = min(max(j, 0), len(own) - 2)
            span = own[j + 1] - own[j]
            u = 0.0 if span == 0 else (z - own[j]) / span
            out[k] = quat_slerp(quats[j], quats[j + 1], float(np.clip(u, 0.0, 1.0)))
        return out


@dataclass
class ProMP:
    """Gaussian over trajectory weights. Treat instances as immutable."""

    basis: BasisSet
    dim: int
    mu_w: np.ndarray
    sigma_w: np.ndarray
    phase_grid_len: int = 100

    def __post_init__(self):
        nd = self.basis.n * self.dim
        self.mu_w = np.asarray(self.mu_w, dtype=float).reshape(nd)
        self.sigma_w = np.asarray(self.sigma_w, dtype=float).reshape(nd, nd)
        asym = np.max(np.abs(self.sigma_w - self.sigma_w.T))
        if asym > 1e-9:
            raise ValueError(f"weight covariance asymmetric by {asym}")
        min_eig = float(np.linalg.eigvalsh(self.sigma_w).min())
        if min_eig < -1e-10:
            raise ValueError(f"weight covariance not PSD (min eigenvalue {min_eig})")

    # -- per-phase marginals ------------------------------------------------

    def mean_at(self, z: float) -> np.ndarray:
        phi = self.basis.eval(z)
        n = self.basis.n
        return np.array([phi @ self.mu_w[j * n : (j + 1) * n] for j in range(self.dim)])

    def cov_at(self, z: float) -> np.ndarray:
        phi = self.basis.eval(z)
        n, d = self.basis.n, self.dim
        cov = np.empty((d, d))
        for j in range(d):
            for l in range(d):
                block = self.sigma_w[j * n : (j + 1) * n, l * n : (l + 1) * n]
                cov[j, l] = phi @ block @ phi
        return cov

    def std_at(self, z: float) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov_at(z)), 0.0))

    def mean_trajectory(self, phases: np.ndarray) -> np.ndarray:
        Phi = self.basis.eval_grid(phases)
        n = self.basis.n
        return np.column_stack([Phi @ self.mu_w[j * n : (j + 1) * n] for j in range(self.dim)])

    def std_trajectory(self, phases: np.ndarray) -> np.ndarray:
        """(T, d) per-step per-dimension standard deviations."""
        Phi = self.basis.eval_grid(phases)
        n = self.basis.n
        out = np.empty((len(phases), self.dim))
        for j in range(self.dim):
            block = self.sigma_w[j * n : (j + 1) * n, j * n : (j + 1) * n]
            out[:, j] = np.sqrt(np.maximum(np.einsum("ti,ij,tj->t", Phi, block, Phi), 0.0))
        return out


def _exact_mean(rows: np.ndarray) -> np.ndarray:
    """Column means via math.fsum: exactly invariant to row permutation."""
    m = rows.shape[0]
    return np.array([math.fsum(rows[:, j]) / m for j in range(rows.shape[1])])


def fit(
    demos,
    n_basis: int = 10,
    ridge: float = 1e-6,
    sigma_reg: float = 1e-8,
    grid_len: int = 100,
) -> ProMP:
    """Fit the weight distribution to position trajectories.

    Each demonstration is resampled onto a common ``grid_len``-point phase
    grid, projected to weights by ridge regression, and the weight mean and
    sample covariance (plus ``sigma_reg`` on the diagonal) form the model.
    """
    demos = list(demos)
    if len(demos) < 2:
        raise ValueError("need at least 2 demonstrations for a sample covariance")
    basis = BasisSet.default(n_basis)
    grid = phase_grid(grid_len)
    Phi = basis.eval_grid(grid)  # (T, N)
    gram_cf = cho_factor(Phi.T @ Phi + ridge * np.eye(n_basis))

    dim = 3
    ws = np.empty((len(demos), n_basis * dim))
    for i, demo in enumerate(demos):
        y = demo.resample_positions(grid)  # (T, 3)
        if not np.all(np.isfinite(y)):
            raise ValueError(f"demonstration {i} has non-finite positions")
        w = cho_solve(gram_cf, Phi.T @ y)  # (N, 3)
        ws[i] = w.T.reshape(-1)  # dimension-major layout

    mu = _exact_mean(ws)
    dev = ws - mu
    m = len(demos)
    nd = n_basis * dim
    sigma = np.empty((nd, nd))
    for a in range(nd):
        for b in range(a, nd):
            v = math.fsum(dev[:, a] * dev[:, b]) / (m - 1)
            sigma[a, b] = v
            sigma[b, a] = v
    sigma += sigma_reg * np.eye(nd)
    return ProMP(basis=basis, dim=dim, mu_w=mu, sigma_w=sigma, phase_grid_len=grid_len)


def log_likelihood_points(promp: ProMP, phases, points, sigma_obs: float = 1e-3) -> float:
    """Sum of per-step marginal Gaussian log-densities of observed points."""
    phases = np.asarray(phases, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    total = 0.0
    d = promp.dim
    for k, z in enumerate(phases):
        mean = promp.mean_at(z)
        cov = promp.cov_at(z) + sigma_obs**2 * np.eye(d)
        try:
            cf = cho_factor(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular marginal covariance at step {k} (z={z:.4f})") from exc
        resid = points[k] - mean
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        total += -0.5 * float(resid @ cho_solve(cf, resid) + logdet + d * np.log(2.0 * np.pi))
    return total


def log_likelihood(promp: ProMP, demo: Demonstration, sigma_obs: float = 1e-3) -> float:
    """Log-density of a demonstration under the model, at the demo's own phases."""
    return log_likelihood_points(promp, demo.phases, demo.positions, sigma_obs)


def condition(promp: ProMP, z: float, y, sigma_y) -> ProMP:
    """Posterior model given observation y at phase z with covariance sigma_y."""
    d, n = promp.dim, promp.basis.n
    y = np.asarray(y, dtype=float).reshape(d)
    sigma_y = np.asarray(sigma_y, dtype=float)
    if sigma_y.shape == ():
        sigma_y = float(sigma_y) * np.eye(d)
    if np.max(np.abs(sigma_y - sigma_y.T)) > 1e-12:
        raise ValueError("observation covariance must be symmetric")
    phi = promp.basis.eval(z)
    Phi_z = np.kron(np.eye(d), phi[:, None])  # (n*d, d)
    A = promp.sigma_w @ Phi_z  # (n*d, d)
    inner = sigma_y + Phi_z.T @ A  # (d, d)
    try:
        cf = cho_factor(inner)
    except np.linalg.LinAlgError as exc:
        raise ValueError("inner conditioning system is not positive definite") from exc
    K = cho_solve(cf, A.T).T  # (n*d, d)
    mu_new = promp.mu_w + K @ (y - Phi_z.T @ promp.mu_w)
    sigma_new = promp.sigma_w - K @ A.T
    sigma_new = 0.5 * (sigma_new + sigma_new.T)
    return ProMP(
        basis=promp.basis,
        dim=d,
        mu_w=mu_new,
        sigma_w=sigma_new,
        phase_grid_len=promp.phase_grid_len,
    )


def in_confidence_region(promp: ProMP, z: float, y, k: float = 2.0) -> bool:
    """True iff every dimension of y lies within k standard deviations of the
    model mean at phase z (boundary inclusive)."""
    y = np.asarray(y, dtype=float).reshape(promp.dim)
    mean = promp.mean_at(z)
    std = promp.std_at(z)
    return bool(np.all(np.abs(y - mean) <= k * std))


def orientation_schedule(demos, horizon: int, mode: str = "per_step") -> np.ndarray:
    """(H, 4) quaternion schedule averaged across demonstrations.

    ``per_step`` averages the demos at each phase-grid point; ``global``
    averages every sample of every demo into a single constant quaternion.
    The source material only pins down "an average over trajectories", so
    both readings are available; per-step is the default.
    """
    grid = phase_grid(horizon)
    resampled = [demo.resample_quaternions(grid) for demo in demos]
    if mode == "per_step":
        return np.array([quat_mean([r[t] for r in resampled]) for t in range(horizon)])
    if mode == "global":
        flat = [q for r in resampled for q in r]
        return np.tile(quat_mean(flat), (horizon, 1))
    raise ValueError(f"unknown orientation schedule mode {mode!r}")


@dataclass
class NominalTrajectory:
    """Desired per-step poses plus the original model's per-step stddev."""

    poses: list
    sigma: np.ndarray  # (H, d) std of the unconditioned model
    phases: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.phases = np.asarray(self.phases, dtype=float)
        if len(self.poses) != len(self.phases) or self.sigma.shape[0] != len(self.phases):
            raise ValueError("inconsistent nominal trajectory lengths")
        if np.any(self.sigma < 0):
            raise ValueError("negative standard deviation")

    def __len__(self):
        return len(self.poses)


class OutOfConfidenceError(ValueError):
    pass


def nominal_trajectory(
    promp: ProMP,
    start: Pose,
    horizon: int,
    orientation: np.ndarray,
    cond_cov: float = 1e-8,
    k: float = 2.0,
    force: bool = False,
) -> NominalTrajectory:
    """Condition on the start position at z=0 and expand to per-step setpoints.

    The returned sigma column is deliberately taken from the *unconditioned*
    model: it reflects where the demonstrations themselves varied, which is
    what the variance-based gate consumes. The conditioned model's variance
    collapses at z=0 and would gate on the start instead.
    """
    orientation = np.asarray(orientation, dtype=float)
    if orientation.shape != (horizon, 4):
        raise ValueError(f"orientation schedule must be ({horizon}, 4)")
    if not in_confidence_region(promp, 0.0, start.p, k=k) and not force:
        raise OutOfConfidenceError(
            f"start position {start.p} outside the {k}-sigma region of the model at z=0"
        )
    conditioned = condition(promp, 0.0, start.p, cond_cov * np.eye(promp.dim))
    grid = phase_grid(horizon)
    positions = conditioned.mean_trajectory(grid)
    sigma = promp.std_trajectory(grid)
    poses = [Pose(positions[t], quat_normalize(orientation[t])) for t in range(horizon)]
    return NominalTrajectory(poses=poses, sigma=sigma, phases=grid)


# -- model file -------------------------------------------------------------


def save_promp(promp: ProMP, path) -> None:
    payload = {
        "n_basis": promp.basis.n,
        "width": promp.basis.width,
        "centers": promp.basis.centers.tolist(),
        "dim": promp.dim,
        "mu_w": promp.mu_w.tolist(),
        "sigma_w": promp.sigma_w.tolist(),
        "phase_grid_len": promp.phase_grid_len,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_promp(path) -> ProMP:
    with open(path) as fh:
        payload = json.load(fh)
    required = {"n_basis", "width", "centers", "dim", "mu_w", "sigma_w", "phase_grid_len"}
    missing = required - payload.keys()
    if missing:
        raise ValueError(f"model file missing fields: {sorted(missing)}")
    basis = BasisSet(
        n=int(payload["n_basis"]),
        centers=np.array(payload["centers"], dtype=float),
        width=float(payload["width"]),
    )
    # ProMP.__post_init__ re-validates symmetry and positive semidefiniteness
    return ProMP(
        basis=basis,
        dim=int(payload["dim"]),
        mu_w=np.array(payload["mu_w"], dtype=float),
        sigma_w=np.array(payload["sigma_w"], dtype=float),
        phase_grid_len=int(payload["phase_grid_len"]),
    )
