import json
import math

import numpy as np
import pytest

from promp_rrl.geometry import Pose, axis_angle_to_quat, identity_quat
from promp_rrl.promp import (
    BasisSet,
    Demonstration,
    OutOfConfidenceError,
    ProMP,
    basis_eval,
    condition,
    fit,
    in_confidence_region,
    load_promp,
    log_likelihood,
    log_likelihood_points,
    nominal_trajectory,
    orientation_schedule,
    phase,
    phase_grid,
    save_promp,
)

# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def line_demo(p0, p1, n=40, total_time=10.0, quat=None):
    ts = np.linspace(0.0, total_time, n)
    z = ts / total_time
    q = identity_quat() if quat is None else quat
    poses = [Pose(np.asarray(p0) + (np.asarray(p1) - np.asarray(p0)) * zi, q) for zi in z]
    return Demonstration(timestamps=ts, poses=poses)


def spread_line_demos(goal=(0.0, 0.0, 0.0), n_demos=5, seed=0):
    rng = np.random.default_rng(seed)
    demos = []
    for _ in range(n_demos):
        start = rng.uniform(-0.1, 0.1, 3) + np.array([0.0, 0.0, 0.2])
        demos.append(line_demo(start, goal, n=50))
    return demos


def random_promp(n=4, d=2, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    nd = n * d
    A = rng.standard_normal((nd, nd)) * scale
    sigma = A @ A.T + 1e-6 * np.eye(nd)
    mu = rng.standard_normal(nd)
    return ProMP(basis=BasisSet.default(n), dim=d, mu_w=mu, sigma_w=sigma)


def schur_condition_oracle(promp, z, y, sigma_y):
    """Brute force: assemble the joint Gaussian over (w, y_z) explicitly and
    condition via the Schur complement with a generic dense solve."""
    n, d = promp.basis.n, promp.dim
    phi = promp.basis.eval(z)
    Phi = np.kron(np.eye(d), phi[:, None])  # (nd, d)
    S = promp.sigma_w
    cov_wy = S @ Phi
    cov_yy = Phi.T @ S @ Phi + sigma_y
    gain = cov_wy @ np.linalg.inv(cov_yy)
    mu_post = promp.mu_w + gain @ (y - Phi.T @ promp.mu_w)
    sigma_post = S - gain @ cov_wy.T
    return mu_post, sigma_post


# ---------------------------------------------------------------------------
# phase + basis
# ---------------------------------------------------------------------------


def test_phase_endpoints():
    assert phase(0, 100) == 0.0
    assert phase(99, 100) == 1.0
    assert phase(50, 101) == 0.5


def test_phase_bad_horizon():
    with pytest.raises(ValueError):
        phase(0, 1)


def test_basis_narrow_width_is_one_hot():
    centers = np.linspace(0.0, 1.0, 5)
    basis = BasisSet(n=5, centers=centers, width=1e-6)
    phi = basis.eval(centers[2])
    assert np.argmax(phi) == 2
    assert phi[2] > 0.999


def test_basis_partition_of_unity():
    basis = BasisSet.default(10)
    for z in np.linspace(0.0, 1.0, 1000):
        assert abs(basis.eval(z).sum() - 1.0) < 1e-12


def test_basis_matches_scalar_reimplementation():
    basis = BasisSet.default(10)
    z = 0.37
    # plain scalar arithmetic, no numpy broadcasting
    raw = [math.exp(-((z - c) ** 2) / (2.0 * basis.width)) for c in basis.centers]
    total = sum(raw)
    expected = [r / total for r in raw]
    assert np.allclose(basis_eval(basis, z), expected, atol=1e-14)


def test_basis_rejects_out_of_range_phase():
    basis = BasisSet.default(5)
    with pytest.raises(ValueError):
        basis.eval(1.5)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def test_fit_identical_demos_gives_regularizer_covariance():
    demo = line_demo([0.1, -0.2, 0.3], [0.0, 0.0, 0.0])
    model = fit([demo, demo, demo], n_basis=8, sigma_reg=1e-8)
    assert np.allclose(model.sigma_w, 1e-8 * np.eye(24), atol=1e-16)


def test_fit_reconstructs_line():
    eps = 1e-3
    p0, p1 = np.array([0.05, 0.0, 0.2]), np.array([0.0, 0.0, 0.0])
    demos = [
        line_demo(p0 + eps, p1 + eps),
        line_demo(p0 - eps, p1 - eps),
    ]
    model = fit(demos, n_basis=10)
    grid = phase_grid(100)
    recon = model.mean_trajectory(grid)
    target = p0[None, :] + (p1 - p0)[None, :] * grid[:, None]
    assert np.max(np.abs(recon - target)) < eps + 1e-4


def test_fit_permutation_invariant_exactly():
    demos = spread_line_demos(seed=3)
    a = fit(demos, n_basis=6)
    b = fit(list(reversed(demos)), n_basis=6)
    assert np.array_equal(a.mu_w, b.mu_w)
    assert np.array_equal(a.sigma_w, b.sigma_w)


def test_fit_needs_two_demos():
    with pytest.raises(ValueError):
        fit([line_demo([0, 0, 0.1], [0, 0, 0])])


def test_demo_validation():
    with pytest.raises(ValueError):
        Demonstration(timestamps=[0.0], poses=[Pose()])
    with pytest.raises(ValueError):
        Demonstration(timestamps=[0.0, 0.0], poses=[Pose(), Pose()])


def test_fit_rejects_non_finite():
    demo = line_demo([0, 0, 0.1], [0, 0, 0])
    demo.poses[3].p[1] = np.nan
    with pytest.raises(ValueError):
        fit([demo, line_demo([0, 0, 0.1], [0, 0, 0])])


# ---------------------------------------------------------------------------
# log likelihood
# ---------------------------------------------------------------------------


def test_loglik_mode_property():
    demos = spread_line_demos(seed=1)
    model = fit(demos, n_basis=8)
    grid = phase_grid(60)
    mean_traj = model.mean_trajectory(grid)
    ts = np.linspace(0.0, 10.0, 60)
    mean_demo = Demonstration(ts, [Pose(p, identity_quat()) for p in mean_traj])
    rng = np.random.default_rng(4)
    noisy = Demonstration(
        ts, [Pose(p + rng.normal(0, 0.01, 3), identity_quat()) for p in mean_traj]
    )
    assert log_likelihood(model, mean_demo) > log_likelihood(model, noisy)


def test_loglik_univariate_hand_computed():
    model = ProMP(
        basis=BasisSet.default(2),
        dim=1,
        mu_w=np.array([0.3, -0.1]),
        sigma_w=np.array([[0.04, 0.01], [0.01, 0.09]]),
    )
    z, y, s_obs = 0.5, 0.2, 1e-3
    phi = model.basis.eval(z)
    mean = float(phi @ model.mu_w)
    var = float(phi @ model.sigma_w @ phi) + s_obs**2
    expected = -0.5 * ((y - mean) ** 2 / var + math.log(var) + math.log(2 * math.pi))
    got = log_likelihood_points(model, [z], [[y]], sigma_obs=s_obs)
    assert abs(got - expected) < 1e-12


def test_loglik_grid_search_runs():
    demos = spread_line_demos(seed=2)
    table = {}
    for n in (5, 10, 15):
        model = fit(demos, n_basis=n)
        table[n] = sum(log_likelihood(model, d) for d in demos)
    assert all(np.isfinite(v) for v in table.values())
    assert max(table, key=table.get) in table


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------


def test_condition_uninformative_keeps_prior():
    model = random_promp(n=4, d=3, seed=5, scale=0.1)
    post = condition(model, 0.3, model.mean_at(0.3) + 0.5, 1e12 * np.eye(3))
    assert np.linalg.norm(post.mu_w - model.mu_w) < 1e-3


def test_condition_tight_passes_through_observation():
    demos = spread_line_demos(seed=6)
    model = fit(demos, n_basis=10)
    y0 = model.mean_at(0.0) + np.array([0.02, -0.01, 0.015])
    post = condition(model, 0.0, y0, 1e-10 * np.eye(3))
    assert np.linalg.norm(post.mean_at(0.0) - y0) < 1e-4


@pytest.mark.parametrize("n,d,seed", [(2, 1, 7), (3, 2, 8)])
def test_condition_matches_schur_oracle(n, d, seed):
    model = random_promp(n=n, d=d, seed=seed)
    rng = np.random.default_rng(seed + 100)
    z = float(rng.uniform(0, 1))
    y = rng.standard_normal(d)
    B = rng.standard_normal((d, d))
    sigma_y = B @ B.T + 0.05 * np.eye(d)
    post = condition(model, z, y, sigma_y)
    mu_ref, sigma_ref = schur_condition_oracle(model, z, y, sigma_y)
    assert np.max(np.abs(post.mu_w - mu_ref)) < 1e-10
    assert np.max(np.abs(post.sigma_w - sigma_ref)) < 1e-10


def test_condition_never_increases_marginal_variance():
    model = random_promp(n=5, d=3, seed=9)
    rng = np.random.default_rng(10)
    post = condition(model, 0.4, rng.standard_normal(3), 0.01 * np.eye(3))
    grid = phase_grid(50)
    assert np.all(post.std_trajectory(grid) <= model.std_trajectory(grid) + 1e-10)


def test_condition_result_stays_psd():
    model = random_promp(n=4, d=2, seed=11)
    post = condition(model, 0.7, np.array([0.3, -0.2]), 1e-8 * np.eye(2))
    eigs = np.linalg.eigvalsh(post.sigma_w)
    assert eigs.min() > -1e-10
    assert np.allclose(post.sigma_w, post.sigma_w.T)


def test_condition_near_idempotent_for_tight_covariance():
    model = random_promp(n=4, d=2, seed=12)
    y = np.array([0.1, 0.2])
    once = condition(model, 0.25, y, 1e-10 * np.eye(2))
    twice = condition(once, 0.25, y, 1e-10 * np.eye(2))
    assert np.linalg.norm(twice.mu_w - once.mu_w) < 1e-6


def test_condition_rejects_bad_covariance():
    model = random_promp(n=3, d=2, seed=13)
    with pytest.raises(ValueError):
        condition(model, 0.5, np.zeros(2), -1e-3 * np.eye(2))
    with pytest.raises(ValueError):
        condition(model, 0.5, np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# confidence region
# ---------------------------------------------------------------------------


def test_confidence_at_mean_and_outside():
    model = random_promp(n=4, d=3, seed=14)
    z = 0.3
    mean, std = model.mean_at(z), model.std_at(z)
    assert in_confidence_region(model, z, mean)
    bad = mean.copy()
    bad[1] += 3.0 * std[1]
    assert not in_confidence_region(model, z, bad, k=2.0)


def test_confidence_boundary_inclusive():
    # zero mean makes |y - mean| exact in floating point
    model = ProMP(
        basis=BasisSet.default(3),
        dim=1,
        mu_w=np.zeros(3),
        sigma_w=0.01 * np.eye(3),
    )
    z = 0.5
    s = model.std_at(z)[0]
    assert in_confidence_region(model, z, np.array([2.0 * s]), k=2.0)
    assert not in_confidence_region(model, z, np.array([np.nextafter(2.0 * s, 1.0)]), k=2.0)


# ---------------------------------------------------------------------------
# nominal trajectory
# ---------------------------------------------------------------------------


def test_nominal_self_conditioning_keeps_prior_mean():
    demos = spread_line_demos(seed=15)
    model = fit(demos, n_basis=10)
    H = 50
    schedule = orientation_schedule(demos, H)
    start = Pose(model.mean_at(0.0), identity_quat())
    nominal = nominal_trajectory(model, start, H, schedule)
    prior = model.mean_trajectory(phase_grid(H))
    got = np.array([p.p for p in nominal.poses])
    assert np.max(np.abs(got - prior)) < 1e-6


def test_nominal_sigma_is_from_original_model():
    demos = spread_line_demos(seed=16)
    model = fit(demos, n_basis=10)
    H = 50
    schedule = orientation_schedule(demos, H)
    start = Pose(model.mean_at(0.0) + 0.01, identity_quat())
    nominal = nominal_trajectory(model, start, H, schedule, cond_cov=1e-10)
    conditioned = condition(model, 0.0, start.p, 1e-10 * np.eye(3))
    assert np.all(conditioned.std_at(0.0) < 1e-4)  # collapsed at the via-point
    assert np.all(nominal.sigma[0] > 1e-3)  # original spread is preserved


def test_nominal_endpoint_reaches_demo_goal():
    goal = np.array([0.0, 0.0, 0.0])
    demos = spread_line_demos(goal=goal, seed=17)
    model = fit(demos, n_basis=10)
    H = 100
    schedule = orientation_schedule(demos, H)
    start = Pose(model.mean_at(0.0), identity_quat())
    nominal = nominal_trajectory(model, start, H, schedule)
    assert np.linalg.norm(nominal.poses[-1].p - goal) < 2e-3


def test_nominal_rejects_out_of_confidence_start():
    demos = spread_line_demos(seed=18)
    model = fit(demos, n_basis=10)
    H = 20
    schedule = orientation_schedule(demos, H)
    far = Pose(model.mean_at(0.0) + np.array([5.0, 0.0, 0.0]), identity_quat())
    with pytest.raises(OutOfConfidenceError):
        nominal_trajectory(model, far, H, schedule)
    forced = nominal_trajectory(model, far, H, schedule, force=True)
    assert len(forced) == H


def test_orientation_schedule_modes():
    qa = axis_angle_to_quat([0, 0, 0.2])
    demos = [line_demo([0, 0, 0.1], [0, 0, 0], quat=qa) for _ in range(3)]
    per_step = orientation_schedule(demos, 10, mode="per_step")
    glob = orientation_schedule(demos, 10, mode="global")
    for sched in (per_step, glob):
        assert sched.shape == (10, 4)
        assert np.allclose(np.abs(sched @ qa), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        orientation_schedule(demos, 10, mode="bogus")


# ---------------------------------------------------------------------------
# model file round trip
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    demos = spread_line_demos(seed=19)
    model = fit(demos, n_basis=7)
    path = tmp_path / "model.json"
    save_promp(model, path)
    loaded = load_promp(path)
    assert np.array_equal(loaded.mu_w, model.mu_w)
    assert np.array_equal(loaded.sigma_w, model.sigma_w)
    assert loaded.basis.n == model.basis.n
    assert loaded.phase_grid_len == model.phase_grid_len


def test_load_validates_psd(tmp_path):
    demos = spread_line_demos(seed=20)
    model = fit(demos, n_basis=4)
    path = tmp_path / "model.json"
    save_promp(model, path)
    payload = json.loads(path.read_text())
    payload["sigma_w"][0][0] = -1.0
    path.write_text(json.dumps(payload))
    with pytest.raises(ValueError):
        load_promp(path)


def test_load_reports_missing_field(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"n_basis": 3}))
    with pytest.raises(ValueError, match="mu_w"):
        load_promp(path)
