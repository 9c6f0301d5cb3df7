import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachgen.arm import (ArmParams, JointState, activation_to_torque, forward_dynamics,
                          forward_kinematics, hand_to_joint_derivatives, inverse_dynamics,
                          inverse_kinematics, jacobian, kinetic_energy, mass_matrix,
                          simulate_activations, integrate_torques)
from reachgen.errors import DomainError, NumericalBlowup, SingularConfiguration, Unreachable

ARM = ArmParams()


@pytest.mark.parametrize("q, p", [
    ((0.0, 0.0), (0.63, 0.0)),
    ((np.pi / 2, 0.0), (0.0, 0.63)),
    ((0.0, np.pi / 2), (0.30, 0.33)),
])
def test_forward_kinematics_examples(q, p):
    np.testing.assert_allclose(forward_kinematics(ARM, q), p, atol=1e-15)


def test_inverse_kinematics_examples():
    np.testing.assert_allclose(inverse_kinematics(ARM, (0.63, 0.0)), (0.0, 0.0), atol=1e-7)
    np.testing.assert_allclose(inverse_kinematics(ARM, (0.30, 0.33), 1), (0.0, np.pi / 2), atol=1e-12)
    with pytest.raises(Unreachable):
        inverse_kinematics(ARM, (1.0, 0.0))
    with pytest.raises(Unreachable):
        inverse_kinematics(ARM, (0.01, 0.0))


def test_inverse_kinematics_elbow_branches():
    p = np.array([0.2, 0.35])
    for sign in (1, -1):
        q = inverse_kinematics(ARM, p, sign)
        assert np.sign(q[1]) == sign
        np.testing.assert_allclose(forward_kinematics(ARM, q), p, atol=1e-12)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for q in rng.uniform(-np.pi, np.pi, size=(50, 2)):
        J = jacobian(ARM, q)
        fd = np.column_stack([(forward_kinematics(ARM, q + h * e) - forward_kinematics(ARM, q - h * e)) / (2 * h)
                              for e in np.eye(2)])
        np.testing.assert_allclose(J, fd, atol=1e-7)


def test_hand_to_joint_rest_and_singular():
    qd, qdd = hand_to_joint_derivatives(ARM, (0.3, 1.0), (0, 0), (0, 0))
    np.testing.assert_array_equal(qd, 0)
    np.testing.assert_array_equal(qdd, 0)
    with pytest.raises(SingularConfiguration):
        hand_to_joint_derivatives(ARM, (0.3, 0.0), (0.1, 0), (0, 0))


def test_hand_to_joint_reproduces_hand_motion():
    # central differences of FK along q(t) = q + t*qd + t^2/2*qdd recover v and a
    rng = np.random.default_rng(1)
    h = 1e-3
    for _ in range(50):
        q = np.array([rng.uniform(-1, 2), rng.uniform(0.3, 2.5)])
        v, a = rng.normal(size=2) * 0.3, rng.normal(size=2)
        qd, qdd = hand_to_joint_derivatives(ARM, q, v, a)
        path = lambda t: forward_kinematics(ARM, q + t * qd + 0.5 * t * t * qdd)
        v_fd = (path(1e-6) - path(-1e-6)) / 2e-6
        a_fd = (-path(2 * h) + 16 * path(h) - 30 * path(0.0) + 16 * path(-h) - path(-2 * h)) / (12 * h * h)
        np.testing.assert_allclose(v_fd, v, atol=1e-6)
        np.testing.assert_allclose(a_fd, a, atol=1e-5)


def test_inverse_dynamics_examples():
    rng = np.random.default_rng(2)
    for q in rng.uniform(-3, 3, size=(10, 2)):
        np.testing.assert_array_equal(inverse_dynamics(ARM, q, (0, 0), (0, 0)), 0)
    # H at q2=0 with a1=0.16, a2=0.048, a3=0.045: first column (a1+2a2, a3+a2)
    np.testing.assert_allclose(inverse_dynamics(ARM, (0, 0), (0, 0), (1, 0)), (0.256, 0.093), atol=1e-15)


def test_forward_dynamics_examples():
    np.testing.assert_array_equal(forward_dynamics(ARM, (0.4, 1.1), (0, 0), (0, 0)), 0)
    np.testing.assert_allclose(forward_dynamics(ARM, (0, 0), (0, 0), (0.256, 0.093)), (1, 0), atol=1e-12)
    q, qd, tau = np.array([0.3, 1.2]), np.array([0.5, -0.7]), np.array([0.2, -0.1])
    d0 = forward_dynamics(ARM, q, qd, 0 * tau)
    lhs = forward_dynamics(ARM, q, qd, 2 * tau) - d0
    rhs = 2 * (forward_dynamics(ARM, q, qd, tau) - d0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(-3.1, 3.1))
def test_id_fd_round_trip(vals, q2):
    q = np.array([vals[0], q2])
    qd, qdd = np.array(vals[2:4]), np.array(vals[4:6])
    tau = inverse_dynamics(ARM, q, qd, qdd)
    assert np.max(np.abs(forward_dynamics(ARM, q, qd, tau) - qdd)) < 1e-10


def test_activation_to_torque_examples():
    np.testing.assert_array_equal(activation_to_torque(ARM, np.zeros(6)), 0)
    for c in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(activation_to_torque(ARM, [c, c, 0, 0, 0, 0]), 0)
    np.testing.assert_array_equal(activation_to_torque(ARM, [1, 0, 0, 0, 0, 0]), (4.0, 0))
    with pytest.raises(DomainError):
        activation_to_torque(ARM, [1.1, 0, 0, 0, 0, 0])
    with pytest.raises(DomainError):
        activation_to_torque(ARM, [-0.01, 0, 0, 0, 0, 0])


def test_params_defaults_and_invariants():
    assert ARM.problems() == []
    a1, a2, a3 = ARM.inertia_constants()
    assert (a1, a2, a3) == pytest.approx((0.16, 0.048, 0.045))
    assert ArmParams(l1=-0.3).problems()
    assert ArmParams(s2=0.5).problems()
    assert ArmParams(R=np.ones((2, 6))).problems()
    assert ArmParams(B=[[0.05, 0.1], [0.0, 0.05]]).problems()
    assert ArmParams.from_dict(ARM.to_dict()).to_dict() == ARM.to_dict()


def test_simulate_rest_stays_at_rest():
    q0 = JointState.at_rest(inverse_kinematics(ARM, (0.1, 0.35)))
    states, hand = simulate_activations(ARM, q0, np.zeros((50, 6)))
    assert states.shape == (51, 4)
    np.testing.assert_array_equal(states[:, :2], np.tile(q0.q, (51, 1)))
    np.testing.assert_array_equal(hand, forward_kinematics(ARM, q0.q))


def test_simulate_integration_converges():
    rng = np.random.default_rng(3)
    traj = rng.uniform(0, 0.05, size=(50, 6))
    q0 = JointState.at_rest(inverse_kinematics(ARM, (0.0, 0.35)))
    _, h1 = simulate_activations(ARM, q0, traj, dt_int=0.001)
    _, h2 = simulate_activations(ARM, q0, traj, dt_int=0.0005)
    assert np.linalg.norm(h1 - h2) < 1e-6


def test_simulate_rejects_bad_substep_and_blowup():
    q0 = JointState.at_rest((0.5, 1.0))
    with pytest.raises(DomainError):
        simulate_activations(ARM, q0, np.zeros((50, 6)), dt_int=0.003)
    with pytest.raises(NumericalBlowup):
        integrate_torques(ARM, np.array([0.5, 1.0, 0, 0]), np.full((50, 2), 1e9), 0.02, 0.01)


def test_ik_fk_round_trip_bulk():
    rng = np.random.default_rng(4)
    r = rng.uniform(0.10, 0.60, 100_000)
    th = rng.uniform(-np.pi, np.pi, 100_000)
    p = np.column_stack([r * np.cos(th), r * np.sin(th)])
    for sign in (1, -1):
        err = np.linalg.norm(forward_kinematics(ARM, inverse_kinematics(ARM, p, sign)) - p, axis=1)
        assert err.max() < 1e-10


def test_mass_matrix_positive_definite():
    q2 = np.linspace(-np.pi, np.pi, 100)
    q1 = np.linspace(-np.pi, np.pi, 100)
    Q = np.stack(np.meshgrid(q1, q2), axis=-1).reshape(-1, 2)
    H = mass_matrix(ARM, Q)
    np.testing.assert_array_equal(H, np.swapaxes(H, -1, -2))
    assert np.linalg.eigvalsh(H).min() > 0


def test_passivity_without_torque():
    rng = np.random.default_rng(5)
    for _ in range(5):
        x0 = np.concatenate([rng.uniform(-1, 1, 2), rng.normal(size=2) * 2])
        states = integrate_torques(ARM, x0, np.zeros((50, 2)), 0.02, 0.001)
        ke = kinetic_energy(ARM, states[:, :2], states[:, 2:])
        assert np.all(np.diff(ke) <= 1e-8)
