#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "dcat/errors.hpp"
#include "dcat/rng.hpp"
#include "dcat/sim.hpp"

using namespace dcat;
using namespace dcat::sim;

namespace {

bool states_bit_equal(const SimState& a, const SimState& b) {
  auto eq = [](double x, double y) { return std::memcmp(&x, &y, 8) == 0; };
  if (!eq(a.base_pos.x, b.base_pos.x) || !eq(a.base_pos.z, b.base_pos.z)) return false;
  if (!eq(a.base_pitch, b.base_pitch) || !eq(a.base_ang_vel, b.base_ang_vel)) return false;
  if (!eq(a.base_vel.x, b.base_vel.x) || !eq(a.base_vel.z, b.base_vel.z)) return false;
  for (size_t j = 0; j < a.q.size(); ++j) {
    if (!eq(a.q[j], b.q[j]) || !eq(a.qd[j], b.qd[j])) return false;
  }
  return a.link_contact == b.link_contact;
}

SimState airborne_state(const RobotModel& model, double z, Rng& rng) {
  SimState s = make_default_state(model);
  s.base_pos = {0.0, z};
  s.base_pitch = rng.uniform(-0.5, 0.5);
  s.base_vel = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  s.base_ang_vel = rng.uniform(-1, 1);
  for (int j = 0; j < model.n_joints; ++j) {
    s.q[j] = rng.uniform(0.6 * model.q_lower[j], 0.6 * model.q_upper[j]);
    s.qd[j] = rng.uniform(-1, 1);
  }
  return s;
}

}  // namespace

TEST_CASE("pd torque arithmetic") {
  RobotModel m = make_biped_model();
  std::vector<double> q(m.n_joints, 0.0), qd(m.n_joints, 0.0), q_tar(m.n_joints, 0.0);

  SUBCASE("zero error gives zero torque") {
    const auto tau = pd_torque(m, q_tar, q, qd);
    for (double t : tau) CHECK(t == 0.0);
  }
  SUBCASE("pure proportional") {
    std::fill(m.kp.begin(), m.kp.end(), 10.0);
    std::fill(m.kd.begin(), m.kd.end(), 0.0);
    q_tar[0] = 0.1;
    const auto tau = pd_torque(m, q_tar, q, qd);
    CHECK(tau[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("pure derivative") {
    std::fill(m.kp.begin(), m.kp.end(), 0.0);
    std::fill(m.kd.begin(), m.kd.end(), 2.0);
    qd[1] = 0.5;
    const auto tau = pd_torque(m, q_tar, q, qd);
    CHECK(tau[1] == doctest::Approx(-1.0).epsilon(1e-15));
  }
  SUBCASE("clamped to torque limits") {
    q_tar[0] = 100.0;
    const auto tau = pd_torque(m, q_tar, q, qd);
    CHECK(tau[0] == m.torque_limit[0]);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS((void)pd_torque(m, {0.0}, q, qd), UsageError);
  }
}

TEST_CASE("residual setpoint") {
  const RobotModel m = make_biped_model();
  std::vector<double> q_ref(m.n_joints, 0.0), a(m.n_joints, 0.0);

  SUBCASE("zero action is the identity") {
    q_ref[2] = 0.4;
    const auto q_tar = residual_setpoint(m, q_ref, a);
    CHECK(q_tar == q_ref);
  }
  SUBCASE("addition") {
    q_ref[0] = 0.2;
    a[0] = 0.1;
    CHECK(residual_setpoint(m, q_ref, a)[0] == doctest::Approx(0.3).epsilon(1e-15));
  }
  SUBCASE("clamped at the joint limit") {
    q_ref[0] = m.q_upper[0];
    a[0] = 0.5;
    CHECK(residual_setpoint(m, q_ref, a)[0] == m.q_upper[0]);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS((void)residual_setpoint(m, {0.0}, a), UsageError);
  }
}

TEST_CASE("projected gravity") {
  const Vec2 g0 = projected_gravity(0.0);
  CHECK(g0.x == 0.0);
  CHECK(g0.z == -1.0);
  const Vec2 g90 = projected_gravity(M_PI / 2);
  CHECK(g90.x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(g90.z) < 1e-12);
  const Vec2 g180 = projected_gravity(M_PI);
  CHECK(std::fabs(g180.x) < 1e-12);
  CHECK(g180.z == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double pitch = rng.uniform(-10, 10);
    CHECK(std::fabs(projected_gravity(pitch).norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("body/world rotations invert each other") {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const double pitch = rng.uniform(-4, 4);
    const Vec2 v{rng.normal(), rng.normal()};
    const Vec2 rt = body_to_world(pitch, world_to_body(pitch, v));
    CHECK(rt.x == doctest::Approx(v.x).epsilon(1e-12));
    CHECK(rt.z == doctest::Approx(v.z).epsilon(1e-12));
  }
}

TEST_CASE("ballistic step matches the free-fall oracle") {
  const RobotModel m = make_biped_model();
  SimState s = make_default_state(m);
  s.base_pos = {0.0, 10.0};
  s.base_vel = {0.0, -0.3};
  const std::vector<double> tau(m.n_joints, 0.0);

  SUBCASE("one substep") {
    const double dt = 0.005;
    const SimState n = step(m, s, tau, {}, dt);
    // Semi-implicit Euler: dz = (v - g dt) dt; the ballistic 1/2 g dt^2 form
    // agrees to within one integrator order.
    const double dz_exact = (s.base_vel.z - m.gravity * dt) * dt;
    const double dz_ballistic = s.base_vel.z * dt - 0.5 * m.gravity * dt * dt;
    CHECK(n.base_pos.z - s.base_pos.z == doctest::Approx(dz_exact).epsilon(1e-12));
    CHECK(std::fabs((n.base_pos.z - s.base_pos.z) - dz_ballistic) <= m.gravity * dt * dt);
  }
  SUBCASE("half a second of free fall") {
    SimState n = s;
    const double T = 0.5;
    for (int i = 0; i < 100; ++i) n = step(m, n, tau, {}, 0.005);
    const double expected = s.base_pos.z + s.base_vel.z * T - 0.5 * m.gravity * T * T;
    CHECK(n.base_pos.z == doctest::Approx(expected).epsilon(0.01));
  }
}

TEST_CASE("static equilibrium on the ground") {
  const RobotModel m = make_biped_model();
  // Balanced posture: lying flat, every contact point at the same height.
  SimState s = make_default_state(m);
  s.base_pitch = M_PI / 2;
  s.base_pos = {0.0, 0.02};
  const std::vector<double> tau(m.n_joints, 0.0);
  for (int i = 0; i < 1500; ++i) s = step(m, s, tau, {}, 0.005);  // settle
  const double z0 = s.base_pos.z;
  for (int i = 0; i < 100; ++i) s = step(m, s, tau, {}, 0.005);
  CHECK(std::fabs(s.base_pos.z - z0) < 1e-3);
}

TEST_CASE("free chain conserves energy within 1 percent per second") {
  RobotModel m = make_biped_model();
  Rng rng(11);
  SimState s = airborne_state(m, 8.0, rng);
  // Keep the chain free: start high enough that 1 s of fall stays airborne,
  // and widen the joint limits so no clamping interferes.
  std::fill(m.q_lower.begin(), m.q_lower.end(), -100.0);
  std::fill(m.q_upper.begin(), m.q_upper.end(), 100.0);
  const double e0 = total_energy(m, s);
  const std::vector<double> tau(m.n_joints, 0.0);
  for (int i = 0; i < 200; ++i) s = step(m, s, tau, {}, 0.005);  // 1 simulated second
  CHECK(s.base_pos.z > 1.0);  // still airborne
  const double e1 = total_energy(m, s);
  INFO("e0=" << e0 << " e1=" << e1);
  CHECK(std::fabs(e1 - e0) / std::fabs(e0) < 0.01);
}

TEST_CASE("assist force") {
  const RobotModel m = make_biped_model();

  SUBCASE("negative magnitude rejected") {
    CHECK_THROWS_AS((void)apply_assist(-1.0), UsageError);
  }
  SUBCASE("zero magnitude is a no-op") {
    Rng rng(12);
    const SimState s = airborne_state(m, 5.0, rng);
    const std::vector<double> tau(m.n_joints, 0.0);
    const SimState a = step(m, s, tau, {apply_assist(0.0)}, 0.005);
    const SimState b = step(m, s, tau, {}, 0.005);
    CHECK(states_bit_equal(a, b));
  }
  SUBCASE("Newton: CoM acceleration gain is F over total mass") {
    // Contact-free chain; the assist is the only difference between the two
    // rollouts, so the momentum theorem fixes the CoM velocity gain. The
    // momentum is evaluated at the pre-step configuration, where the force
    // acted (the semi-implicit update moves the positions afterwards).
    Rng rng(13);
    const SimState s = airborne_state(m, 5.0, rng);
    const std::vector<double> tau(m.n_joints, 0.0);
    const double F = 37.0, dt = 0.005;
    const SimState with = step(m, s, tau, {apply_assist(F)}, dt);
    const SimState without = step(m, s, tau, {}, dt);
    auto velocities_at_old_pose = [&](const SimState& ns) {
      SimState hybrid = s;
      hybrid.base_vel = ns.base_vel;
      hybrid.base_ang_vel = ns.base_ang_vel;
      hybrid.qd = ns.qd;
      return com_velocity(m, hybrid);
    };
    const Vec2 v1 = velocities_at_old_pose(with);
    const Vec2 v0 = velocities_at_old_pose(without);
    CHECK((v1.z - v0.z) / dt == doctest::Approx(F / m.total_mass()).epsilon(1e-9));
    CHECK(std::fabs(v1.x - v0.x) < 1e-9);
  }
}

TEST_CASE("stepping is deterministic") {
  const RobotModel m = make_biped_model();
  Rng rng(14);
  SimState a = airborne_state(m, 0.6, rng);
  SimState b = a;
  std::vector<double> tau(m.n_joints);
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < m.n_joints; ++j) tau[j] = std::sin(0.1 * i + j);
    a = step(m, a, tau, {}, 0.005);
    b = step(m, b, tau, {}, 0.005);
    REQUIRE(states_bit_equal(a, b));
  }
}

TEST_CASE("contact forces are unilateral") {
  const RobotModel m = make_biped_model();
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    SimState s = airborne_state(m, rng.uniform(0.1, 0.5), rng);
    std::vector<double> tau(m.n_joints, 0.0);
    std::vector<ContactForce> contacts;
    for (int i = 0; i < 300; ++i) {
      const FrameKin fk = forward_kinematics(m, s.base_pos, s.base_pitch, s.q);
      s = step(m, s, tau, {}, 0.005, nullptr, &contacts);
      for (const auto& c : contacts) {
        CHECK(c.force.z >= 0.0);
        const auto& cp = m.contact_points[static_cast<size_t>(c.point)];
        CHECK(link_point(m, fk, cp.link, cp.offset).z < 0.0);
        CHECK(std::fabs(c.force.x) <= m.friction_mu * c.force.z + 1e-12);
      }
    }
  }
}

TEST_CASE("joint limits hold under torque fuzzing") {
  const RobotModel m = make_biped_model();
  Rng rng(16);
  SimState s = airborne_state(m, 1.0, rng);
  std::vector<double> tau(m.n_joints);
  for (int i = 0; i < 500; ++i) {
    for (int j = 0; j < m.n_joints; ++j) {
      tau[j] = rng.uniform(-m.torque_limit[j], m.torque_limit[j]);
    }
    s = step(m, s, tau, {}, 0.005);
    for (int j = 0; j < m.n_joints; ++j) {
      CHECK(s.q[j] >= m.q_lower[j]);
      CHECK(s.q[j] <= m.q_upper[j]);
    }
  }
}

TEST_CASE("step argument validation") {
  const RobotModel m = make_biped_model();
  const SimState s = make_default_state(m);
  const std::vector<double> tau(m.n_joints, 0.0);
  CHECK_THROWS_AS((void)step(m, s, tau, {}, 0.0), UsageError);
  CHECK_THROWS_AS((void)step(m, s, tau, {}, 0.05), UsageError);
  CHECK_THROWS_AS((void)step(m, s, {0.0}, {}, 0.005), UsageError);
}

TEST_CASE("trajectory csv dump") {
  const RobotModel m = make_biped_model();
  std::vector<SimState> states{make_default_state(m)};
  states.push_back(step(m, states[0], std::vector<double>(m.n_joints, 0.0), {}, 0.005));
  const std::string path = "traj_test.csv";
  write_trajectory_csv(path, m, states);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("time,base_x,base_z,pitch", 0) == 0);
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2);
  std::remove(path.c_str());
}

TEST_CASE("model validation") {
  RobotModel m = make_biped_model();
  m.kp[0] = -1.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = make_biped_model();
  m.links[1].mass = 0.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = make_biped_model();
  m.keypoints.resize(1);
  CHECK_THROWS_AS(m.validate(), ConfigError);
}
