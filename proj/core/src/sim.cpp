#include "dcat/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dcat/errors.hpp"

namespace dcat::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;

inline Vec2 dir(double phi) { return {std::cos(phi), std::sin(phi)}; }
inline Vec2 dperp(double phi) { return {-std::sin(phi), std::cos(phi)}; }

// Dense symmetric positive-definite solve (the mass matrix is tiny).
void cholesky_solve(std::vector<double>& A, std::vector<double>& b, int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = A[i * n + j];
      for (int k = 0; k < j; ++k) s -= A[i * n + k] * A[j * n + k];
      if (i == j) {
        if (s <= 0.0) throw NumericError("mass matrix not positive definite");
        A[i * n + j] = std::sqrt(s);
      } else {
        A[i * n + j] = s / A[j * n + j];
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= A[i * n + k] * b[k];
    b[i] = s / A[i * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= A[k * n + i] * b[k];
    b[i] = s / A[i * n + i];
  }
}

// Everything the dynamics assembly needs about the current configuration:
// world angles, points, angle rates, and per-link proximal-point Jacobians.
struct Kinematics {
  int n = 0;  // generalized coordinates: x, z, pitch, q...
  std::vector<double> phi, phidot;
  std::vector<Vec2> prox;           // proximal point per link
  std::vector<Vec2> prox_acc0;      // velocity-product acceleration of proximal
  std::vector<Vec2> prox_vel;
  std::vector<std::vector<double>> w;      // [link][coord] d(phi)/d(coord)
  std::vector<std::vector<Vec2>> dprox;    // [link][coord] d(prox)/d(coord)

  void point_jacobian(const RobotModel& m, int link, double off, std::vector<Vec2>& out) const {
    out.assign(n, Vec2{});
    out[0] = {1.0, 0.0};
    out[1] = {0.0, 1.0};
    const Vec2 dp = dperp(phi[link]);
    for (int a = 2; a < n; ++a) {
      out[a] = dprox[link][a] + dp * (off * w[link][a]);
    }
    (void)m;
  }

  Vec2 point_pos(int link, double off) const { return prox[link] + dir(phi[link]) * off; }

  Vec2 point_vel(int link, double off) const {
    return prox_vel[link] + dperp(phi[link]) * (off * phidot[link]);
  }

  Vec2 point_acc0(int link, double off) const {
    return prox_acc0[link] - dir(phi[link]) * (off * phidot[link] * phidot[link]);
  }
};

Kinematics build_kinematics(const RobotModel& model, const Vec2& base, double pitch,
                            const std::vector<double>& q, const Vec2& base_vel,
                            double pitch_rate, const std::vector<double>& qd) {
  const int nl = static_cast<int>(model.links.size());
  Kinematics k;
  k.n = 3 + model.n_joints;
  k.phi.resize(nl);
  k.phidot.resize(nl);
  k.prox.resize(nl);
  k.prox_vel.resize(nl);
  k.prox_acc0.resize(nl);
  k.w.assign(nl, std::vector<double>(k.n, 0.0));
  k.dprox.assign(nl, std::vector<Vec2>(k.n, Vec2{}));

  for (int i = 0; i < nl; ++i) {
    const LinkSpec& link = model.links[i];
    if (link.parent < 0) {
      k.phi[i] = kPi / 2.0 - pitch;
      k.phidot[i] = -pitch_rate;
      k.prox[i] = base;
      k.prox_vel[i] = base_vel;
      k.prox_acc0[i] = {0.0, 0.0};
      k.w[i][2] = -1.0;
    } else {
      const int p = link.parent;
      k.phi[i] = k.phi[p] + link.angle_offset + q[link.joint];
      k.phidot[i] = k.phidot[p] + qd[link.joint];
      const double r = link.parent_anchor;
      k.prox[i] = k.prox[p] + dir(k.phi[p]) * r;
      k.prox_vel[i] = k.prox_vel[p] + dperp(k.phi[p]) * (r * k.phidot[p]);
      k.prox_acc0[i] = k.prox_acc0[p] - dir(k.phi[p]) * (r * k.phidot[p] * k.phidot[p]);
      for (int a = 2; a < k.n; ++a) {
        k.w[i][a] = k.w[p][a];
        k.dprox[i][a] = k.dprox[p][a] + dperp(k.phi[p]) * (r * k.w[p][a]);
      }
      k.w[i][3 + link.joint] += 1.0;
    }
  }
  return k;
}

void check_dims(const RobotModel& model, const std::vector<double>& v, const char* what) {
  if (static_cast<int>(v.size()) != model.n_joints) {
    throw UsageError(std::string(what) + ": expected " + std::to_string(model.n_joints) +
                     " entries, got " + std::to_string(v.size()));
  }
}

}  // namespace

double Vec2::norm() const { return std::sqrt(x * x + z * z); }

double RobotModel::total_mass() const {
  double m = 0.0;
  for (const auto& l : links) m += l.mass;
  return m;
}

void RobotModel::validate() const {
  if (links.empty()) throw ConfigError("model: no links");
  if (links[0].parent != -1) throw ConfigError("model: links[0] must be the root");
  for (size_t i = 1; i < links.size(); ++i) {
    if (links[i].parent < 0 || links[i].parent >= static_cast<int>(i)) {
      throw ConfigError("model: parents must precede children");
    }
    if (links[i].joint < 0 || links[i].joint >= n_joints) {
      throw ConfigError("model: bad joint index on link " + links[i].name);
    }
  }
  for (const auto& l : links) {
    if (l.length <= 0 || l.mass <= 0 || l.inertia <= 0) {
      throw ConfigError("model: physical quantities must be positive (" + l.name + ")");
    }
  }
  auto expect = [&](const std::vector<double>& v, const char* what) {
    if (static_cast<int>(v.size()) != n_joints) {
      throw ConfigError(std::string("model: ") + what + " must have n_joints entries");
    }
  };
  expect(q_lower, "q_lower");
  expect(q_upper, "q_upper");
  expect(torque_limit, "torque_limit");
  expect(kp, "kp");
  expect(kd, "kd");
  expect(armature, "armature");
  expect(q_default, "q_default");
  for (int j = 0; j < n_joints; ++j) {
    if (q_lower[j] >= q_upper[j]) throw ConfigError("model: joint limits inverted");
    if (kp[j] < 0 || kd[j] < 0) throw ConfigError("model: PD gains must be >= 0");
    if (armature[j] < 0) throw ConfigError("model: armature must be >= 0");
    if (torque_limit[j] <= 0) throw ConfigError("model: torque limits must be positive");
  }
  if (keypoints.size() < 2) throw ConfigError("model: need at least 2 keypoints");
  if (foot_link.size() != links.size()) throw ConfigError("model: foot_link size mismatch");
  if (gravity <= 0 || contact_kn <= 0 || standing_height <= 0 || nominal_mass <= 0) {
    throw ConfigError("model: scalar parameters must be positive");
  }
}

RobotModel make_biped_model() {
  RobotModel m;
  const double lt = 0.5, mt = 6.0;
  const double lth = 0.22, mth = 1.5;
  const double lsh = 0.22, msh = 1.0;
  const double lft = 0.20, mft = 0.3;  // foot symmetric about the ankle
  auto rod_inertia = [](double mass, double len) { return mass * len * len / 12.0; };

  // Joint order per leg: hip, knee, ankle. At q = 0 the legs hang straight
  // down and the feet are horizontal, toes forward (+x).
  m.links.push_back({"torso", lt, mt, rod_inertia(mt, lt), lt / 2, -1, 0.0, 0.0, -1});
  m.links.push_back({"thigh_l", lth, mth, rod_inertia(mth, lth), lth / 2, 0, 0.0, -kPi, 0});
  m.links.push_back({"shank_l", lsh, msh, rod_inertia(msh, lsh), lsh / 2, 1, lth, 0.0, 1});
  m.links.push_back({"foot_l", lft, mft, rod_inertia(mft, lft), 0.0, 2, lsh, kPi / 2, 2});
  m.links.push_back({"thigh_r", lth, mth, rod_inertia(mth, lth), lth / 2, 0, 0.0, -kPi, 3});
  m.links.push_back({"shank_r", lsh, msh, rod_inertia(msh, lsh), lsh / 2, 4, lth, 0.0, 4});
  m.links.push_back({"foot_r", lft, mft, rod_inertia(mft, lft), 0.0, 5, lsh, kPi / 2, 5});
  m.n_joints = 6;
  m.q_lower = {-2.6, -2.7, -1.0, -2.6, -2.7, -1.0};
  m.q_upper = {2.6, 0.3, 1.0, 2.6, 0.3, 1.0};
  m.torque_limit = {30.0, 30.0, 12.0, 30.0, 30.0, 12.0};
  m.kp = {60.0, 60.0, 25.0, 60.0, 60.0, 25.0};
  m.kd = {3.0, 3.0, 1.0, 3.0, 3.0, 1.0};
  m.armature = {0.02, 0.02, 0.02, 0.02, 0.02, 0.02};
  m.q_default = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  m.keypoints = {{"pelvis", 0, 0.0}, {"head", 0, lt}, {"foot_l", 3, 0.0}, {"foot_r", 6, 0.0}};
  m.contact_points = {{3, -lft / 2}, {3, lft / 2}, {6, -lft / 2}, {6, lft / 2},  // heels, toes
                      {2, 0.0},      {5, 0.0},                                   // knees
                      {0, 0.0},      {0, lt / 2},  {0, lt}};                     // pelvis, torso, head
  m.foot_link = {0, 0, 1, 1, 0, 1, 1};
  m.standing_height = lth + lsh;
  m.validate();
  return m;
}

SimState make_default_state(const RobotModel& model) {
  SimState s;
  s.base_pos = {0.0, model.standing_height};
  s.q = model.q_default;
  s.qd.assign(model.n_joints, 0.0);
  s.link_contact.assign(model.links.size(), 0);
  return s;
}

FrameKin forward_kinematics(const RobotModel& model, const Vec2& base, double pitch,
                            const std::vector<double>& q) {
  check_dims(model, q, "forward_kinematics");
  FrameKin fk;
  const int nl = static_cast<int>(model.links.size());
  fk.phi.resize(nl);
  fk.proximal.resize(nl);
  for (int i = 0; i < nl; ++i) {
    const LinkSpec& link = model.links[i];
    if (link.parent < 0) {
      fk.phi[i] = kPi / 2.0 - pitch;
      fk.proximal[i] = base;
    } else {
      fk.phi[i] = fk.phi[link.parent] + link.angle_offset + q[link.joint];
      fk.proximal[i] = fk.proximal[link.parent] + dir(fk.phi[link.parent]) * link.parent_anchor;
    }
  }
  return fk;
}

Vec2 link_point(const RobotModel&, const FrameKin& kin, int link, double offset) {
  return kin.proximal[link] + dir(kin.phi[link]) * offset;
}

std::vector<Vec2> keypoint_positions(const RobotModel& model, const Vec2& base, double pitch,
                                     const std::vector<double>& q) {
  const FrameKin fk = forward_kinematics(model, base, pitch, q);
  std::vector<Vec2> out;
  out.reserve(model.keypoints.size());
  for (const auto& kp : model.keypoints) out.push_back(link_point(model, fk, kp.link, kp.offset));
  return out;
}

std::vector<Vec2> joint_positions(const RobotModel& model, const Vec2& base, double pitch,
                                  const std::vector<double>& q) {
  const FrameKin fk = forward_kinematics(model, base, pitch, q);
  std::vector<Vec2> out(model.n_joints);
  for (const auto& link : model.links) {
    if (link.joint >= 0) out[link.joint] = fk.proximal[&link - model.links.data()];
  }
  return out;
}

double lowest_contact_z(const RobotModel& model, const Vec2& base, double pitch,
                        const std::vector<double>& q) {
  const FrameKin fk = forward_kinematics(model, base, pitch, q);
  double z = 1e30;
  for (const auto& cp : model.contact_points) {
    z = std::min(z, link_point(model, fk, cp.link, cp.offset).z);
  }
  return z;
}

std::vector<double> pd_torque(const RobotModel& model, const std::vector<double>& q_tar,
                              const std::vector<double>& q, const std::vector<double>& qd) {
  check_dims(model, q_tar, "pd_torque q_tar");
  check_dims(model, q, "pd_torque q");
  check_dims(model, qd, "pd_torque qd");
  std::vector<double> tau(model.n_joints);
  for (int j = 0; j < model.n_joints; ++j) {
    const double t = model.kp[j] * (q_tar[j] - q[j]) - model.kd[j] * qd[j];
    tau[j] = std::clamp(t, -model.torque_limit[j], model.torque_limit[j]);
  }
  return tau;
}

std::vector<double> residual_setpoint(const RobotModel& model, const std::vector<double>& q_ref,
                                      const std::vector<double>& action) {
  check_dims(model, q_ref, "residual_setpoint q_ref");
  check_dims(model, action, "residual_setpoint action");
  std::vector<double> q_tar(model.n_joints);
  for (int j = 0; j < model.n_joints; ++j) {
    q_tar[j] = std::clamp(q_ref[j] + action[j], model.q_lower[j], model.q_upper[j]);
  }
  return q_tar;
}

Vec2 projected_gravity(double pitch) { return {std::sin(pitch), -std::cos(pitch)}; }

Vec2 world_to_body(double pitch, const Vec2& v) {
  const double c = std::cos(pitch), s = std::sin(pitch);
  return {c * v.x - s * v.z, s * v.x + c * v.z};
}

Vec2 body_to_world(double pitch, const Vec2& v) {
  const double c = std::cos(pitch), s = std::sin(pitch);
  return {c * v.x + s * v.z, -s * v.x + c * v.z};
}

ExternalForce apply_assist(double magnitude) {
  if (magnitude < 0.0) throw UsageError("apply_assist: magnitude must be >= 0");
  return ExternalForce{-1, {0.0, magnitude}, 0.0};
}

SimState step(const RobotModel& model, const SimState& state, const std::vector<double>& torques,
              const std::vector<ExternalForce>& forces, double dt,
              const std::vector<double>* implicit_joint_kd,
              std::vector<ContactForce>* contacts_out) {
  if (!(dt > 0.0 && dt <= 0.02)) throw UsageError("step: dt must be in (0, 0.02]");
  check_dims(model, torques, "step torques");
  check_dims(model, state.q, "step q");
  check_dims(model, state.qd, "step qd");
  if (implicit_joint_kd) check_dims(model, *implicit_joint_kd, "step implicit_joint_kd");

  const int n = 3 + model.n_joints;
  const int nl = static_cast<int>(model.links.size());
  const Kinematics kin = build_kinematics(model, state.base_pos, state.base_pitch, state.q,
                                          state.base_vel, state.base_ang_vel, state.qd);

  std::vector<double> M(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> rhs(n, 0.0);
  std::vector<Vec2> jac;

  for (int i = 0; i < nl; ++i) {
    const LinkSpec& link = model.links[i];
    kin.point_jacobian(model, i, link.com_offset, jac);
    // Mass matrix and bias from the CoM translation plus rotary inertia.
    const Vec2 acc0 = kin.point_acc0(i, link.com_offset);
    for (int a = 0; a < n; ++a) {
      for (int b = a; b < n; ++b) {
        double v = link.mass * (jac[a].x * jac[b].x + jac[a].z * jac[b].z);
        if (a >= 2 && b >= 2) v += link.inertia * kin.w[i][a] * kin.w[i][b];
        M[a * n + b] += v;
        if (a != b) M[b * n + a] += v;
      }
      // Applied gravity minus velocity-product bias.
      rhs[a] += link.mass * (-model.gravity * jac[a].z - (acc0.x * jac[a].x + acc0.z * jac[a].z));
    }
  }

  SimState next = state;
  std::fill(next.link_contact.begin(), next.link_contact.end(), 0);
  if (contacts_out) contacts_out->clear();

  for (size_t ci = 0; ci < model.contact_points.size(); ++ci) {
    const ContactPoint& cp = model.contact_points[ci];
    const Vec2 p = kin.point_pos(cp.link, cp.offset);
    if (p.z >= 0.0) continue;
    const Vec2 pv = kin.point_vel(cp.link, cp.offset);
    double fn = model.contact_kn * (-p.z) - model.contact_dn * pv.z;
    if (fn <= 0.0) continue;  // unilateral: never pull down
    double ft = -model.contact_dt * pv.x;
    const double cap = model.friction_mu * fn;
    ft = std::clamp(ft, -cap, cap);
    kin.point_jacobian(model, cp.link, cp.offset, jac);
    for (int a = 0; a < n; ++a) rhs[a] += jac[a].x * ft + jac[a].z * fn;
    next.link_contact[cp.link] = 1;
    if (contacts_out) contacts_out->push_back({static_cast<int>(ci), {ft, fn}});
  }

  for (const auto& f : forces) {
    const int link = f.link < 0 ? 0 : f.link;
    if (link >= nl) throw UsageError("step: force target link out of range");
    kin.point_jacobian(model, link, 0.0, jac);
    for (int a = 0; a < n; ++a) rhs[a] += jac[a].x * f.force.x + jac[a].z * f.force.z;
  }

  for (int j = 0; j < model.n_joints; ++j) {
    rhs[3 + j] += std::clamp(torques[j], -model.torque_limit[j], model.torque_limit[j]);
    M[(3 + j) * n + (3 + j)] += model.armature[j];
    if (implicit_joint_kd) M[(3 + j) * n + (3 + j)] += dt * (*implicit_joint_kd)[j];
  }

  cholesky_solve(M, rhs, n);  // rhs now holds accelerations

  next.base_vel.x += rhs[0] * dt;
  next.base_vel.z += rhs[1] * dt;
  next.base_ang_vel += rhs[2] * dt;
  for (int j = 0; j < model.n_joints; ++j) next.qd[j] += rhs[3 + j] * dt;

  next.base_pos.x += next.base_vel.x * dt;
  next.base_pos.z += next.base_vel.z * dt;
  next.base_pitch += next.base_ang_vel * dt;
  for (int j = 0; j < model.n_joints; ++j) {
    next.q[j] += next.qd[j] * dt;
    if (next.q[j] <= model.q_lower[j]) {
      next.q[j] = model.q_lower[j];
      next.qd[j] = 0.0;
    } else if (next.q[j] >= model.q_upper[j]) {
      next.q[j] = model.q_upper[j];
      next.qd[j] = 0.0;
    }
  }
  next.time += dt;

  auto finite = [](double v) { return std::isfinite(v); };
  bool ok = finite(next.base_pos.x) && finite(next.base_pos.z) && finite(next.base_pitch) &&
            finite(next.base_vel.x) && finite(next.base_vel.z) && finite(next.base_ang_vel);
  for (int j = 0; j < model.n_joints && ok; ++j) ok = finite(next.q[j]) && finite(next.qd[j]);
  if (!ok) {
    std::string msg = "step: non-finite state at t=" + std::to_string(next.time);
    char buf[96];
    msg += "; q/qd/acc:";
    for (int j = 0; j < model.n_joints; ++j) {
      std::snprintf(buf, sizeof(buf), " [%g %g %g]", state.q[j], state.qd[j], rhs[3 + j]);
      msg += buf;
    }
    std::snprintf(buf, sizeof(buf), "; base acc (%g %g %g) pitch %g z %g", rhs[0], rhs[1],
                  rhs[2], state.base_pitch, state.base_pos.z);
    msg += buf;
    throw NumericError(msg);
  }
  return next;
}

SimState control_step(const RobotModel& model, const SimState& state,
                      const std::vector<double>& q_tar, const std::vector<ExternalForce>& forces,
                      const ControlConfig& cc) {
  SimState s = state;
  for (int i = 0; i < cc.substeps; ++i) {
    const std::vector<double> tau = pd_torque(model, q_tar, s.q, s.qd);
    SimState ns = step(model, s, tau, forces, cc.dt, &model.kd);
    // Contact flags reported for the whole control step.
    if (i > 0) {
      for (size_t l = 0; l < ns.link_contact.size(); ++l) ns.link_contact[l] |= s.link_contact[l];
    }
    s = std::move(ns);
  }
  return s;
}

double total_energy(const RobotModel& model, const SimState& state) {
  const Kinematics kin = build_kinematics(model, state.base_pos, state.base_pitch, state.q,
                                          state.base_vel, state.base_ang_vel, state.qd);
  double e = 0.0;
  for (size_t i = 0; i < model.links.size(); ++i) {
    const LinkSpec& link = model.links[i];
    const Vec2 cv = kin.point_vel(static_cast<int>(i), link.com_offset);
    const Vec2 cp = kin.point_pos(static_cast<int>(i), link.com_offset);
    const double wv = kin.phidot[i];
    e += 0.5 * link.mass * (cv.x * cv.x + cv.z * cv.z) + 0.5 * link.inertia * wv * wv;
    e += link.mass * model.gravity * cp.z;
  }
  for (int j = 0; j < model.n_joints; ++j) {
    e += 0.5 * model.armature[j] * state.qd[j] * state.qd[j];
  }
  return e;
}

Vec2 center_of_mass(const RobotModel& model, const Vec2& base, double pitch,
                    const std::vector<double>& q) {
  const FrameKin fk = forward_kinematics(model, base, pitch, q);
  Vec2 c{0.0, 0.0};
  double mass = 0.0;
  for (size_t i = 0; i < model.links.size(); ++i) {
    const LinkSpec& l = model.links[i];
    c = c + link_point(model, fk, static_cast<int>(i), l.com_offset) * l.mass;
    mass += l.mass;
  }
  return c * (1.0 / mass);
}

Vec2 com_velocity(const RobotModel& model, const SimState& state) {
  const Kinematics kin = build_kinematics(model, state.base_pos, state.base_pitch, state.q,
                                          state.base_vel, state.base_ang_vel, state.qd);
  Vec2 v{0.0, 0.0};
  double mass = 0.0;
  for (size_t i = 0; i < model.links.size(); ++i) {
    const LinkSpec& l = model.links[i];
    v = v + kin.point_vel(static_cast<int>(i), l.com_offset) * l.mass;
    mass += l.mass;
  }
  return v * (1.0 / mass);
}

void write_trajectory_csv(const std::string& path, const RobotModel& model,
                          const std::vector<SimState>& states) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open trajectory file: " + path);
  out << "time,base_x,base_z,pitch,vel_x,vel_z,pitch_rate";
  for (int j = 0; j < model.n_joints; ++j) out << ",q" << j;
  for (int j = 0; j < model.n_joints; ++j) out << ",qd" << j;
  for (size_t l = 0; l < model.links.size(); ++l) out << ",contact_" << model.links[l].name;
  out << "\n";
  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    out << ',' << buf;
  };
  for (const auto& s : states) {
    std::snprintf(buf, sizeof(buf), "%.10g", s.time);
    out << buf;
    emit(s.base_pos.x);
    emit(s.base_pos.z);
    emit(s.base_pitch);
    emit(s.base_vel.x);
    emit(s.base_vel.z);
    emit(s.base_ang_vel);
    for (double v : s.q) emit(v);
    for (double v : s.qd) emit(v);
    for (uint8_t c : s.link_contact) out << ',' << int(c);
    out << "\n";
  }
}

}  // namespace dcat::sim
