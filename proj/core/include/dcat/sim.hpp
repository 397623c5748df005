#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcat::sim {

struct Vec2 {
  double x = 0.0;
  double z = 0.0;
  Vec2 operator+(const Vec2& o) const { return {x + o.x, z + o.z}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, z - o.z}; }
  Vec2 operator*(double s) const { return {x * s, z * s}; }
  double norm() const;
};

// One rigid link of the planar tree. Each link extends from its proximal
// joint along its axis; world axis angle is accumulated down the tree.
// The root link is the torso; its proximal point is the floating base.
struct LinkSpec {
  std::string name;
  double length = 0.0;
  double mass = 0.0;
  double inertia = 0.0;       // about the CoM
  double com_offset = 0.0;    // CoM distance along the axis
  int parent = -1;            // -1 for the root
  double parent_anchor = 0.0; // attachment distance along the parent axis
  double angle_offset = 0.0;  // child axis angle relative to parent at q = 0
  int joint = -1;             // actuated joint index, -1 for the root
};

struct Keypoint {
  std::string name;
  int link = 0;
  double offset = 0.0;
};

struct ContactPoint {
  int link = 0;
  double offset = 0.0;
};

struct RobotModel {
  std::vector<LinkSpec> links;
  int n_joints = 0;
  std::vector<double> q_lower, q_upper;   // rad
  std::vector<double> torque_limit;       // N*m
  std::vector<double> kp, kd;             // diagonal PD gains
  std::vector<double> armature;           // reflected actuator inertia per joint
  std::vector<double> q_default;
  std::vector<Keypoint> keypoints;        // [0] must be the base/pelvis point
  std::vector<ContactPoint> contact_points;
  std::vector<uint8_t> foot_link;         // per link: counts as foot for contact penalties

  double gravity = 9.81;
  double contact_kn = 2000.0;  // normal penalty stiffness
  double contact_dn = 15.0;    // normal damping
  double contact_dt = 15.0;    // tangential damping (pre-cap)
  double friction_mu = 0.8;
  double standing_height = 0.0;  // base height in the default standing pose
  double nominal_mass = 35.0;    // reference scale for the assist force

  double total_mass() const;
  void validate() const;
};

// Desk-scale default: torso plus two 2-link legs, 4 actuated joints.
RobotModel make_biped_model();

struct SimState {
  Vec2 base_pos;
  double base_pitch = 0.0;     // positive tilts the torso toward +x
  Vec2 base_vel;
  double base_ang_vel = 0.0;
  std::vector<double> q, qd;
  std::vector<uint8_t> link_contact;
  double time = 0.0;
};

SimState make_default_state(const RobotModel& model);

struct ExternalForce {
  int link = -1;   // -1 applies at the base
  Vec2 force;
  double duration = 0.0;  // seconds, managed by the caller
};

// Forward kinematics.
struct FrameKin {
  std::vector<double> phi;      // world axis angle per link (ccw from +x)
  std::vector<Vec2> proximal;   // world proximal point per link
};
FrameKin forward_kinematics(const RobotModel& model, const Vec2& base, double pitch,
                            const std::vector<double>& q);
Vec2 link_point(const RobotModel& model, const FrameKin& kin, int link, double offset);
std::vector<Vec2> keypoint_positions(const RobotModel& model, const Vec2& base, double pitch,
                                     const std::vector<double>& q);
std::vector<Vec2> joint_positions(const RobotModel& model, const Vec2& base, double pitch,
                                  const std::vector<double>& q);
double lowest_contact_z(const RobotModel& model, const Vec2& base, double pitch,
                        const std::vector<double>& q);

// tau = Kp (q_tar - q) - Kd qd, clamped to torque limits.
std::vector<double> pd_torque(const RobotModel& model, const std::vector<double>& q_tar,
                              const std::vector<double>& q, const std::vector<double>& qd);

// q_tar = q_ref + action, clamped to joint limits.
std::vector<double> residual_setpoint(const RobotModel& model, const std::vector<double>& q_ref,
                                      const std::vector<double>& action);

// World gravity direction rotated into the body frame: (sin pitch, -cos pitch).
Vec2 projected_gravity(double pitch);

// Rotate a world vector into the body frame of a base at the given pitch.
Vec2 world_to_body(double pitch, const Vec2& v);
Vec2 body_to_world(double pitch, const Vec2& v);

// Vertical pulling force on the base.
ExternalForce apply_assist(double magnitude);

struct ContactForce {
  int point = 0;  // index into model.contact_points
  Vec2 force;     // world frame; force.z is the normal component
};

// One physics substep: penalty contacts, gravity, externals, joint torques,
// semi-implicit Euler. Deterministic; throws NumericError on non-finite state.
// `implicit_joint_kd` (per joint, N*m*s) folds viscous joint damping into the
// velocity solve, which keeps stiff PD damping stable at the substep rate;
// the torque vector itself must already include the explicit -Kd*qd term.
SimState step(const RobotModel& model, const SimState& state, const std::vector<double>& torques,
              const std::vector<ExternalForce>& forces, double dt,
              const std::vector<double>* implicit_joint_kd = nullptr,
              std::vector<ContactForce>* contacts_out = nullptr);

struct ControlConfig {
  int substeps = 4;
  double dt = 0.005;  // per substep; control period = substeps * dt
  double control_dt() const { return substeps * dt; }
};

// One 50 Hz control step: PD torques recomputed each substep against a fixed
// setpoint.
SimState control_step(const RobotModel& model, const SimState& state,
                      const std::vector<double>& q_tar, const std::vector<ExternalForce>& forces,
                      const ControlConfig& cc);

// Kinetic + potential energy (datum z = 0); the free-chain drift oracle.
double total_energy(const RobotModel& model, const SimState& state);

Vec2 center_of_mass(const RobotModel& model, const Vec2& base, double pitch,
                    const std::vector<double>& q);
Vec2 com_velocity(const RobotModel& model, const SimState& state);

void write_trajectory_csv(const std::string& path, const RobotModel& model,
                          const std::vector<SimState>& states);

}  // namespace dcat::sim
