#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcat/rng.hpp"
#include "dcat/sim.hpp"

namespace dcat::motion {

// One reference frame. Velocities are body-frame; keypoints are world-frame.
// Keypoint 0 is the base/pelvis point, which pins the world trajectory.
struct Frame {
  sim::Vec2 lin_vel;            // body frame, m/s
  double ang_vel = 0.0;         // pitch rate, rad/s
  sim::Vec2 gravity_dir;        // body frame, unit norm
  std::vector<double> q;        // rad
  double base_height = 0.0;     // m
  std::vector<sim::Vec2> keypoints;  // world frame, m
};

struct MotionClip {
  double fps = 50.0;
  std::string kind;
  uint64_t seed = 0;
  std::vector<Frame> frames;

  int n_frames() const { return static_cast<int>(frames.size()); }
  int n_joints() const { return frames.empty() ? 0 : static_cast<int>(frames[0].q.size()); }
  int n_keypoints() const { return frames.empty() ? 0 : static_cast<int>(frames[0].keypoints.size()); }
  double duration() const { return n_frames() / fps; }
  const Frame& frame(int i) const;          // clamped to [0, n_frames-1]
  void validate(const sim::RobotModel* model = nullptr) const;
};

// Reference pose reconstructed from a frame (world base position comes from
// keypoint 0, pitch from the gravity direction).
struct RefPose {
  sim::Vec2 base_pos;
  double pitch = 0.0;
};
RefPose ref_pose(const Frame& f);

enum class ClipKind { kWalk, kSquat, kKick, kCrawl, kGetup };
ClipKind clip_kind_from_string(const std::string& s);
const char* to_string(ClipKind k);

struct GenOverrides {
  std::optional<double> amplitude;
  std::optional<double> frequency;
  std::optional<double> speed;
};

// Procedural, kinematically consistent reference clips. Velocities are
// forward differences of the pose track rotated into the body frame, so the
// stored velocity of frame i matches (p[i+1]-p[i])*fps exactly.
MotionClip generate_clip(ClipKind kind, const sim::RobotModel& model, double duration,
                         uint64_t seed, const GenOverrides& ov = {});

// Per-channel uniform jitter half-widths at level 100%. Planar reduction of
// the 3-axis table: x keeps the horizontal half-width, z the vertical one.
struct NoiseSpec {
  double lin_vel_x = 0.5;
  double lin_vel_z = 0.2;
  double ang_vel = 0.52;
  double gravity = 0.05;
  double joint_pos = 0.1;
};

// Command window g_{t-L..t+L}; out-of-range indices clamp to the clip ends.
std::vector<Frame> sample_window(const MotionClip& clip, int t, int L);

// i.i.d. per-frame, per-channel uniform jitter scaled by level/100. The
// gravity direction is re-normalized after perturbation.
void inject_noise(std::vector<Frame>& window, const NoiseSpec& spec, double level, Rng& rng);

// Greedy redundancy filter: keeps a clip iff its mean per-frame joint
// distance (after resampling to a common length) to every kept clip exceeds
// the threshold.
std::vector<MotionClip> dedup_filter(const std::vector<MotionClip>& library, double threshold);
double clip_distance(const MotionClip& a, const MotionClip& b, int resample_len = 100);

// Line-delimited clip file: a JSON header line followed by one frame per
// line (full-precision floats). Human-diffable and append-friendly.
void save_clip(const std::string& path, const MotionClip& clip, const std::string& model_hash);
MotionClip load_clip(const std::string& path);

uint64_t model_hash(const sim::RobotModel& model);

struct LibraryEntry {
  std::string file;
  std::string kind;
  double duration = 0.0;
  uint64_t seed = 0;
  int frames = 0;
};

// Writes clips plus manifest.json into a directory.
std::vector<LibraryEntry> write_library(const std::string& dir,
                                        const std::vector<MotionClip>& clips,
                                        const sim::RobotModel& model);
std::vector<MotionClip> load_library(const std::string& dir);

}  // namespace dcat::motion
