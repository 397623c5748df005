#include "dcat/motion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "dcat/errors.hpp"

namespace dcat::motion {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr double kPi = 3.14159265358979323846;

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

struct Pose {
  double x = 0.0, z = 0.0, theta = 0.0;
  std::vector<double> q;
};

void append_num(std::string& line, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  if (!line.empty()) line += ' ';
  line += buf;
}

}  // namespace

const Frame& MotionClip::frame(int i) const {
  if (frames.empty()) throw UsageError("empty clip");
  i = std::clamp(i, 0, n_frames() - 1);
  return frames[static_cast<size_t>(i)];
}

void MotionClip::validate(const sim::RobotModel* model) const {
  if (fps <= 0.0) throw UsageError("clip: fps must be positive");
  if (frames.size() < 2) throw UsageError("clip: needs at least 2 frames");
  const size_t nj = frames[0].q.size();
  const size_t nk = frames[0].keypoints.size();
  for (const auto& f : frames) {
    if (f.q.size() != nj || f.keypoints.size() != nk) {
      throw UsageError("clip: inconsistent frame dimensions");
    }
    const double gn = f.gravity_dir.norm();
    if (std::fabs(gn - 1.0) > 1e-6) throw UsageError("clip: gravity direction not unit norm");
    if (model) {
      for (size_t j = 0; j < nj; ++j) {
        if (f.q[j] < model->q_lower[j] - 1e-9 || f.q[j] > model->q_upper[j] + 1e-9) {
          throw UsageError("clip: joint position outside model limits");
        }
      }
    }
  }
}

RefPose ref_pose(const Frame& f) {
  RefPose p;
  if (f.keypoints.empty()) throw UsageError("ref_pose: frame has no keypoints");
  p.base_pos = f.keypoints[0];
  p.pitch = std::atan2(f.gravity_dir.x, -f.gravity_dir.z);
  return p;
}

ClipKind clip_kind_from_string(const std::string& s) {
  if (s == "walk") return ClipKind::kWalk;
  if (s == "squat") return ClipKind::kSquat;
  if (s == "kick") return ClipKind::kKick;
  if (s == "crawl") return ClipKind::kCrawl;
  if (s == "getup") return ClipKind::kGetup;
  throw UsageError("unknown clip kind: " + s);
}

const char* to_string(ClipKind k) {
  switch (k) {
    case ClipKind::kWalk: return "walk";
    case ClipKind::kSquat: return "squat";
    case ClipKind::kKick: return "kick";
    case ClipKind::kCrawl: return "crawl";
    case ClipKind::kGetup: return "getup";
  }
  return "?";
}

MotionClip generate_clip(ClipKind kind, const sim::RobotModel& model, double duration,
                         uint64_t seed, const GenOverrides& ov) {
  if (duration < 1.0) throw UsageError("generate_clip: duration must be >= 1 s");
  const double fps = 50.0;
  const int n = static_cast<int>(std::lround(duration * fps));
  const int nj = model.n_joints;
  const double H = model.standing_height;
  Rng rng(derive_seed(seed, static_cast<uint64_t>(kind) + 1));

  // Per-leg joints are (hip, knee, ankle); ankle = -(hip+knee) keeps the foot
  // level with the ground when the torso is upright.
  auto legs = [](double hip_l, double knee_l, double hip_r, double knee_r) {
    return std::vector<double>{hip_l, knee_l, -(hip_l + knee_l),
                               hip_r, knee_r, -(hip_r + knee_r)};
  };

  std::function<Pose(double)> pose;
  switch (kind) {
    case ClipKind::kWalk: {
      const double speed = ov.speed.value_or(rng.uniform(0.2, 0.5));
      const double f = ov.frequency.value_or(rng.uniform(1.2, 1.8));
      const double hip_a = ov.amplitude.value_or(rng.uniform(0.3, 0.42));
      const double knee_a = 0.6 * hip_a;
      const double bob = 0.015, lean = 0.06;
      pose = [=](double t) {
        Pose p;
        const double ph = 2.0 * kPi * f * t;
        p.x = speed * t;
        p.z = H - 0.02 + bob * std::cos(2.0 * ph);
        p.theta = lean * std::sin(ph);
        p.q = legs(hip_a * std::sin(ph), -knee_a * (0.5 - 0.5 * std::cos(ph)),
                   hip_a * std::sin(ph + kPi), -knee_a * (0.5 - 0.5 * std::cos(ph + kPi)));
        return p;
      };
      break;
    }
    case ClipKind::kSquat: {
      const double amp = ov.amplitude.value_or(rng.uniform(0.6, 1.0));
      const double f = ov.frequency.value_or(rng.uniform(0.4, 0.7));
      pose = [=](double t) {
        Pose p;
        const double knee = -amp * (0.5 - 0.5 * std::cos(2.0 * kPi * f * t));
        p.x = 0.0;
        p.z = H * std::cos(knee / 2.0);
        p.theta = 0.0;
        p.q = legs(-knee / 2.0, knee, -knee / 2.0, knee);
        return p;
      };
      break;
    }
    case ClipKind::kKick: {
      const double amp = ov.amplitude.value_or(rng.uniform(0.9, 1.4));
      const double f = ov.frequency.value_or(rng.uniform(0.5, 0.8));
      pose = [=](double t) {
        Pose p;
        const double pulse = 0.5 - 0.5 * std::cos(2.0 * kPi * f * t);
        p.x = 0.0;
        p.z = H - 0.02;
        p.theta = -0.08 * amp * pulse;
        p.q = legs(amp * pulse, -0.4 * amp * pulse, -0.15 * amp * pulse, -0.1 * amp * pulse);
        return p;
      };
      break;
    }
    case ClipKind::kCrawl: {
      const double speed = ov.speed.value_or(rng.uniform(0.1, 0.2));
      const double f = ov.frequency.value_or(rng.uniform(0.8, 1.2));
      const double amp = ov.amplitude.value_or(rng.uniform(0.2, 0.35));
      pose = [=](double t) {
        Pose p;
        const double ph = 2.0 * kPi * f * t;
        p.x = speed * t;
        p.z = 0.45 * H + 0.02 * std::sin(ph);
        p.theta = 1.25;
        p.q = legs(-1.7 + amp * std::sin(ph), -1.5 + 0.5 * amp * std::sin(ph + 0.7),
                   -1.7 + amp * std::sin(ph + kPi), -1.5 + 0.5 * amp * std::sin(ph + kPi + 0.7));
        return p;
      };
      break;
    }
    case ClipKind::kGetup: {
      const double t0 = 0.15 * duration, t1 = 0.85 * duration;
      pose = [=](double t) {
        Pose p;
        const double s = smoothstep((t - t0) / (t1 - t0));
        p.x = 0.0;
        p.z = 0.04 + (H - 0.04) * s;
        p.theta = (1.0 - s) * (kPi / 2.0);
        const double hip = (1.0 - s) * 1.0;
        const double knee = (1.0 - s) * -2.0;
        p.q = legs(hip, knee, hip, knee);
        return p;
      };
      break;
    }
  }

  MotionClip clip;
  clip.fps = fps;
  clip.kind = to_string(kind);
  clip.seed = seed;
  clip.frames.resize(static_cast<size_t>(n));

  std::vector<Pose> track(static_cast<size_t>(n));
  const double margin = 1e-3;
  for (int i = 0; i < n; ++i) {
    track[i] = pose(i / fps);
    if (static_cast<int>(track[i].q.size()) != nj) {
      throw UsageError("generate_clip: generator joint count mismatch");
    }
    for (int j = 0; j < nj; ++j) {
      track[i].q[j] = std::clamp(track[i].q[j], model.q_lower[j] + margin,
                                 model.q_upper[j] - margin);
    }
    // Ground-consistent base height: the lowest contact point of the posed
    // model rests exactly on the ground plane.
    track[i].z = -sim::lowest_contact_z(model, {track[i].x, 0.0}, track[i].theta, track[i].q);
  }

  for (int i = 0; i < n; ++i) {
    Frame& fr = clip.frames[static_cast<size_t>(i)];
    const Pose& p = track[static_cast<size_t>(i)];
    fr.q = p.q;
    fr.base_height = p.z;
    fr.gravity_dir = sim::projected_gravity(p.theta);
    fr.keypoints = sim::keypoint_positions(model, {p.x, p.z}, p.theta, p.q);
    if (i + 1 < n) {
      const Pose& pn = track[static_cast<size_t>(i) + 1];
      fr.lin_vel = sim::world_to_body(p.theta, {(pn.x - p.x) * fps, (pn.z - p.z) * fps});
      fr.ang_vel = (pn.theta - p.theta) * fps;
    } else {
      fr.lin_vel = clip.frames[static_cast<size_t>(i) - 1].lin_vel;
      fr.ang_vel = clip.frames[static_cast<size_t>(i) - 1].ang_vel;
    }
  }
  clip.validate(&model);
  return clip;
}

std::vector<Frame> sample_window(const MotionClip& clip, int t, int L) {
  if (L < 0) throw UsageError("sample_window: L must be >= 0");
  if (t < 0 || t >= clip.n_frames()) {
    throw UsageError("sample_window: t outside clip");
  }
  std::vector<Frame> window;
  window.reserve(static_cast<size_t>(2 * L + 1));
  for (int i = t - L; i <= t + L; ++i) window.push_back(clip.frame(i));
  return window;
}

void inject_noise(std::vector<Frame>& window, const NoiseSpec& spec, double level, Rng& rng) {
  if (level < 0.0) throw UsageError("inject_noise: level must be >= 0");
  if (level == 0.0) return;
  const double s = level / 100.0;
  for (Frame& f : window) {
    f.lin_vel.x += rng.uniform(-spec.lin_vel_x * s, spec.lin_vel_x * s);
    f.lin_vel.z += rng.uniform(-spec.lin_vel_z * s, spec.lin_vel_z * s);
    f.ang_vel += rng.uniform(-spec.ang_vel * s, spec.ang_vel * s);
    f.gravity_dir.x += rng.uniform(-spec.gravity * s, spec.gravity * s);
    f.gravity_dir.z += rng.uniform(-spec.gravity * s, spec.gravity * s);
    const double gn = f.gravity_dir.norm();
    if (gn > 1e-9) {
      f.gravity_dir.x /= gn;
      f.gravity_dir.z /= gn;
    } else {
      f.gravity_dir = {0.0, -1.0};
    }
    for (double& qj : f.q) qj += rng.uniform(-spec.joint_pos * s, spec.joint_pos * s);
  }
}

double clip_distance(const MotionClip& a, const MotionClip& b, int resample_len) {
  if (a.n_joints() != b.n_joints()) throw UsageError("clip_distance: joint dimension mismatch");
  if (resample_len < 2) throw UsageError("clip_distance: resample_len must be >= 2");
  const int nj = a.n_joints();
  auto sample = [&](const MotionClip& c, double u, int j) {
    const double x = u * (c.n_frames() - 1);
    const int i0 = static_cast<int>(std::floor(x));
    const int i1 = std::min(i0 + 1, c.n_frames() - 1);
    const double w = x - i0;
    return (1.0 - w) * c.frames[i0].q[j] + w * c.frames[i1].q[j];
  };
  double total = 0.0;
  for (int k = 0; k < resample_len; ++k) {
    const double u = static_cast<double>(k) / (resample_len - 1);
    double d2 = 0.0;
    for (int j = 0; j < nj; ++j) {
      const double d = sample(a, u, j) - sample(b, u, j);
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return total / resample_len;
}

std::vector<MotionClip> dedup_filter(const std::vector<MotionClip>& library, double threshold) {
  if (library.empty()) throw UsageError("dedup_filter: empty library");
  std::vector<MotionClip> kept;
  for (const auto& clip : library) {
    bool redundant = false;
    for (const auto& k : kept) {
      if (clip_distance(clip, k) <= threshold) {
        redundant = true;
        break;
      }
    }
    if (!redundant) kept.push_back(clip);
  }
  return kept;
}

void save_clip(const std::string& path, const MotionClip& clip, const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open clip file for writing: " + path);
  json header = {
      {"dcat_clip", 1},          {"fps", clip.fps},
      {"joints", clip.n_joints()}, {"keypoints", clip.n_keypoints()},
      {"kind", clip.kind},       {"seed", clip.seed},
      {"model_hash", hash},
  };
  out << header.dump() << "\n";
  for (const auto& f : clip.frames) {
    std::string line;
    append_num(line, f.lin_vel.x);
    append_num(line, f.lin_vel.z);
    append_num(line, f.ang_vel);
    append_num(line, f.gravity_dir.x);
    append_num(line, f.gravity_dir.z);
    for (double q : f.q) append_num(line, q);
    append_num(line, f.base_height);
    for (const auto& kp : f.keypoints) {
      append_num(line, kp.x);
      append_num(line, kp.z);
    }
    out << line << "\n";
  }
}

MotionClip load_clip(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open clip file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw UsageError("empty clip file: " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw UsageError("bad clip header in " + path + ": " + e.what());
  }
  if (!header.contains("dcat_clip") || header["dcat_clip"] != 1) {
    throw UsageError("not a clip file: " + path);
  }
  MotionClip clip;
  clip.fps = header.at("fps").get<double>();
  clip.kind = header.at("kind").get<std::string>();
  clip.seed = header.at("seed").get<uint64_t>();
  const int nj = header.at("joints").get<int>();
  const int nk = header.at("keypoints").get<int>();
  const size_t expected = 5 + static_cast<size_t>(nj) + 1 + 2 * static_cast<size_t>(nk);

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::vector<double> vals;
    vals.reserve(expected);
    double v;
    while (is >> v) vals.push_back(v);
    if (vals.size() != expected) {
      throw UsageError("bad frame line in " + path + ": expected " +
                       std::to_string(expected) + " values, got " + std::to_string(vals.size()));
    }
    Frame f;
    size_t i = 0;
    f.lin_vel = {vals[i], vals[i + 1]};
    i += 2;
    f.ang_vel = vals[i++];
    f.gravity_dir = {vals[i], vals[i + 1]};
    i += 2;
    f.q.assign(vals.begin() + i, vals.begin() + i + nj);
    i += nj;
    f.base_height = vals[i++];
    f.keypoints.resize(static_cast<size_t>(nk));
    for (int k = 0; k < nk; ++k) {
      f.keypoints[k] = {vals[i], vals[i + 1]};
      i += 2;
    }
    clip.frames.push_back(std::move(f));
  }
  clip.validate();
  return clip;
}

uint64_t model_hash(const sim::RobotModel& model) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&h](double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int i = 0; i < 8; ++i) {
      h ^= (u >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& l : model.links) {
    mix(l.length);
    mix(l.mass);
    mix(l.inertia);
    mix(l.com_offset);
    mix(static_cast<double>(l.parent));
    mix(l.parent_anchor);
    mix(l.angle_offset);
  }
  for (int j = 0; j < model.n_joints; ++j) {
    mix(model.q_lower[j]);
    mix(model.q_upper[j]);
    mix(model.kp[j]);
    mix(model.kd[j]);
    mix(model.q_default[j]);
  }
  for (const auto& kp : model.keypoints) {
    mix(static_cast<double>(kp.link));
    mix(kp.offset);
  }
  return h;
}

std::vector<LibraryEntry> write_library(const std::string& dir,
                                        const std::vector<MotionClip>& clips,
                                        const sim::RobotModel& model) {
  fs::create_directories(dir);
  char hash_str[32];
  std::snprintf(hash_str, sizeof(hash_str), "%016llx",
                static_cast<unsigned long long>(model_hash(model)));
  std::vector<LibraryEntry> entries;
  json manifest_clips = json::array();
  for (size_t i = 0; i < clips.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "clip_%03zu_%s.txt", i, clips[i].kind.c_str());
    save_clip((fs::path(dir) / name).string(), clips[i], hash_str);
    LibraryEntry e{name, clips[i].kind, clips[i].duration(), clips[i].seed, clips[i].n_frames()};
    entries.push_back(e);
    manifest_clips.push_back({{"file", e.file},
                              {"kind", e.kind},
                              {"duration", e.duration},
                              {"seed", e.seed},
                              {"frames", e.frames}});
  }
  json manifest = {{"dcat_library", 1}, {"model_hash", hash_str}, {"clips", manifest_clips}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw UsageError("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  return entries;
}

std::vector<MotionClip> load_library(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw UsageError("no manifest.json in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad manifest: ") + e.what());
  }
  std::vector<MotionClip> clips;
  for (const auto& c : manifest.at("clips")) {
    clips.push_back(load_clip((fs::path(dir) / c.at("file").get<std::string>()).string()));
  }
  if (clips.empty()) throw UsageError("library has no clips: " + dir);
  return clips;
}

}  // namespace dcat::motion
