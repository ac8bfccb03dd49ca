#include "motionlab/motion.hpp"

#include <algorithm>
#include <cmath>

namespace mlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr double kHeadDy = 0.55;
constexpr double kFaceRadius = 0.4;
constexpr double kHandDx = 0.35;
constexpr double kHandDy = 0.3;
constexpr double kWalkSpeed = 0.025;  // worst case 0.025*1.25*1.6*196 = 9.8 < bound
constexpr double kBobAmp = 0.02;
constexpr double kTurnAngle = kPi / 2.0;
constexpr double kJumpHeight = 0.45;
constexpr double kWaveAmp = 0.3;
constexpr double kCrouchDepth = 0.4;

const char* kPrimitiveNames[kNumPrimitives] = {
    "idle",      "walk-forward", "walk-backward", "turn-left", "turn-right",
    "jump",      "wave-left",    "wave-right",    "crouch",    "spin",
};

bool uses_count(Primitive p) {
  return p == Primitive::kJump || p == Primitive::kWaveLeft || p == Primitive::kWaveRight ||
         p == Primitive::kSpin;
}

int round_up_to(int v, int m) { return ((v + m - 1) / m) * m; }

// Trapezoid in [0,1]: ramp down 25%, hold 50%, ramp up 25%.
double crouch_profile(double p) {
  if (p < 0.25) return p / 0.25;
  if (p < 0.75) return 1.0;
  return (1.0 - p) / 0.25;
}

}  // namespace

const char* primitive_name(Primitive p) { return kPrimitiveNames[int(p)]; }

Primitive primitive_from_name(const std::string& name) {
  for (int i = 0; i < kNumPrimitives; ++i)
    if (name == kPrimitiveNames[i]) return Primitive(i);
  throw ConfigError("unknown primitive: " + name);
}

DifficultySpec DifficultySpec::standard() {
  DifficultySpec s;
  for (int i = 0; i < kNumPrimitives; ++i) s.allowed.push_back(Primitive(i));
  return s;
}

MotionScript sample_script(RngStream& rng, const DifficultySpec& spec) {
  if (spec.allowed.empty()) throw ConfigError("sample_script: empty primitive set");
  MotionScript script;
  script.intensity =
      spec.vary_intensity ? kIntensityTiers[size_t(rng.uniform_int(uint64_t(3)))] : 1.0f;
  if (spec.max_total_frames < kMinFrames || spec.min_segment_frames < 8)
    throw ConfigError("sample_script: need max_total_frames >= 40 and min_segment_frames >= 8");
  if (spec.frame_multiple != 4 && spec.frame_multiple != 8 && spec.frame_multiple != 16)
    throw ConfigError("sample_script: frame_multiple must be 4, 8 or 16");
  const int fm = spec.frame_multiple;
  const int n = rng.uniform_int(spec.min_primitives, spec.max_primitives);
  int budget = std::min(spec.max_total_frames, kMaxFrames);
  // Draw segments until the primitive budget is used; keep drawing past it if
  // the clip is still below the minimum length (primitives stay uniform).
  while (true) {
    const int have = int(script.segments.size());
    const int total = script.total_frames();
    if (have >= n && total >= kMinFrames) break;
    ScriptSegment seg;
    seg.primitive = spec.allowed[size_t(rng.uniform_int(uint64_t(spec.allowed.size())))];
    seg.amplitude = float(rng.uniform(0.8, 1.25));
    if (uses_count(seg.primitive)) seg.count = rng.uniform_int(spec.min_count, spec.max_count);
    int lo = round_up_to(spec.min_segment_frames, fm);
    if (uses_count(seg.primitive)) lo = std::max(lo, round_up_to(8 * seg.count, fm));
    const int hi = std::max(lo, round_up_to(spec.max_segment_frames, fm));
    seg.duration = round_up_to(rng.uniform_int(lo, hi), fm);
    if (seg.duration > budget) seg.duration = (budget / fm) * fm;
    if (seg.duration <= 0) break;
    // repetition windows stay >= 8 frames (velocity bound)
    if (uses_count(seg.primitive)) seg.count = std::max(1, std::min(seg.count, seg.duration / 8));
    script.segments.push_back(seg);
    budget -= seg.duration;
    if (budget < round_up_to(spec.min_segment_frames, fm)) break;
  }
  if (script.total_frames() < kMinFrames && !script.segments.empty())
    script.segments.back().duration += round_up_to(kMinFrames - script.total_frames(), fm);
  return script;
}

MotionSequence render_script(const MotionScript& script, RngStream& noise_rng,
                             double noise_sigma) {
  const int T = script.total_frames();
  if (T < kMinFrames || T > kMaxFrames || T % 4 != 0)
    throw ShapeError(format("render_script: bad total length %d", T));
  MotionSequence out;
  out.frames = Tensor({T, kMotionDim});

  const double inten = script.intensity;
  double root_x = 0.0, heading = kPi / 2.0;  // starts facing "up"
  int t_global = 0;
  for (const auto& seg : script.segments) {
    const int D = seg.duration;
    const double amp = seg.amplitude * inten;
    for (int t = 0; t < D; ++t, ++t_global) {
      const double p = D > 1 ? double(t) / double(D) : 0.0;
      double root_y = 0.0, wave_l = 0.0, wave_r = 0.0;
      switch (seg.primitive) {
        case Primitive::kIdle:
          break;
        case Primitive::kWalkForward:
          root_x += kWalkSpeed * amp;
          root_y = kBobAmp * amp * std::sin(2.0 * kPi * t / 16.0);
          break;
        case Primitive::kWalkBackward:
          root_x -= kWalkSpeed * amp;
          root_y = kBobAmp * amp * std::sin(2.0 * kPi * t / 16.0);
          break;
        case Primitive::kTurnLeft:
          heading += kTurnAngle * seg.amplitude / D;
          break;
        case Primitive::kTurnRight:
          heading -= kTurnAngle * seg.amplitude / D;
          break;
        case Primitive::kJump: {
          const double w = double(D) / seg.count;
          const double pw = std::fmod(double(t), w) / w;
          if (pw >= 0.2 && pw <= 0.8) {
            const double q = (pw - 0.2) / 0.6;
            root_y = kJumpHeight * amp * 4.0 * q * (1.0 - q);
          }
          break;
        }
        case Primitive::kWaveLeft:
          wave_l = kWaveAmp * amp * std::sin(2.0 * kPi * seg.count * p);
          break;
        case Primitive::kWaveRight:
          wave_r = kWaveAmp * amp * std::sin(2.0 * kPi * seg.count * p);
          break;
        case Primitive::kCrouch:
          root_y = -kCrouchDepth * amp * crouch_profile(p);
          break;
        case Primitive::kSpin:
          heading += 2.0 * kPi * seg.count / D;
          break;
      }
      float* f = out.frames.data.data() + size_t(t_global) * kMotionDim;
      const double hx = root_x + kFaceRadius * std::cos(heading);
      const double hy = root_y + kFaceRadius * std::sin(heading);
      const double vals[kMotionDim] = {
          root_x,                          root_y,
          root_x,                          root_y + kHeadDy,
          hx,                              hy,
          root_x - kHandDx + wave_l,       root_y + kHandDy,
          root_x + kHandDx + wave_r,       root_y + kHandDy,
      };
      for (int j = 0; j < kMotionDim; ++j) {
        double v = vals[j];
        if (noise_sigma > 0.0) {
          double nz = noise_rng.gauss(0.0, noise_sigma);
          nz = std::clamp(nz, -3.0 * noise_sigma, 3.0 * noise_sigma);
          v += nz;
        }
        f[j] = float(std::clamp(v, -kPositionBound, kPositionBound));
      }
    }
  }
  return out;
}

MotionSequence upsample_motion(const MotionSequence& x, int factor) {
  if (factor != 2 && factor != 4)
    throw ConfigError(format("upsample_motion: factor must be 2 or 4, got %d", factor));
  const int T = x.length();
  const int To = T * factor;
  MotionSequence out;
  out.frames = Tensor({To, kMotionDim});
  for (int j = 0; j < To; ++j) {
    // uniform grid over [0, T-1], endpoints preserved
    const double pos = To > 1 ? double(j) * double(T - 1) / double(To - 1) : 0.0;
    const int i0 = std::min(int(pos), T - 2);
    const double a = pos - i0;
    const float* r0 = x.frames.data.data() + size_t(i0) * kMotionDim;
    const float* r1 = r0 + kMotionDim;
    float* o = out.frames.data.data() + size_t(j) * kMotionDim;
    for (int c = 0; c < kMotionDim; ++c) o[c] = float((1.0 - a) * r0[c] + a * r1[c]);
  }
  return out;
}

MotionSequence downsample_motion(const MotionSequence& x, int factor) {
  if (factor != 2 && factor != 4)
    throw ConfigError(format("downsample_motion: factor must be 2 or 4, got %d", factor));
  const int T = x.length();
  if (T % factor != 0) throw ShapeError("downsample_motion: length not divisible by factor");
  const int To = T / factor;
  MotionSequence out;
  out.frames = Tensor({To, kMotionDim});
  for (int j = 0; j < To; ++j) {
    const double pos = To > 1 ? double(j) * double(T - 1) / double(To - 1) : 0.0;
    const int i0 = std::min(int(pos), T - 2);
    const double a = pos - i0;
    const float* r0 = x.frames.data.data() + size_t(i0) * kMotionDim;
    const float* r1 = r0 + kMotionDim;
    float* o = out.frames.data.data() + size_t(j) * kMotionDim;
    for (int c = 0; c < kMotionDim; ++c) o[c] = float((1.0 - a) * r0[c] + a * r1[c]);
  }
  return out;
}

MotionStats motion_stats(const MotionSequence& m) {
  MotionStats st;
  const int T = m.length();
  const auto& f = m.frames.data;
  st.min_coord = st.max_coord = f.empty() ? 0.0 : double(f[0]);
  for (float v : f) {
    st.min_coord = std::min(st.min_coord, double(v));
    st.max_coord = std::max(st.max_coord, double(v));
  }
  if (T < 2) return st;
  st.net_dx = double(f[size_t(T - 1) * kMotionDim]) - double(f[0]);
  // Unwrapped heading from the facing indicator.
  double prev = std::atan2(double(f[5]) - double(f[1]), double(f[4]) - double(f[0]));
  double total = 0.0;
  for (int t = 1; t < T; ++t) {
    const float* r = f.data() + size_t(t) * kMotionDim;
    double h = std::atan2(double(r[5]) - double(r[1]), double(r[4]) - double(r[0]));
    double d = h - prev;
    while (d > kPi) d -= 2.0 * kPi;
    while (d < -kPi) d += 2.0 * kPi;
    total += d;
    prev = h;
  }
  st.net_heading = total;
  double speed = 0.0, max_step = 0.0;
  for (int t = 1; t < T; ++t) {
    const float* a = f.data() + size_t(t - 1) * kMotionDim;
    const float* b = f.data() + size_t(t) * kMotionDim;
    double frame_sum = 0.0;
    for (int j = 0; j < kJoints; ++j) {
      const double dx = double(b[2 * j]) - double(a[2 * j]);
      const double dy = double(b[2 * j + 1]) - double(a[2 * j + 1]);
      const double d = std::sqrt(dx * dx + dy * dy);
      frame_sum += d;
      max_step = std::max(max_step, d);
    }
    speed += frame_sum / kJoints;
  }
  st.mean_speed = speed / (T - 1);
  st.max_joint_step = max_step;
  return st;
}

int count_regions_above(const std::vector<double>& series, double threshold) {
  int regions = 0;
  bool in_region = false;
  for (double v : series) {
    if (v > threshold) {
      if (!in_region) ++regions;
      in_region = true;
    } else {
      in_region = false;
    }
  }
  return regions;
}

int count_pulses(const std::vector<double>& series, double lo, double hi) {
  int pulses = 0;
  bool active = false;
  for (double v : series) {
    if (!active && v > hi) {
      active = true;
      ++pulses;
    } else if (active && v < lo) {
      active = false;
    }
  }
  return pulses;
}

std::vector<double> root_height(const MotionSequence& m) {
  std::vector<double> v(size_t(m.length()));
  for (int t = 0; t < m.length(); ++t) v[size_t(t)] = double(m.frames.at(t, 1));
  return v;
}

std::vector<double> hand_offset_x(const MotionSequence& m, bool left) {
  const int j = left ? 3 : 4;
  const double rest = left ? -kHandDx : kHandDx;
  std::vector<double> v(size_t(m.length()));
  for (int t = 0; t < m.length(); ++t)
    v[size_t(t)] = double(m.frames.at(t, 2 * j)) - double(m.frames.at(t, 0)) - rest;
  return v;
}

bool script_oracle(const MotionScript& script, const MotionSequence& m, std::string* why,
                   bool strict_magnitude) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (m.length() < 2) return fail("motion too short");

  int jumps = 0, crouches = 0, waves_l = 0, waves_r = 0;
  double walk = 0.0, turn = 0.0;
  bool only_idle = true;
  for (const auto& seg : script.segments) {
    switch (seg.primitive) {
      case Primitive::kIdle:
        break;
      case Primitive::kWalkForward:
        walk += kWalkSpeed * seg.amplitude * script.intensity * seg.duration;
        only_idle = false;
        break;
      case Primitive::kWalkBackward:
        walk -= kWalkSpeed * seg.amplitude * script.intensity * seg.duration;
        only_idle = false;
        break;
      case Primitive::kTurnLeft:
        turn += kTurnAngle * seg.amplitude;
        only_idle = false;
        break;
      case Primitive::kTurnRight:
        turn -= kTurnAngle * seg.amplitude;
        only_idle = false;
        break;
      case Primitive::kJump:
        jumps += seg.count;
        only_idle = false;
        break;
      case Primitive::kWaveLeft:
        waves_l += seg.count;
        only_idle = false;
        break;
      case Primitive::kWaveRight:
        waves_r += seg.count;
        only_idle = false;
        break;
      case Primitive::kCrouch:
        ++crouches;
        only_idle = false;
        break;
      case Primitive::kSpin:
        turn += 2.0 * kPi * seg.count;
        only_idle = false;
        break;
    }
  }

  const MotionStats st = motion_stats(m);
  if (only_idle) {
    if (st.mean_speed > 0.05) return fail("idle script but motion moves");
    return true;
  }
  if (jumps > 0) {
    const int peaks = count_pulses(root_height(m), 0.05, 0.12);
    if (peaks != jumps) return fail(format("expected %d jump peaks, found %d", jumps, peaks));
  }
  if (crouches > 0) {
    std::vector<double> depth;
    for (double h : root_height(m)) depth.push_back(-h);
    const int dips = count_pulses(depth, 0.05, 0.12);
    if (dips != crouches) return fail(format("expected %d crouch dips, found %d", crouches, dips));
  }
  if (waves_l > 0) {
    const int osc = count_pulses(hand_offset_x(m, true), 0.04, 0.09);
    if (osc != waves_l) return fail(format("expected %d left waves, found %d", waves_l, osc));
  }
  if (waves_r > 0) {
    const int osc = count_pulses(hand_offset_x(m, false), 0.04, 0.09);
    if (osc != waves_r) return fail(format("expected %d right waves, found %d", waves_r, osc));
  }
  if (std::abs(walk) > 0.3) {
    if (st.net_dx * walk <= 0.0) return fail("net displacement sign mismatch");
    if (strict_magnitude &&
        (std::abs(st.net_dx) < 0.3 * std::abs(walk) || std::abs(st.net_dx) > 3.0 * std::abs(walk)))
      return fail("net displacement magnitude off");
  }
  if (std::abs(turn) > 0.3) {
    if (st.net_heading * turn <= 0.0) return fail("heading change sign mismatch");
  }
  return true;
}

int kinematic_label(const MotionSequence& m) {
  const double s = motion_stats(m).mean_speed;
  if (s < 0.035) return 0;
  if (s < 0.075) return 1;
  return 2;
}

int semantic_label(const MotionScript& script) {
  for (const auto& seg : script.segments)
    if (seg.primitive != Primitive::kIdle) return int(seg.primitive);
  return int(Primitive::kIdle);
}

}  // namespace mlab
