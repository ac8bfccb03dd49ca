// motion.hpp — procedural planar-chain motion: scripts, rendering, oracles.
//
// The skeleton is a 5-joint planar chain sampled at a nominal 20 fps:
//   joint 0  root (x: horizontal position, y: height)
//   joint 1  head (root + fixed offset)
//   joint 2  facing indicator (unit heading vector scaled, attached to root)
//   joint 3  left hand, joint 4 right hand (oscillate when waving)
// Frames are row-major (T, 10). Scripts render deterministically from a seed;
// per-primitive oracles (peak counts, displacement sign, heading sign) make
// generated semantics checkable.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "motionlab/rng.hpp"
#include "motionlab/tensor.hpp"

namespace mlab {

constexpr int kJoints = 5;
constexpr int kMotionDim = 2 * kJoints;
constexpr int kMinFrames = 40;
constexpr int kMaxFrames = 196;
constexpr double kVelocityBound = 1.0;   // max per-joint displacement per frame
constexpr double kPositionBound = 10.0;  // |coordinate| bound

enum class Primitive : uint8_t {
  kIdle = 0,
  kWalkForward,
  kWalkBackward,
  kTurnLeft,
  kTurnRight,
  kJump,
  kWaveLeft,
  kWaveRight,
  kCrouch,
  kSpin,
};
constexpr int kNumPrimitives = 10;

const char* primitive_name(Primitive p);
Primitive primitive_from_name(const std::string& name);

struct ScriptSegment {
  Primitive primitive = Primitive::kIdle;
  int duration = 40;      // frames, divisible by 4
  int count = 1;          // repetitions for jump/wave/spin
  float amplitude = 1.0f; // per-segment size variation, not verbalized
};

struct MotionScript {
  std::vector<ScriptSegment> segments;
  float intensity = 1.0f;  // global kinematic scale, not verbalized
  int total_frames() const {
    int t = 0;
    for (const auto& s : segments) t += s.duration;
    return t;
  }
};

struct MotionSequence {
  Tensor frames;  // (T, kMotionDim)
  int length() const { return frames.rank() == 2 ? frames.dim(0) : 0; }
};

// Bounds on script sampling. Empty primitive set is an error.
struct DifficultySpec {
  int min_primitives = 1;
  int max_primitives = 4;
  std::vector<Primitive> allowed;  // empty -> error
  int min_segment_frames = 20;
  int max_segment_frames = 60;
  int max_total_frames = kMaxFrames;
  int min_count = 1;
  int max_count = 4;
  bool vary_intensity = true;
  int frame_multiple = 4;  // segment durations round up to this (4, 8 or 16)

  static DifficultySpec standard();
};

// Intensity tiers used as the kinematic label taxonomy.
constexpr std::array<float, 3> kIntensityTiers = {0.6f, 1.0f, 1.6f};

MotionScript sample_script(RngStream& rng, const DifficultySpec& spec);

// Deterministic kinematic rendering plus bounded gaussian noise
// (sigma 0.01, clipped at 3 sigma). noise_sigma 0 renders exactly.
MotionSequence render_script(const MotionScript& script, RngStream& noise_rng,
                             double noise_sigma = 0.01);

// ---- resampling ----

// Endpoint-preserving linear resampling onto factor*T uniformly spaced
// points over the same support. factor must be 2 or 4.
MotionSequence upsample_motion(const MotionSequence& x, int factor);
// Inverse-direction resample to T/factor points (same endpoint-preserving
// grid). Exact for globally linear signals; kinks introduce interpolation
// error bounded by the velocity limit over one output step.
MotionSequence downsample_motion(const MotionSequence& x, int factor);

// ---- kinematic statistics and oracles ----

struct MotionStats {
  double net_dx = 0.0;           // root horizontal displacement
  double net_heading = 0.0;      // unwrapped heading change, radians
  double mean_speed = 0.0;       // mean per-frame root+hands displacement
  double max_joint_step = 0.0;   // largest per-frame per-joint displacement
  double min_coord = 0.0, max_coord = 0.0;
};
MotionStats motion_stats(const MotionSequence& m);

// Number of maximal runs where series[i] > threshold.
int count_regions_above(const std::vector<double>& series, double threshold);

// Pulse count with hysteresis: a pulse starts when the series exceeds `hi`
// and ends when it falls below `lo`. Robust against rendering noise at slow
// threshold crossings.
int count_pulses(const std::vector<double>& series, double lo, double hi);

std::vector<double> root_height(const MotionSequence& m);
std::vector<double> hand_offset_x(const MotionSequence& m, bool left);

// True when the rendered/generated motion satisfies every segment's
// observable property (peaks, displacement sign, heading sign, stillness).
// Works on generated motion with no access to per-segment boundaries: checks
// are aggregated per primitive kind over the whole clip.
// strict_magnitude additionally checks displacement magnitudes against the
// script's durations (rendering check); generated motions of free length are
// judged on counts and signs only.
bool script_oracle(const MotionScript& script, const MotionSequence& m,
                   std::string* why = nullptr, bool strict_magnitude = true);

// Kinematic taxonomy label: 0/1/2 by mean speed tier thresholds.
int kinematic_label(const MotionSequence& m);
// Semantic taxonomy label: primitive of the first segment.
int semantic_label(const MotionScript& script);

}  // namespace mlab
