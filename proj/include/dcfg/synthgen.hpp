#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcfg/image.hpp"
#include "dcfg/track_model.hpp"

namespace dcfg {

/// Frames [begin, end) in which `box` is overwritten with `level`.
struct Occlusion {
    int begin = 0;
    int end = 0;
    BBox box;
    double level = 0.2;
};

/// One synthetic thermal-like scene. The target is an axis-aligned Gaussian
/// blob whose ground-truth box spans +-2 standard deviations, so the box
/// always contains the half-peak level set.
struct SceneConfig {
    int width = 64;
    int height = 64;
    int frames = 120;
    /// Ground-truth box size at frame 0 (4 sigma per axis).
    double target_w = 10.0;
    double target_h = 10.0;
    /// Peak brightness above the background.
    double peak = 0.6;
    double start_cx = 32.0;
    double start_cy = 32.0;
    double vx = 0.0;
    double vy = 0.0;
    /// Per-frame positional jitter around the constant-velocity line,
    /// Gaussian with this sd and clipped to +-3 sd.
    double jitter = 0.0;
    /// Box size multiplier reached at the last frame, linear in time.
    double scale_end = 1.0;
    /// Relative amplitude of a sinusoidal modulation of target and background brightness.
    double intensity_drift = 0.0;
    int distractors = 0;
    /// 1 makes distractor blobs identical to the target in shape and peak.
    double similarity = 0.8;
    std::vector<Occlusion> occlusions;
    double background = 0.2;
    /// Amplitude of the smooth static background field.
    double background_variation = 0.08;
    /// Per-pixel, per-frame white noise sd.
    double noise = 0.015;
    std::vector<std::string> attributes;
    std::uint64_t seed = 0;

    /// Rejects bad ranges and motion that takes the box closer than 4 px to
    /// the frame edge.
    void validate() const;
};

struct BlobParams {
    double peak = 0.0;
    double sigma_x = 0.0;
    double sigma_y = 0.0;
    double cx = 0.0;  // frame 0
    double cy = 0.0;
    double vx = 0.0;
    double vy = 0.0;
};

struct SyntheticSequence {
    std::string name;
    std::vector<Image> frames;
    std::vector<BBox> gt;
    std::vector<std::string> attributes;
    std::uint64_t seed = 0;
    bool train = false;
    std::vector<BlobParams> distractors;

    bool has(const std::string& attribute) const;
};

/// Pure function of `config`. Pixel values are multiples of 1/255 and ground
/// truth is rounded to 2 decimals, so export followed by import is exact.
SyntheticSequence generate(const SceneConfig& config);

/// 12 sequences tagged DI, OCC, IV and SV each (eval) followed by 20 clean
/// training sequences, all 120 frames of kSuiteFrameSize squared pixels.
std::vector<SyntheticSequence> make_suite(std::uint64_t seed);

/// The SceneConfig make_suite uses for sequence `index` (0..67).
SceneConfig suite_scene(std::uint64_t seed, int index);
std::string suite_name(int index);

inline constexpr int kSuiteEvalPerAttribute = 12;
inline constexpr int kSuiteTrain = 20;
inline constexpr int kSuiteSize = 4 * kSuiteEvalPerAttribute + kSuiteTrain;
inline constexpr int kSuiteFrameSize = 96;

void write_pgm(const Image& image, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

/// dir/frame_%04d.pgm, dir/groundtruth.txt ("cx,cy,w,h" per line, 2
/// decimals) and dir/meta.json.
void export_sequence(const SyntheticSequence& sequence, const std::filesystem::path& dir);
SyntheticSequence import_sequence(const std::filesystem::path& dir);

/// One subdirectory per sequence plus dir/suite.json listing them in order.
void export_suite(const std::vector<SyntheticSequence>& suite, const std::filesystem::path& dir);
std::vector<SyntheticSequence> import_suite(const std::filesystem::path& dir);

}  // namespace dcfg
