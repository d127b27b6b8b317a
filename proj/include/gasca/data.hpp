#pragma once

// Synthetic multi-pose, multi-illumination face data, target pairing and
// image/manifest I/O.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "gasca/tensor.hpp"

namespace gasca {

inline constexpr std::array<int, 9> kPoseGrid{-60, -45, -30, -15, 0, 15, 30, 45, 60};
inline constexpr std::array<int, 7> kTargetPoseGrid{-45, -30, -15, 0, 15, 30, 45};
inline constexpr int kPoseStep = 15;
inline constexpr double kMinGain = 0.3;
inline constexpr double kMaxGain = 1.7;

enum class Expression : int { Happy = 0, Sad = 1, Neutral = 2 };
inline constexpr std::array<std::string_view, 3> kExpressionNames{"happy", "sad", "neutral"};

/// gasca1: pose normalization only (targets keep the input's gain).
/// gasca2: pose and illumination (targets are luminance-selected copies).
enum class Mode { Gasca1, Gasca2 };
Mode parse_mode(std::string_view s);
std::string_view mode_name(Mode m);

enum class Split { Train, Validation };

struct PoseSample {
  Tensor image;  // (1, H, W), values in [0, 1]
  int pose = 0;
  double gain = 1.0;
  double luminance = 0.0;  // mean pixel value
  int identity = 0;
  int expression = 0;
  int copy = 0;  // illumination copy index within (identity, expression, pose)
  Split split = Split::Train;
};

/// A pair of sample indices into a pool; `alpha` is the stage target pose.
struct TrainingPair {
  std::size_t input = 0;
  std::size_t target = 0;
  int alpha = 0;
};

bool is_valid_pose(int pose);

/// Renders one face. Deterministic in all arguments; `seed` and `identity`
/// together select the identity's facial geometry.
PoseSample synth_face(int identity, std::uint64_t seed, int expression, int pose, double gain, std::size_t height,
                      std::size_t width);

/// One step of target-pose pairing toward `alpha`:
///   phi - d  if 0 < alpha < phi,   phi + d  if phi < alpha < 0,
///   phi      if |phi| <= |alpha|,  otherwise phi moved d toward alpha.
int pair_target(int phi, int alpha, int d = kPoseStep);
/// pair_target applied `steps` times.
int pair_target_steps(int phi, int alpha, int steps, int d = kPoseStep);

/// Index of the copy whose luminance is closest to the mean luminance of all
/// copies; ties go to the lowest index.
std::size_t select_luminance_target(const std::vector<const PoseSample*>& copies);
std::size_t select_luminance_target(const std::vector<double>& luminances);

struct DatasetConfig {
  std::size_t identities = 100;
  std::size_t classes = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<int> poses{kPoseGrid.begin(), kPoseGrid.end()};
  std::size_t gain_copies = 19;
  Mode mode = Mode::Gasca2;
  std::uint64_t seed = 1;
  double train_fraction = 0.7;
  std::size_t threads = 0;  // 0: GASCA_THREADS or 1
};

/// All rendered samples plus a (identity, expression, pose, copy) index.
class SamplePool {
 public:
  SamplePool() = default;
  explicit SamplePool(std::vector<PoseSample> samples);

  const std::vector<PoseSample>& samples() const { return samples_; }
  const PoseSample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  /// Sample index or SIZE_MAX when absent.
  std::size_t find(int identity, int expression, int pose, int copy) const;
  std::vector<std::size_t> copies(int identity, int expression, int pose) const;

 private:
  std::vector<PoseSample> samples_;
  std::map<std::tuple<int, int, int, int>, std::size_t> index_;
};

/// Render every (identity, class, pose, copy) sample. Identities are split
/// 70/30 (by default) with a seeded shuffle; no identity straddles the split.
SamplePool render_pool(const DatasetConfig& config);

struct PairConfig {
  std::vector<int> poses;  // stage pose set A_k
  int alpha = 0;
  int steps = 1;  // pairing steps toward alpha
  Mode mode = Mode::Gasca2;
};

struct PairSplit {
  std::vector<TrainingPair> train;
  std::vector<TrainingPair> validation;
};

/// Pairs every pool sample whose pose is in `config.poses` with its target.
PairSplit build_pairs(const SamplePool& pool, const PairConfig& config);

/// Stage pose set {0, +-15, ..., +-15 k}.
std::vector<int> stage_poses(int stage);

void validate_pose_list(const std::vector<int>& poses);

struct Dataset {
  SamplePool pool;
  PairSplit pairs;
};
Dataset build_dataset(const DatasetConfig& config, const PairConfig& pairs);

// --- PGM ------------------------------------------------------------------

/// Binary P5, maxval 255, bytes = floor(255 v + 0.5).
std::string encode_pgm(const Tensor& image);
/// Inverse of encode_pgm up to 1/255 quantization; image shape (1, H, W).
Tensor decode_pgm(std::string_view bytes);
void pgm_write(const Tensor& image, const std::filesystem::path& path);
Tensor pgm_read(const std::filesystem::path& path);

// --- manifest -------------------------------------------------------------

inline constexpr std::string_view kManifestHeader = "path,identity,class,pose,gain,Y,split,role";

/// Writes every sample as <dir>/img/<index>.pgm plus <dir>/manifest.csv.
void write_dataset_dir(const SamplePool& pool, Mode mode, const std::filesystem::path& dir);
/// Reads manifest.csv and its images back into a pool.
SamplePool read_dataset_dir(const std::filesystem::path& dir);

}  // namespace gasca
