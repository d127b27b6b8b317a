#include "gasca/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace gasca {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::int64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::int64_t k : keys) h = splitmix64(h ^ static_cast<std::uint64_t>(k));
  return h;
}

struct FaceParams {
  double rx, ry;
  double skin, background, hair, hairline;
  double eye_lon, eye_y, eye_half_lon, eye_half_h, eye_ink;
  double brow_gap;
  double nose_y;
  double mouth_y, mouth_half_lon, mouth_half_thick, mouth_ink;
};

FaceParams face_params(int identity, std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed, {identity, 0x1d}));
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  FaceParams f{};
  f.rx = u(0.60, 0.72);
  f.ry = u(0.80, 0.92);
  f.skin = u(0.55, 0.75);
  f.background = u(0.05, 0.18);
  f.hair = u(0.12, 0.32);
  f.hairline = u(-0.62, -0.45);
  f.eye_lon = u(28.0, 34.0) * kDeg;
  f.eye_y = u(-0.24, -0.12);
  f.eye_half_lon = u(9.0, 12.0) * kDeg;
  f.eye_half_h = u(0.06, 0.09);
  f.eye_ink = u(0.04, 0.14);
  f.brow_gap = u(0.13, 0.17);
  f.nose_y = u(0.08, 0.18);
  f.mouth_y = u(0.38, 0.48);
  f.mouth_half_lon = u(20.0, 26.0) * kDeg;
  f.mouth_half_thick = u(0.045, 0.06);
  f.mouth_ink = u(0.15, 0.3);
  return f;
}

// Mouth curvature: positive raises the corners (smile).
constexpr std::array<double, 3> kCurvature{0.16, -0.16, 0.0};

// A feature centred at frontal longitude `lon` is hidden once rotated past this.
constexpr double kVisibleLongitude = 80.0 * kDeg;

double shade(const FaceParams& f, int expression, double phi, double x, double y) {
  const double ey = y / f.ry;
  const double ex = x / f.rx;
  if (ex * ex + ey * ey > 1.0) return f.background;
  const double half_w = f.rx * std::sqrt(std::max(0.0, 1.0 - ey * ey));
  const double s = std::clamp(x / half_w, -1.0, 1.0);
  const double lon = std::asin(s) - phi;  // frontal-frame longitude of this surface point
  if (std::abs(lon) > 90.0 * kDeg || y < f.hairline) return f.hair;

  double v = f.skin * (0.7 + 0.3 * std::sqrt(std::max(0.0, 1.0 - s * s)));
  for (int side : {-1, 1}) {
    const double c = side * f.eye_lon;
    if (std::abs(c + phi) > kVisibleLongitude) continue;
    const double dl = (lon - c) / f.eye_half_lon, dy = (y - f.eye_y) / f.eye_half_h;
    if (dl * dl + dy * dy < 1.0) v = f.eye_ink;
    const double brow_y = f.eye_y - f.brow_gap;
    if (std::abs(lon - c) < f.eye_half_lon * 1.2 && std::abs(y - brow_y) < 0.03) v = f.hair;
  }
  if (std::abs(phi) < kVisibleLongitude) {
    const double nl = lon / (8.0 * kDeg), ny = (y - f.nose_y) / 0.05;
    if (nl * nl + ny * ny < 1.0) v = f.skin * 0.55;
    else if (std::abs(lon) < 2.5 * kDeg && y > f.eye_y && y < f.nose_y) v -= 0.08;
  }
  const double t = lon / f.mouth_half_lon;
  if (std::abs(t) < 1.0) {
    const double centre = f.mouth_y - kCurvature[static_cast<std::size_t>(expression)] * (t * t - 0.5);
    if (std::abs(y - centre) < f.mouth_half_thick) v = f.mouth_ink;
  }
  return v;
}

// Renders columns [0, cols) of a face at yaw phi >= 0.
void render_columns(const FaceParams& f, int expression, double phi, std::size_t h, std::size_t w,
                    std::size_t cols, std::vector<double>& out) {
  const double hx = static_cast<double>(w) / 2.0, hy = static_cast<double>(h) / 2.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (double oy : {-0.25, 0.25})
        for (double ox : {-0.25, 0.25}) {
          const double x = (static_cast<double>(j) + 0.5 + ox - hx) / hx;
          const double y = (static_cast<double>(i) + 0.5 + oy - hy) / hy;
          acc += shade(f, expression, phi, x, y);
        }
      out[i * w + j] = acc / 4.0;
    }
}

void mirror_rows(std::vector<double>& img, std::size_t h, std::size_t w) {
  for (std::size_t i = 0; i < h; ++i) std::reverse(img.begin() + i * w, img.begin() + (i + 1) * w);
}

double mean_of(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  return acc / static_cast<double>(t.size());
}

std::size_t thread_budget(std::size_t requested) {
  if (requested) return requested;
  if (const char* env = std::getenv("GASCA_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return 1;
}

}  // namespace

Mode parse_mode(std::string_view s) {
  if (s == "gasca1") return Mode::Gasca1;
  if (s == "gasca2") return Mode::Gasca2;
  throw ConfigError("mode must be gasca1 or gasca2, got '" + std::string(s) + "'");
}

std::string_view mode_name(Mode m) { return m == Mode::Gasca1 ? "gasca1" : "gasca2"; }

bool is_valid_pose(int pose) { return std::find(kPoseGrid.begin(), kPoseGrid.end(), pose) != kPoseGrid.end(); }

PoseSample synth_face(int identity, std::uint64_t seed, int expression, int pose, double gain, std::size_t height,
                      std::size_t width) {
  if (!is_valid_pose(pose)) throw ContractError("pose " + std::to_string(pose) + " is not on the 15 degree grid");
  if (!(gain >= kMinGain && gain <= kMaxGain)) throw ContractError("gain must lie in [0.3, 1.7]");
  if (expression < 0 || expression >= static_cast<int>(kCurvature.size()))
    throw ContractError("expression class out of range");
  if (height < 16 || width < 16 || height % 2 || width % 2)
    throw ContractError("image size must be even and at least 16x16");

  const FaceParams f = face_params(identity, seed);
  std::vector<double> px(height * width);
  const double phi = std::abs(pose) * kDeg;
  if (pose == 0) {
    // Left half rendered, right half its exact mirror.
    render_columns(f, expression, 0.0, height, width, width / 2, px);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width / 2; ++j) px[i * width + width - 1 - j] = px[i * width + j];
  } else {
    render_columns(f, expression, phi, height, width, width, px);
    if (pose < 0) mirror_rows(px, height, width);
  }
  for (double& v : px) v = std::clamp(v * gain, 0.0, 1.0);

  PoseSample s;
  s.image = Tensor({1, height, width}, std::move(px));
  s.pose = pose;
  s.gain = gain;
  s.luminance = mean_of(s.image);
  s.identity = identity;
  s.expression = expression;
  return s;
}

int pair_target(int phi, int alpha, int d) {
  if (!is_valid_pose(phi)) throw ContractError("input pose " + std::to_string(phi) + " is off the grid");
  if (std::find(kTargetPoseGrid.begin(), kTargetPoseGrid.end(), alpha) == kTargetPoseGrid.end())
    throw ContractError("target pose " + std::to_string(alpha) + " is off the grid");
  if (0 < alpha && alpha < phi) return phi - d;
  if (phi < alpha && alpha < 0) return phi + d;
  if (std::abs(phi) <= std::abs(alpha)) return phi;
  // Remaining cases (alpha = 0, or alpha on the other side of zero): step toward alpha.
  return phi > alpha ? phi - d : phi + d;
}

int pair_target_steps(int phi, int alpha, int steps, int d) {
  for (int k = 0; k < steps; ++k) phi = pair_target(phi, alpha, d);
  return phi;
}

std::size_t select_luminance_target(const std::vector<double>& y) {
  if (y.empty()) throw ContractError("select_luminance_target: no copies");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  std::size_t best = 0;
  for (std::size_t i = 1; i < y.size(); ++i)
    if (std::abs(y[i] - mean) < std::abs(y[best] - mean)) best = i;
  return best;
}

std::size_t select_luminance_target(const std::vector<const PoseSample*>& copies) {
  std::vector<double> y;
  y.reserve(copies.size());
  for (const PoseSample* s : copies) y.push_back(s->luminance);
  return select_luminance_target(y);
}

SamplePool::SamplePool(std::vector<PoseSample> samples) : samples_(std::move(samples)) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const PoseSample& s = samples_[i];
    if (!index_.emplace(std::make_tuple(s.identity, s.expression, s.pose, s.copy), i).second)
      throw ConfigError("duplicate sample (identity " + std::to_string(s.identity) + ", class " +
                        std::to_string(s.expression) + ", pose " + std::to_string(s.pose) + ", copy " +
                        std::to_string(s.copy) + ")");
  }
}

std::size_t SamplePool::find(int identity, int expression, int pose, int copy) const {
  auto it = index_.find(std::make_tuple(identity, expression, pose, copy));
  return it == index_.end() ? SIZE_MAX : it->second;
}

std::vector<std::size_t> SamplePool::copies(int identity, int expression, int pose) const {
  std::vector<std::size_t> out;
  for (auto it = index_.lower_bound(std::make_tuple(identity, expression, pose, 0));
       it != index_.end() && std::get<0>(it->first) == identity && std::get<1>(it->first) == expression &&
       std::get<2>(it->first) == pose;
       ++it)
    out.push_back(it->second);
  return out;
}

void validate_pose_list(const std::vector<int>& poses) {
  if (poses.empty()) throw ConfigError("pose list is empty");
  for (int p : poses)
    if (!is_valid_pose(p)) throw ConfigError("pose " + std::to_string(p) + " is not in {0, +-15, ..., +-60}");
  std::vector<int> sorted = poses;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("pose list has duplicates");
}

std::vector<int> stage_poses(int stage) {
  if (stage < 1 || stage > 4) throw ConfigError("stage must be in 1..4");
  std::vector<int> out;
  for (int p = -kPoseStep * stage; p <= kPoseStep * stage; p += kPoseStep) out.push_back(p);
  return out;
}

SamplePool render_pool(const DatasetConfig& c) {
  validate_pose_list(c.poses);
  if (c.identities < 10) throw ConfigError("at least 10 identities are required");
  if (c.classes < 2 || c.classes > kExpressionNames.size()) throw ConfigError("classes must be 2 or 3");
  if (c.gain_copies == 0) throw ConfigError("gain_copies must be >= 1");

  // Identity split: seeded shuffle, first round(fraction * n) are training.
  std::vector<int> ids(c.identities);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  std::mt19937_64 split_rng(mix(c.seed, {0x5b11}));
  std::shuffle(ids.begin(), ids.end(), split_rng);
  const auto n_train = static_cast<std::size_t>(std::llround(c.train_fraction * static_cast<double>(ids.size())));
  std::vector<Split> split(c.identities, Split::Validation);
  for (std::size_t i = 0; i < n_train; ++i) split[static_cast<std::size_t>(ids[i])] = Split::Train;

  struct Job {
    int identity, expression, pose, copy;
    double gain;
  };
  std::vector<Job> jobs;
  const double step = c.gain_copies > 1 ? (kMaxGain - kMinGain) / static_cast<double>(c.gain_copies - 1) : 0.0;
  for (std::size_t id = 0; id < c.identities; ++id)
    for (std::size_t e = 0; e < c.classes; ++e)
      for (std::size_t k = 0; k < c.gain_copies; ++k) {
        // Gain jitter depends on (identity, class, copy) only, so every pose of a
        // copy shares one gain.
        double gain = 1.0;
        if (c.gain_copies > 1) {
          std::mt19937_64 g(mix(c.seed, {static_cast<std::int64_t>(id), static_cast<std::int64_t>(e),
                                         static_cast<std::int64_t>(k), 0x6a1}));
          const double jitter = std::uniform_real_distribution<double>(-0.4, 0.4)(g) * step;
          gain = std::clamp(kMinGain + step * static_cast<double>(k) + jitter, kMinGain, kMaxGain);
        }
        for (int pose : c.poses)
          jobs.push_back({static_cast<int>(id), static_cast<int>(e), pose, static_cast<int>(k), gain});
      }

  std::vector<PoseSample> samples(jobs.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < jobs.size(); i += stride) {
      const Job& j = jobs[i];
      samples[i] = synth_face(j.identity, c.seed, j.expression, j.pose, j.gain, c.height, c.width);
      samples[i].copy = j.copy;
      samples[i].split = split[static_cast<std::size_t>(j.identity)];
    }
  };
  const std::size_t threads = std::min<std::size_t>(thread_budget(c.threads), std::max<std::size_t>(jobs.size(), 1));
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return SamplePool(std::move(samples));
}

PairSplit build_pairs(const SamplePool& pool, const PairConfig& config) {
  validate_pose_list(config.poses);
  PairSplit out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const PoseSample& s = pool[i];
    if (std::find(config.poses.begin(), config.poses.end(), s.pose) == config.poses.end()) continue;
    const int target_pose = pair_target_steps(s.pose, config.alpha, config.steps);
    std::size_t target = SIZE_MAX;
    if (config.mode == Mode::Gasca2) {
      const auto group = pool.copies(s.identity, s.expression, target_pose);
      if (!group.empty()) {
        std::vector<const PoseSample*> copies;
        for (std::size_t g : group) copies.push_back(&pool[g]);
        target = group[select_luminance_target(copies)];
      }
    } else {
      target = pool.find(s.identity, s.expression, target_pose, s.copy);
    }
    if (target == SIZE_MAX)
      throw ConfigError("no target sample at pose " + std::to_string(target_pose) + " for identity " +
                        std::to_string(s.identity));
    (s.split == Split::Train ? out.train : out.validation).push_back({i, target, config.alpha});
  }
  return out;
}

Dataset build_dataset(const DatasetConfig& config, const PairConfig& pairs) {
  Dataset d;
  d.pool = render_pool(config);
  d.pairs = build_pairs(d.pool, pairs);
  return d;
}

// --- PGM ------------------------------------------------------------------

std::string encode_pgm(const Tensor& image) {
  const Shape& s = image.shape();
  std::size_t h = 0, w = 0;
  if (s.size() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else {
    throw DimensionError("PGM images must be (1, H, W) or (H, W), got " + shape_string(s));
  }
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = image[i];
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("PGM pixel values must lie in [0, 1]");
    out[header + i] = static_cast<char>(static_cast<unsigned char>(std::floor(v * 255.0 + 0.5)));
  }
  return out;
}

namespace {

class PgmCursor {
 public:
  explicit PgmCursor(std::string_view b) : bytes_(b) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("PGM parse error at byte " + std::to_string(pos_) + ": " + what);
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) fail("header value too large");
      ++pos_;
    }
    if (pos_ == start) fail("expected a decimal number");
    return v;
  }

  std::size_t pos_ = 0;
  std::string_view bytes_;
};

}  // namespace

Tensor decode_pgm(std::string_view bytes) {
  PgmCursor cur(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') cur.fail("missing P5 magic");
  cur.pos_ = 2;
  const std::size_t w = cur.number();
  const std::size_t h = cur.number();
  const std::size_t maxval = cur.number();
  if (w == 0 || h == 0) cur.fail("zero image dimension");
  if (maxval != 255) cur.fail("maxval must be 255, got " + std::to_string(maxval));
  if (cur.pos_ >= bytes.size()) cur.fail("missing whitespace after maxval");
  const char sep = bytes[cur.pos_];
  if (sep != ' ' && sep != '\n' && sep != '\t' && sep != '\r') cur.fail("expected whitespace after maxval");
  ++cur.pos_;
  const std::size_t expected = w * h;
  const std::size_t actual = bytes.size() - cur.pos_;
  if (actual != expected)
    cur.fail("payload has " + std::to_string(actual) + " bytes, expected " + std::to_string(expected));
  Tensor out({1, h, w});
  for (std::size_t i = 0; i < expected; ++i)
    out[i] = static_cast<double>(static_cast<unsigned char>(bytes[cur.pos_ + i])) / 255.0;
  return out;
}

void pgm_write(const Tensor& image, const std::filesystem::path& path) {
  const std::string bytes = encode_pgm(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Tensor pgm_read(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

void write_dataset_dir(const SamplePool& pool, Mode mode, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "img", ec);
  if (ec) throw IoError("cannot create " + (dir / "img").string() + ": " + ec.message());

  // In gasca2 mode, mark the luminance-selected copy of each group.
  std::vector<bool> is_target(pool.size(), false);
  if (mode == Mode::Gasca2) {
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const PoseSample& s = pool[i];
      if (s.copy != 0) continue;
      const auto group = pool.copies(s.identity, s.expression, s.pose);
      std::vector<const PoseSample*> copies;
      for (std::size_t g : group) copies.push_back(&pool[g]);
      is_target[group[select_luminance_target(copies)]] = true;
    }
  }

  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const PoseSample& s = pool[i];
    const std::string rel = "img/" + std::to_string(i) + ".pgm";
    pgm_write(s.image, dir / rel);
    manifest << rel << ',' << s.identity << ',' << s.expression << ',' << s.pose << ',' << fmt17(s.gain) << ','
             << fmt17(s.luminance) << ',' << (s.split == Split::Train ? "train" : "validation") << ','
             << (is_target[i] ? "target" : "input") << '\n';
  }
  std::ofstream f(dir / "manifest.csv", std::ios::binary);
  if (!f) throw IoError("cannot write " + (dir / "manifest.csv").string());
  f << manifest.str();
  if (!f) throw IoError("failed writing manifest");
}

SamplePool read_dataset_dir(const std::filesystem::path& dir) {
  std::istringstream in(read_file(dir / "manifest.csv"));
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ParseError("manifest header must be '" + std::string(kManifestHeader) + "'");
  std::vector<PoseSample> samples;
  std::map<std::tuple<int, int, int>, int> copy_counter;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw ParseError("manifest row " + std::to_string(row) + " must have 8 fields");
    PoseSample s;
    try {
      s.image = pgm_read(dir / f[0]);
      s.identity = std::stoi(f[1]);
      s.expression = std::stoi(f[2]);
      s.pose = std::stoi(f[3]);
      s.gain = std::stod(f[4]);
    } catch (const std::invalid_argument&) {
      throw ParseError("manifest row " + std::to_string(row) + " has a malformed number");
    }
    if (!is_valid_pose(s.pose)) throw ConfigError("manifest row " + std::to_string(row) + " has an invalid pose");
    if (f[6] != "train" && f[6] != "validation")
      throw ParseError("manifest row " + std::to_string(row) + " has an invalid split");
    s.split = f[6] == "train" ? Split::Train : Split::Validation;
    s.luminance = mean_of(s.image);
    s.copy = copy_counter[{s.identity, s.expression, s.pose}]++;
    samples.push_back(std::move(s));
  }
  return SamplePool(std::move(samples));
}

}  // namespace gasca
