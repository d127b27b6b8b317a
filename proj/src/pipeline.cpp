#include "gasca/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gasca {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("config key '" + key + "': invalid value '" + value + "' (" + why + ")");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "expected a non-negative integer");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "expected an integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    bad(key, v, "expected a number");
  }
  if (used != v.size() || !std::isfinite(out)) bad(key, v, "expected a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad(key, v, "expected true or false");
}

template <class T, class F>
std::vector<T> to_list(const std::string& key, const std::string& v, F conv) {
  std::vector<T> out;
  for (const std::string& part : split(v, ','))
    if (!part.empty()) out.push_back(conv(key, part));
  if (out.empty()) bad(key, v, "expected a comma-separated list");
  return out;
}

StageSpec to_stage(const std::string& key, const std::string& v) {
  const std::vector<std::string> f = split(v, ':');
  StageSpec s;
  if (f.size() == 4 && f[0] == "convmlp") {
    s.kind = LayerKind::ConvMLP;
    s.kernel = to_size(key, f[1]);
    s.channels = to_size(key, f[2]);
    s.units = to_size(key, f[3]);
  } else if (f.size() == 4 && f[0] == "halfconv") {
    s.kind = LayerKind::HalfConv;
    s.kernel = to_size(key, f[1]);
    s.channels = to_size(key, f[2]);
    s.pad = to_size(key, f[3]);
  } else if (f.size() == 3 && f[0] == "conv") {
    s.kind = LayerKind::Conv2D;
    s.kernel = to_size(key, f[1]);
    s.channels = to_size(key, f[2]);
  } else {
    bad(key, v, "expected convmlp:k:ch:units, halfconv:k:ch:pad or conv:k:ch");
  }
  if (s.kernel == 0 || s.channels == 0) bad(key, v, "kernel and channels must be positive");
  return s;
}

std::string stage_string(const StageSpec& s) {
  std::ostringstream os;
  switch (s.kind) {
    case LayerKind::ConvMLP:
      os << "convmlp:" << s.kernel << ':' << s.channels << ':' << s.units;
      break;
    case LayerKind::HalfConv:
      os << "halfconv:" << s.kernel << ':' << s.channels << ':' << s.pad;
      break;
    default:
      os << "conv:" << s.kernel << ':' << s.channels;
  }
  return os.str();
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "mode") c.mode = parse_mode(v);
  else if (key == "stages") c.stages = to_size(key, v);
  else if (key == "seed") c.seed = to_size(key, v);
  else if (key == "image_size") c.image_size = to_size(key, v);
  else if (key == "identities") c.identities = to_size(key, v);
  else if (key == "classes") c.classes = to_size(key, v);
  else if (key == "gain_copies") c.gain_copies = to_size(key, v);
  else if (key == "poses") c.poses = to_list<int>(key, v, to_int);
  else if (key == "train_fraction") c.train_fraction = to_double(key, v);
  else if (key == "threads") c.threads = to_size(key, v);
  else if (key == "layers") c.layers = to_list<StageSpec>(key, v, to_stage);
  else if (key == "g_lr") c.g_lr = to_list<double>(key, v, to_double);
  else if (key == "d_lr") c.d_lr = to_list<double>(key, v, to_double);
  else if (key == "d_momentum") c.d_momentum = to_double(key, v);
  else if (key == "d_channels") c.d_channels = to_list<std::size_t>(key, v, to_size);
  else if (key == "adversarial_loss") c.adversarial_loss = parse_adversarial_loss(v);
  else if (key == "literal_multi_update") c.literal_multi_update = to_bool(key, v);
  else if (key == "pretrain_epochs") c.pretrain_epochs = to_size(key, v);
  else if (key == "finetune_epochs") c.finetune_epochs = to_size(key, v);
  else if (key == "d_finetune_epochs") c.d_finetune_epochs = to_size(key, v);
  else if (key == "classifier_epochs") c.classifier_epochs = to_size(key, v);
  else if (key == "batch_size") c.batch_size = to_size(key, v);
  else if (key == "finetune_lr") c.finetune_lr = to_double(key, v);
  else if (key == "classifier_lr") c.classifier_lr = to_double(key, v);
  else if (key == "plots") c.plots = to_bool(key, v);
  else if (key == "out") c.out = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig c) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return parse_config(os.str(), std::move(base));
}

std::string config_to_string(const RunConfig& c) {
  std::ostringstream os;
  os << "mode = " << mode_name(c.mode) << '\n'
     << "stages = " << c.stages << '\n'
     << "seed = " << c.seed << '\n'
     << "image_size = " << c.image_size << '\n'
     << "identities = " << c.identities << '\n'
     << "classes = " << c.classes << '\n'
     << "gain_copies = " << c.gain_copies << '\n'
     << "poses = " << join(c.poses, [](int p) { return std::to_string(p); }) << '\n'
     << "train_fraction = " << num(c.train_fraction) << '\n'
     << "threads = " << c.threads << '\n'
     << "layers = " << join(c.layers, stage_string) << '\n'
     << "g_lr = " << join(c.g_lr, num) << '\n'
     << "d_lr = " << join(c.d_lr, num) << '\n'
     << "d_momentum = " << num(c.d_momentum) << '\n'
     << "d_channels = " << join(c.d_channels, [](std::size_t v) { return std::to_string(v); }) << '\n'
     << "adversarial_loss = " << (c.adversarial_loss == AdversarialLoss::Abs ? "abs" : "bce") << '\n'
     << "literal_multi_update = " << (c.literal_multi_update ? "true" : "false") << '\n'
     << "pretrain_epochs = " << c.pretrain_epochs << '\n'
     << "finetune_epochs = " << c.finetune_epochs << '\n'
     << "d_finetune_epochs = " << c.d_finetune_epochs << '\n'
     << "classifier_epochs = " << c.classifier_epochs << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "finetune_lr = " << num(c.finetune_lr) << '\n'
     << "classifier_lr = " << num(c.classifier_lr) << '\n'
     << "plots = " << (c.plots ? "true" : "false") << '\n'
     << "out = " << c.out.string() << '\n';
  return os.str();
}

void RunConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (stages == 0) fail("stages", "must be >= 1");
  if (stages > 4) fail("stages", "at most 4 stages are supported");
  if (layers.size() < stages) fail("layers", "needs one entry per stage");
  if (g_lr.size() < stages) fail("g_lr", "needs one learning rate per stage");
  if (d_lr.size() < stages) fail("d_lr", "needs one learning rate per stage");
  for (double v : g_lr)
    if (!(v >= 0.0)) fail("g_lr", "learning rates must be >= 0");
  for (double v : d_lr)
    if (!(v >= 0.0)) fail("d_lr", "learning rates must be >= 0");
  if (batch_size == 0) fail("batch_size", "must be >= 1");
  if (image_size < 8) fail("image_size", "must be >= 8");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction", "must lie in (0, 1)");
  if (!(d_momentum >= 0.0 && d_momentum < 1.0)) fail("d_momentum", "must lie in [0, 1)");
  if (!(finetune_lr >= 0.0)) fail("finetune_lr", "must be >= 0");
  if (!(classifier_lr >= 0.0)) fail("classifier_lr", "must be >= 0");
  validate_pose_list(poses);
  for (std::size_t k = 1; k <= stages; ++k)
    for (int p : stage_poses(static_cast<int>(k)))
      if (std::find(poses.begin(), poses.end(), p) == poses.end())
        fail("poses", "stage " + std::to_string(k) + " needs pose " + std::to_string(p));
}

DatasetConfig dataset_config(const RunConfig& c) {
  DatasetConfig d;
  d.identities = c.identities;
  d.classes = c.classes;
  d.height = c.image_size;
  d.width = c.image_size;
  d.poses = c.poses;
  d.gain_copies = c.gain_copies;
  d.mode = c.mode;
  d.seed = c.seed;
  d.train_fraction = c.train_fraction;
  d.threads = c.threads;
  return d;
}

GanglwConfig ganglw_config(const RunConfig& c) {
  GanglwConfig g;
  g.stages.assign(c.layers.begin(), c.layers.begin() + static_cast<std::ptrdiff_t>(std::min(c.stages, c.layers.size())));
  g.g_lr = c.g_lr;
  g.d_lr = c.d_lr;
  g.d_momentum = c.d_momentum;
  g.d_channels = c.d_channels;
  g.pretrain_epochs = c.pretrain_epochs;
  g.finetune_epochs = c.finetune_epochs;
  g.d_finetune_epochs = c.d_finetune_epochs;
  g.batch_size = c.batch_size;
  g.finetune_lr = c.finetune_lr;
  g.seed = c.seed;
  g.step.loss = c.adversarial_loss;
  g.step.literal_multi_update = c.literal_multi_update;
  return g;
}

namespace {

Tensor stack_images(const SamplePool& pool, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return {};
  const Shape& s = pool[idx.front()].image.shape();
  std::vector<double> data;
  data.reserve(idx.size() * shape_size(s));
  for (std::size_t i : idx) {
    const Tensor& im = pool[i].image;
    if (im.shape() != s) throw DimensionError("pool images differ in shape");
    data.insert(data.end(), im.storage().begin(), im.storage().end());
  }
  Shape out{idx.size()};
  out.insert(out.end(), s.begin(), s.end());
  return Tensor(std::move(out), std::move(data));
}

}  // namespace

PairedData materialize(const SamplePool& pool, const std::vector<TrainingPair>& pairs) {
  std::vector<std::size_t> in, tg;
  for (const TrainingPair& p : pairs) {
    in.push_back(p.input);
    tg.push_back(p.target);
  }
  return {stack_images(pool, in), stack_images(pool, tg)};
}

StageData stage_data(const SamplePool& pool, std::size_t stage, Mode mode) {
  const int k = static_cast<int>(stage);
  const PairSplit pairs = build_pairs(pool, {stage_poses(k), 0, k, mode});
  return {materialize(pool, pairs.train), materialize(pool, pairs.validation)};
}

LabeledData labeled_split(const SamplePool& pool, Split split) {
  std::vector<std::size_t> idx;
  LabeledData out;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].split == split) {
      idx.push_back(i);
      out.labels.push_back(static_cast<std::size_t>(pool[i].expression));
    }
  out.images = stack_images(pool, idx);
  return out;
}

std::vector<PoseError> pose_errors(GeneratorStack& g, const SamplePool& pool, Mode mode,
                                   const std::vector<int>& poses) {
  std::vector<PoseError> out;
  for (int pose : poses) {
    const PairSplit pairs = build_pairs(pool, {{pose}, 0, 8, mode});
    PoseError e;
    e.pose = pose;
    e.samples = pairs.validation.size();
    if (e.samples > 0) {
      const PairedData d = materialize(pool, pairs.validation);
      e.baseline_mae = mae_loss(d.targets, d.inputs);
      e.model_mae = evaluate_mae(g, d);
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace gasca
