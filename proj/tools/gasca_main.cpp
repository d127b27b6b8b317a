// gasca: synthetic data, layer-wise adversarial pretraining, reconstruction
// and expression classification from the command line.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "gasca/checkpoint.hpp"
#include "gasca/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gasca;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::size_t> stages;
  bool literal = false;
  bool plots = false;
};

RunConfig resolve(const Common& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.mode) c.mode = parse_mode(*o.mode);
  if (o.stages) c.stages = *o.stages;
  if (o.literal) c.literal_multi_update = true;
  if (o.plots) c.plots = true;
  c.validate();
  return c;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
  if (!f) throw IoError("write failed: " + p.string());
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Loss curves as a grayscale line plot: one curve per series, each scaled to
// its own [min, max].
void plot_curves(const std::vector<std::vector<double>>& series, const fs::path& path) {
  const std::size_t h = 96, w = 192;
  Tensor img({1, h, w}, 1.0);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& v = series[s];
    if (v.empty()) continue;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double span = *hi - *lo > 0 ? *hi - *lo : 1.0;
    const double shade = 0.6 * static_cast<double>(s) / static_cast<double>(std::max<std::size_t>(1, series.size()));
    for (std::size_t x = 0; x < w; ++x) {
      const double t = v.size() == 1 ? 0.0 : static_cast<double>(x) * static_cast<double>(v.size() - 1) / (w - 1);
      const std::size_t i = std::min(static_cast<std::size_t>(t), v.size() - 1);
      const std::size_t j = std::min(i + 1, v.size() - 1);
      const double y = v[i] + (v[j] - v[i]) * (t - static_cast<double>(i));
      const auto row = static_cast<std::size_t>((1.0 - (y - *lo) / span) * (h - 1) + 0.5);
      img[row * w + x] = shade;
    }
  }
  pgm_write(img, path);
}

SamplePool load_pool(const std::string& data, const RunConfig& c) {
  if (data.empty()) return render_pool(dataset_config(c));
  SamplePool pool = read_dataset_dir(data);
  if (pool.size() == 0) throw ConfigError("dataset " + data + " is empty");
  const Shape& s = pool[0].image.shape();
  if (s[1] != c.image_size || s[2] != c.image_size)
    throw ConfigError("config field 'image_size' is " + std::to_string(c.image_size) + " but dataset images are " +
                      std::to_string(s[1]) + "x" + std::to_string(s[2]));
  std::size_t classes = 0;
  for (const PoseSample& p : pool.samples()) classes = std::max(classes, static_cast<std::size_t>(p.expression) + 1);
  if (classes != c.classes)
    throw ConfigError("config field 'classes' is " + std::to_string(c.classes) + " but the dataset has " +
                      std::to_string(classes));
  return pool;
}

int cmd_synth(const Common& o) {
  const RunConfig c = resolve(o);
  const SamplePool pool = render_pool(dataset_config(c));
  write_dataset_dir(pool, c.mode, c.out);
  write_text(c.out / "run.cfg", config_to_string(c));
  std::cout << "wrote " << pool.size() << " samples to " << c.out.string() << "\n";
  return 0;
}

int cmd_pretrain(const Common& o, const std::string& data, const std::string& resume) {
  const RunConfig c = resolve(o);
  make_dir(c.out);
  write_text(c.out / "run.cfg", config_to_string(c));
  const SamplePool pool = load_pool(data, c);
  GanglwState start;
  if (!resume.empty()) {
    start = import_state(load_checkpoint(resume));
    if (start.completed > 0 && start.generator.input_shape() != Shape{1, c.image_size, c.image_size})
      throw ConfigError("config field 'image_size' does not match the resumed checkpoint");
    std::cout << "resuming after stage " << start.completed << "\n";
  }
  std::ofstream summary(c.out / "summary.csv", resume.empty() ? std::ios::trunc : std::ios::app);
  if (resume.empty()) summary << "stage,val_mae_before_finetune,val_mae_after_finetune\n";
  const GanglwState final_state = ganglw_train(
      [&](std::size_t k) { return stage_data(pool, k, c.mode); }, ganglw_config(c), std::move(start),
      [&](const StageReport& r, const GanglwState& s) {
        const std::string k = std::to_string(r.stage);
        save_checkpoint(export_state(s), c.out / ("stage_" + k + ".gasc"));
        write_metrics_csv(r.pretrain, (c.out / ("metrics_stage_" + k + ".csv")).string());
        std::ostringstream ft;
        ft << "epoch,train_mae,val_mae\n" << std::setprecision(17);
        for (const FineTuneEpoch& e : r.finetune) ft << e.epoch << ',' << e.train_loss << ',' << e.val_mae << '\n';
        write_text(c.out / ("finetune_stage_" + k + ".csv"), ft.str());
        std::ostringstream dft;
        dft << "epoch,loss\n" << std::setprecision(17);
        for (const FineTuneEpoch& e : r.d_finetune) dft << e.epoch << ',' << e.train_loss << '\n';
        write_text(c.out / ("d_finetune_stage_" + k + ".csv"), dft.str());
        summary << r.stage << ',' << fmt(r.val_mae_before) << ',' << fmt(r.val_mae_after) << '\n';
        summary.flush();
        if (c.plots) {
          std::vector<double> lg, val;
          for (const EpochMetrics& m : r.pretrain) {
            lg.push_back(m.generator);
            val.push_back(m.val_mae);
          }
          plot_curves({lg, val}, c.out / ("loss_stage_" + k + ".pgm"));
        }
        std::cout << "stage " << r.stage << ": val MAE " << fmt(r.val_mae_before) << " -> " << fmt(r.val_mae_after)
                  << "\n";
      });
  save_checkpoint(export_state(final_state), c.out / "final.gasc");
  return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& input, const std::string& output,
                    const std::string& target) {
  GanglwState s = import_state(load_checkpoint(ckpt));
  if (s.completed == 0) throw ConfigError("checkpoint holds no trained stage");
  const Tensor x = pgm_read(input);
  if (x.shape() != s.generator.input_shape())
    throw ConfigError("input image " + shape_string(x.shape()) + " does not match the model input " +
                      shape_string(s.generator.input_shape()));
  Shape batched{1};
  batched.insert(batched.end(), x.shape().begin(), x.shape().end());
  const Tensor y = predict(s.generator, x.reshaped(batched)).reshaped(x.shape());
  Tensor clamped = y;
  for (double& v : clamped.storage()) v = std::clamp(v, 0.0, 1.0);
  pgm_write(clamped, output);
  if (!target.empty()) {
    const Tensor t = pgm_read(target);
    std::cout << "MAE " << fmt(mae_loss(t, y)) << "\n";
  }
  return 0;
}

std::vector<std::string> class_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i < kExpressionNames.size() ? std::string(kExpressionNames[i]) : "class" + std::to_string(i));
  return out;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  throw ConfigError("split must be train or validation, got '" + s + "'");
}

void check_classes(const EmotionClassifier& clf, const LabeledData& d) {
  for (std::size_t l : d.labels)
    if (l >= clf.classes())
      throw ConfigError("classifier head has " + std::to_string(clf.classes()) +
                        " classes but the dataset has label " + std::to_string(l));
}

int cmd_classify(const Common& o, const std::string& ckpt, const std::string& data, const std::string& split) {
  const RunConfig c = resolve(o);
  make_dir(c.out);
  const SamplePool pool = load_pool(data, c);
  const std::vector<NamedTensor> tensors = load_checkpoint(ckpt);
  std::optional<EmotionClassifier> clf;
  if (checkpoint_kind(tensors) == CheckpointKind::Pretrain) {
    const GanglwState s = import_state(tensors);
    if (s.completed == 0) throw ConfigError("checkpoint holds no trained stage");
    Rng rng(stage_seed(c.seed, 0, 0xc1a55));
    clf.emplace(from_encoder(s.generator, c.classes, rng));
    const LabeledData train = labeled_split(pool, Split::Train);
    const LabeledData held = labeled_split(pool, Split::Validation);
    ClassifierConfig cc;
    cc.epochs = c.classifier_epochs;
    cc.batch_size = c.batch_size;
    cc.lr = c.classifier_lr;
    cc.seed = c.seed;
    const auto history = fine_tune_classifier(*clf, train, cc, &held);
    std::ostringstream os;
    os << "epoch,train_loss,heldout_accuracy\n" << std::setprecision(17);
    for (const ClassifierEpoch& e : history) os << e.epoch << ',' << e.train_loss << ',' << e.heldout_accuracy << '\n';
    write_text(c.out / "classifier_metrics.csv", os.str());
    save_checkpoint(export_classifier(*clf), c.out / "classifier.gasc");
  } else {
    clf.emplace(import_classifier(tensors));
  }
  const LabeledData d = labeled_split(pool, parse_split(split));
  if (d.size() == 0) throw ConfigError("split '" + split + "' is empty");
  check_classes(*clf, d);
  const Tensor probs = clf->predict_proba(d.images);
  const std::size_t k = clf->classes();
  std::ostringstream os;
  os << "index,truth,predicted";
  for (std::size_t j = 0; j < k; ++j) os << ",p" << j;
  os << '\n' << std::setprecision(17);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto row = probs.data().subspan(i * k, k);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred == d.labels[i];
    os << i << ',' << d.labels[i] << ',' << pred;
    for (double p : row) os << ',' << p;
    os << '\n';
  }
  write_text(c.out / "predictions.csv", os.str());
  std::cout << "accuracy " << fmt(static_cast<double>(correct) / static_cast<double>(d.size())) << "\n";
  return 0;
}

int cmd_eval(const Common& o, const std::string& ckpt, const std::string& data, const std::string& split) {
  const RunConfig c = resolve(o);
  make_dir(c.out);
  const SamplePool pool = load_pool(data, c);
  EmotionClassifier clf = import_classifier(load_checkpoint(ckpt));
  const LabeledData d = labeled_split(pool, parse_split(split));
  if (d.size() == 0) throw ConfigError("split '" + split + "' is empty");
  check_classes(clf, d);
  const ConfusionMatrix cm = evaluate(clf, d);
  write_text(c.out / "confusion.csv", cm.to_csv(class_names(cm.classes())));
  std::cout << "accuracy " << fmt(cm.accuracy()) << "\n";
  return 0;
}

void add_common(CLI::App* app, Common& o) {
  app->add_option("--config", o.config, "key=value configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "override the configured seed");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--mode", o.mode, "gasca1 (pose) or gasca2 (pose and illumination)");
  app->add_option("--stages", o.stages, "number of stacking stages");
  app->add_flag("--literal-multi-update", o.literal, "use the multi-update minibatch schedule");
  app->add_flag("--plots", o.plots, "also write loss curves as PGM plots");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GASCA pose/illumination normalization and expression classification"};
  app.require_subcommand(1);
  Common o;
  std::string data, resume, ckpt, input, output, target, split = "validation";

  CLI::App* synth = app.add_subcommand("synth", "render a synthetic dataset directory");
  add_common(synth, o);
  CLI::App* pretrain = app.add_subcommand("pretrain", "layer-wise adversarial pretraining");
  add_common(pretrain, o);
  pretrain->add_option("--data", data, "dataset directory (rendered from the config when omitted)");
  pretrain->add_option("--resume", resume, "stage checkpoint to continue from")->check(CLI::ExistingFile);
  CLI::App* recon = app.add_subcommand("reconstruct", "run the generator on one PGM image");
  recon->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  recon->add_option("--input", input)->required()->check(CLI::ExistingFile);
  recon->add_option("--output", output)->required();
  recon->add_option("--target", target, "print the MAE against this PGM")->check(CLI::ExistingFile);
  CLI::App* classify = app.add_subcommand("classify", "fine-tune a classifier and write predictions");
  add_common(classify, o);
  classify->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  classify->add_option("--data", data, "dataset directory");
  classify->add_option("--split", split, "train or validation");
  CLI::App* eval = app.add_subcommand("eval", "confusion matrix of a classifier checkpoint");
  add_common(eval, o);
  eval->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "dataset directory");
  eval->add_option("--split", split, "train or validation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*pretrain) return cmd_pretrain(o, data, resume);
    if (*recon) return cmd_reconstruct(ckpt, input, output, target);
    if (*classify) return cmd_classify(o, ckpt, data, split);
    if (*eval) return cmd_eval(o, ckpt, data, split);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
