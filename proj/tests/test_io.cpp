#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gasca/checkpoint.hpp"
#include "gasca/pipeline.hpp"
#include "oracles.hpp"

using namespace gasca;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gasca_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<NamedTensor> sample_tensors() {
  std::mt19937_64 g(1);
  Tensor special({4}, {0.0, -0.0, 1e-310, -1.7976931348623157e308});
  return {{"a", oracle::random_tensor({3, 2}, g)}, {"b.c", oracle::random_tensor({1, 2, 3, 4}, g)}, {"s", special}};
}

GanglwState toy_state() {
  Rng rng(3);
  GanglwState s;
  s.generator.push(ShallowAE(std::make_unique<ConvMLP>(Shape{1, 16, 16}, 2, 5, 36, &rng), &rng));
  s.generator.push(ShallowAE(std::make_unique<HalfConv>(Shape{2, 6, 6}, 2, 3, 3, 2, &rng), &rng));
  s.discriminator.push(Discriminator({1, 16, 16}, {4, 8}, &rng), 0, rng);
  s.discriminator.push(Discriminator({2, 6, 6}, {4}, &rng), 1, rng);
  s.completed = 2;
  return s;
}

}  // namespace

// --- checkpoint -------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto t = sample_tensors();
  const std::string bytes = encode_checkpoint(t);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].name, t[i].name);
    EXPECT_EQ(back[i].value.shape(), t[i].value.shape());
    EXPECT_EQ(std::memcmp(back[i].value.data().data(), t[i].value.data().data(), t[i].value.size() * 8), 0);
  }
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, LayoutHeader) {
  const std::string bytes = encode_checkpoint({{"x", Tensor({2}, {1.0, 2.0})}});
  EXPECT_EQ(bytes.substr(0, 4), "GASC");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
  // magic 4 + version 4 + count 4 + name len 2 + name 1 + rank 1 + dim 4 + data 16 + crc 4
  EXPECT_EQ(bytes.size(), 40u);
}

TEST(Checkpoint, EverySingleByteCorruptionIsDetected) {
  const std::string bytes = encode_checkpoint(sample_tensors());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    for (unsigned char flip : {0x01, 0x80, 0xff}) {
      std::string bad = bytes;
      bad[i] = static_cast<char>(static_cast<unsigned char>(bad[i]) ^ flip);
      ASSERT_THROW(decode_checkpoint(bad), CorruptCheckpointError) << "byte " << i;
    }
}

TEST(Checkpoint, TruncationAndGarbageAreParseErrors) {
  const std::string bytes = encode_checkpoint(sample_tensors());
  for (std::size_t n : {0ul, 3ul, 15ul, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, n)), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.gasc"), IoError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = scratch("ckpt");
  const GanglwState s = toy_state();
  save_checkpoint(export_state(s), dir / "a.gasc");
  const GanglwState back = import_state(load_checkpoint(dir / "a.gasc"));
  save_checkpoint(export_state(back), dir / "b.gasc");
  EXPECT_EQ(slurp(dir / "a.gasc"), slurp(dir / "b.gasc"));
  EXPECT_EQ(back.completed, 2u);
  std::mt19937_64 g(4);
  const Tensor x = oracle::random_tensor({2, 1, 16, 16}, g, 0.0, 1.0);
  GanglwState a = toy_state(), b = import_state(load_checkpoint(dir / "a.gasc"));
  EXPECT_EQ(predict(a.generator, x), predict(b.generator, x));
  ad::Tape t1, t2;
  EXPECT_EQ(a.discriminator.forward(t1, a.generator, t1.constant(x)).value(),
            b.discriminator.forward(t2, b.generator, t2.constant(x)).value());
}

TEST(Checkpoint, ClassifierRoundTripAndKinds) {
  GanglwState s = toy_state();
  Rng rng(5);
  const EmotionClassifier clf = from_encoder(s.generator, 3, rng);
  const auto tensors = export_classifier(clf);
  EXPECT_EQ(checkpoint_kind(tensors), CheckpointKind::Classifier);
  EXPECT_EQ(checkpoint_kind(export_state(s)), CheckpointKind::Pretrain);
  EXPECT_EQ(encode_checkpoint(export_classifier(import_classifier(tensors))), encode_checkpoint(tensors));
  EXPECT_THROW(import_state(tensors), ConfigError);
  EXPECT_THROW(import_classifier(export_state(s)), ConfigError);
}

// --- config ------------------------------------------------------------------------

TEST(Config, DefaultsValidateAndRoundTrip) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.pretrain_epochs, 100u);
  EXPECT_EQ(c.finetune_epochs, 20u);
  EXPECT_EQ(c.classifier_epochs, 10u);
  EXPECT_EQ(c.finetune_lr, 0.001);
  EXPECT_EQ(c.classifier_lr, 0.01);
  const std::string text = config_to_string(c);
  EXPECT_EQ(config_to_string(parse_config(text)), text);
}

TEST(Config, ParsesCommentsListsAndLayers) {
  const RunConfig c = parse_config(
      "# header\nstages = 2  # trailing\ng_lr = 0.5, 0.25\nlayers = convmlp:5:4:64, halfconv:3:2:1\n"
      "mode = gasca1\nliteral_multi_update = yes\n");
  EXPECT_EQ(c.stages, 2u);
  EXPECT_EQ(c.g_lr, (std::vector<double>{0.5, 0.25}));
  ASSERT_EQ(c.layers.size(), 2u);
  EXPECT_EQ(c.layers[1].kind, LayerKind::HalfConv);
  EXPECT_EQ(c.layers[1].pad, 1u);
  EXPECT_EQ(c.mode, Mode::Gasca1);
  EXPECT_TRUE(c.literal_multi_update);
}

TEST(Config, ErrorsNameTheField) {
  auto message = [](const std::string& text) {
    try {
      parse_config(text).validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("bogus = 1").find("bogus"), std::string::npos);
  EXPECT_NE(message("stages = x").find("stages"), std::string::npos);
  EXPECT_NE(message("stages = 3\ng_lr = 0.1, 0.2").find("g_lr"), std::string::npos);
  EXPECT_NE(message("stages = 3\nd_lr = 0.1").find("d_lr"), std::string::npos);
  EXPECT_NE(message("poses = 0, 15, -15, 30").find("poses"), std::string::npos);
  EXPECT_NE(message("layers = dense:3").find("layers"), std::string::npos);
  EXPECT_NE(message("just text").find("line 1"), std::string::npos);
  EXPECT_NE(message("stages = 5").find("stages"), std::string::npos);
}

// --- command line --------------------------------------------------------------------

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(GASCA_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const std::string kTiny = std::string(GASCA_TEST_DATA) + "/tiny.cfg";

}  // namespace

TEST(Cli, EndToEndOnTinyRun) {
  const fs::path dir = scratch("cli");
  const fs::path log = dir / "log.txt";
  ASSERT_EQ(run("synth --config " + kTiny + " --out " + (dir / "data").string(), log), 0) << slurp(log);
  ASSERT_EQ(run("synth --config " + kTiny + " --out " + (dir / "data2").string(), log), 0);
  EXPECT_EQ(slurp(dir / "data" / "manifest.csv"), slurp(dir / "data2" / "manifest.csv"));

  ASSERT_EQ(run("pretrain --config " + kTiny + " --data " + (dir / "data").string() + " --out " +
                    (dir / "run").string(),
                log),
            0)
      << slurp(log);
  for (const char* f : {"stage_1.gasc", "stage_2.gasc", "final.gasc", "metrics_stage_1.csv", "metrics_stage_2.csv"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  std::istringstream metrics(slurp(dir / "run" / "metrics_stage_1.csv"));
  std::size_t rows = 0;
  for (std::string line; std::getline(metrics, line);) ++rows;
  EXPECT_EQ(rows, 1u + 2u);

  // Resume after stage 1 reproduces the final checkpoint.
  ASSERT_EQ(run("pretrain --config " + kTiny + " --data " + (dir / "data").string() + " --resume " +
                    (dir / "run" / "stage_1.gasc").string() + " --out " + (dir / "resumed").string(),
                log),
            0)
      << slurp(log);
  EXPECT_EQ(slurp(dir / "run" / "final.gasc"), slurp(dir / "resumed" / "final.gasc"));

  // Reconstruct prints the MAE of the unclamped output.
  const fs::path in = dir / "data" / "img" / "0.pgm";
  ASSERT_EQ(run("reconstruct --checkpoint " + (dir / "run" / "final.gasc").string() + " --input " + in.string() +
                    " --output " + (dir / "y.pgm").string() + " --target " + in.string(),
                log),
            0);
  const Tensor x = pgm_read(in);
  EXPECT_EQ(pgm_read(dir / "y.pgm").shape(), x.shape());
  GanglwState st = import_state(load_checkpoint(dir / "run" / "final.gasc"));
  const Tensor y = predict(st.generator, x.reshaped({1, 1, 16, 16})).reshaped(x.shape());
  const std::string out = slurp(log);
  ASSERT_EQ(out.rfind("MAE ", 0), 0u) << out;
  EXPECT_NEAR(std::stod(out.substr(4)), mae_loss(x, y), 1e-12);

  // Classify from the pretrain checkpoint, then eval the saved classifier.
  ASSERT_EQ(run("classify --config " + kTiny + " --checkpoint " + (dir / "run" / "final.gasc").string() + " --data " +
                    (dir / "data").string() + " --out " + (dir / "cls").string(),
                log),
            0)
      << slurp(log);
  const SamplePool pool = read_dataset_dir(dir / "data");
  std::istringstream preds(slurp(dir / "cls" / "predictions.csv"));
  rows = 0;
  for (std::string line; std::getline(preds, line);) ++rows;
  EXPECT_EQ(rows, 1u + labeled_split(pool, Split::Validation).size());
  ASSERT_EQ(run("eval --config " + kTiny + " --checkpoint " + (dir / "cls" / "classifier.gasc").string() +
                    " --data " + (dir / "data").string() + " --out " + (dir / "ev").string(),
                log),
            0);
  EXPECT_EQ(slurp(log).rfind("accuracy ", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "ev" / "confusion.csv"));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli_err");
  const fs::path log = dir / "log.txt";
  {
    std::ofstream f(dir / "bad.cfg");
    f << "poses = 0, 15, 17\n";
  }
  EXPECT_EQ(run("synth --config " + (dir / "bad.cfg").string() + " --out " + (dir / "x").string(), log), 2);
  EXPECT_EQ(run("synth --config " + kTiny + " --mode gasca9 --out " + (dir / "x").string(), log), 2);
  EXPECT_EQ(run("nosuchcommand", log), 2);
  EXPECT_EQ(run("reconstruct --checkpoint " + kTiny + " --input " + kTiny + " --output " + (dir / "y.pgm").string(),
                log),
            1);
  // A flipped byte in a checkpoint is a runtime failure.
  const GanglwState s = toy_state();
  std::string bytes = encode_checkpoint(export_state(s));
  bytes[20] = static_cast<char>(bytes[20] ^ 0x10);
  {
    std::ofstream f(dir / "bad.gasc", std::ios::binary);
    f << bytes;
  }
  pgm_write(Tensor({1, 16, 16}, 0.5), dir / "in.pgm");
  EXPECT_EQ(run("reconstruct --checkpoint " + (dir / "bad.gasc").string() + " --input " + (dir / "in.pgm").string() +
                    " --output " + (dir / "y.pgm").string(),
                log),
            1);
  EXPECT_NE(slurp(log).find("CRC"), std::string::npos) << slurp(log);
}
