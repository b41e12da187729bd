#include <filesystem>

#include <gtest/gtest.h>

#include "anomhead/config.hpp"

namespace anomhead {
namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

TEST(Config, DefaultsAreValid) {
  const TrainConfig c;
  EXPECT_NO_THROW(validate_config(c));
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.epochs, 10u);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.layer_indices, (std::vector<std::uint32_t>{6, 12, 18, 24}));
  EXPECT_EQ(c.temperature, 0.07);
  EXPECT_EQ(c.hidden_for(1024), 256u);
  EXPECT_EQ(c.hidden_for(6), 2u);
}

TEST(Config, ParsesSectionsCommentsAndLists) {
  const ConfigFile f = parse_config(
      "# leading comment\n"
      "[train]\n"
      "learning_rate = 0.01   # inline\n"
      "epochs=3\n"
      "smoothing = true\n"
      "\n"
      "[loss]\n"
      "lambda_aacm = 0\n"
      "aacm_activation = softmax\n"
      "[model]\n"
      "layer_indices = 12, 24\n"
      "d_e = 16\n"
      "[synth]\n"
      "noise_per_layer = 0.5\n"
      "[paths]\n"
      "ckpt = out/model.adck\n");
  EXPECT_EQ(f.train.learning_rate, 0.01);
  EXPECT_EQ(f.train.epochs, 3u);
  EXPECT_TRUE(f.train.smoothing);
  EXPECT_EQ(f.train.loss.lambda_aacm, 0.0);
  EXPECT_EQ(f.train.loss.aacm_activation, AacmActivation::SoftmaxOverPatches);
  EXPECT_EQ(f.train.layer_indices, (std::vector<std::uint32_t>{12, 24}));
  EXPECT_EQ(f.train.d_e, 16u);
  EXPECT_EQ(f.synth.noise_per_layer, 0.5);
  EXPECT_EQ(f.paths.at("ckpt"), "out/model.adck");
}

TEST(Config, ErrorsCarrySourceAndLine) {
  EXPECT_EQ(message_of([] { parse_config("[train]\nlearning_rat = 1\n", "a.ini"); }),
            "a.ini:2: key 'train.learning_rat': unknown key");
  EXPECT_NE(message_of([] { parse_config("[train]\nepochs = -1\n", "a.ini"); }).find("a.ini:2"), std::string::npos);
  EXPECT_NE(message_of([] { parse_config("[bogus]\nx = 1\n", "b.ini"); }).find("unknown section"), std::string::npos);
  EXPECT_NE(message_of([] { parse_config("[train]\nnovalue\n", "c.ini"); }).find("c.ini:2"), std::string::npos);
  EXPECT_NE(message_of([] { parse_config("[train\n", "d.ini"); }).find("d.ini:1"), std::string::npos);
  EXPECT_THROW(parse_config("[train]\nsmoothing = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nlearning_rate = 1e-3x\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/anomhead.ini"), ConfigError);
}

TEST(Config, OverridesApplyAfterFile) {
  ConfigFile f = parse_config("[train]\nepochs = 3\n");
  apply_override(f, "train.epochs=7");
  apply_override(f, "model.layer_indices=24");
  apply_override(f, "loss.lambda_cm = 0.5");
  EXPECT_EQ(f.train.epochs, 7u);
  EXPECT_EQ(f.train.layer_indices, (std::vector<std::uint32_t>{24}));
  EXPECT_EQ(f.train.loss.lambda_cm, 0.5);
  EXPECT_THROW(apply_override(f, "epochs=7"), ConfigError);
  EXPECT_THROW(apply_override(f, "train.nope=1"), ConfigError);
}

TEST(Config, ValidationRejectsOutOfRangeValues) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(validate_config(c), ConfigError);
  };
  bad([](TrainConfig& c) { c.temperature = 0; });
  bad([](TrainConfig& c) { c.learning_rate = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.layer_indices = {}; });
  bad([](TrainConfig& c) { c.layer_indices = {12, 6}; });
  bad([](TrainConfig& c) { c.loss.focal_alpha = 1.5; });
  bad([](TrainConfig& c) { c.loss.lambda_aacm = -1; });
  bad([](TrainConfig& c) { c.adam_beta1 = 1.0; });
}

TEST(Config, ShippedConfigLoads) {
  const ConfigFile f = load_config(std::filesystem::path(ANOMHEAD_CONFIG_DIR) / "synthetic.ini");
  EXPECT_NO_THROW(validate_config(f.train));
  EXPECT_EQ(f.train.d_v, f.synth.d_v);
  EXPECT_EQ(f.train.d_t, f.synth.d_t);
}

}  // namespace
}  // namespace anomhead
