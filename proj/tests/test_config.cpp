#include <gtest/gtest.h>

#include "json.hpp"
#include "ynet/config.hpp"

using namespace ynet;

namespace {

std::string config_error(std::string_view text) {
  try {
    config_from_json(text, RunConfig::defaults(Profile::Desk));
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "accepted: " << text;
  return {};
}

}  // namespace

TEST(Config, ProfileDefaults) {
  const RunConfig paper = RunConfig::defaults(Profile::Paper);
  EXPECT_EQ(paper.input_size, 224u);
  EXPECT_EQ(paper.width_scale, 1.0);
  EXPECT_EQ(paper.batch_size, 3u);
  EXPECT_EQ(paper.optimizer.eta, 1e-4);
  EXPECT_EQ(paper.optimizer.rho, 0.9);
  EXPECT_EQ(paper.loss.lambda, 2.0);
  EXPECT_EQ(paper.loss.epsilon, 1.0);
  EXPECT_EQ(paper.patience, 10u);
  EXPECT_EQ(paper.min_delta, 1e-4);
  EXPECT_EQ(paper.optimizer.c_map.at(ParamGroup::Encoder1), 0.01);
  EXPECT_EQ(paper.optimizer.c_map.at(ParamGroup::Encoder2), 1.0);
  const RunConfig desk = RunConfig::defaults(Profile::Desk);
  EXPECT_EQ(desk.input_size, 64u);
  EXPECT_EQ(desk.width_scale, 0.125);
  EXPECT_NO_THROW(paper.validate());
  EXPECT_NO_THROW(desk.validate());
  EXPECT_THROW(parse_profile("laptop"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = RunConfig::defaults(Profile::Desk);
  c.seed = 17;
  c.variant = Variant::UNetScratch;
  c.optimizer.c_map[ParamGroup::Encoder1] = 0.5;
  c.loss.lambda = 3.0;
  const RunConfig back = config_from_json(config_to_json(c), RunConfig::defaults(Profile::Paper));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.variant, Variant::UNetScratch);
  EXPECT_EQ(back.input_size, 64u);
}

TEST(Config, OverlayKeepsUnsetKeys) {
  const RunConfig c = config_from_json(R"({"seed": 4, "optimizer": {"eta": 0.001}})", RunConfig::defaults(Profile::Desk));
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.optimizer.eta, 1e-3);
  EXPECT_EQ(c.optimizer.rho, 0.9);
  EXPECT_EQ(c.input_size, 64u);
}

TEST(Config, UnknownKeysRejectedWithPath) {
  EXPECT_NE(config_error(R"({"learning_rate": 1})").find("learning_rate"), std::string::npos);
  EXPECT_NE(config_error(R"({"loss": {"gamma": 1}})").find("loss.gamma"), std::string::npos);
  EXPECT_NE(config_error(R"({"optimizer": {"c_map": {"head": 1}}})").find("optimizer.c_map.head"), std::string::npos);
}

TEST(Config, WrongTypesAndBadJson) {
  EXPECT_NE(config_error(R"({"seed": "x"})").find("seed"), std::string::npos);
  EXPECT_NE(config_error(R"({"loss": 2})").find("loss"), std::string::npos);
  EXPECT_FALSE(config_error("{").empty());
  EXPECT_FALSE(config_error(R"({"variant": "resnet"})").empty());
}

TEST(Config, ValidationNamesField) {
  EXPECT_NE(config_error(R"({"input_size": 100})").find("input_size"), std::string::npos);
  EXPECT_NE(config_error(R"({"batch_size": 0})").find("batch_size"), std::string::npos);
  EXPECT_NE(config_error(R"({"width_scale": 0})").find("width_scale"), std::string::npos);
  EXPECT_FALSE(config_error(R"({"optimizer": {"rho": 1.0}})").empty());
  EXPECT_FALSE(config_error(R"({"optimizer": {"eta": -1}})").empty());
  EXPECT_FALSE(config_error(R"({"loss": {"epsilon": 0}})").empty());
  EXPECT_FALSE(config_error(R"({"loss": {"lambda": -2}})").empty());
  EXPECT_FALSE(config_error(R"({"optimizer": {"c_map": {"encoder1": -1}}})").empty());
}

TEST(Config, DerivedModelAndTrainConfigs) {
  RunConfig c = RunConfig::defaults(Profile::Desk);
  c.variant = Variant::UNetPretrainedEncoder;
  c.patience = 7;
  const ModelConfig m = c.model();
  EXPECT_EQ(m.input_size, 64u);
  EXPECT_EQ(m.variant, Variant::UNetPretrainedEncoder);
  const TrainConfig t = c.train();
  EXPECT_EQ(t.early_stop.patience, 7u);
  EXPECT_EQ(t.batch_size, 3u);
}
