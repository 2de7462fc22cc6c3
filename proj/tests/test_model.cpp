#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ynet/checkpoint.hpp"
#include "ynet/grad_check.hpp"
#include "ynet/loss.hpp"
#include "ynet/model.hpp"

using namespace ynet;

namespace {

ModelConfig desk(Variant v = Variant::YNet) {
  ModelConfig c;
  c.input_size = 64;
  c.width_scale = 0.125;
  c.variant = v;
  return c;
}

Tensor random_input(std::size_t n, std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t({n, 3, s, s});
  for (auto& v : t.data()) v = u(rng);
  return t;
}

std::size_t count_scalars(const ParameterStore& store) {
  std::size_t n = 0;
  for (const auto& p : store)
    if (p.trainable()) n += p.value.size();
  return n;
}

}  // namespace

TEST(ModelConfig, Invariants) {
  ModelConfig c = desk();
  EXPECT_NO_THROW(c.validate());
  c.input_size = 48;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = desk();
  c.block_convs = {2, 2, 4, 4, 3};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = desk();
  c.width_scale = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ModelConfig, ScaledWidths) {
  const ModelConfig c = desk();
  EXPECT_EQ(c.encoder_widths(), (std::array<std::size_t, 5>{8, 16, 32, 64, 64}));
  EXPECT_EQ(c.decoder_widths(), (std::array<std::size_t, 5>{64, 32, 16, 8, 4}));
  ModelConfig full;
  EXPECT_EQ(full.encoder_widths(), kEncoderBaseWidths);
}

TEST(Model, SkipTable) { EXPECT_EQ(kSkipConvIndex, (std::array<std::size_t, 5>{2, 2, 4, 4, 4})); }

TEST(Model, DeskEncoderSkipShapes) {
  const SegmentationModel model(desk(), 1);
  Tape tape;
  auto pass = bind_parameters(tape, model.params(), false, BatchNormMode::Infer);
  const Var in = tape.constant(random_input(2, 64, 1));
  const EncoderFeatures f = encode(pass, model.encoders()[0], in);
  const std::array<std::size_t, 5> ch{8, 16, 32, 64, 64}, res{64, 32, 16, 8, 4};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(tape.value(f.skips[i]).shape(), (Shape{2, ch[i], res[i], res[i]}));
  EXPECT_EQ(tape.value(f.bottleneck).shape(), (Shape{2, 64, 2, 2}));
}

TEST(Model, EncodersHaveMatchingShapes) {
  const SegmentationModel model(desk(), 2);
  ASSERT_EQ(model.encoders().size(), 2u);
  const auto& a = model.encoders()[0];
  const auto& b = model.encoders()[1];
  EXPECT_EQ(a.activation, Activation::Relu);
  EXPECT_EQ(b.activation, Activation::Selu);
  for (std::size_t i = 0; i < 5; ++i) {
    ASSERT_EQ(a.blocks[i].size(), b.blocks[i].size());
    for (std::size_t j = 0; j < a.blocks[i].size(); ++j) {
      EXPECT_EQ(model.params()[a.blocks[i][j].weight].value.shape(), model.params()[b.blocks[i][j].weight].value.shape());
    }
  }
}

TEST(Model, XavierNormalStatistics) {
  std::mt19937_64 rng(5);
  for (Shape s : {Shape{64, 32, 3, 3}, Shape{128, 64, 3, 3}, Shape{1, 4096, 1, 1}}) {
    const Tensor w = xavier_normal(s, rng);
    ASSERT_GE(w.size(), 4096u);
    double mean = 0.0, sq = 0.0;
    for (float v : w.data()) mean += v;
    mean /= static_cast<double>(w.size());
    for (float v : w.data()) sq += (v - mean) * (v - mean);
    const double var = sq / static_cast<double>(w.size());
    const double rf = static_cast<double>(s[2] * s[3]);
    const double want = 2.0 / (rf * static_cast<double>(s[0] + s[1]));
    EXPECT_NEAR(var / want, 1.0, 0.2) << to_string(s);
    EXPECT_LT(std::abs(mean), 0.1 * std::sqrt(want)) << to_string(s);
  }
}

TEST(Model, OutputShapeAndRangeForAllVariants) {
  for (Variant v : {Variant::YNet, Variant::UNetScratch, Variant::UNetPretrainedEncoder}) {
    for (std::size_t s : {32u, 64u}) {
      ModelConfig c = desk(v);
      c.input_size = s;
      SegmentationModel m(c, 3);
      const Tensor out = m.predict(random_input(2, s, 4));
      EXPECT_EQ(out.shape(), (Shape{2, 1, s, s}));
      for (float p : out.data()) {
        EXPECT_GT(p, 0.0f);
        EXPECT_LT(p, 1.0f);
      }
    }
  }
}

TEST(Model, ZeroHeadGivesOneHalf) {
  SegmentationModel m(desk(), 7);
  for (auto& p : m.params())
    if (p.name.starts_with("decoder.head")) p.value.fill(0.0f);
  const Tensor out = m.predict(random_input(1, 64, 2));
  for (float p : out.data()) EXPECT_EQ(p, 0.5f);
}

TEST(Model, SumSkipsExamples) {
  Tape t;
  EncoderFeatures a, zero, ones;
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < 5; ++i) {
    Tensor v({1, 2, 2, 2});
    for (auto& x : v.data()) x = static_cast<float>(rng() % 100) / 10.0f;
    a.skips[i] = t.constant(v);
    zero.skips[i] = t.constant(Tensor({1, 2, 2, 2}));
    ones.skips[i] = t.constant(Tensor({1, 2, 2, 2}, 1.0f));
  }
  a.bottleneck = t.constant(Tensor({1, 2, 1, 1}, 3.0f));
  zero.bottleneck = t.constant(Tensor({1, 2, 1, 1}));
  ones.bottleneck = t.constant(Tensor({1, 2, 1, 1}, 1.0f));
  const EncoderFeatures az = sum_skips(t, a, zero), ao = sum_skips(t, a, ones), oa = sum_skips(t, ones, a),
                        oo = sum_skips(t, ones, ones);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(t.value(az.skips[i]), t.value(a.skips[i]));
    EXPECT_EQ(t.value(ao.skips[i]), t.value(oa.skips[i]));
    EXPECT_EQ(t.value(oo.skips[i]), Tensor({1, 2, 2, 2}, 2.0f));
  }
  EXPECT_EQ(t.value(oo.bottleneck), Tensor({1, 2, 1, 1}, 2.0f));
  EncoderFeatures bad = ones;
  bad.skips[2] = t.constant(Tensor({1, 3, 2, 2}));
  EXPECT_THROW(sum_skips(t, ones, bad), ShapeError);
}

TEST(Model, GroupPartitionCoversEveryTensorOnce) {
  const SegmentationModel m(desk(), 1);
  std::set<std::string> names;
  std::size_t e1 = 0, e2 = 0, dec = 0, buf = 0;
  for (const auto& p : m.params()) {
    EXPECT_TRUE(names.insert(p.name).second) << "duplicate " << p.name;
    switch (p.group) {
      case ParamGroup::Encoder1: ++e1; EXPECT_TRUE(p.name.starts_with("encoder1.")) << p.name; break;
      case ParamGroup::Encoder2: ++e2; EXPECT_TRUE(p.name.starts_with("encoder2.")) << p.name; break;
      case ParamGroup::Decoder: ++dec; EXPECT_TRUE(p.name.starts_with("decoder.")) << p.name; break;
      case ParamGroup::Buffer: ++buf; EXPECT_TRUE(p.name.find("running_") != std::string::npos) << p.name; break;
    }
  }
  EXPECT_EQ(e1, 32u);  // 16 convs x (weight, bias)
  EXPECT_EQ(e2, 32u);
  EXPECT_EQ(dec, 15u * 4u + 2u);  // 15 conv+bn layers, plus the head
  EXPECT_EQ(buf, 30u);
}

TEST(Model, ParameterCounts) {
  const SegmentationModel y(desk(Variant::YNet), 1), u(desk(Variant::UNetScratch), 1);
  const std::size_t ny = count_scalars(y.params()), nu = count_scalars(u.params());
  EXPECT_LT(nu, ny);
  // Y-Net adds exactly one encoder's worth of scalars.
  std::size_t enc = 0;
  for (const auto& p : y.params())
    if (p.group == ParamGroup::Encoder2) enc += p.value.size();
  EXPECT_EQ(ny - nu, enc);
}

TEST(Model, BaselineGroupsAndSlot) {
  const SegmentationModel scratch(desk(Variant::UNetScratch), 1), pre(desk(Variant::UNetPretrainedEncoder), 1),
      y(desk(), 1);
  EXPECT_EQ(y.pretrained_slot(), "encoder1");
  EXPECT_EQ(pre.pretrained_slot(), "encoder");
  ASSERT_EQ(scratch.encoders().size(), 1u);
  ASSERT_EQ(pre.encoders().size(), 1u);
  EXPECT_EQ(pre.encoders()[0].group, ParamGroup::Encoder1);
  EXPECT_EQ(scratch.encoders()[0].group, ParamGroup::Encoder2);
}

TEST(Model, PretrainedEncoderLoadedAtStepZero) {
  const ModelConfig cfg = desk(Variant::UNetPretrainedEncoder);
  EncoderClassifier donor(cfg, 99);
  const std::vector<NamedTensor> ckpt = export_encoder(donor.params(), donor.encoder());
  const SegmentationModel m = build_unet_baseline(cfg, 1, &ckpt);
  for (const auto& e : ckpt) EXPECT_EQ(m.params().at("encoder." + e.name).value, e.value) << e.name;
  const SegmentationModel y = build_ynet(desk(), 1, &ckpt);
  for (const auto& e : ckpt) EXPECT_EQ(y.params().at("encoder1." + e.name).value, e.value) << e.name;
}

TEST(Model, PretrainedShapeMismatchNamesLayer) {
  ModelConfig wide = desk(Variant::UNetPretrainedEncoder);
  wide.width_scale = 0.25;
  EncoderClassifier donor(wide, 1);
  const std::vector<NamedTensor> ckpt = export_encoder(donor.params(), donor.encoder());
  try {
    build_unet_baseline(desk(Variant::UNetPretrainedEncoder), 1, &ckpt);
    FAIL() << "expected a shape error";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointErrorKind::Shape);
    EXPECT_NE(std::string(e.what()).find("conv1_1"), std::string::npos) << e.what();
  }
}

TEST(Model, ZeroEncoderTwoMatchesSingleEncoderBitwise) {
  SegmentationModel y = build_ynet(desk(), 11);
  SegmentationModel u = build_unet_baseline(desk(Variant::UNetPretrainedEncoder), 12);
  for (auto& p : y.params())
    if (p.name.starts_with("encoder2.")) p.value.fill(0.0f);
  for (auto& p : u.params()) {
    std::string src = p.name;
    if (src.starts_with("encoder.")) src = "encoder1." + src.substr(8);
    p.value = y.params().at(src).value;
  }
  const Tensor x = random_input(2, 64, 5);
  EXPECT_TRUE(bitwise_equal(y.predict(x), u.predict(x)));
}

TEST(Model, TrainModeForwardUpdatesRunningStats) {
  SegmentationModel m(desk(), 1);
  const Tensor before = m.params().at("decoder.up1.bn1.running_mean").value;
  Tape t;
  auto pass = bind_parameters(t, m.params(), true, BatchNormMode::Train);
  m.forward(pass, t.constant(random_input(2, 64, 1)));
  EXPECT_NE(m.params().at("decoder.up1.bn1.running_mean").value, before);
  EXPECT_TRUE(m.has_trained_norms());
}

TEST(Model, CalibratedHeadMatchesBatchStatistics) {
  EncoderClassifier c(desk(Variant::UNetPretrainedEncoder), 3);
  const Tensor x = random_input(4, 64, 8);
  Tape t;
  auto pass = bind_parameters(t, c.params(), false, BatchNormMode::Train);
  const Tensor train_probs = t.value(c.forward(pass, t.constant(x)));
  c.calibrate_head({x});
  const Tensor infer_probs = c.predict(x);
  ASSERT_EQ(infer_probs.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(infer_probs[i], train_probs[i], 1e-4) << i;
}

TEST(Model, CalibrationPoolsAcrossBatches) {
  EncoderClassifier whole(desk(Variant::UNetPretrainedEncoder), 3), split(desk(Variant::UNetPretrainedEncoder), 3);
  const Tensor x = random_input(4, 64, 9);
  const std::size_t half = x.size() / 2;
  Tensor a({2, 3, 64, 64}), b({2, 3, 64, 64});
  std::copy(x.data().begin(), x.data().begin() + static_cast<std::ptrdiff_t>(half), a.data().begin());
  std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(half), x.data().end(), b.data().begin());
  whole.calibrate_head({x});
  split.calibrate_head({a, b});
  for (const char* name : {"classifier.bn.running_mean", "classifier.bn.running_var"}) {
    const Tensor& u = whole.params().at(name).value;
    const Tensor& v = split.params().at(name).value;
    for (std::size_t k = 0; k < u.size(); ++k) EXPECT_NEAR(u[k], v[k], 1e-6 + 1e-4 * std::abs(u[k])) << name << k;
  }
}

TEST(Model, SameSeedSameWeights) {
  const SegmentationModel a(desk(), 42), b(desk(), 42), c(desk(), 43);
  const auto sa = snapshot(a.params()), sb = snapshot(b.params()), sc = snapshot(c.params());
  ASSERT_EQ(sa.size(), sb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(sa[i].value, sb[i].value)) << sa[i].name;
    any_diff |= !bitwise_equal(sa[i].value, sc[i].value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, EndToEndLossGradientTinyConfig) {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.width_scale = 1.0 / 16.0;
  const SegmentationModel model(cfg, 8);
  const ParameterStore& store = model.params();
  Tensor mask({1, 1, 32, 32});
  for (std::size_t h = 10; h < 22; ++h)
    for (std::size_t w = 8; w < 20; ++w) mask.at(0, 0, h, w) = 1.0f;
  const LossConfig loss;
  // Inputs: the image plus every trainable tensor, so the check reaches
  // all three parameter groups.
  std::vector<Tensor> inputs{random_input(1, 32, 3)};
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store[i].trainable()) {
      inputs.push_back(store[i].value);
      index.push_back(i);
    }
  auto& mutable_model = const_cast<SegmentationModel&>(model);
  const auto fn = make_differentiable([&](auto& t, std::span<const Var> in) {
    using TapeT = std::decay_t<decltype(t)>;
    using T = typename TapeT::TensorT::value_type;
    ForwardPass<T> pass{t, std::vector<Var>(store.size()), BatchNormMode::Train};
    for (std::size_t k = 0; k < index.size(); ++k) pass.params[index[k]] = in[k + 1];
    const Var p = mutable_model.forward(pass, in[0], false);
    return composite_loss(t, p, mask.template cast<T>(), loss);
  });
  GradCheckOptions opt;
  opt.tolerance = 1e-2;
  opt.max_entries_per_input = 2;
  // Batch norm over 2x2 maps at batch 1 makes the loss strongly curved;
  // nearby ReLU/pool kinks also sit within 1e-5 of some probes. Both routes
  // run in double so a 1e-7 step stays above rounding noise.
  opt.step = 1e-7;
  opt.analytic_f64 = true;
  opt.floor = 1e-6;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    opt.seed = seed;
    const GradCheckResult r = grad_check(fn, inputs, opt);
    EXPECT_TRUE(r.passed) << "seed " << seed << ": " << r.max_rel_error << " at " << r.location;
  }
}
