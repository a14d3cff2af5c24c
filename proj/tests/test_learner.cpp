#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "ahl/errors.hpp"
#include "ahl/learner.hpp"
#include "ahl/synthdata.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace ahl;
using ahl::testing::TempDir;

namespace {

ArchSpec tiny_arch(std::size_t landmarks = 2) {
  ArchSpec a;
  a.depth = 2;
  a.widths = {2, 3};
  a.height = 16;
  a.width = 16;
  a.landmarks = landmarks;
  return a;
}

Sample make_sample(Tensor image, std::vector<Point> pts, const std::string& id = "s") {
  Sample s;
  s.image = std::move(image);
  s.landmarks.coords = std::move(pts);
  for (std::size_t i = 0; i < s.landmarks.coords.size(); ++i) s.landmarks.names.push_back("l" + std::to_string(i));
  s.id = id;
  return s;
}

/// Depth-2 learner whose output channel 0 equals its input image: every
/// layer is zero except a unit centre tap on the path encoder 0 -> skip ->
/// decoder 0 -> head. Non-negative images pass the ReLUs untouched.
LearnerState pass_through_learner(const ArchSpec& arch) {
  LearnerState l = build_learner(arch, 1);
  for (auto& p : l.params) p.fill(0.0);
  const std::size_t d = arch.depth;
  l.params[0][4] = 1.0;  // encoder 0, out 0, in 0, centre tap
  Tensor& dec0 = l.params[2 * (d + 1) + 2 * (d - 1)];
  const std::size_t in_ch = dec0.dim(1);
  dec0[(0 * in_ch + arch.widths[0]) * 9 + 4] = 1.0;  // skip channel 0 follows the upsampled block
  Tensor& head = l.params[2 * (2 * d + 1)];
  for (std::size_t n = 0; n < arch.landmarks; ++n) head[n * head.dim(1)] = 1.0;
  return l;
}

/// Fresh learner with small random biases. Zero biases put dead channels'
/// downstream pre-activations exactly on the ReLU kink, where central
/// differences and the subgradient legitimately disagree.
LearnerState generic_learner(const ArchSpec& arch, std::uint64_t seed) {
  LearnerState l = build_learner(arch, seed);
  Rng rng(seed);
  for (std::size_t k = 1; k < l.params.size(); k += 2) {
    l.params[k] = ahl::testing::random_tensor(l.params[k].shape(), rng, -0.1, 0.1);
  }
  return l;
}

double relative_gap(const std::vector<Tensor>& analytic, const LearnerState& learner,
                    const std::function<double(const LearnerState&)>& loss) {
  return ahl::testing::composite_fd_error(learner, analytic, loss);
}

}  // namespace

TEST(Arch, DefaultParameterCountMatchesHandSum) {
  // enc 1->8, 8->16, 16->32; bottleneck 32->32; dec (32+32)->16, (16+16)->8,
  // (8+8)->8; head 8->4. Each 3x3 conv has out*in*9 weights plus out biases.
  const std::size_t expected = (8 * 1 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32) +
                               (16 * 64 * 9 + 16) + (8 * 32 * 9 + 8) + (8 * 16 * 9 + 8) + (4 * 8 + 4);
  EXPECT_EQ(expected, 27876u);
  EXPECT_EQ(ArchSpec{}.parameter_count(), expected);
  const LearnerState l = build_learner(ArchSpec{}, 3);
  std::size_t total = 0;
  for (const auto& p : l.params) total += p.size();
  EXPECT_EQ(total, expected);
}

TEST(Arch, ValidationRejectsIndivisibleExtent) {
  ArchSpec a;
  a.height = 60;  // not divisible by 8
  EXPECT_THROW(a.validate(), ConfigError);
  EXPECT_THROW(build_learner(a, 1), ConfigError);
  ArchSpec b;
  b.depth = 0;
  b.widths = {};
  EXPECT_THROW(b.validate(), ConfigError);
  ArchSpec c;
  c.widths = {8, 0, 32};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Build, SameSeedBitwiseDifferentSeedDiffers) {
  EXPECT_TRUE(bitwise_equal(build_learner(ArchSpec{}, 5), build_learner(ArchSpec{}, 5)));
  EXPECT_FALSE(same_parameters(build_learner(ArchSpec{}, 5), build_learner(ArchSpec{}, 6)));
}

TEST(Build, HeScaleAndZeroBiases) {
  const LearnerState l = build_learner(ArchSpec{}, 7);
  // Bottleneck weights: fan-in 32 * 9, 9216 draws.
  const Tensor& w = l.params[6];
  double ss = 0.0;
  for (double v : w.values()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(w.size())), std::sqrt(2.0 / 288.0), 0.01 * std::sqrt(2.0 / 288.0) * 3);
  for (std::size_t k = 1; k < l.params.size(); k += 2)
    for (double v : l.params[k].values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ZeroHeadGivesZeroOutput) {
  LearnerState l = build_learner(ArchSpec{}, 8);
  l.params[l.params.size() - 2].fill(0.0);
  Rng rng(1);
  const Tensor out = forward(l, ahl::testing::random_tensor({1, 64, 64}, rng, 0.0, 1.0));
  EXPECT_EQ(out.shape(), (Shape{4, 64, 64}));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdenticalImagesIdenticalOutputs) {
  const LearnerState l = build_learner(tiny_arch(), 9);
  Rng rng(2);
  const Tensor img = ahl::testing::random_tensor({1, 16, 16}, rng, 0.0, 1.0);
  const Tensor copy = img;
  EXPECT_TRUE(bitwise_equal(forward(l, img), forward(l, copy)));
}

TEST(Forward, ShapeMismatchIsDimensionError) {
  const LearnerState l = build_learner(tiny_arch(), 9);
  EXPECT_THROW(forward(l, Tensor({1, 8, 16})), DimensionError);
  EXPECT_THROW(forward(l, Tensor({2, 16, 16})), DimensionError);
}

TEST(Gradient, HeatmapMseMatchesFiniteDifferences) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const LearnerState l = generic_learner(tiny_arch(), seed);
    Rng rng(seed);
    const Sample s = make_sample(ahl::testing::random_tensor({1, 16, 16}, rng, 0.0, 1.0), {{4.2, 9.7}, {11.0, 3.5}});
    const SigmaVector sig(std::vector<double>{2.0, 3.5});
    const auto analytic = heatmap_loss_gradient(l, s, sig);
    EXPECT_LE(relative_gap(analytic, l, [&](const LearnerState& p) { return heatmap_loss(p, s, sig); }), 1e-5)
        << "seed " << seed;
  }
}

TEST(Gradient, CoordinateLossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const LearnerState l = generic_learner(tiny_arch(), seed);
    Rng rng(seed);
    const Sample s = make_sample(ahl::testing::random_tensor({1, 16, 16}, rng, 0.0, 1.0), {{4.2, 9.7}, {11.0, 3.5}});
    const auto analytic = coordreg_loss_gradient(l, s);
    EXPECT_LE(relative_gap(analytic, l, [&](const LearnerState& p) { return coordreg_loss(p, s); }), 1e-5)
        << "seed " << seed;
  }
}

TEST(CoordLoss, ZeroOnlyWhenDecodedExactly) {
  LearnerState l = build_learner(tiny_arch(), 12);
  for (auto& p : l.params) p.fill(0.0);  // uniform output, decodes to (7.5, 7.5)
  const Tensor img = Tensor::filled({1, 16, 16}, 0.5);
  EXPECT_EQ(coordreg_loss(l, make_sample(img, {{7.5, 7.5}, {7.5, 7.5}})), 0.0);
  EXPECT_GT(coordreg_loss(l, make_sample(img, {{7.5, 7.5}, {7.5, 7.6}})), 0.0);
  EXPECT_GT(coordreg_loss(l, make_sample(img, {{3.0, 7.5}, {7.5, 7.5}})), 0.0);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  LearnerState l = build_learner(tiny_arch(), 13);
  const LearnerState before = clone_weights(l);
  const auto d = gen_dataset(20, 16, 16, 2, 1);
  Rng rng(5);
  TrainOptions opt;
  opt.epochs = 3;
  opt.lr = 0.0;
  opt.augment = false;
  const auto losses = train_epochs(l, d.train, SigmaVector(2, 2.0), opt, rng);
  EXPECT_TRUE(same_parameters(l, before));
  ASSERT_EQ(losses.size(), 3u);
  for (std::size_t e = 1; e < 3; ++e)
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(losses[e][i], losses[0][i], 1e-15 * losses[0][i]);

  LearnerState c = build_learner(tiny_arch(), 13);
  const auto closs = train_coordreg(c, d.train, opt, rng);
  EXPECT_TRUE(same_parameters(c, before));
  EXPECT_EQ(closs.size(), 3u);
}

TEST(Train, OneEpochOnRepeatedSampleDecreasesLoss) {
  const auto d = gen_dataset(10, 64, 64, 4, 2);
  const std::vector<Sample> repeated(16, d.train.front());
  const SigmaVector sig(4, 5.0);
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    LearnerState l = build_learner(ArchSpec{}, seed);
    const double before = heatmap_loss(l, repeated.front(), sig);
    Rng rng(seed);
    TrainOptions opt;
    opt.augment = false;
    train_epochs(l, repeated, sig, opt, rng);
    decreased += heatmap_loss(l, repeated.front(), sig) < before ? 1 : 0;
  }
  EXPECT_EQ(decreased, 10);
}

TEST(Train, RecordedLossesMatchRecomputation) {
  // A single batch covering the whole set: the record is measured before the
  // only optimizer step, so it must equal the loss of the initial weights.
  const auto d = gen_dataset(20, 16, 16, 2, 3);
  LearnerState l = build_learner(tiny_arch(), 14);
  const LearnerState initial = clone_weights(l);
  const SigmaVector sig(std::vector<double>{1.5, 4.0});
  Rng rng(6);
  TrainOptions opt;
  opt.batch = d.train.size();
  opt.augment = false;
  const auto losses = train_epochs(l, d.train, sig, opt, rng);
  ASSERT_EQ(losses.size(), 1u);
  ASSERT_EQ(losses[0].size(), 2u);
  std::vector<double> expected(2, 0.0);
  for (const Sample& s : d.train) {
    const auto per = mse_per_channel(forward(initial, s.image), render_targets(s.landmarks, sig, 16, 16));
    for (std::size_t i = 0; i < 2; ++i) expected[i] += per[i] / static_cast<double>(d.train.size());
  }
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(losses[0][i], expected[i], 1e-12 * expected[i]);
  EXPECT_FALSE(same_parameters(l, initial));
}

TEST(Train, EmptyDatasetIsConfigError) {
  LearnerState l = build_learner(tiny_arch(), 15);
  Rng rng(7);
  EXPECT_THROW(train_epochs(l, {}, SigmaVector(2, 2.0), TrainOptions{}, rng), ConfigError);
  EXPECT_THROW(train_coordreg(l, {}, TrainOptions{}, rng), ConfigError);
}

TEST(Train, FullyDeterministic) {
  const auto d = gen_dataset(20, 16, 16, 2, 4);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch = 4;
  LearnerState a = build_learner(tiny_arch(), 16), b = build_learner(tiny_arch(), 16);
  Rng ra(8), rb(8);
  const auto la = train_epochs(a, d.train, SigmaVector(2, 3.0), opt, ra);
  const auto lb = train_epochs(b, d.train, SigmaVector(2, 3.0), opt, rb);
  EXPECT_EQ(la, lb);
  EXPECT_TRUE(bitwise_equal(a, b));
}

TEST(Clone, BitwiseEqualAndIndependent) {
  const LearnerState src = build_learner(tiny_arch(), 17);
  LearnerState c = clone_weights(src);
  EXPECT_TRUE(bitwise_equal(c, src));
  const LearnerState snapshot = clone_weights(src);
  Rng rng(9);
  adam_step(c.params[0], ahl::testing::random_tensor(c.params[0].shape(), rng), c.optim[0], 1e-2);
  EXPECT_FALSE(bitwise_equal(c, src));
  EXPECT_TRUE(bitwise_equal(src, snapshot));
}

TEST(Clone, TenClonesPairwiseEqual) {
  const LearnerState src = build_learner(ArchSpec{}, 18);
  std::vector<LearnerState> clones;
  for (int k = 0; k < 10; ++k) clones.push_back(clone_weights(src));
  for (std::size_t i = 0; i < clones.size(); ++i)
    for (std::size_t j = i + 1; j < clones.size(); ++j) EXPECT_TRUE(bitwise_equal(clones[i], clones[j]));
}

TEST(Validate, TargetOutputsBoundedByHalfPixel) {
  const ArchSpec arch = tiny_arch(1);
  const LearnerState l = pass_through_learner(arch);
  Rng rng(10);
  std::uniform_real_distribution<double> coord(0.0, 15.0);
  std::vector<Sample> set;
  for (int k = 0; k < 30; ++k) {
    const Point p{coord(rng), coord(rng)};
    Tensor img({1, 16, 16});
    gaussian_heatmap_into(p, 2.0, 16, 16, img.values());
    set.push_back(make_sample(img, {p}, "v" + std::to_string(k)));
  }
  // The wiring really does reproduce the input.
  EXPECT_TRUE(std::equal(set[0].image.values().begin(), set[0].image.values().end(),
                         forward(l, set[0].image).values().begin()));
  const auto eps = validate(l, set);
  EXPECT_LE(eps[0], 0.5 * std::sqrt(2.0));
}

TEST(Validate, ThreeFourFiveOffset) {
  const LearnerState l = pass_through_learner(tiny_arch(1));
  Tensor img({1, 16, 16});
  gaussian_heatmap_into({8.0, 10.0}, 2.0, 16, 16, img.values());
  const auto eps = validate(l, std::vector<Sample>{make_sample(img, {{5.0, 6.0}})});
  EXPECT_EQ(eps[0], 5.0);
}

TEST(Validate, MatchesBruteForceFromRawHeatmaps) {
  const LearnerState l = build_learner(tiny_arch(), 19);
  const auto d = gen_dataset(20, 16, 16, 2, 5);
  const auto eps = validate(l, d.validation);
  std::vector<double> expected(2, 0.0);
  for (const Sample& s : d.validation) {
    const Tensor out = forward(l, s.image);
    for (std::size_t i = 0; i < 2; ++i) {
      std::size_t br = 0, bc = 0;
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 16; ++c)
          if (out.at(i, r, c) > out.at(i, br, bc)) br = r, bc = c;
      expected[i] += std::hypot(static_cast<double>(br) - s.landmarks.coords[i].row,
                                static_cast<double>(bc) - s.landmarks.coords[i].col);
    }
  }
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(eps[i], expected[i] / static_cast<double>(d.validation.size()), 1e-12);
}

TEST(Validate, InvariantUnderMonotoneRescaling) {
  LearnerState l = build_learner(tiny_arch(), 20);
  const auto d = gen_dataset(20, 16, 16, 2, 6);
  const auto base = validate(l, d.validation);
  // Positive scaling of the head plus a shared offset is strictly increasing.
  Tensor& w = l.params[l.params.size() - 2];
  Tensor& b = l.params.back();
  w *= 3.5;
  b *= 3.5;
  for (double& v : b.values()) v += 0.25;
  EXPECT_EQ(validate(l, d.validation), base);
}

TEST(Validate, EmptySetIsConfigError) {
  EXPECT_THROW(validate(build_learner(tiny_arch(), 1), {}), ConfigError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  TempDir dir("ckpt");
  const LearnerState l = build_learner(tiny_arch(), 21);
  save_checkpoint(dir / "m.ckpt", l);
  const LearnerState r = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(r.arch, l.arch);
  EXPECT_TRUE(same_parameters(r, l));

  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 3);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), FormatError);
  {
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}
