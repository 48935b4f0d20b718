#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spuq/gradcore/rng.hpp"
#include "spuq/phantomgen.hpp"
#include "spuq/segmetrics.hpp"
#include "spuq/sliceprop.hpp"

namespace prop = spuq::prop;
namespace grad = spuq::grad;
using spuq::Image2D;
using spuq::MaskVolume;
using spuq::Volume3D;
using grad::Shape;
using grad::Tensor;

namespace {

Image2D ramp_x(std::size_t h, std::size_t w) {
  Image2D img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(x, y) = static_cast<float>(x);
  return img;
}

Image2D random_image(grad::Rng& rng, std::size_t h, std::size_t w) {
  Image2D img(h, w);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

Image2D disc(std::size_t h, std::size_t w, double cx, double cy, double r) {
  Image2D img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(x, y) = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy) <= r ? 1.0f : 0.0f;
    }
  return img;
}

// Rows one-hot at window offset (ox, oy), clamped into the image.
prop::AffinityMatrix shifted_affinity(std::size_t h, std::size_t w, std::size_t r, long ox, long oy) {
  prop::AffinityMatrix a;
  a.radius = r;
  a.height = h;
  a.width = w;
  const long side = 2 * static_cast<long>(r) + 1;
  a.weights = Tensor(Shape{h * w, static_cast<std::size_t>(side * side)}, 0.0f);
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) {
      const long dx = std::clamp(x + ox, 0L, static_cast<long>(w) - 1) - x;
      const long dy = std::clamp(y + oy, 0L, static_cast<long>(h) - 1) - y;
      const long k = (dy + static_cast<long>(r)) * side + dx + static_cast<long>(r);
      a.weights[static_cast<std::size_t>((y * static_cast<long>(w) + x) * side * side + k)] = 1.0f;
    }
  return a;
}

Volume3D stack(const Image2D& img, std::size_t depth) {
  Volume3D v(img.height, img.width, depth);
  for (std::size_t z = 0; z < depth; ++z) spuq::set_slice(v, z, img);
  return v;
}

std::vector<Volume3D> small_training_set() {
  std::vector<Volume3D> out;
  for (std::uint64_t s = 0; s < 2; ++s) {
    out.push_back(spuq::phantom::generate(spuq::phantom::random_spec(spuq::phantom::Kind::Ellipsoid, 100 + s, 16, 16, 12))
                      .volume);
  }
  return out;
}

grad::SgdConfig short_schedule(std::int64_t steps) {
  grad::SgdConfig c;
  c.steps = steps;
  c.batch_size = 1;
  return c;
}

}  // namespace

// ------------------------------------------------------------------ edges

TEST(EdgeProfile, ConstantSliceHasNoEdges) {
  const auto e = prop::edge_profile(Image2D(8, 8, 0.4f), 4);
  EXPECT_EQ(e.shape(), (Shape{4, 8, 8}));
  for (float v : e.values()) EXPECT_EQ(v, 0.0f);
}

TEST(EdgeProfile, VerticalStepEdge) {
  Image2D img(8, 10);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 5; x < 10; ++x) img.at(x, y) = 1.0f;
  const auto e = prop::edge_profile(img, 4);
  const std::size_t hw = 80;
  // Channel 0 responds to the horizontal gradient, channel 2 to the vertical one.
  for (std::size_t y = 0; y < 8; ++y) {
    float best = -1.0f;
    std::size_t arg = 0;
    for (std::size_t x = 0; x < 10; ++x) {
      if (e[y * 10 + x] > best) best = e[y * 10 + x], arg = x;
    }
    EXPECT_TRUE(arg == 4 || arg == 5);
    EXPECT_EQ(best, 1.0f);
  }
  for (std::size_t i = 0; i < hw; ++i) EXPECT_EQ(e[2 * hw + i], 0.0f);
}

TEST(EdgeProfile, ChannelMaxIsOne) {
  auto rng = grad::Rng::stream(3, "edges");
  const auto e = prop::edge_profile(random_image(rng, 9, 7), 6);
  for (std::size_t c = 0; c < 6; ++c) {
    const auto* p = e.data() + c * 63;
    EXPECT_FLOAT_EQ(*std::max_element(p, p + 63), 1.0f);
  }
  EXPECT_THROW(prop::edge_profile(Image2D(4, 4), 1), std::invalid_argument);
}

// ------------------------------------------------------------------ affinity

TEST(Affinity, RowsSumToOne) {
  auto rng = grad::Rng::stream(11, "affinity_rows");
  Tensor fs(Shape{4, 6, 7}), ft(Shape{4, 6, 7});
  for (float& v : fs.values()) v = static_cast<float>(rng.normal(0, 2));
  for (float& v : ft.values()) v = static_cast<float>(rng.normal(0, 2));
  const auto a = prop::compute_affinity(fs, ft, 2, 0.5);
  ASSERT_EQ(a.weights.shape(), (Shape{42, 25}));
  for (std::size_t p = 0; p < 42; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < 25; ++k) {
      EXPECT_GE(a.weights[p * 25 + k], 0.0f);
      s += a.weights[p * 25 + k];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Affinity, DistinctOneHotFeaturesConcentrateOnSelf) {
  const std::size_t h = 5, w = 6, c = h * w;
  Tensor f(Shape{c, h, w}, 0.0f);
  for (std::size_t p = 0; p < c; ++p) f[p * c + p] = 1.0f;
  const auto a = prop::compute_affinity(f, f, 2, 0.01);
  for (std::size_t p = 0; p < c; ++p) EXPECT_GT(a.weights[p * 25 + 12], 0.99f);
}

TEST(Affinity, IdenticalFeaturesGiveUniformInteriorRows) {
  const auto a = prop::compute_affinity(Tensor(Shape{3, 9, 9}, 0.7f), Tensor(Shape{3, 9, 9}, 0.7f), 2, 1.0);
  const std::size_t p = 4 * 9 + 4;
  for (std::size_t k = 0; k < 25; ++k) EXPECT_NEAR(a.weights[p * 25 + k], 1.0 / 25.0, 1e-7);
  // Border pixels spread their mass over in-image positions only.
  double s = 0.0;
  for (std::size_t k = 0; k < 25; ++k) s += a.weights[k];
  EXPECT_NEAR(s, 1.0, 1e-6);
  EXPECT_NEAR(a.weights[12], 1.0 / 9.0, 1e-7);
}

TEST(Affinity, IdentityWarp) {
  auto rng = grad::Rng::stream(5, "warp");
  const auto img = random_image(rng, 7, 8);
  EXPECT_EQ(prop::warp_with_affinity(shifted_affinity(7, 8, 2, 0, 0), img), img);
}

TEST(Affinity, ConstantSourceStaysConstant) {
  auto rng = grad::Rng::stream(6, "warp");
  Tensor fs(Shape{2, 6, 6}), ft(Shape{2, 6, 6});
  for (float& v : fs.values()) v = static_cast<float>(rng.normal());
  for (float& v : ft.values()) v = static_cast<float>(rng.normal());
  const auto out = prop::warp_with_affinity(prop::compute_affinity(fs, ft, 1, 1.0), Image2D(6, 6, 0.3f));
  for (float v : out.data) EXPECT_NEAR(v, 0.3f, 1e-6);
}

TEST(Affinity, UniformRowsAreABoxFilter) {
  const auto a = prop::compute_affinity(Tensor(Shape{1, 6, 7}, 0.0f), Tensor(Shape{1, 6, 7}, 0.0f), 1, 1.0);
  auto rng = grad::Rng::stream(7, "box");
  const auto img = random_image(rng, 6, 7);
  const auto out = prop::warp_with_affinity(a, img);
  for (std::size_t y = 1; y + 1 < 6; ++y)
    for (std::size_t x = 1; x + 1 < 7; ++x) {
      double box = 0.0;
      for (std::size_t yy = y - 1; yy <= y + 1; ++yy)
        for (std::size_t xx = x - 1; xx <= x + 1; ++xx) box += img.at(xx, yy);
      EXPECT_NEAR(out.at(x, y), box / 9.0, 1e-6);
    }
}

TEST(Affinity, WarpKeepsMaskRange) {
  auto rng = grad::Rng::stream(8, "range");
  Tensor fs(Shape{3, 8, 8}), ft(Shape{3, 8, 8});
  for (float& v : fs.values()) v = static_cast<float>(rng.normal(0, 3));
  for (float& v : ft.values()) v = static_cast<float>(rng.normal(0, 3));
  const auto out = prop::warp_with_affinity(prop::compute_affinity(fs, ft, 3, 1.0), disc(8, 8, 3.5, 3.5, 2.5));
  for (float v : out.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f + 1e-6f);
  }
}

TEST(Affinity, WarpShapeMismatchThrows) {
  EXPECT_THROW(prop::warp_with_affinity(shifted_affinity(4, 4, 1, 0, 0), Image2D(4, 5)), grad::ShapeError);
}

// ------------------------------------------------------------------ verification

TEST(Verify, IdentityLeavesMaskUnchanged) {
  const auto m = disc(10, 10, 4.5, 4.5, 3.0);
  const auto id = shifted_affinity(10, 10, 2, 0, 0);
  const auto v = prop::verify_and_correct(m, m, id, id, 0.8);
  EXPECT_EQ(v.mask, m);
  EXPECT_FALSE(v.corrected);
  EXPECT_DOUBLE_EQ(v.cycle_dsc, 1.0);
}

TEST(Verify, BackwardCollapseSuppressesDisagreement) {
  Image2D m(10, 10);
  for (std::size_t y = 2; y < 4; ++y)
    for (std::size_t x = 2; x < 4; ++x) m.at(x, y) = 1.0f;
  const auto id = shifted_affinity(10, 10, 3, 0, 0);
  // Every pixel reads from three columns to the right, where the mask is empty.
  const auto away = shifted_affinity(10, 10, 3, 3, 0);
  const auto v = prop::verify_and_correct(m, m, id, away, 0.8);
  EXPECT_TRUE(v.corrected);
  EXPECT_DOUBLE_EQ(v.cycle_dsc, 0.0);
  for (float x : v.mask.data) EXPECT_EQ(x, 0.0f);
}

TEST(Verify, ZeroThresholdNeverTriggers) {
  const auto m = disc(10, 10, 4.5, 4.5, 2.0);
  const auto v =
      prop::verify_and_correct(m, m, shifted_affinity(10, 10, 3, 0, 0), shifted_affinity(10, 10, 3, 3, 3), 0.0);
  EXPECT_FALSE(v.corrected);
  EXPECT_EQ(v.mask, m);
}

// ------------------------------------------------------------------ affinity model

TEST(AffinityModel, ZeroStepsKeepInitialization) {
  const auto vols = small_training_set();
  prop::ArchConfig arch;
  const auto init = prop::make_affinity_model(arch, {}, {grad::InitMode::base, 9});
  const auto trained = prop::train_affinity_model(vols, short_schedule(0), arch, 9);
  ASSERT_EQ(init.net.convs.size(), trained.net.convs.size());
  for (std::size_t i = 0; i < init.net.convs.size(); ++i) {
    EXPECT_EQ(init.net.convs[i].weight, trained.net.convs[i].weight);
    EXPECT_EQ(init.net.convs[i].bias, trained.net.convs[i].bias);
  }
  EXPECT_TRUE(trained.loss_history.empty());
}

TEST(AffinityModel, TrainingIsDeterministic) {
  const auto vols = small_training_set();
  prop::ArchConfig arch;
  const auto a = prop::train_affinity_model(vols, short_schedule(4), arch, 21);
  const auto b = prop::train_affinity_model(vols, short_schedule(4), arch, 21);
  ASSERT_EQ(a.loss_history.size(), 4u);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.net.convs[0].weight, b.net.convs[0].weight);
  const auto c = prop::train_affinity_model(vols, short_schedule(4), arch, 22);
  EXPECT_NE(a.loss_history, c.loss_history);
}

TEST(AffinityModel, RejectsBadTrainingSets) {
  prop::ArchConfig arch;
  EXPECT_THROW(prop::train_affinity_model({}, short_schedule(1), arch, 1), std::invalid_argument);
  EXPECT_THROW(prop::train_affinity_model({Volume3D(8, 8, 1)}, short_schedule(1), arch, 1), std::invalid_argument);
}

TEST(AffinityPropagation, ConstantAnatomyIsPreserved) {
  auto rng = grad::Rng::stream(4, "anatomy");
  Image2D img(16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const bool inside = std::hypot(x - 7.5, y - 7.5) <= 4.5;
      img.at(x, y) = static_cast<float>((inside ? 0.75 : 0.25) + 0.05 * std::sin(0.9 * x + 0.4 * y) +
                                        rng.normal(0.0, 0.01));
    }
  const auto vol = stack(img, 8);
  const auto model = prop::train_affinity_model({vol}, short_schedule(120), {}, 3);
  MaskVolume gt = MaskVolume::like(vol);
  const auto m = disc(16, 16, 7.5, 7.5, 4.5);
  for (std::size_t z = 0; z < 8; ++z) spuq::set_slice(gt, z, m);
  const auto res = prop::propagate_affinity(model, vol, {3, m});
  for (std::size_t z = 0; z < 8; ++z) {
    const auto pz = spuq::metrics::slice_mask(res.mask, z), gz = spuq::metrics::slice_mask(gt, z);
    EXPECT_GE(spuq::metrics::dsc(pz, gz), 99.0) << "slice " << z;
  }
}

TEST(AffinityPropagation, AnnotationKeptAndEmptyStaysEmpty) {
  const auto vols = small_training_set();
  const auto model = prop::make_affinity_model({}, {}, {grad::InitMode::base, 2});
  const auto m = disc(16, 16, 7.0, 8.0, 3.0);
  const auto res = prop::propagate_affinity(model, vols[0], {5, m});
  EXPECT_EQ(spuq::slice_image(res.mask, 5), m);
  ASSERT_EQ(res.record.slices.size(), 12u);
  for (std::size_t z = 0; z < 12; ++z) {
    EXPECT_EQ(res.record.slices[z].slice, z);
    EXPECT_EQ(res.record.slices[z].distance, z > 5 ? z - 5 : 5 - z);
  }
  const auto empty = prop::propagate_affinity(model, vols[0], {5, Image2D(16, 16)});
  EXPECT_EQ(spuq::count_foreground(empty.mask.values()), 0u);
  EXPECT_THROW(prop::propagate_affinity(model, vols[0], {12, m}), std::invalid_argument);
}

// ------------------------------------------------------------------ deformation fields

TEST(Ddf, ZeroFieldIsIdentity) {
  auto rng = grad::Rng::stream(12, "ddf");
  const auto img = random_image(rng, 6, 9);
  EXPECT_EQ(prop::apply_ddf(Tensor(Shape{2, 6, 9}, 0.0f), img), img);
}

TEST(Ddf, ConstantShiftOfRamp) {
  const auto img = ramp_x(5, 8);
  Tensor phi(Shape{2, 5, 8}, 0.0f);
  for (std::size_t i = 0; i < 40; ++i) phi[i] = 1.0f;
  const auto out = prop::apply_ddf(phi, img);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_FLOAT_EQ(out.at(x, y), static_cast<float>(std::min<std::size_t>(x + 1, 7)));
}

TEST(Ddf, RoundTripOnSmoothImage) {
  const std::size_t h = 24, w = 24;
  Image2D img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(x, y) = static_cast<float>(std::exp(-(std::pow(x - 11.0, 2) + std::pow(y - 12.5, 2)) / 40.0));
  Tensor phi(Shape{2, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      phi[y * w + x] = static_cast<float>(0.8 + 0.3 * std::sin(0.2 * y));
      phi[h * w + y * w + x] = static_cast<float>(-0.5 + 0.3 * std::cos(0.25 * x));
    }
  Tensor neg = phi;
  for (float& v : neg.values()) v = -v;
  const auto back = prop::apply_ddf(neg, prop::apply_ddf(phi, img));
  double worst = 0.0;
  for (std::size_t y = 3; y + 3 < h; ++y)
    for (std::size_t x = 3; x + 3 < w; ++x) worst = std::max(worst, static_cast<double>(std::abs(back.at(x, y) - img.at(x, y))));
  EXPECT_LE(worst, 0.05);
}

TEST(Ddf, ShapeMismatchThrows) {
  EXPECT_THROW(prop::apply_ddf(Tensor(Shape{2, 4, 4}), Image2D(4, 5)), grad::ShapeError);
}

TEST(FlowModel, FreshModelPredictsZeroFields) {
  const auto vols = small_training_set();
  const auto model = prop::make_flow_model({}, {}, {grad::InitMode::kaiming_uniform, 4});
  const auto f = prop::predict_ddf(model, vols[0]);
  ASSERT_EQ(f.forward.size(), 11u);
  ASSERT_EQ(f.backward.size(), 11u);
  for (const auto* set : {&f.forward, &f.backward})
    for (const auto& phi : *set) {
      EXPECT_EQ(phi.shape(), (Shape{2, 16, 16}));
      for (float v : phi.values()) EXPECT_EQ(v, 0.0f);
    }
  EXPECT_THROW(prop::predict_ddf(model, Volume3D(16, 16, 1)), std::invalid_argument);
  EXPECT_THROW(prop::predict_ddf(model, Volume3D(15, 16, 4)), grad::ShapeError);
}

// ------------------------------------------------------------------ boundary loss

TEST(BoundaryLoss, Examples) {
  auto rng = grad::Rng::stream(13, "bl");
  const auto x = random_image(rng, 10, 10);
  const auto other = random_image(rng, 10, 10);
  {
    grad::Tape t;
    EXPECT_NEAR(prop::boundary_loss(t.constant(x.tensor()), x, 0.85).value()[0], 0.0, 1e-6);
  }
  {
    grad::Tape t;
    const auto pred = t.constant(other.tensor());
    const double ssim = grad::ssim(pred, t.constant(x.tensor()), 7, 1e-4, 9e-4).value()[0];
    EXPECT_NEAR(prop::boundary_loss(pred, x, 1.0).value()[0], 1.0 - ssim, 1e-6);
  }
  {
    grad::Tape t;
    EXPECT_EQ(prop::boundary_loss(t.constant(other.tensor()), Image2D(10, 10, 0.5f), 0.0).value()[0], 0.0f);
  }
  {
    grad::Tape t;
    EXPECT_THROW(prop::boundary_loss(t.constant(x.tensor()), x, 1.5), std::invalid_argument);
  }
}

TEST(BoundaryLoss, EdgeWeightedL1Term) {
  const auto x = ramp_x(8, 8);
  Image2D scaled = x;
  for (float& v : scaled.data) v /= 7.0f;
  grad::Tape t;
  const auto pred = t.constant(Image2D(8, 8, 0.0f).tensor());
  const auto c = prop::edge_weight_map(scaled);
  double expect = 0.0;
  for (std::size_t i = 0; i < 64; ++i) expect += c[i] * scaled.data[i];
  expect /= 64.0;
  const double ssim = grad::ssim(pred, t.constant(scaled.tensor()), 7, 1e-4, 9e-4).value()[0];
  EXPECT_NEAR(prop::boundary_loss(pred, scaled, 0.3).value()[0], 0.3 * (1 - ssim) + 0.7 * expect, 1e-5);
}

// ------------------------------------------------------------------ flow model

TEST(FlowModel, TrainingIsDeterministicAndMovesWeights) {
  const auto vols = small_training_set();
  prop::ArchConfig arch;
  const auto a = prop::train_flow_model(vols, short_schedule(3), arch, 5);
  const auto b = prop::train_flow_model(vols, short_schedule(3), arch, 5);
  EXPECT_EQ(a.loss_history, b.loss_history);
  ASSERT_EQ(a.loss_history.size(), 3u);
  const auto fresh = prop::make_flow_model(arch, {}, {grad::InitMode::base, 5});
  EXPECT_NE(a.net.convs.back().weight, fresh.net.convs.back().weight);
  const auto zero = prop::train_flow_model(vols, short_schedule(0), arch, 5);
  EXPECT_EQ(zero.net.convs.back().weight, fresh.net.convs.back().weight);
  EXPECT_THROW(prop::train_flow_model({Volume3D(16, 16, 4)}, short_schedule(1), arch, 5), std::invalid_argument);
}

TEST(FlowPropagation, ZeroFieldsCopyTheAnnotation) {
  const auto vols = small_training_set();
  prop::ArchConfig arch;
  arch.refine = false;
  const auto model = prop::make_flow_model(arch, {}, {grad::InitMode::base, 1});
  const auto m = disc(16, 16, 8.0, 7.0, 3.5);
  const auto res = prop::propagate_flow(model, vols[1], {4, m});
  for (std::size_t z = 0; z < 12; ++z) EXPECT_EQ(spuq::slice_image(res.mask, z), m);
  const auto empty = prop::propagate_flow(model, vols[1], {4, Image2D(16, 16)});
  EXPECT_EQ(spuq::count_foreground(empty.mask.values()), 0u);
}

// ------------------------------------------------------------------ refinement

TEST(Refine, ConfidentMaskPassesThrough) {
  const auto m = disc(12, 12, 5.5, 5.5, 3.0);
  const auto r = prop::refine_mask_kernel(m, Image2D(12, 12, 0.5f), {}, 1);
  EXPECT_EQ(r.mask, m);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.reclassified, 0u);
}

TEST(Refine, SingleClassIsDegenerate) {
  Image2D soft(8, 8, 0.1f);
  soft.at(3, 3) = 0.6f;
  const auto r = prop::refine_mask_kernel(soft, Image2D(8, 8, 0.5f), {}, 1);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.mask, spuq::threshold(soft));
}

TEST(Refine, AmbiguousBandFollowsIntensity) {
  const std::size_t h = 16, w = 16;
  Image2D soft(h, w), intensity(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      intensity.at(x, y) = x >= 8 ? 0.8f : 0.2f;
      soft.at(x, y) = x >= 11 ? 0.95f : (x <= 4 ? 0.05f : 0.5f);
    }
  // A soft value of exactly 0.5 thresholds to foreground; the kernel model must
  // relabel the dark half of the band as background.
  const auto r = prop::refine_mask_kernel(soft, intensity, {}, 7);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 5; x <= 10; ++x) EXPECT_EQ(r.mask.at(x, y), x >= 8 ? 1.0f : 0.0f) << x << "," << y;
  EXPECT_EQ(r.reclassified, 3 * h);
  const auto again = prop::refine_mask_kernel(soft, intensity, {}, 7);
  EXPECT_EQ(again.mask, r.mask);
}

// ------------------------------------------------------------------ annotation

TEST(Annotation, LargestSliceLowestIndexOnTies) {
  MaskVolume gt(6, 6, 5);
  for (std::size_t z : {1u, 3u})
    for (std::size_t i = 0; i < 9; ++i) gt.slice(z)[i] = 1;
  gt.slice(2)[0] = 1;
  const auto ann = prop::select_annotated_slice(gt);
  EXPECT_EQ(ann.slice_index, 1u);
  EXPECT_EQ(std::accumulate(ann.mask.data.begin(), ann.mask.data.end(), 0.0f), 9.0f);
  EXPECT_THROW(prop::select_annotated_slice(MaskVolume(4, 4, 4)), std::invalid_argument);
}

TEST(Kinds, RoundTrip) {
  for (auto k : {prop::PropagatorKind::Affinity, prop::PropagatorKind::Flow}) {
    EXPECT_EQ(prop::propagator_from_string(prop::to_string(k)), k);
  }
  EXPECT_THROW(prop::propagator_from_string("optical"), std::invalid_argument);
}
