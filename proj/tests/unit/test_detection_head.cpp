#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vpdet/detection_head.hpp"

using namespace vpdet;

namespace {

Box7 random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0, 1);
  return {40 * U(rng) - 20, 40 * U(rng) - 20, 4 * U(rng) - 2, 0.3 + 3 * U(rng), 0.3 + 6 * U(rng),
          0.3 + 2 * U(rng), 2 * kPi * U(rng) - kPi};
}

std::vector<Vec3> sorted(std::array<Vec3, 8> c) {
  std::vector<Vec3> v(c.begin(), c.end());
  for (auto& p : v)
    for (int a = 0; a < 3; ++a) p[a] = std::round(p[a] * 1e9) / 1e9 + 0.0;
  std::sort(v.begin(), v.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  return v;
}

}  // namespace

TEST(BoxEncoding, RoundTripAndUnitDims) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Box7 b = random_box(rng);
    const Box7 r = decode_box(encode_box(b));
    const auto a = b.to_array(), c = r.to_array();
    for (int k = 0; k < 6; ++k) ASSERT_NEAR(a[k], c[k], 1e-9);
    ASSERT_NEAR(std::remainder(a[6] - c[6], 2 * kPi), 0.0, 1e-9);
  }
  const auto e = encode_box(Box7{1, 2, 3, 1, 1, 1, 0});
  EXPECT_EQ(e.log_dims, (std::array<double, 3>{0, 0, 0}));
  EXPECT_EQ(e.yaw, (std::array<double, 2>{0, 1}));
  EXPECT_EQ(BoxEncoding::from_array(e.to_array()).center, e.center);
}

TEST(BoxEncoding, DoublingDimsShiftsOnlyLogDims) {
  const Box7 b{1, 2, 3, 1.6, 3.9, 1.5, 0.4};
  Box7 big = b;
  big.w *= 2;
  big.l *= 2;
  big.h *= 2;
  const auto e = encode_box(b), f = encode_box(big);
  EXPECT_EQ(e.center, f.center);
  EXPECT_EQ(e.yaw, f.yaw);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(f.log_dims[a] - e.log_dims[a], std::log(2.0), 1e-12);
}

TEST(BoxEncoding, YawIsContinuousAcrossTheWrap) {
  const auto a = encode_box(Box7{0, 0, 0, 1, 1, 1, kPi - 1e-6});
  const auto b = encode_box(Box7{0, 0, 0, 1, 1, 1, -kPi + 1e-6});
  EXPECT_NEAR(a.yaw[0], b.yaw[0], 3e-6);
  EXPECT_NEAR(a.yaw[1], b.yaw[1], 3e-6);
}

TEST(BoxEncoding, UnnormalizedYawAndZeroPair) {
  BoxEncoding e;
  e.yaw = {3.0, 3.0};
  EXPECT_NEAR(decode_box(e).theta, kPi / 4, 1e-12);
  e.yaw = {0.0, 0.0};
  EXPECT_THROW(decode_box(e), std::invalid_argument);
  EXPECT_THROW(encode_box(Box7{0, 0, 0, 0, 1, 1, 0}), std::invalid_argument);
}

TEST(BoxCorners, UnitCubeAndBitLayout) {
  const auto c = box_corners(Box7{0, 0, 0, 1, 1, 1, 0});
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(c[i].x(), (i & 4) ? 0.5 : -0.5);
    EXPECT_EQ(c[i].y(), (i & 2) ? 0.5 : -0.5);
    EXPECT_EQ(c[i].z(), (i & 1) ? 0.5 : -0.5);
  }
}

TEST(BoxCorners, QuarterTurnSwapsExtents) {
  const auto turned = box_corners(Box7{1, 2, 3, 2, 4, 1, kPi / 2});
  const auto swapped = box_corners(Box7{1, 2, 3, 4, 2, 1, 0});
  EXPECT_EQ(sorted(turned), sorted(swapped));
}

TEST(BoxCorners, MatchRotationOracle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Box7 b = random_box(rng);
    const auto got = box_corners(b);
    const auto want = oracle::box_corners(b);
    for (int k = 0; k < 8; ++k) ASSERT_LT((got[k] - want[k]).norm(), 1e-12);
  }
}

TEST(VoteLoss, HandValues) {
  const std::vector<Vec3> pred{{0.5, 0, 0}}, zero{{0, 0, 0}};
  EXPECT_NEAR(vote_loss(pred, zero).value, 0.125 / 3, 1e-15);
  const std::vector<Vec3> ones{{1, 1, 1}};
  EXPECT_DOUBLE_EQ(vote_loss(ones, zero).value, 0.5);
  EXPECT_TRUE(vote_loss({}, {}).empty);
  EXPECT_EQ(vote_loss({}, {}).value, 0.0);
}

TEST(FocalLoss, HandValueAndCrossEntropyLimit) {
  const std::vector<double> zero{0.0};
  const std::vector<int> pos{1};
  EXPECT_NEAR(focal_objectness(zero, pos).value, 0.25 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_objectness(zero, pos).value, 0.0433216988, 1e-9);
  // gamma = 0 and alpha = 1/2 is half the binary cross entropy.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-6, 6);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> l{U(rng)};
    const std::vector<int> t{static_cast<int>(rng() % 2)};
    EXPECT_NEAR(focal_objectness(l, t, 0.5, 0.0).value, 0.5 * oracle::bce(l[0], t[0]), 1e-12);
  }
  EXPECT_TRUE(focal_objectness({}, {}).empty);
  const std::vector<int> bad{2};
  EXPECT_THROW(focal_objectness(zero, bad), std::invalid_argument);
}

TEST(FocalLoss, ExtremeLogitsStayFinite) {
  const std::vector<double> l{800.0, -800.0};
  const std::vector<int> t{0, 1};
  std::vector<double> g;
  const auto v = focal_objectness(l, t, 0.25, 2.0, &g);
  EXPECT_TRUE(std::isfinite(v.value));
  EXPECT_GT(v.value, 100.0);
  for (double x : g) EXPECT_TRUE(std::isfinite(x));
}

TEST(ClassificationLoss, UniformLogitsAndOracle) {
  EXPECT_NEAR(classification_loss(std::vector<double>{0, 0, 0}, 1), std::log(3.0), 1e-15);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-5, 5);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> l{U(rng), U(rng), U(rng)};
    const int t = static_cast<int>(rng() % 3);
    EXPECT_NEAR(classification_loss(l, t), oracle::log_softmax_nll(l, t), 1e-12);
  }
  const std::vector<double> huge{1000, 0, 0};
  EXPECT_NEAR(classification_loss(huge, 1), 1000.0, 1e-9);
  EXPECT_THROW(classification_loss(huge, 3), std::invalid_argument);
}

TEST(RegressionLoss, ZeroAtTargetAndPerComponent) {
  const auto t = encode_box(Box7{1, 2, 3, 1.6, 3.9, 1.5, 0.4});
  EXPECT_EQ(regression_loss(t, t), 0.0);
  auto p = t;
  p.center[0] += 2.0;  // linear part of smooth-L1: 2 - 0.5
  EXPECT_NEAR(regression_loss(p, t), 1.5 / 8, 1e-15);
  // Shifting both boxes by the same offset changes nothing.
  auto p2 = p, t2 = t;
  p2.center[1] += 50;
  t2.center[1] += 50;
  EXPECT_NEAR(regression_loss(p2, t2), regression_loss(p, t), 1e-12);
}

TEST(CornerLoss, HandValueFlipAndSymmetry) {
  const Box7 gt{0, 0, 0, 1.6, 3.9, 1.5, 0.3};
  Box7 moved = gt;
  moved.x += 1.0;
  EXPECT_NEAR(corner_loss(moved, gt), 1.0 / 3.0, 1e-12);
  Box7 flipped = gt;
  flipped.theta += kPi;
  EXPECT_NEAR(corner_loss(flipped, gt), 0.0, 1e-12);
  EXPECT_EQ(corner_loss(gt, gt), 0.0);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Box7 a = random_box(rng), b = random_box(rng);
    EXPECT_NEAR(corner_loss(a, b), corner_loss(b, a), 1e-9);
    EXPECT_GE(corner_loss(a, b), 0.0);
  }
}

TEST(TotalLoss, WeightedSumAndNonFiniteNames) {
  EXPECT_NEAR(total_loss({0.1, 0.2, 0.3, 0.4, 0.5}, LossWeights{}), 2.5, 1e-15);
  EXPECT_EQ(total_loss({1, 2, 3, 4, 5}, LossWeights{0, 0, 0, 0, 0}), 0.0);
  try {
    total_loss({0, 0, std::nan(""), 0, 0}, LossWeights{});
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("cls"), std::string::npos);
  }
  EXPECT_THROW(total_loss({0, 0, 0, 0, INFINITY}, LossWeights{}), std::invalid_argument);
  // Linear in each weight.
  const LossComponents c{0.3, 1.1, 0.7, 2.0, 0.4};
  for (int k = 0; k < 5; ++k) {
    LossWeights w1, w2, w3;
    double* f1[] = {&w1.vote, &w1.obj, &w1.cls, &w1.reg, &w1.corner};
    double* f2[] = {&w2.vote, &w2.obj, &w2.cls, &w2.reg, &w2.corner};
    double* f3[] = {&w3.vote, &w3.obj, &w3.cls, &w3.reg, &w3.corner};
    *f1[k] = 0.5;
    *f2[k] = 2.5;
    *f3[k] = 4.5;
    const double a = total_loss(c, w1), b = total_loss(c, w2), d = total_loss(c, w3);
    EXPECT_NEAR(d - b, b - a, 1e-12);
  }
  EXPECT_THROW(total_loss({}, LossWeights{-1, 1, 1, 1, 1}), std::invalid_argument);
}

TEST(LossGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> U(-2, 2);
  std::vector<double> logits(6);
  for (double& l : logits) l = U(rng);
  const std::vector<int> targets{1, 0, 0, 1, 1, 0};
  std::vector<double> g;
  focal_objectness(logits, targets, 0.25, 2.0, &g);
  for (int i = 0; i < 6; ++i)
    EXPECT_LT(oracle::relative_error(g[i], oracle::central_difference(logits[i], [&] {
                return focal_objectness(logits, targets).value;
              })),
              1e-4);

  std::vector<double> cl{U(rng), U(rng), U(rng)};
  std::vector<double> cg;
  classification_loss(cl, 2, &cg);
  for (int i = 0; i < 3; ++i)
    EXPECT_LT(oracle::relative_error(cg[i], oracle::central_difference(cl[i], [&] {
                return classification_loss(cl, 2);
              })),
              1e-4);

  std::vector<Vec3> vp{{U(rng), U(rng), U(rng)}, {U(rng), U(rng), U(rng)}};
  const std::vector<Vec3> vt{{0, 0, 0}, {0.3, -0.2, 0.1}};
  std::vector<Vec3> vg;
  vote_loss(vp, vt, &vg);
  for (int i = 0; i < 2; ++i)
    for (int a = 0; a < 3; ++a)
      EXPECT_LT(oracle::relative_error(vg[i][a], oracle::central_difference(vp[i][a], [&] {
                  return vote_loss(vp, vt).value;
                })),
                1e-4);

  const Box7 gt{0.5, -0.5, 0.2, 1.6, 3.9, 1.5, 0.4};
  std::array<double, 7> b{0.9, -0.1, 0.5, 1.8, 3.5, 1.2, 0.9};
  std::array<double, 7> bg{};
  corner_loss(Box7::from_array(b), gt, &bg);
  for (int i = 0; i < 7; ++i)
    EXPECT_LT(oracle::relative_error(bg[i], oracle::central_difference(b[i], [&] {
                return corner_loss(Box7::from_array(b), gt);
              })),
              1e-4)
        << i;
}

TEST(Heads, ZeroHeadsAndDecodeOffset) {
  const DetectionHeads h = DetectionHeads::zeros(4);
  const std::vector<double> f{1, 2, 3, 4};
  const auto p = apply_heads(h, f);
  EXPECT_EQ(p.objectness_logit, 0.0);
  EXPECT_EQ(p.class_logits, (std::array<double, 3>{0, 0, 0}));
  HeadPrediction q;
  q.encoding = encode_box(Box7{0.5, 0, -0.5, 2, 4, 1.5, 0.2});
  const Box7 b = decode_prediction(q, Vec3(10, 1, 0));
  EXPECT_NEAR(b.x, 10.5, 1e-12);
  EXPECT_NEAR(b.y, 1.0, 1e-12);
  EXPECT_NEAR(b.l, 4.0, 1e-12);
  EXPECT_NEAR(b.theta, 0.2, 1e-12);
}

TEST(ObjectClass, NamesRoundTrip) {
  for (auto c : {ObjectClass::kCar, ObjectClass::kPedestrian, ObjectClass::kCyclist}) {
    ObjectClass back;
    ASSERT_TRUE(parse_class(class_name(c), back));
    EXPECT_EQ(back, c);
  }
  ObjectClass dummy;
  EXPECT_FALSE(parse_class("Van", dummy));
}
