#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "vpdet/config.hpp"

using namespace vpdet;

TEST(Config, DefaultsValidate) {
  const PipelineConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.fusion, FusionMode::kEarly);
  EXPECT_EQ(cfg.sampling.n_bins, 10);
}

TEST(Config, ParsesKeysCommentsAndLists) {
  const auto cfg = parse_config(
      "# detector\n"
      "fusion = gated\n"
      "voxel_size = 0.1   # coarse\n"
      "fps_k = 64\n"
      "fps_mode = prose\n"
      "aug_rotation_deg = 90\n"
      "aug_flip = off\n"
      "difficulties = easy, 2\n"
      "min_points = Car:5, Pedestrian:3\n"
      "seed = 42\n"
      "fps_seed = 7\n",
      "mem");
  EXPECT_EQ(cfg.fusion, FusionMode::kGated);
  EXPECT_EQ(cfg.voxel_size, 0.1);
  EXPECT_EQ(cfg.fps.k, 64);
  EXPECT_EQ(cfg.fps.mode, FpsMode::kProseConsistent);
  EXPECT_NEAR(cfg.augment.max_rotation, kPi / 2, 1e-15);
  EXPECT_FALSE(cfg.augment.flip);
  EXPECT_EQ(cfg.load.difficulties, (std::set<Difficulty>{Difficulty::kEasy, Difficulty::kHard}));
  EXPECT_EQ(cfg.load.min_points.at(ObjectClass::kPedestrian), 3);
  EXPECT_EQ(cfg.fps_seed_value(), 7u);
  EXPECT_NE(cfg.voxel_seed_value(), cfg.sample_seed_value());
  EXPECT_EQ(parse_config("", "mem").seed, 0u);
}

TEST(Config, SmallFixtureTextMatchesStruct) {
  const auto a = parse_config(fixture::kSmallConfigText, "mem");
  const auto b = fixture::small_config();
  EXPECT_EQ(a.range.x_max, b.range.x_max);
  EXPECT_EQ(a.range.y_min, b.range.y_min);
  EXPECT_EQ(a.bev_shape().width, b.bev_shape().width);
}

TEST(Config, ErrorsCarryTheLine) {
  auto line_of = [](const std::string& text) {
    try {
      parse_config(text, "c.txt");
    } catch (const ParseError& e) {
      EXPECT_EQ(e.file(), "c.txt");
      return e.line();
    }
    return -1;
  };
  EXPECT_EQ(line_of("fusion = early\nbogus_key = 3\n"), 2);
  EXPECT_EQ(line_of("voxel_size = abc\n"), 1);
  EXPECT_EQ(line_of("\n\nno equals sign\n"), 3);
  EXPECT_EQ(line_of("fusion = sideways\n"), 1);
  EXPECT_EQ(line_of("min_points = Truck:4\n"), 1);
  EXPECT_EQ(line_of("aug_flip = maybe\n"), 1);
  // Validation runs after all keys are read.
  EXPECT_EQ(line_of("x_min = 50\nx_max = 10\n"), 0);
  EXPECT_EQ(line_of("voxel_size = -1\n"), 0);
  EXPECT_EQ(line_of("attn_d = 10\nattn_heads = 4\n"), 0);
}

TEST(Config, FusionNames) {
  for (auto m : {FusionMode::kEarly, FusionMode::kLate, FusionMode::kGated})
    EXPECT_EQ(parse_fusion(fusion_name(m)), m);
  EXPECT_EQ(parse_fusion("late_1x1"), FusionMode::kLate);
  EXPECT_FALSE(parse_fusion("mid"));
}

TEST(Config, RangeContainsIsHalfOpen) {
  PointCloudRange r;
  EXPECT_TRUE(r.contains(Vec3(0, 0, 0)));
  EXPECT_FALSE(r.contains(Vec3(-0.01, 0, 0)));
  EXPECT_FALSE(r.contains(Vec3(10, 0, 5)));
}
