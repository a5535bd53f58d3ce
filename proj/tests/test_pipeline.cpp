// SPDX-License-Identifier: Apache-2.0
//
// Post-processing of mask logits into exclusive labels, click snapping and
// the end-to-end segment() entry point.

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "clickseg/pipeline.hpp"
#include "test_util.hpp"

using namespace clickseg;

namespace {

StageOutput<double> stage(std::size_t n, std::size_t k, std::size_t nc = 3) {
  StageOutput<double> s;
  s.mask_logits = Tensor<double>(n, k);
  s.class_logits = Tensor<double>(nc, k);
  return s;
}

ClickSet clicks_with_groups(const std::vector<int>& groups) {
  ClickSet c;
  for (int g : groups) c.clicks.push_back(Click{{0, 0, 0}, g, -1, -1});
  return c;
}

PointCloud two_blobs(std::size_t n, std::uint64_t seed) {
  PointCloud cloud;
  auto a = clickseg::testing::random_points(n / 2, seed, 0.0, 1.0);
  auto b = clickseg::testing::random_points(n - n / 2, seed + 1, 3.0, 4.0);
  cloud.positions = a;
  cloud.positions.insert(cloud.positions.end(), b.begin(), b.end());
  return cloud;
}

}  // namespace

TEST(Finalize, TwoQueryExample) {
  auto s = stage(2, 2);
  s.mask_logits(0, 0) = 2.0;
  s.mask_logits(0, 1) = 0.1;
  s.mask_logits(1, 0) = 0.3;
  s.mask_logits(1, 1) = 4.0;
  s.class_logits(2, 0) = 1.0;
  s.class_logits(1, 1) = 1.0;
  const auto r = finalize(s, clicks_with_groups({0, 1}));
  EXPECT_EQ(r.point_instance, (std::vector<int>{0, 1}));
  EXPECT_EQ(r.point_class, (std::vector<int>{2, 1}));
  EXPECT_EQ(r.groups, (std::vector<int>{0, 1}));
  EXPECT_EQ(r.group_class, (std::vector<int>{2, 1}));
}

TEST(Finalize, AllNegativeIsBackground) {
  auto s = stage(5, 3);
  s.mask_logits.fill(-5.0);
  const auto r = finalize(s, clicks_with_groups({0, 1, 2}));
  EXPECT_EQ(r.point_instance, std::vector<int>(5, -1));
  EXPECT_EQ(r.point_class, std::vector<int>(5, -1));
  EXPECT_EQ(r.groups.size(), 3u);
}

TEST(Finalize, ZeroLogitIsForeground) {
  auto s = stage(1, 1);
  EXPECT_EQ(finalize(s, clicks_with_groups({4})).point_instance, std::vector<int>{4});
}

TEST(Finalize, GroupMembersUnionIntoOneInstance) {
  auto s = stage(4, 3);
  s.mask_logits.fill(-1.0);
  s.mask_logits(0, 0) = 3.0;
  s.mask_logits(1, 1) = 3.0;
  s.mask_logits(2, 2) = 3.0;
  const auto r = finalize(s, clicks_with_groups({7, 7, 2}));
  EXPECT_EQ(r.point_instance, (std::vector<int>{7, 7, 2, -1}));
  EXPECT_EQ(r.groups, (std::vector<int>{2, 7}));
}

TEST(Finalize, MergingGroupsNeverShrinksTheUnion) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = stage(60, 4);
    for (auto& v : s.mask_logits.storage()) v = nd(rng);
    const auto split = finalize(s, clicks_with_groups({0, 1, 2, 3}));
    const auto merged = finalize(s, clicks_with_groups({0, 0, 2, 3}));
    const auto count = [](const SegmentationResult& r, int g) {
      return std::count(r.point_instance.begin(), r.point_instance.end(), g);
    };
    EXPECT_EQ(count(merged, 0), count(split, 0) + count(split, 1));
    EXPECT_EQ(count(merged, 2), count(split, 2));
  }
}

TEST(Finalize, TiesGoToTheSmallerQuery) {
  auto s = stage(2, 3);
  s.mask_logits.fill(1.5);
  s.mask_logits(1, 0) = -1.0;
  const auto r = finalize(s, clicks_with_groups({5, 3, 9}));
  EXPECT_EQ(r.point_instance, (std::vector<int>{5, 3}));
}

TEST(Finalize, GroupClassComesFromMostConfidentMember) {
  auto s = stage(2, 2, 3);
  s.mask_logits(0, 0) = 1.0;
  s.mask_logits(1, 1) = 1.0;
  s.mask_logits(0, 1) = -1.0;
  s.mask_logits(1, 0) = -1.0;
  s.class_logits(0, 0) = 0.5;   // member 0: weakly class 0
  s.class_logits(2, 1) = 6.0;   // member 1: confidently class 2
  const auto r = finalize(s, clicks_with_groups({1, 1}));
  EXPECT_EQ(r.point_class, (std::vector<int>{0, 2}));
  ASSERT_EQ(r.group_class.size(), 1u);
  EXPECT_EQ(r.group_class[0], 2);
  const double expected = std::exp(6.0) / (std::exp(6.0) + 2.0);
  EXPECT_NEAR(r.group_confidence[0], expected, 1e-12);
}

TEST(Finalize, MismatchedColumnsThrow) {
  EXPECT_THROW(finalize(stage(3, 2), clicks_with_groups({0})), Error);
}

TEST(GroupMembers, AscendingGroups) {
  const auto gm = group_members(clicks_with_groups({4, 1, 4, 0}));
  ASSERT_EQ(gm.size(), 3u);
  EXPECT_EQ(gm[0], (std::pair<int, std::vector<int>>{0, {3}}));
  EXPECT_EQ(gm[1], (std::pair<int, std::vector<int>>{1, {1}}));
  EXPECT_EQ(gm[2], (std::pair<int, std::vector<int>>{4, {0, 2}}));
}

TEST(SnapClicks, MovesToNearestPoint) {
  PointCloud cloud;
  cloud.positions = {{0, 0, 0}, {1, 0, 0}, {0, 2, 0}};
  ClickSet c = clicks_with_groups({0, 1});
  c.clicks[0].position = {0.9, 0.2, 0.0};
  c.clicks[1].position = {0.1, 1.5, 0.0};
  const auto snapped = snap_clicks(cloud, c);
  EXPECT_EQ(snapped.clicks[0].point_index, 1);
  EXPECT_EQ(snapped.clicks[0].position, (Vec3{1, 0, 0}));
  EXPECT_EQ(snapped.clicks[1].point_index, 2);
  EXPECT_EQ(snapped.clicks[1].group, 1);
}

class Segment : public ::testing::Test {
 protected:
  ModelConfig cfg = small_model_config();
  Model<double> model{cfg};
  PointCloud cloud = two_blobs(200, 5);

  ClickSet clicks(const std::vector<std::pair<int, int>>& point_and_group) const {
    ClickSet c;
    for (auto [p, g] : point_and_group)
      c.clicks.push_back(Click{cloud.positions[static_cast<std::size_t>(p)], g, -1, p});
    return c;
  }
};

TEST_F(Segment, EmptyClicksThrow) {
  try {
    segment(cloud, ClickSet{}, model);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("at least one click required"), std::string::npos);
  }
}

TEST_F(Segment, CoverageAndExclusivity) {
  const auto r = segment(cloud, clicks({{3, 0}, {150, 1}}), model);
  ASSERT_EQ(r.point_instance.size(), cloud.size());
  ASSERT_EQ(r.point_class.size(), cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_TRUE(r.point_instance[i] == -1 || r.point_instance[i] == 0 || r.point_instance[i] == 1);
    EXPECT_EQ(r.point_instance[i] == -1, r.point_class[i] == -1);
  }
}

TEST_F(Segment, Deterministic) {
  const auto c = clicks({{3, 0}, {150, 1}});
  EXPECT_EQ(segment(cloud, c, model), segment(cloud, c, model));
}

TEST_F(Segment, DuplicateClickIsIdempotent) {
  EXPECT_EQ(segment(cloud, clicks({{3, 0}, {150, 1}}), model),
            segment(cloud, clicks({{3, 0}, {3, 0}, {150, 1}}), model));
}

TEST_F(Segment, ClickOrderDoesNotMatter) {
  // Labels must agree exactly; confidences may differ by summation order.
  const auto a = segment(cloud, clicks({{3, 0}, {150, 1}, {40, 2}}), model);
  const auto b = segment(cloud, clicks({{40, 2}, {3, 0}, {150, 1}}), model);
  EXPECT_EQ(a.point_instance, b.point_instance);
  EXPECT_EQ(a.point_class, b.point_class);
  EXPECT_EQ(a.groups, b.groups);
  EXPECT_EQ(a.group_class, b.group_class);
  ASSERT_EQ(a.group_confidence.size(), b.group_confidence.size());
  for (std::size_t g = 0; g < a.group_confidence.size(); ++g)
    EXPECT_NEAR(a.group_confidence[g], b.group_confidence[g], 1e-12);
}

TEST(UniqueClicks, DropsRepeatsWithinAGroup) {
  ClickSet c = clicks_with_groups({0, 0, 1, 0});
  c.clicks[3].position = {1, 0, 0};
  const auto u = unique_clicks(c);
  ASSERT_EQ(u.size(), 3u);
  EXPECT_EQ(u.clicks[1].group, 1);
  EXPECT_EQ(u.clicks[2].position, (Vec3{1, 0, 0}));
}

TEST_F(Segment, ReducedScenesCopyLabelsBack) {
  ModelConfig small = cfg;
  small.max_points = 60;
  Model<double> m(small);
  const auto prepared = prepare_scene(cloud, small);
  ASSERT_TRUE(prepared.reduced());
  EXPECT_LE(prepared.size(), 60u);
  EXPECT_EQ(prepared.input_size, cloud.size());
  const auto c = clicks({{3, 0}, {150, 1}});
  const auto r = segment(prepared, c, m);
  EXPECT_EQ(r, segment(cloud, c, m));
  ASSERT_EQ(r.point_instance.size(), cloud.size());
  // Points sharing a reduced point share its label.
  std::map<int, std::pair<int, int>> seen;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto label = std::make_pair(r.point_instance[i], r.point_class[i]);
    const auto [it, fresh] = seen.emplace(prepared.point_map[i], label);
    if (!fresh) {
      EXPECT_EQ(it->second, label);
    }
  }
}
