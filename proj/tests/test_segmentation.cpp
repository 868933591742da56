#include <gtest/gtest.h>

#include "occlex/segmentation.hpp"
#include "support/oracles.hpp"

using namespace occlex;

TEST(SegmentUniform, TemporalTenOver115Frames) {
  auto s = segment_uniform(115, 80, Axis::temporal, 10);
  ASSERT_EQ(s.n_components(), 10u);
  std::vector<std::size_t> widths;
  for (const auto& r : s.regions()) {
    widths.push_back(r.n_frames());
    EXPECT_EQ(r.band_start, 0u);
    EXPECT_EQ(r.band_end, 80u);
  }
  EXPECT_EQ(widths, (std::vector<std::size_t>{12, 12, 12, 12, 12, 11, 11, 11, 11, 11}));
  EXPECT_EQ(widths, oracle::widths(115, 10));
}

TEST(SegmentUniform, SpectralEvenSplitAndIdentity) {
  auto s = segment_uniform(115, 80, Axis::spectral, 10);
  for (std::size_t c = 0; c < 10; ++c) {
    EXPECT_EQ(s.region(c).band_start, 8 * c);
    EXPECT_EQ(s.region(c).n_bands(), 8u);
    EXPECT_EQ(s.region(c).n_frames(), 115u);
  }
  auto one = segment_uniform(115, 80, Axis::temporal, 1);
  ASSERT_EQ(one.n_components(), 1u);
  EXPECT_EQ(one.region(0), (Region{0, 115, 0, 80}));
}

TEST(SegmentUniform, TimeFrequencyGridIsRowMajor) {
  auto s = segment_uniform(115, 80, Axis::time_frequency, 5, 4);
  ASSERT_EQ(s.n_components(), 20u);
  EXPECT_EQ(s.region(0), (Region{0, 23, 0, 20}));
  EXPECT_EQ(s.region(1), (Region{0, 23, 20, 40}));
  EXPECT_EQ(s.region(4), (Region{23, 46, 0, 20}));
  EXPECT_EQ(s.axis(), Axis::time_frequency);
}

TEST(SegmentUniform, TooManyComponentsIsAnError) {
  EXPECT_THROW(segment_uniform(5, 80, Axis::temporal, 6), ValidationError);
  EXPECT_THROW(segment_uniform(115, 8, Axis::spectral, 9), ValidationError);
  EXPECT_THROW(segment_uniform(115, 80, Axis::time_frequency, 2, 81), ValidationError);
  EXPECT_THROW(segment_uniform(115, 80, Axis::temporal, 0), ValidationError);
}

TEST(SegmentUniform, PartitionPropertyExhaustive) {
  for (std::size_t f = 1; f <= 9; ++f)
    for (std::size_t b = 1; b <= 7; ++b)
      for (auto axis : {Axis::temporal, Axis::spectral, Axis::time_frequency})
        for (std::size_t n = 1; n <= 4; ++n) {
          std::size_t nf = axis == Axis::time_frequency ? 2 : 1;
          std::size_t along = axis == Axis::spectral ? b : f;
          if (n > along || (axis == Axis::time_frequency && nf > b)) continue;
          auto s = segment_uniform(f, b, axis, n, nf);
          std::size_t area = 0;
          for (const auto& r : s.regions()) area += r.area();
          ASSERT_EQ(area, f * b);
          for (std::size_t t = 0; t < f; ++t)
            for (std::size_t k = 0; k < b; ++k) {
              std::size_t hits = 0;
              for (const auto& r : s.regions()) hits += r.contains(t, k);
              ASSERT_EQ(hits, 1u);
              ASSERT_TRUE(s.region(s.component_of(t, k)).contains(t, k));
            }
          // Sizes along the split axis differ by at most one, larger first.
          for (std::size_t c = 1; c < s.n_components(); ++c) {
            const auto &p = s.region(c - 1), &q = s.region(c);
            if (axis == Axis::temporal) {
              EXPECT_LE(q.n_frames(), p.n_frames());
              EXPECT_LE(p.n_frames() - q.n_frames(), 1u);
              EXPECT_LT(p.frame_start, q.frame_start);
            } else if (axis == Axis::spectral) {
              EXPECT_LE(q.n_bands(), p.n_bands());
              EXPECT_LT(p.band_start, q.band_start);
            }
          }
          EXPECT_EQ(s, segment_uniform(f, b, axis, n, nf));
        }
}

TEST(SegmentAtBoundaries, Cuts) {
  auto s = segment_at_boundaries(115, 80, {50});
  ASSERT_EQ(s.n_components(), 2u);
  EXPECT_EQ(s.region(0), (Region{0, 50, 0, 80}));
  EXPECT_EQ(s.region(1), (Region{50, 115, 0, 80}));
  EXPECT_EQ(segment_at_boundaries(115, 80, {}).n_components(), 1u);
  EXPECT_THROW(segment_at_boundaries(115, 80, {10, 10}), ValidationError);
  EXPECT_THROW(segment_at_boundaries(115, 80, {20, 10}), ValidationError);
  EXPECT_THROW(segment_at_boundaries(115, 80, {0}), ValidationError);
  EXPECT_THROW(segment_at_boundaries(115, 80, {115}), ValidationError);
}

TEST(ComponentOf, Examples) {
  auto s = segment_uniform(115, 80, Axis::temporal, 10);
  EXPECT_EQ(s.component_of(0, 0), 0u);
  EXPECT_EQ(s.component_of(114, 79), 9u);
  EXPECT_EQ(s.component_of(12, 0), 1u);
  EXPECT_EQ(s.component_of(11, 79), 0u);
  EXPECT_THROW(s.component_of(115, 0), ValidationError);
  EXPECT_THROW(s.component_of(0, 80), ValidationError);
}

TEST(Scheme, ConstructorRejectsBadPartitions) {
  EXPECT_THROW(SegmentationScheme(Axis::temporal, 4, 1, {{0, 2, 0, 1}}), ValidationError);
  EXPECT_THROW(SegmentationScheme(Axis::temporal, 4, 1, {{0, 3, 0, 1}, {2, 3, 0, 1}}), ValidationError);
  EXPECT_THROW(SegmentationScheme(Axis::temporal, 4, 1, {{0, 5, 0, 1}}), ValidationError);
  EXPECT_THROW(SegmentationScheme(Axis::temporal, 4, 1, {}), ValidationError);
  EXPECT_NO_THROW(SegmentationScheme(Axis::temporal, 4, 1, {{2, 4, 0, 1}, {0, 2, 0, 1}}));
}

TEST(Scheme, JsonRoundTrip) {
  auto s = segment_uniform(115, 80, Axis::time_frequency, 3, 2);
  auto j = to_json(s);
  EXPECT_EQ(j["axis"], "tf");
  EXPECT_EQ(j["n_components"], 6);
  EXPECT_EQ(scheme_from_json(j), s);
  EXPECT_THROW(scheme_from_json(nlohmann::json::object()), FormatError);
}

TEST(Axis, Names) {
  EXPECT_EQ(axis_from_string("temporal"), Axis::temporal);
  EXPECT_EQ(axis_from_string("spectral"), Axis::spectral);
  EXPECT_EQ(axis_from_string("tf"), Axis::time_frequency);
  EXPECT_THROW(axis_from_string("diagonal"), UsageError);
}
