#include <gtest/gtest.h>

#include <set>

#include "occlex/perturbation.hpp"
#include "support/oracles.hpp"

using namespace occlex;

TEST(SampleMasks, FirstMaskIsAllOnes) {
  auto s = sample_masks(3, 1, 42);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.masks[0].bits, (std::vector<std::uint8_t>{1, 1, 1}));
  EXPECT_THROW(sample_masks(0, 5, 1), ValidationError);
  EXPECT_THROW(sample_masks(3, 0, 1), ValidationError);
}

TEST(SampleMasks, BitMeanConcentratesAtHalf) {
  auto s = sample_masks(10, 70000, 2024);
  double ones = 0;
  for (std::size_t i = 1; i < s.size(); ++i) ones += static_cast<double>(s.masks[i].count_present());
  double mean = ones / (10.0 * (s.size() - 1));
  EXPECT_NEAR(mean, 0.5, 0.01);
  // Each component separately, and no component pair is strongly correlated.
  for (std::size_t c = 0; c < 10; ++c) {
    double m = 0;
    for (std::size_t i = 1; i < s.size(); ++i) m += s.masks[i].bits[c];
    EXPECT_NEAR(m / (s.size() - 1), 0.5, 0.01);
  }
}

TEST(SampleMasks, DeterministicAndSeedSensitive) {
  auto a = sample_masks(10, 500, 5), b = sample_masks(10, 500, 5), c = sample_masks(10, 500, 6);
  EXPECT_EQ(a.masks, b.masks);
  EXPECT_NE(a.masks, c.masks);
  // A longer set extends a shorter one with the same seed.
  auto longer = sample_masks(10, 800, 5);
  EXPECT_TRUE(std::equal(a.masks.begin(), a.masks.end(), longer.masks.begin()));
}

TEST(SampleMasks, WideMasksUseAllWords) {
  auto s = sample_masks(130, 400, 9);
  for (std::size_t c : {0u, 63u, 64u, 127u, 129u}) {
    double m = 0;
    for (std::size_t i = 1; i < s.size(); ++i) m += s.masks[i].bits[c];
    EXPECT_GT(m, 100);
    EXPECT_LT(m, 300);
  }
}

TEST(SampleMasks, CoversMaskSpaceForSmallNc) {
  auto s = sample_masks(4, 2000, 77);
  std::set<std::uint64_t> seen;
  for (const auto& m : s.masks) seen.insert(m.packed());
  EXPECT_EQ(seen.size(), 16u);
}

TEST(ExhaustiveMasks, EnumeratesEachOnce) {
  auto s = exhaustive_masks(6);
  ASSERT_EQ(s.size(), 64u);
  EXPECT_EQ(s.masks[0], OcclusionMask::all_ones(6));
  std::set<std::uint64_t> seen;
  for (const auto& m : s.masks) seen.insert(m.packed());
  EXPECT_EQ(seen.size(), 64u);
}

TEST(FillValues, ScalarContents) {
  auto spec = MelSpectrogram::from_rows({{1, 3}, {5, 7}});
  auto scheme = segment_uniform(2, 2, Axis::temporal, 2);
  EXPECT_EQ(fill_values(ContentType::zero(), spec, scheme, 0), (std::vector<float>{0, 0}));
  EXPECT_EQ(fill_values(ContentType::mean_inp(), spec, scheme, 1), (std::vector<float>{4, 4}));
  EXPECT_EQ(fill_values(ContentType::min_inp(), spec, scheme, 1), (std::vector<float>{1, 1}));
  EXPECT_EQ(fill_values(ContentType::min_data(-9.5), spec, scheme, 0), (std::vector<float>{-9.5f, -9.5f}));
}

TEST(FillValues, MeanAndMinUseWholeExcerpt) {
  auto spec = oracle::random_spec(20, 6, 12);
  auto scheme = segment_uniform(20, 6, Axis::spectral, 3);
  long double sum = 0;
  float mn = spec.values()[0];
  for (float v : spec.values()) sum += v, mn = std::min(mn, v);
  for (std::size_t c = 0; c < 3; ++c) {
    for (float v : fill_values(ContentType::mean_inp(), spec, scheme, c))
      EXPECT_NEAR(v, static_cast<double>(sum / spec.size()), 1e-6);
    for (float v : fill_values(ContentType::min_inp(), spec, scheme, c)) EXPECT_EQ(v, mn);
  }
}

TEST(FillValues, GaussianOnStandardizedInput) {
  auto spec = oracle::random_spec(100, 100, 3, -1, 1, Scale::log_standardized);
  auto scheme = segment_uniform(100, 100, Axis::temporal, 1);
  auto v = fill_values(ContentType::gaussian_std(), spec, scheme, 0, {123, 4});
  ASSERT_EQ(v.size(), 10000u);
  double m = 0, s2 = 0;
  for (float x : v) m += x;
  m /= v.size();
  for (float x : v) s2 += (x - m) * (x - m);
  EXPECT_NEAR(m, 0.0, 0.05);
  EXPECT_NEAR(std::sqrt(s2 / v.size()), 1.0, 0.05);
}

TEST(FillValues, GaussianMappedIntoBandStatistics) {
  const std::size_t bands = 4;
  auto spec = oracle::random_spec(3000, bands, 5);
  auto stats = std::make_shared<BandStats>(BandStats{{-10, 0, 5, 20}, {0.5, 1, 2, 4}});
  auto scheme = segment_uniform(3000, bands, Axis::temporal, 1);
  auto v = fill_values(ContentType::gaussian_std(stats), spec, scheme, 0, {1, 1});
  for (std::size_t b = 0; b < bands; ++b) {
    double m = 0, s2 = 0;
    for (std::size_t t = 0; t < 3000; ++t) m += v[t * bands + b];
    m /= 3000;
    for (std::size_t t = 0; t < 3000; ++t) s2 += (v[t * bands + b] - m) * (v[t * bands + b] - m);
    EXPECT_NEAR(m, stats->mean[b], 4 * stats->stddev[b] / std::sqrt(3000.0));
    EXPECT_NEAR(std::sqrt(s2 / 3000), stats->stddev[b], 0.05 * stats->stddev[b]);
  }
}

TEST(FillValues, GaussianNeedsStatsOffStandardizedScale) {
  auto spec = oracle::random_spec(4, 4, 1);
  auto scheme = segment_uniform(4, 4, Axis::temporal, 2);
  EXPECT_THROW(fill_values(ContentType::gaussian_std(), spec, scheme, 0), ValidationError);
  auto wrong = std::make_shared<BandStats>(BandStats{{0}, {1}});
  EXPECT_THROW(fill_values(ContentType::gaussian_std(wrong), spec, scheme, 0), ShapeError);
}

TEST(FillValues, GaussianStreamsArePerSampleAndComponent) {
  auto spec = oracle::random_spec(10, 4, 1, -1, 1, Scale::log_standardized);
  auto scheme = segment_uniform(10, 4, Axis::temporal, 2);
  auto g = ContentType::gaussian_std();
  auto a = fill_values(g, spec, scheme, 0, {7, 3});
  EXPECT_EQ(a, fill_values(g, spec, scheme, 0, {7, 3}));
  EXPECT_NE(a, fill_values(g, spec, scheme, 0, {7, 4}));
  EXPECT_NE(a, fill_values(g, spec, scheme, 0, {8, 3}));
  EXPECT_NE(a, fill_values(g, spec, scheme, 1, {7, 3}));
}

TEST(MakeContent, NamesAndStats) {
  EXPECT_EQ(make_content("zero").kind, ContentKind::zero);
  EXPECT_EQ(make_content("mean_inp").kind, ContentKind::mean_inp);
  EXPECT_THROW(make_content("min_data"), UsageError);
  EXPECT_THROW(make_content("blur"), UsageError);
  DatasetStats st{-4.0, {{0, 1}, {1, 1}}, 3};
  auto c = make_content("min_data", &st);
  EXPECT_EQ(c.min_data_value, -4.0);
  EXPECT_TRUE(make_content("gaussian_std", &st).band_stats);
  EXPECT_EQ(c.name(), "min_data");
}

TEST(ApplyMask, IdentityAndAllZero) {
  auto spec = oracle::random_spec(115, 80, 2);
  auto scheme = segment_uniform(115, 80, Axis::temporal, 10);
  EXPECT_EQ(apply_mask(spec, scheme, OcclusionMask::all_ones(10), ContentType::zero()), spec);
  auto z = apply_mask(spec, scheme, OcclusionMask(std::vector<std::uint8_t>(10, 0)), ContentType::zero());
  for (float v : z.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(apply_mask(spec, scheme, OcclusionMask::all_ones(9), ContentType::zero()), ValidationError);
}

TEST(ApplyMask, OccludingTwoAndSevenChangesOnlyThoseFrames) {
  auto spec = oracle::random_spec(115, 80, 8, 1.0f, 2.0f);  // no bin equals the zero fill
  auto scheme = segment_uniform(115, 80, Axis::temporal, 10);
  OcclusionMask m({1, 1, 0, 1, 1, 1, 1, 0, 1, 1});
  auto z = apply_mask(spec, scheme, m, ContentType::zero());
  // Regions 2 and 7 span frames [24,36) and [82,93) under the remainder-first widths.
  for (std::size_t t = 0; t < 115; ++t) {
    bool occluded = (t >= 24 && t < 36) || (t >= 82 && t < 93);
    for (std::size_t b = 0; b < 80; ++b) ASSERT_EQ(z.at(t, b) != spec.at(t, b), occluded) << t;
  }
}

TEST(ApplyMask, ChangesExactlyTheOccludedCellsExhaustively) {
  auto spec = oracle::random_spec(7, 5, 4, 1.0f, 2.0f, Scale::log_standardized);
  auto stats = std::make_shared<BandStats>(BandStats{{0, 0, 0, 0, 0}, {1, 1, 1, 1, 1}});
  for (auto axis : {Axis::temporal, Axis::spectral, Axis::time_frequency}) {
    auto scheme = segment_uniform(7, 5, axis, 2, 2);
    const std::size_t nc = scheme.n_components();
    for (const auto& content : {ContentType::zero(), ContentType::mean_inp(), ContentType::gaussian_std()}) {
      for (std::uint64_t code = 0; code < (1u << nc); ++code) {
        std::vector<std::uint8_t> bits(nc);
        for (std::size_t c = 0; c < nc; ++c) bits[c] = (code >> c) & 1;
        OcclusionMask m(bits);
        auto z = apply_mask(spec, scheme, m, content, {3, code});
        for (std::size_t t = 0; t < 7; ++t)
          for (std::size_t b = 0; b < 5; ++b) {
            bool present = m.present(scheme.component_of(t, b));
            if (present) ASSERT_EQ(z.at(t, b), spec.at(t, b));
            else ASSERT_NE(z.at(t, b), spec.at(t, b));
          }
      }
    }
  }
}

TEST(ApplyMask, ScalarFillIsMaskOrderIndependent) {
  auto spec = oracle::random_spec(20, 3, 6);
  auto scheme = segment_uniform(20, 3, Axis::temporal, 4);
  Occluder occ(spec, scheme, ContentType::min_inp());
  auto a = occ.apply(OcclusionMask({0, 1, 0, 1}), {1, 0});
  auto b = occ.apply(OcclusionMask({1, 1, 0, 1}), {9, 5});
  for (std::size_t t = 10; t < 15; ++t) EXPECT_EQ(a.at(t, 0), b.at(t, 0));
  // Reusing an output buffer gives the same result as a fresh one.
  MelSpectrogram buf = oracle::random_spec(20, 3, 99);
  occ.apply(OcclusionMask({0, 1, 0, 1}), {1, 0}, buf);
  EXPECT_EQ(buf, a);
}

TEST(ApplyMask, ShapeMismatchIsShapeError) {
  auto spec = oracle::random_spec(20, 3, 6);
  EXPECT_THROW(Occluder(spec, segment_uniform(21, 3, Axis::temporal, 2), ContentType::zero()), ShapeError);
}
