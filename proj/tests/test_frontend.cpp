#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "occlex/frontend.hpp"
#include "support/oracles.hpp"

using namespace occlex;

namespace {

std::vector<float> sine(double hz, double seconds, double amp, std::uint32_t sr = 22050) {
  std::vector<float> s(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / sr));
  return s;
}

std::string raw_wav(std::uint16_t format, std::uint16_t bits, std::uint16_t channels, const std::string& data) {
  std::string out = "RIFF";
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(36 + data.size()));
  out += "WAVEfmt ";
  le::put<std::uint32_t>(out, 16);
  le::put<std::uint16_t>(out, format);
  le::put<std::uint16_t>(out, channels);
  le::put<std::uint32_t>(out, 8000);
  le::put<std::uint32_t>(out, 8000 * channels * bits / 8);
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(channels * bits / 8));
  le::put<std::uint16_t>(out, bits);
  out += "data";
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  return out + data;
}

}  // namespace

TEST(Wav, SixteenBitMonoSine) {
  // Integer samples written directly, so the expected peak is exact.
  const std::int16_t amp = 12000;
  std::string data;
  std::int16_t peak = 0;
  for (std::size_t i = 0; i < 22050; ++i) {
    auto v = static_cast<std::int16_t>(std::lround(amp * std::sin(2 * std::numbers::pi * 440.0 * i / 22050)));
    peak = std::max<std::int16_t>(peak, v);
    le::put<std::int16_t>(data, v);
  }
  auto bytes = raw_wav(1, 16, 1, data);
  bytes.replace(24, 4, std::string("\x22\x56\x00\x00", 4));  // 22050 Hz
  auto w = decode_wav(bytes);
  EXPECT_EQ(w.sample_rate_hz, 22050u);
  ASSERT_EQ(w.samples.size(), 22050u);
  EXPECT_FLOAT_EQ(*std::max_element(w.samples.begin(), w.samples.end()), peak / 32768.0f);
}

TEST(Wav, StereoWithIdenticalChannelsEqualsMono) {
  auto mono = sine(440, 0.1, 0.5);
  std::vector<float> stereo;
  for (float s : mono) stereo.insert(stereo.end(), {s, s});
  for (auto enc : {WavEncoding::pcm16, WavEncoding::float32}) {
    auto a = decode_wav(encode_wav(mono, 22050, 1, enc));
    auto b = decode_wav(encode_wav(stereo, 22050, 2, enc));
    EXPECT_EQ(a.samples, b.samples);
  }
}

TEST(Wav, FloatRoundTripIsExact) {
  auto s = sine(1000, 0.05, 0.9);
  EXPECT_EQ(decode_wav(encode_wav(s, 44100, 1, WavEncoding::float32)).samples, s);
}

TEST(Wav, MuLawAndEightBitAreUnsupported) {
  std::string data(100, '\x7f');
  try {
    decode_wav(raw_wav(7, 8, 1, data));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
  }
  EXPECT_THROW(decode_wav(raw_wav(1, 8, 1, data)), FormatError);
  EXPECT_THROW(decode_wav("not a wav file at all"), FormatError);
}

TEST(Features, FrameCountArithmetic) {
  FeatureConfig cfg;
  EXPECT_EQ(cfg.frames_for(1024), 1u);
  EXPECT_EQ(cfg.frames_for(1023), 0u);
  EXPECT_EQ(cfg.frames_for(1024 + 315), 2u);
  // One 115-frame excerpt needs 1024 + 114*315 = 36934 samples (~1.675 s);
  // 1.643 s (36228 samples) yields only 112 frames at these defaults.
  EXPECT_EQ(cfg.samples_for(115), 36934u);
  EXPECT_EQ(cfg.frames_for(36934), 115u);
  EXPECT_EQ(cfg.frames_for(36933), 114u);
  EXPECT_EQ(cfg.frames_for(static_cast<std::size_t>(1.643 * 22050)), 112u);
  auto mel = extract_mel(std::vector<float>(36934, 0.0f), cfg);
  EXPECT_EQ(mel.n_frames(), 115u);
  EXPECT_EQ(mel.n_bands(), 80u);
  EXPECT_FLOAT_EQ(mel.hop_seconds(), 315.0f / 22050.0f);
  EXPECT_EQ(mel.scale(), Scale::log);
  EXPECT_EQ(slice_excerpts(mel).size(), 1u);
}

TEST(Features, SilenceIsLogFloorEverywhere) {
  FeatureConfig cfg;
  auto mel = extract_mel(std::vector<float>(5000, 0.0f), cfg);
  for (float v : mel.values()) EXPECT_EQ(v, static_cast<float>(std::log(1e-7)));
}

TEST(Features, TooShortInputNamesMinimum) {
  try {
    extract_mel(std::vector<float>(100, 0.0f));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("1024"), std::string::npos);
  }
}

TEST(Features, ConfigValidation) {
  FeatureConfig c;
  c.fmax_hz = 20000;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.hop_length = 2048;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.log_floor = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Filterbank, NonNegativeUnitAreaFilters) {
  MelFilterbank bank{FeatureConfig{}};
  ASSERT_EQ(bank.n_bands(), 80u);
  for (std::size_t m = 0; m < 80; ++m) {
    double sum = 0;
    for (double w : bank.weights(m)) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  // Centres are equally spaced on the mel scale.
  double step = hz_to_mel(bank.center_hz(1)) - hz_to_mel(bank.center_hz(0));
  for (std::size_t m = 1; m < 80; ++m)
    EXPECT_NEAR(hz_to_mel(bank.center_hz(m)) - hz_to_mel(bank.center_hz(m - 1)), step, 1e-9);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
}

TEST(Features, SineAtBandCentrePeaksInThatBand) {
  FeatureConfig cfg;
  MelFilterbank bank(cfg);
  for (std::size_t band = 35; band < 80; band += 4) {
    auto mel = extract_mel(sine(bank.center_hz(band), 0.5, 0.5), cfg);
    std::vector<double> avg(cfg.n_bands, 0.0);
    for (std::size_t t = 0; t < mel.n_frames(); ++t)
      for (std::size_t b = 0; b < cfg.n_bands; ++b) avg[b] += mel.at(t, b);
    auto arg = static_cast<std::size_t>(std::max_element(avg.begin(), avg.end()) - avg.begin());
    EXPECT_EQ(arg, band) << "centre " << bank.center_hz(band) << " Hz";
  }
}

TEST(Features, MonotoneInInputEnergy) {
  std::mt19937 gen(3);
  std::normal_distribution<float> n(0.0f, 0.1f);
  std::vector<float> s(8000);
  for (auto& x : s) x = n(gen);
  auto base = extract_mel(s);
  for (float c : {1.5f, 2.0f, 10.0f}) {
    std::vector<float> scaled(s);
    for (auto& x : scaled) x *= c;
    auto louder = extract_mel(scaled);
    for (std::size_t i = 0; i < base.size(); ++i) ASSERT_GE(louder.values()[i], base.values()[i]);
  }
}

TEST(Standardize, HandExamples) {
  BandStats st{{3.0}, {2.0}};
  auto out = standardize(MelSpectrogram(1, 1, {5.0f}, 0.0f, Scale::log), st);
  EXPECT_FLOAT_EQ(out.at(0, 0), 1.0f);
  EXPECT_EQ(out.scale(), Scale::log_standardized);

  auto s = oracle::random_spec(6, 3, 4);
  auto id = standardize(s, BandStats{{0, 0, 0}, {1, 1, 1}});
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(id.values()[i], s.values()[i]);
}

TEST(Standardize, SelfStatsGiveZeroMeanUnitVariance) {
  auto s = oracle::random_spec(200, 5, 9);
  std::vector<MelSpectrogram> one{s};
  auto z = standardize(s, dataset_stats(one).band_stats);
  for (std::size_t b = 0; b < 5; ++b) {
    double m = 0, v = 0;
    for (std::size_t t = 0; t < 200; ++t) m += z.at(t, b);
    m /= 200;
    for (std::size_t t = 0; t < 200; ++t) v += (z.at(t, b) - m) * (z.at(t, b) - m);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v / 200, 1.0, 1e-5);
  }
}

TEST(Standardize, InverseAndErrors) {
  auto s = oracle::random_spec(10, 4, 11);
  BandStats st{{1, -2, 0.5, 3}, {0.5, 2, 1, 4}};
  auto back = destandardize(standardize(s, st), st);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(back.values()[i], s.values()[i], 1e-6);
  EXPECT_THROW(standardize(s.with_scale(Scale::linear), st), Error);
  EXPECT_THROW(standardize(s, BandStats{{0}, {1}}), Error);
  EXPECT_THROW(destandardize(s, st), Error);
}

TEST(Excerpts, WindowArithmetic) {
  auto one = slice_excerpts(oracle::random_spec(115, 2, 1), 57, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].center_frame_index, 57u);
  auto three = slice_excerpts(oracle::random_spec(117, 2, 1), 57, 1);
  ASSERT_EQ(three.size(), 3u);
  EXPECT_EQ(three[2].center_frame_index, 59u);
  EXPECT_EQ(three[1].spec.n_frames(), 115u);
  auto singles = slice_excerpts(oracle::random_spec(5, 2, 1), 0, 1);
  ASSERT_EQ(singles.size(), 5u);
  EXPECT_EQ(singles[3].spec.n_frames(), 1u);
  EXPECT_EQ(excerpt_frames(), 115u);
}

TEST(Excerpts, CountFormulaAndContent) {
  for (std::size_t n : {115u, 116u, 150u, 301u})
    for (std::size_t ctx : {0u, 3u, 57u})
      for (std::size_t stride : {1u, 2u, 7u}) {
        auto spec = oracle::random_spec(n, 2, n + ctx + stride);
        auto ex = slice_excerpts(spec, ctx, stride);
        ASSERT_EQ(ex.size(), (n - (2 * ctx + 1)) / stride + 1);
        for (const auto& e : ex)
          for (std::size_t t = 0; t < e.spec.n_frames(); ++t)
            ASSERT_EQ(e.spec.at(t, 1), spec.at(e.center_frame_index - ctx + t, 1));
      }
}

TEST(Excerpts, TooShortWarnsAndReturnsEmpty) {
  std::vector<std::string> warnings;
  auto old = set_warning_handler([&](const std::string& m) { warnings.push_back(m); });
  auto ex = slice_excerpts(oracle::random_spec(100, 2, 1), 57, 1, "song");
  set_warning_handler(old);
  EXPECT_TRUE(ex.empty());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("song"), std::string::npos);
}

TEST(Labels, ParseAndLookup) {
  auto l = parse_labels("0.0 nosing\n1.5 sing\n\n3.25 nosing\n");
  ASSERT_EQ(l.size(), 3u);
  EXPECT_FALSE(vocal_at(l, 1.0));
  EXPECT_TRUE(vocal_at(l, 1.5));
  EXPECT_TRUE(vocal_at(l, 3.0));
  EXPECT_FALSE(vocal_at(l, 10.0));
  EXPECT_THROW(parse_labels("0.0 humming\n"), FormatError);
}
