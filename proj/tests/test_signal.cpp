#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dcn/signal.hpp"
#include "support.hpp"

using namespace dcn;
using dcn::testing::random_values;

TEST_CASE("framing follows the index formula") {
  std::vector<double> y{1, 2, 3, 4, 5, 6, 7, 8};
  FrameMatrix fm = frame_signal(std::span<const double>(y), 4, 2);
  REQUIRE(fm.num_frames() == 4);
  const std::vector<std::vector<double>> expected{{1, 2, 3, 4}, {3, 4, 5, 6}, {5, 6, 7, 8}, {7, 8, 0, 0}};
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t idx = t * 2 + k;
      const double oracle = idx < y.size() ? y[idx] : 0.0;
      CHECK(fm.frames.data()[t * 4 + k] == oracle);
      CHECK(fm.frames.data()[t * 4 + k] == expected[t][k]);
    }
  }
}

TEST_CASE("non-overlapping frames tile the signal") {
  std::vector<double> y{1, 2, 3, 4, 5, 6};
  FrameMatrix fm = frame_signal(std::span<const double>(y), 3, 3);
  CHECK(fm.num_frames() == 2);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(fm.frames.data()[i] == y[i]);
  Tensor back = overlap_add(fm);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(back.data()[i] == y[i]);

  std::vector<double> zeros(10, 0.0);
  FrameMatrix silent = frame_signal(std::span<const double>(zeros), 4, 2);
  for (double v : silent.frames.data()) CHECK(v == 0.0);
}

TEST_CASE("framing errors") {
  std::vector<double> empty;
  std::vector<double> y{1, 2, 3};
  CHECK_THROWS(frame_signal(std::span<const double>(empty), 4, 2));
  CHECK_THROWS(frame_signal(std::span<const double>(y), 2, 4));
  CHECK_THROWS(frame_signal(std::span<const double>(y), 2, 0));
}

TEST_CASE("overlap-add normalises coverage") {
  FrameMatrix fm{Tensor::full({6, 4}, 1.0), 12, 4, 2};
  Tensor flat = overlap_add(fm);
  for (double v : flat.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(4);
  std::vector<double> y = random_values(rng, 1000);
  Tensor back = overlap_add(frame_signal(std::span<const double>(y), 512, 256));
  REQUIRE(back.numel() == y.size());
  double err = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) err = std::max(err, std::abs(back.data()[i] - y[i]));
  CHECK(err < 1e-10);
}

TEST_CASE("framing and overlap-add gradients") {
  std::mt19937_64 rng(8);
  Tensor y = dcn::testing::random_tensor(rng, {37});
  auto r = dcn::testing::check_gradients(
      [&] { return dcn::testing::weighted_sum(frame_signal(y, 8, 3).frames, 1); }, {y});
  CHECK(r.max_rel_error < 1e-6);
  Tensor frames = dcn::testing::random_tensor(rng, {13, 8});
  auto r2 = dcn::testing::check_gradients(
      [&] { return dcn::testing::weighted_sum(overlap_add(FrameMatrix{frames, 37, 8, 3}), 2); }, {frames});
  CHECK(r2.max_rel_error < 1e-6);
}

TEST_CASE("stft of a constant and of a bin-aligned cosine") {
  const std::size_t n = 16;
  StftConfig cfg{n, n, WindowKind::rectangular};
  Tensor dc = Tensor::full({n * 4}, 0.5);
  StftCoefficients c = stft(dc, cfg);
  REQUIRE(c.real.shape() == Shape{4, n / 2 + 1});
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(c.real.data()[t * cfg.num_bins()] == doctest::Approx(0.5 * n));
    for (std::size_t f = 1; f < cfg.num_bins(); ++f) {
      CHECK(std::abs(c.real.data()[t * cfg.num_bins() + f]) < 1e-12);
      CHECK(std::abs(c.imag.data()[t * cfg.num_bins() + f]) < 1e-12);
    }
  }

  const std::size_t f0 = 3;
  std::vector<double> cosine(n * 2);
  for (std::size_t k = 0; k < cosine.size(); ++k) {
    cosine[k] = std::cos(2.0 * std::numbers::pi * static_cast<double>(f0 * k) / static_cast<double>(n));
  }
  StftCoefficients s = stft(Tensor({cosine.size()}, cosine), cfg);
  for (std::size_t f = 0; f < cfg.num_bins(); ++f) {
    const double re = s.real.data()[f];
    const double im = s.imag.data()[f];
    const double oracle = f == f0 ? n / 2.0 : 0.0;
    CHECK(std::abs(re - oracle) < 1e-10);
    CHECK(std::abs(im) < 1e-10);
  }
}

TEST_CASE("stft imaginary part vanishes at DC and Nyquist") {
  std::mt19937_64 rng(6);
  std::vector<double> y = random_values(rng, 700);
  StftCoefficients c = stft(Tensor({y.size()}, y), StftConfig{64, 16, WindowKind::hann});
  const std::size_t bins = 33;
  for (std::size_t t = 0; t < c.imag.extent(0); ++t) {
    CHECK(c.imag.data()[t * bins] == 0.0);
    CHECK(c.imag.data()[t * bins + bins - 1] == 0.0);
  }
}

TEST_CASE("stft parseval with non-overlapping rectangular frames") {
  const std::size_t n = 32;
  std::mt19937_64 rng(12);
  std::vector<double> y = random_values(rng, n * 5);
  StftCoefficients c = stft(Tensor({y.size()}, y), StftConfig{n, n, WindowKind::rectangular});
  const std::size_t bins = n / 2 + 1;
  for (std::size_t t = 0; t < 5; ++t) {
    double spectral = 0.0;
    for (std::size_t f = 0; f < bins; ++f) {
      const double re = c.real.data()[t * bins + f];
      const double im = c.imag.data()[t * bins + f];
      // bins strictly between DC and Nyquist appear twice in the full spectrum
      const double weight = (f == 0 || f == bins - 1) ? 1.0 : 2.0;
      spectral += weight * (re * re + im * im);
    }
    double energy = 0.0;
    for (std::size_t k = 0; k < n; ++k) energy += y[t * n + k] * y[t * n + k];
    CHECK(std::abs(spectral - n * energy) <= 1e-8 * n * energy);
  }
}

TEST_CASE("stft linearity and gradient") {
  std::mt19937_64 rng(13);
  std::vector<double> x = random_values(rng, 300);
  std::vector<double> z = random_values(rng, 300);
  std::vector<double> mix(300);
  for (std::size_t i = 0; i < 300; ++i) mix[i] = 2.5 * x[i] - 0.75 * z[i];
  const StftConfig cfg{64, 32, WindowKind::hann};
  StftCoefficients sx = stft(Tensor({300}, x), cfg);
  StftCoefficients sz = stft(Tensor({300}, z), cfg);
  StftCoefficients sm = stft(Tensor({300}, mix), cfg);
  for (std::size_t i = 0; i < sm.real.numel(); ++i) {
    CHECK(std::abs(sm.real.data()[i] - (2.5 * sx.real.data()[i] - 0.75 * sz.real.data()[i])) < 1e-10);
    CHECK(std::abs(sm.imag.data()[i] - (2.5 * sx.imag.data()[i] - 0.75 * sz.imag.data()[i])) < 1e-10);
  }

  Tensor y = dcn::testing::random_tensor(rng, {100});
  auto r = dcn::testing::check_gradients([&] { return sum(abs(stft(y, StftConfig{16, 8, WindowKind::hann}).real)); },
                                         {y}, 1e-6);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("stft config validation") {
  CHECK_THROWS(StftConfig({15, 4, WindowKind::hann}).validate());
  CHECK_THROWS(StftConfig({16, 32, WindowKind::hann}).validate());
  CHECK_NOTHROW(StftConfig({16, 16, WindowKind::rectangular}).validate());
}

namespace {

std::vector<std::vector<double>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("spectrogram export") {
  const auto dir = std::filesystem::temp_directory_path() / "dcn_test_spectrogram";
  std::filesystem::create_directories(dir);

  std::vector<double> silence(16000, 0.0);
  export_spectrogram(silence, 16000, 32, dir / "silence.pgm");
  {
    std::ifstream in(dir / "silence.pgm", std::ios::binary);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    std::vector<unsigned char> pixels(w * h);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    CHECK(magic == "P5");
    CHECK(maxval == 255);
    CHECK(std::all_of(pixels.begin(), pixels.end(), [&](unsigned char p) { return p == pixels.front(); }));
  }

  // Linear chirp from 200 Hz to 6 kHz: the per-frame peak bin never falls.
  const int sr = 16000;
  std::vector<double> chirp(sr * 2);
  const double f0 = 200.0, f1 = 6000.0, dur = 2.0;
  for (std::size_t i = 0; i < chirp.size(); ++i) {
    const double t = static_cast<double>(i) / sr;
    chirp[i] = 0.5 * std::sin(2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t));
  }
  Spectrogram s32 = export_spectrogram(chirp, sr, 32, dir / "chirp32.pgm");
  Spectrogram s64 = export_spectrogram(chirp, sr, 64, dir / "chirp64.pgm");
  auto rows = read_csv(dir / "chirp32.csv");
  REQUIRE(rows.size() == s32.frames);
  std::size_t previous = 0;
  // the first and last frames straddle the signal edges
  for (std::size_t t = 1; t + 1 < rows.size(); ++t) {
    REQUIRE(rows[t].size() == s32.bins);
    const std::size_t peak = static_cast<std::size_t>(std::max_element(rows[t].begin(), rows[t].end()) - rows[t].begin());
    CHECK(peak >= previous);
    previous = peak;
  }
  CHECK(s32.bins == 257);
  CHECK(s64.bins == 513);
  CHECK(s64.bins - 1 == 2 * (s32.bins - 1));
  CHECK_THROWS(export_spectrogram(chirp, sr, 48, dir / "bad.pgm"));
  CHECK_THROWS(export_spectrogram(chirp, sr, 32, dir / "missing_dir" / "x.pgm"));
  std::filesystem::remove_all(dir);
}
