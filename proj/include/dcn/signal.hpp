#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dcn/tensor.hpp"

namespace dcn {

// Rows are overlapping frames of a waveform: frames(t, k) = y[t * shift + k],
// zero past the end. Row count is ceil(original_len / frame_shift).
struct FrameMatrix {
  Tensor frames;  // [T, frame_len]
  std::size_t original_len = 0;
  std::size_t frame_len = 0;
  std::size_t frame_shift = 0;

  std::size_t num_frames() const { return frames.defined() ? frames.extent(0) : 0; }
};

std::size_t frame_count(std::size_t samples, std::size_t frame_shift);

// `y` must be 1-D. Differentiable with respect to `y`.
FrameMatrix frame_signal(const Tensor& y, std::size_t frame_len, std::size_t frame_shift);
FrameMatrix frame_signal(std::span<const double> y, std::size_t frame_len, std::size_t frame_shift);

// Sums frames at their offsets and divides each sample by the number of
// frames covering it, so overlap_add(frame_signal(y)) reproduces y.
Tensor overlap_add(const FrameMatrix& frames);

enum class WindowKind { rectangular, hann };

struct StftConfig {
  std::size_t frame_len = 512;
  std::size_t hop = 256;
  WindowKind window = WindowKind::hann;

  std::size_t num_bins() const { return frame_len / 2 + 1; }
  void validate() const;
};

struct StftCoefficients {
  Tensor real;  // [T, num_bins]
  Tensor imag;  // [T, num_bins]
};

std::vector<double> analysis_window(WindowKind kind, std::size_t length);

// One-sided DFT of each frame, computed as a matrix product so gradients
// reach `y`.
StftCoefficients stft(const Tensor& y, const StftConfig& cfg);

struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> magnitude;  // frames x bins, row-major
};

Spectrogram magnitude_spectrogram(std::span<const double> y, const StftConfig& cfg);

// Writes an 8-bit binary PGM of `values` (rows x cols, row-major) after
// min-max normalisation; a constant matrix maps to black.
void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
               std::span<const double> values);

// Log-magnitude spectrogram with a Hann window and 50% hop. The image has
// frequency on the vertical axis (low bins at the bottom); a CSV with the raw
// magnitudes (one row per frame) is written next to it with a .csv suffix.
Spectrogram export_spectrogram(std::span<const double> y, int sample_rate, int frame_ms,
                               const std::filesystem::path& out_path);

}  // namespace dcn
