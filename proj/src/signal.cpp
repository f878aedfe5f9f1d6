#include "dcn/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace dcn {

namespace {

struct DftBasis {
  Tensor cosine;  // [N, bins], window folded in
  Tensor sine;    // [N, bins], negated and windowed
};

const DftBasis& dft_basis(std::size_t n, WindowKind window) {
  thread_local std::map<std::pair<std::size_t, WindowKind>, DftBasis> cache;
  auto key = std::make_pair(n, window);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const std::size_t bins = n / 2 + 1;
  const std::vector<double> w = analysis_window(window, n);
  std::vector<double> c(n * bins);
  std::vector<double> s(n * bins);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t f = 0; f < bins; ++f) {
      // reduce the phase index first to keep the angle small
      const std::size_t phase = (f * k) % n;
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(phase) / static_cast<double>(n);
      c[k * bins + f] = w[k] * std::cos(angle);
      s[k * bins + f] = -w[k] * std::sin(angle);
    }
  }
  // sin is exactly zero for DC and Nyquist; cos(pi) rounding is exact already
  for (std::size_t k = 0; k < n; ++k) {
    s[k * bins] = 0.0;
    if (n % 2 == 0) s[k * bins + bins - 1] = 0.0;
  }
  DftBasis basis{Tensor({n, bins}, std::move(c)), Tensor({n, bins}, std::move(s))};
  return cache.emplace(key, std::move(basis)).first->second;
}

}  // namespace

std::size_t frame_count(std::size_t samples, std::size_t frame_shift) {
  return (samples + frame_shift - 1) / frame_shift;
}

FrameMatrix frame_signal(const Tensor& y, std::size_t frame_len, std::size_t frame_shift) {
  if (!y.defined() || y.numel() == 0) throw std::invalid_argument("frame_signal: empty signal");
  if (y.rank() != 1) throw std::invalid_argument("frame_signal: expected 1-D signal, got " + shape_string(y.shape()));
  if (frame_shift == 0 || frame_len < frame_shift) {
    throw std::invalid_argument("frame_signal: need frame_len >= frame_shift >= 1 (got L=" + std::to_string(frame_len) +
                                ", J=" + std::to_string(frame_shift) + ")");
  }
  const std::size_t m = y.numel();
  const std::size_t t_count = frame_count(m, frame_shift);
  auto in = y.data();
  std::vector<double> out(t_count * frame_len, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const std::size_t start = t * frame_shift;
    const std::size_t n = std::min(frame_len, m - start);
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(start), n, out.begin() + static_cast<std::ptrdiff_t>(t * frame_len));
  }
  Tensor frames = make_op_result("frame_signal", {t_count, frame_len}, std::move(out), {y},
                                 [m, t_count, frame_len, frame_shift](Node& self) {
                                   auto& g = self.inputs[0]->grad_buffer();
                                   for (std::size_t t = 0; t < t_count; ++t) {
                                     const std::size_t start = t * frame_shift;
                                     const std::size_t n = std::min(frame_len, m - start);
                                     for (std::size_t k = 0; k < n; ++k) g[start + k] += self.grad[t * frame_len + k];
                                   }
                                 });
  return FrameMatrix{std::move(frames), m, frame_len, frame_shift};
}

FrameMatrix frame_signal(std::span<const double> y, std::size_t frame_len, std::size_t frame_shift) {
  if (y.empty()) throw std::invalid_argument("frame_signal: empty signal");
  return frame_signal(Tensor({y.size()}, std::vector<double>(y.begin(), y.end())), frame_len, frame_shift);
}

Tensor overlap_add(const FrameMatrix& fm) {
  if (!fm.frames.defined() || fm.frames.rank() != 2 || fm.frames.extent(1) != fm.frame_len) {
    throw std::invalid_argument("overlap_add: frames tensor does not match frame_len");
  }
  if (fm.frame_shift == 0 || fm.frame_len < fm.frame_shift || fm.original_len == 0) {
    throw std::invalid_argument("overlap_add: invalid frame geometry");
  }
  const std::size_t m = fm.original_len;
  const std::size_t len = fm.frame_len;
  const std::size_t shift = fm.frame_shift;
  const std::size_t t_count = fm.num_frames();
  if (t_count != frame_count(m, shift)) {
    throw std::invalid_argument("overlap_add: " + std::to_string(t_count) + " frames cannot cover " + std::to_string(m) +
                                " samples at shift " + std::to_string(shift));
  }
  auto inv_coverage = std::make_shared<std::vector<double>>(m, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const std::size_t start = t * shift;
    const std::size_t n = std::min(len, m - start);
    for (std::size_t k = 0; k < n; ++k) (*inv_coverage)[start + k] += 1.0;
  }
  auto in = fm.frames.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const std::size_t start = t * shift;
    const std::size_t n = std::min(len, m - start);
    for (std::size_t k = 0; k < n; ++k) out[start + k] += in[t * len + k];
  }
  for (std::size_t i = 0; i < m; ++i) {
    out[i] /= (*inv_coverage)[i];
    (*inv_coverage)[i] = 1.0 / (*inv_coverage)[i];
  }
  return make_op_result("overlap_add", {m}, std::move(out), {fm.frames},
                        [inv_coverage, m, len, shift, t_count](Node& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t t = 0; t < t_count; ++t) {
                            const std::size_t start = t * shift;
                            const std::size_t n = std::min(len, m - start);
                            for (std::size_t k = 0; k < n; ++k) {
                              g[t * len + k] += self.grad[start + k] * (*inv_coverage)[start + k];
                            }
                          }
                        });
}

void StftConfig::validate() const {
  if (frame_len == 0 || frame_len % 2 != 0) {
    throw std::invalid_argument("stft: frame length must be even and positive, got " + std::to_string(frame_len));
  }
  if (hop == 0 || hop > frame_len) {
    throw std::invalid_argument("stft: hop must be in [1, frame_len], got " + std::to_string(hop));
  }
}

std::vector<double> analysis_window(WindowKind kind, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (kind == WindowKind::hann) {
    // periodic Hann
    for (std::size_t k = 0; k < length; ++k) {
      w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(length));
    }
  }
  return w;
}

StftCoefficients stft(const Tensor& y, const StftConfig& cfg) {
  cfg.validate();
  FrameMatrix fm = frame_signal(y, cfg.frame_len, cfg.hop);
  const DftBasis& basis = dft_basis(cfg.frame_len, cfg.window);
  return StftCoefficients{matmul(fm.frames, basis.cosine), matmul(fm.frames, basis.sine)};
}

Spectrogram magnitude_spectrogram(std::span<const double> y, const StftConfig& cfg) {
  NoGradGuard no_grad;
  StftCoefficients coeffs = stft(Tensor({y.size()}, std::vector<double>(y.begin(), y.end())), cfg);
  Spectrogram spec;
  spec.frames = coeffs.real.extent(0);
  spec.bins = coeffs.real.extent(1);
  spec.magnitude.resize(coeffs.real.numel());
  auto re = coeffs.real.data();
  auto im = coeffs.imag.data();
  for (std::size_t i = 0; i < spec.magnitude.size(); ++i) spec.magnitude[i] = std::hypot(re[i], im[i]);
  return spec;
}

void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols || rows == 0 || cols == 0) {
    throw std::invalid_argument("write_pgm: value count does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  std::vector<unsigned char> pixels(values.size(), 0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      pixels[i] = static_cast<unsigned char>(std::lround(255.0 * (values[i] - lo) / range));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Spectrogram export_spectrogram(std::span<const double> y, int sample_rate, int frame_ms,
                               const std::filesystem::path& out_path) {
  if (frame_ms != 32 && frame_ms != 64) {
    throw std::invalid_argument("spectrogram frame size must be 32 or 64 ms, got " + std::to_string(frame_ms));
  }
  if (sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
  if (y.empty()) throw std::invalid_argument("export_spectrogram: empty signal");
  StftConfig cfg;
  cfg.frame_len = static_cast<std::size_t>(sample_rate) * static_cast<std::size_t>(frame_ms) / 1000;
  cfg.frame_len += cfg.frame_len % 2;
  cfg.hop = cfg.frame_len / 2;
  cfg.window = WindowKind::hann;
  Spectrogram spec = magnitude_spectrogram(y, cfg);

  // image: row 0 is the highest bin
  std::vector<double> image(spec.frames * spec.bins);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t f = 0; f < spec.bins; ++f) {
      image[(spec.bins - 1 - f) * spec.frames + t] = 20.0 * std::log10(spec.magnitude[t * spec.bins + f] + 1e-8);
    }
  }
  write_pgm(out_path, spec.bins, spec.frames, image);

  std::filesystem::path csv_path = out_path;
  csv_path.replace_extension(".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot open " + csv_path.string() + " for writing");
  csv.imbue(std::locale::classic());
  csv.precision(17);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t f = 0; f < spec.bins; ++f) {
      if (f) csv << ',';
      csv << spec.magnitude[t * spec.bins + f];
    }
    csv << '\n';
  }
  if (!csv) throw std::runtime_error("failed writing " + csv_path.string());
  return spec;
}

}  // namespace dcn
