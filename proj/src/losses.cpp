#include "dcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dcn {

namespace {

void require_same_length(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined() || a.rank() != 1 || b.rank() != 1) {
    throw std::invalid_argument(std::string(op) + ": expected 1-D waveforms");
  }
  if (a.numel() != b.numel()) {
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a.numel()) + " vs " +
                                std::to_string(b.numel()));
  }
}

Tensor l1_magnitude(const Tensor& y, const StftConfig& cfg) {
  StftCoefficients c = stft(y, cfg);
  return add(abs(c.real), abs(c.imag));
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
  if (name == "T") return LossKind::time;
  if (name == "SM") return LossKind::spectral_magnitude;
  if (name == "TF") return LossKind::time_frequency;
  if (name == "PCM") return LossKind::phase_constrained;
  throw std::invalid_argument("unknown loss '" + name + "' (expected T, SM, TF or PCM)");
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::time:
      return "T";
    case LossKind::spectral_magnitude:
      return "SM";
    case LossKind::time_frequency:
      return "TF";
    case LossKind::phase_constrained:
      return "PCM";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("loss alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  stft.validate();
}

Tensor loss_time(const Tensor& clean, const Tensor& estimate) {
  require_same_length("loss_time", clean, estimate);
  return mean(square(sub(clean, estimate)));
}

Tensor loss_sm(const Tensor& clean, const Tensor& estimate, const StftConfig& stft_cfg) {
  require_same_length("loss_sm", clean, estimate);
  return mean(abs(sub(l1_magnitude(clean, stft_cfg), l1_magnitude(estimate, stft_cfg))));
}

Tensor loss_tf(const Tensor& clean, const Tensor& estimate, double alpha, const StftConfig& stft_cfg) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("loss_tf: alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return add(mul(loss_time(clean, estimate), alpha), mul(loss_sm(clean, estimate, stft_cfg), 1.0 - alpha));
}

Tensor loss_pcm(const Tensor& clean, const Tensor& estimate, const Tensor& noisy, const StftConfig& stft_cfg) {
  require_same_length("loss_pcm", clean, estimate);
  require_same_length("loss_pcm", clean, noisy);
  Tensor noise = sub(noisy, clean);
  Tensor noise_estimate = sub(noisy, estimate);
  return mul(add(loss_sm(clean, estimate, stft_cfg), loss_sm(noise, noise_estimate, stft_cfg)), 0.5);
}

Tensor compute_loss(const LossConfig& cfg, const Tensor& clean, const Tensor& estimate, const Tensor& noisy) {
  switch (cfg.kind) {
    case LossKind::time:
      return loss_time(clean, estimate);
    case LossKind::spectral_magnitude:
      return loss_sm(clean, estimate, cfg.stft);
    case LossKind::time_frequency:
      return loss_tf(clean, estimate, cfg.alpha, cfg.stft);
    case LossKind::phase_constrained:
      return loss_pcm(clean, estimate, noisy, cfg.stft);
  }
  throw std::invalid_argument("unknown loss kind");
}

double artifact_probe(std::span<const double> estimate, int sample_rate) {
  if (sample_rate <= 0) throw std::invalid_argument("artifact_probe: sample rate must be positive");
  StftConfig cfg;
  cfg.frame_len = static_cast<std::size_t>(sample_rate) * 64 / 1000;
  cfg.frame_len += cfg.frame_len % 2;
  cfg.hop = cfg.frame_len / 2;
  cfg.window = WindowKind::hann;
  if (estimate.size() <= cfg.frame_len) {
    throw std::invalid_argument("artifact_probe: need more than " + std::to_string(cfg.frame_len) + " samples");
  }
  if (std::all_of(estimate.begin(), estimate.end(), [](double v) { return v == 0.0; })) return 0.0;

  const Spectrogram spec = magnitude_spectrogram(estimate, cfg);
  const std::size_t bins = spec.bins;
  std::vector<double> profile(bins, 0.0);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t f = 0; f < bins; ++f) profile[f] += spec.magnitude[t * bins + f] * spec.magnitude[t * bins + f];
  }
  double peak = *std::max_element(profile.begin(), profile.end());
  for (double& v : profile) v = std::log(v / static_cast<double>(spec.frames) + 1e-12 * peak + 1e-300);
  double avg = 0.0;
  for (double v : profile) avg += v;
  avg /= static_cast<double>(bins);
  for (double& v : profile) v -= avg;

  // Periodogram of the log profile across bins; quefrencies below 4 cycles
  // describe spectral tilt rather than combs.
  const std::size_t half = bins / 2;
  double total = 0.0;
  double best = 0.0;
  for (std::size_t q = 1; q <= half; ++q) {
    double re = 0.0;
    double im = 0.0;
    for (std::size_t f = 0; f < bins; ++f) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((q * f) % bins) / static_cast<double>(bins);
      re += profile[f] * std::cos(angle);
      im -= profile[f] * std::sin(angle);
    }
    const double power = re * re + im * im;
    total += power;
    if (q >= 4) best = std::max(best, power);
  }
  return total > 0.0 ? best / total : 0.0;
}

}  // namespace dcn
