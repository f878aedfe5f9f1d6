#pragma once

#include <span>
#include <string>

#include "dcn/signal.hpp"
#include "dcn/tensor.hpp"

namespace dcn {

enum class LossKind { time, spectral_magnitude, time_frequency, phase_constrained };

LossKind parse_loss_kind(const std::string& name);  // "T", "SM", "TF", "PCM"
std::string loss_kind_name(LossKind kind);

struct LossConfig {
  LossKind kind = LossKind::time;
  double alpha = 0.8;  // used by time_frequency only
  StftConfig stft;

  void validate() const;
};

// Utterance-level MSE.
Tensor loss_time(const Tensor& clean, const Tensor& estimate);

// Mean absolute difference of |re| + |im| per STFT bin.
Tensor loss_sm(const Tensor& clean, const Tensor& estimate, const StftConfig& stft);

// alpha * loss_time + (1 - alpha) * loss_sm
Tensor loss_tf(const Tensor& clean, const Tensor& estimate, double alpha, const StftConfig& stft);

// Spectral magnitude loss on the speech estimate and on the implied noise
// estimate (noisy - estimate), equally weighted.
Tensor loss_pcm(const Tensor& clean, const Tensor& estimate, const Tensor& noisy, const StftConfig& stft);

// `noisy` is only read by the phase-constrained loss.
Tensor compute_loss(const LossConfig& cfg, const Tensor& clean, const Tensor& estimate, const Tensor& noisy);

// Periodicity of the long-window (64 ms) time-averaged log spectrum: the
// share of its across-frequency variation carried by the strongest regular
// bin spacing. Combs of evenly spaced spectral peaks score high, broadband
// noise low, silence 0.
double artifact_probe(std::span<const double> estimate, int sample_rate = 16000);

}  // namespace dcn
