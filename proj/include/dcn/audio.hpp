#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dcn {

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 16000;
};

// Mono 16-bit PCM RIFF/WAVE only.
AudioBuffer wav_read(const std::filesystem::path& path);
void wav_write(const std::filesystem::path& path, const AudioBuffer& audio);

double energy(std::span<const double> x);

struct Mixture {
  std::vector<double> noisy;         // clean + scaled_noise, element by element
  std::vector<double> scaled_noise;  // noise truncated to the clean length and rescaled
};

// Scales `noise` so that 10 log10(E_clean / E_noise) equals snr_db.
Mixture mix_at_snr(std::span<const double> clean, std::span<const double> noise, double snr_db);

// Reported by the metrics when the estimate has no measurable distortion.
inline constexpr double kPerfectScore = std::numeric_limits<double>::infinity();

// 10 log10(|s|^2 / |s - estimate|^2); not scale invariant.
double snr_db(std::span<const double> clean, std::span<const double> estimate);

// Scale-invariant SDR: the estimate is projected onto the clean reference.
double si_sdr(std::span<const double> clean, std::span<const double> estimate);

// Deterministic child seed (splitmix64 of seed and index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

enum class NoiseKind { white, pink, babble };

std::string noise_kind_name(NoiseKind kind);

struct Utterance {
  std::vector<double> clean;
  std::vector<double> noise;  // already scaled
  std::vector<double> noisy;
  double snr_db = 0.0;
  NoiseKind noise_kind = NoiseKind::white;
  std::uint64_t seed = 0;
};

// Desk-scale surrogate corpus: voiced-like clean signals (modulated tones
// plus a formant-filtered pulse train) mixed with white, pink or babble-like
// noise at an integer SNR drawn uniformly from `snr_choices`.
std::vector<Utterance> synth_dataset(std::uint64_t seed, std::size_t count, double duration_s,
                                     int sample_rate = 16000, std::vector<int> snr_choices = {-5, -4, -3, -2, -1, 0});

std::vector<double> synth_clean(std::uint64_t seed, std::size_t samples, int sample_rate);
std::vector<double> synth_noise(NoiseKind kind, std::uint64_t seed, std::size_t samples, int sample_rate);

}  // namespace dcn
