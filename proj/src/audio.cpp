#include "dcn/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dcn {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

void normalize_rms(std::vector<double>& x, double target) {
  const double rms = std::sqrt(energy(x) / static_cast<double>(x.size()));
  if (rms > 0.0) {
    for (double& v : x) v *= target / rms;
  }
}

// Two-pole resonator bank driven by a glottal-like pulse train.
std::vector<double> voiced_source(std::mt19937_64& rng, std::size_t samples, int sample_rate) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double fs = sample_rate;
  const double f0 = 90.0 + 130.0 * unit(rng);
  const double vibrato_rate = 3.0 + 3.0 * unit(rng);
  const double syllable_rate = 2.5 + 2.5 * unit(rng);
  const double syllable_phase = 2.0 * std::numbers::pi * unit(rng);
  const std::array<double, 3> formants{350.0 + 550.0 * unit(rng), 900.0 + 1400.0 * unit(rng),
                                       2200.0 + 1000.0 * unit(rng)};
  std::vector<double> pulses(samples, 0.0);
  double phase = unit(rng);
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double f = f0 * (1.0 + 0.03 * std::sin(2.0 * std::numbers::pi * vibrato_rate * t));
    phase += f / fs;
    if (phase >= 1.0) {
      phase -= 1.0;
      pulses[i] = 1.0;
    }
  }
  std::vector<double> out(samples, 0.0);
  for (double fc : formants) {
    const double bandwidth = 80.0 + 60.0 * unit(rng);
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * fc / fs);
    const double a2 = -r * r;
    double y1 = 0.0;
    double y2 = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      const double y = pulses[i] + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      out[i] += y;
    }
  }
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double gate = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * syllable_rate * t + syllable_phase);
    out[i] *= gate * gate;
  }
  return out;
}

}  // namespace

AudioBuffer wav_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error(where + "not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw std::runtime_error(where + "chunk extends past end of file");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw std::runtime_error(where + "fmt chunk too short");
      std::uint16_t format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 26) format = read_u16(bytes.data() + body + 24);
      if (format != 1) throw std::runtime_error(where + "unsupported WAV format " + std::to_string(format) + " (need PCM)");
      if (channels != 1) throw std::runtime_error(where + "expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw std::runtime_error(where + "expected 16-bit samples, got " + std::to_string(bits));
      if (rate == 0) throw std::runtime_error(where + "zero sample rate");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error(where + "data chunk before fmt chunk");
      if (size % 2 != 0) throw std::runtime_error(where + "data chunk has odd byte count");
      AudioBuffer audio;
      audio.sample_rate = static_cast<int>(rate);
      audio.samples.resize(size / 2);
      for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        audio.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      return audio;
    }
    pos = body + size + (size & 1u);
  }
  throw std::runtime_error(where + (have_fmt ? "missing data chunk" : "missing fmt chunk"));
}

void wav_write(const std::filesystem::path& path, const AudioBuffer& audio) {
  if (audio.sample_rate <= 0) throw std::invalid_argument("wav_write: sample rate must be positive");
  const std::size_t data_bytes = audio.samples.size() * 2;
  if (data_bytes > 0xFFFFFFFFull - 36) throw std::invalid_argument("wav_write: signal too long for RIFF");
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, static_cast<std::uint32_t>(36 + data_bytes));
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, static_cast<std::uint32_t>(data_bytes));
  for (double v : audio.samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("wav_write: non-finite sample");
    const double clamped = std::clamp(v, -1.0, 1.0 - 1.0 / 32768.0);
    const auto q = static_cast<std::int16_t>(std::round(clamped * 32768.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("failed writing " + path.string());
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

Mixture mix_at_snr(std::span<const double> clean, std::span<const double> noise, double snr) {
  if (!std::isfinite(snr)) throw std::invalid_argument("mix_at_snr: SNR must be finite");
  if (noise.size() < clean.size()) {
    throw std::invalid_argument("mix_at_snr: noise (" + std::to_string(noise.size()) + " samples) shorter than speech (" +
                                std::to_string(clean.size()) + ")");
  }
  const double es = energy(clean);
  const double en = energy(noise.first(clean.size()));
  if (es == 0.0 || en == 0.0) throw std::invalid_argument("mix_at_snr: silent input, SNR undefined");
  const double gain = std::sqrt(es / (en * std::pow(10.0, snr / 10.0)));
  Mixture mix;
  mix.scaled_noise.resize(clean.size());
  mix.noisy.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    mix.scaled_noise[i] = gain * noise[i];
    mix.noisy[i] = clean[i] + mix.scaled_noise[i];
  }
  return mix;
}

double snr_db(std::span<const double> clean, std::span<const double> estimate) {
  if (clean.size() != estimate.size()) throw std::invalid_argument("snr: length mismatch");
  const double es = energy(clean);
  if (es == 0.0) throw std::invalid_argument("snr: silent reference");
  double err = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) err += (clean[i] - estimate[i]) * (clean[i] - estimate[i]);
  if (err == 0.0) return kPerfectScore;
  return 10.0 * std::log10(es / err);
}

double si_sdr(std::span<const double> clean, std::span<const double> estimate) {
  if (clean.size() != estimate.size()) throw std::invalid_argument("si_sdr: length mismatch");
  const double es = energy(clean);
  if (es == 0.0) throw std::invalid_argument("si_sdr: silent reference");
  if (energy(estimate) == 0.0) throw std::invalid_argument("si_sdr: zero estimate");
  double dot = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) dot += clean[i] * estimate[i];
  const double scale = dot / es;
  double target = 0.0;
  double distortion = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double t = scale * clean[i];
    target += t * t;
    distortion += (estimate[i] - t) * (estimate[i] - t);
  }
  // distortion at rounding level (beyond 260 dB) counts as exact
  if (distortion <= 1e-26 * target) return kPerfectScore;
  return 10.0 * std::log10(target / distortion);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::white:
      return "white";
    case NoiseKind::pink:
      return "pink";
    case NoiseKind::babble:
      return "babble";
  }
  return "?";
}

std::vector<double> synth_clean(std::uint64_t seed, std::size_t samples, int sample_rate) {
  if (samples == 0 || sample_rate <= 0) throw std::invalid_argument("synth_clean: empty request");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> tone_count(2, 4);
  const double fs = sample_rate;
  std::vector<double> out = voiced_source(rng, samples, sample_rate);
  normalize_rms(out, 1.0);
  const int tones = tone_count(rng);
  for (int k = 0; k < tones; ++k) {
    const double freq = 150.0 + 2350.0 * unit(rng);
    const double amp = 0.3 + 0.7 * unit(rng);
    const double am_rate = 1.0 + 5.0 * unit(rng);
    const double am_depth = 0.3 + 0.6 * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double am_phase = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t i = 0; i < samples; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double env = 1.0 - am_depth * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase));
      out[i] += amp * env * std::sin(2.0 * std::numbers::pi * freq * t + phase);
    }
  }
  normalize_rms(out, 0.05);
  return out;
}

std::vector<double> synth_noise(NoiseKind kind, std::uint64_t seed, std::size_t samples, int sample_rate) {
  if (samples == 0 || sample_rate <= 0) throw std::invalid_argument("synth_noise: empty request");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(samples, 0.0);
  switch (kind) {
    case NoiseKind::white:
      for (double& v : out) v = gauss(rng);
      break;
    case NoiseKind::pink: {
      // Paul Kellet's refined pink filter
      double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
      for (double& v : out) {
        const double w = gauss(rng);
        b0 = 0.99886 * b0 + w * 0.0555179;
        b1 = 0.99332 * b1 + w * 0.0750759;
        b2 = 0.96900 * b2 + w * 0.1538520;
        b3 = 0.86650 * b3 + w * 0.3104856;
        b4 = 0.55000 * b4 + w * 0.5329522;
        b5 = -0.7616 * b5 - w * 0.0168980;
        v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
        b6 = w * 0.115926;
      }
      break;
    }
    case NoiseKind::babble: {
      for (int talker = 0; talker < 6; ++talker) {
        std::vector<double> voice = voiced_source(rng, samples, sample_rate);
        normalize_rms(voice, 1.0);
        for (std::size_t i = 0; i < samples; ++i) out[i] += voice[i];
      }
      break;
    }
  }
  normalize_rms(out, 0.05);
  return out;
}

std::vector<Utterance> synth_dataset(std::uint64_t seed, std::size_t count, double duration_s, int sample_rate,
                                     std::vector<int> snr_choices) {
  if (count == 0) throw std::invalid_argument("synth_dataset: count must be >= 1");
  if (!(duration_s > 0.0)) throw std::invalid_argument("synth_dataset: duration must be positive");
  if (snr_choices.empty()) throw std::invalid_argument("synth_dataset: no SNR choices");
  const auto samples = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (samples == 0) throw std::invalid_argument("synth_dataset: duration shorter than one sample");
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Utterance u;
    u.seed = derive_seed(seed, i);
    std::mt19937_64 rng(u.seed);
    std::uniform_int_distribution<int> kind_pick(0, 2);
    std::uniform_int_distribution<std::size_t> snr_pick(0, snr_choices.size() - 1);
    u.noise_kind = static_cast<NoiseKind>(kind_pick(rng));
    u.snr_db = snr_choices[snr_pick(rng)];
    u.clean = synth_clean(derive_seed(u.seed, 1), samples, sample_rate);
    std::vector<double> noise = synth_noise(u.noise_kind, derive_seed(u.seed, 2), samples, sample_rate);
    Mixture mix = mix_at_snr(u.clean, noise, u.snr_db);
    u.noise = std::move(mix.scaled_noise);
    u.noisy = std::move(mix.noisy);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace dcn
