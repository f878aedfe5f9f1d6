// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--skip 8,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcn/audio.hpp"
#include "dcn/layers.hpp"
#include "dcn/losses.hpp"
#include "dcn/model.hpp"
#include "dcn/signal.hpp"
#include "dcn/train.hpp"
#include "support.hpp"

using namespace dcn;
using dcn::testing::check_gradients;
using dcn::testing::GradCheck;
using dcn::testing::random_tensor;
using dcn::testing::random_values;
using dcn::testing::weighted_sum;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

DcnConfig tiny_dcn() {
  DcnConfig c;
  c.channels = 8;
  c.attn_q_channels = 2;
  c.attn_v_channels = 4;
  c.frame_len = 64;
  c.frame_shift = 32;
  c.encoder_depth = 2;
  c.causal = true;
  c.dense_kernel_time = 2;
  return c;
}

// ---------------------------------------------------------------------------

struct GradTally {
  double worst = 0.0;
  std::size_t cases = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  void add(const GradCheck& r) {
    worst = std::max(worst, r.max_rel_error);
    ++cases;
    checked += r.checked;
    skipped += r.skipped;
  }
};

constexpr double kGradStep = 1e-4;
constexpr double kGradTol = 1e-4;
constexpr std::size_t kShapes = 20;

GradCheck grad(const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs) {
  return check_gradients(fn, inputs, kGradStep, 1e-6, 0, 7, true);
}

Conv2dParams random_conv(std::mt19937_64& rng, std::size_t c_in, std::size_t t, std::size_t l) {
  const auto padding = static_cast<Padding>(pick(rng, 0, 2));
  std::size_t m = pick(rng, 1, 3);
  std::size_t n = pick(rng, 1, 3);
  std::size_t dilation = pick(rng, 1, 2);
  if (padding == Padding::valid) {
    m = std::min(m, t);
    n = std::min(n, l);
    while ((m - 1) * dilation + 1 > t) dilation = 1;
  }
  Conv2dParams p = make_conv(c_in, pick(rng, 1, 3), m, n, padding, rng, pick(rng, 1, 2), pick(rng, 1, 2), dilation);
  p.bias = random_tensor(rng, {p.out_channels()});
  return p;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::vector<std::pair<std::string, GradTally>> ops;

  GradTally conv;
  for (std::size_t i = 0; i < kShapes; ++i) {
    const std::size_t c = pick(rng, 1, 3), t = pick(rng, 2, 5), l = pick(rng, 3, 8);
    Tensor x = random_tensor(rng, {c, t, l});
    Conv2dParams p = random_conv(rng, c, t, l);
    conv.add(grad([&] { return weighted_sum(conv2d(x, p), i); }, {x, p.kernel, p.bias}));
  }
  ops.emplace_back("conv2d", conv);

  GradTally sub;
  const std::vector<std::pair<std::size_t, std::size_t>> rates{{2, 3}, {1, 2}, {1, 1}, {2, 1}, {2, 2}};
  for (std::size_t i = 0; i < kShapes; ++i) {
    const auto [r, s] = rates[i % rates.size()];
    const std::size_t c = pick(rng, 1, 2), t = pick(rng, 2, 4), l = pick(rng, 2, 5);
    Tensor x = random_tensor(rng, {c, t, l});
    SubPixelParams p = make_subpixel(c, pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 3), r, s, i % 2 == 0, rng);
    std::vector<Tensor> inputs{x};
    for (auto& k : p.kernels) {
      k.bias = random_tensor(rng, {k.out_channels()});
      inputs.push_back(k.kernel);
      inputs.push_back(k.bias);
    }
    sub.add(grad([&] { return weighted_sum(subpixel_conv(x, p), i); }, inputs));
  }
  ops.emplace_back("subpixel_conv", sub);

  GradTally norm;
  for (std::size_t i = 0; i < kShapes; ++i) {
    const std::size_t c = pick(rng, 1, 3), t = pick(rng, 1, 4), l = pick(rng, 2, 12);
    Tensor x = random_tensor(rng, {c, t, l});
    LayerNormParams p = make_layer_norm(l, 1e-5);
    p.gamma = random_tensor(rng, {l}, true, 0.5, 1.5);
    p.beta = random_tensor(rng, {l});
    norm.add(grad([&] { return weighted_sum(layer_norm(x, p), i); }, {x, p.gamma, p.beta}));
  }
  ops.emplace_back("layer_norm", norm);

  GradTally act;
  for (std::size_t i = 0; i < kShapes; ++i) {
    const std::size_t c = pick(rng, 1, 4), t = pick(rng, 1, 4), l = pick(rng, 1, 6);
    Tensor x = random_tensor(rng, {c, t, l});
    Tensor a = random_tensor(rng, {c}, true, 0.0, 0.5);
    act.add(grad([&] { return weighted_sum(prelu(x, a), i); }, {x, a}));
  }
  ops.emplace_back("prelu", act);

  GradTally dense;
  for (std::size_t i = 0; i < kShapes; ++i) {
    const std::size_t c = pick(rng, 1, 2), t = pick(rng, 2, 5), l = pick(rng, 4, 8);
    const std::size_t m = pick(rng, 1, 3);
    DenseBlockParams p = make_dense_block(c, l, m, i % 2 == 0, i % 3 == 0, 1e-5, rng, pick(rng, 1, 3));
    Tensor x = random_tensor(rng, {c, t, l});
    std::vector<Tensor> inputs{x};
    for (auto& layer : p.layers) {
      layer.conv.bias = random_tensor(rng, {layer.conv.out_channels()});
      for (Tensor v : {layer.conv.kernel, layer.conv.bias, layer.norm.gamma, layer.norm.beta, layer.slopes}) {
        inputs.push_back(v);
      }
    }
    dense.add(grad([&] { return weighted_sum(dense_block(x, p), i); }, inputs));
  }
  ops.emplace_back("dense_block", dense);

  GradTally attn;
  for (std::size_t i = 0; i < kShapes; ++i) {
    const std::size_t c = pick(rng, 1, 3), t = pick(rng, 1, 5), l = pick(rng, 1, 4);
    AttentionParams p = make_attention(c, pick(rng, 1, 2), pick(rng, 1, 2), i % 2 == 0, rng);
    Tensor x = random_tensor(rng, {c, t, l});
    std::vector<Tensor> inputs{x};
    for (Conv2dParams* k : {&p.query, &p.key, &p.value}) {
      k->bias = random_tensor(rng, {k->out_channels()});
      inputs.push_back(k->kernel);
      inputs.push_back(k->bias);
    }
    attn.add(grad([&] { return weighted_sum(self_attention(x, p).output, i); }, inputs));
  }
  ops.emplace_back("self_attention", attn);

  for (LossKind kind : {LossKind::time, LossKind::spectral_magnitude, LossKind::time_frequency,
                        LossKind::phase_constrained}) {
    GradTally tally;
    for (std::size_t i = 0; i < kShapes; ++i) {
      LossConfig cfg;
      cfg.kind = kind;
      cfg.alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      cfg.stft.frame_len = 2 * pick(rng, 2, 16);
      cfg.stft.hop = pick(rng, 1, cfg.stft.frame_len);
      cfg.stft.window = i % 2 ? WindowKind::hann : WindowKind::rectangular;
      const std::size_t n = pick(rng, 8, 96);
      Tensor s = random_tensor(rng, {n}, false);
      Tensor y = random_tensor(rng, {n}, false);
      Tensor e = random_tensor(rng, {n});
      tally.add(grad([&] { return compute_loss(cfg, s, e, y); }, {e}));
    }
    ops.emplace_back("loss_" + loss_kind_name(kind), tally);
  }

  const double elapsed = seconds_since(t0);
  bool pass = elapsed <= 120.0;
  std::ostringstream detail;
  detail << fmt("%.1f s;", elapsed);
  for (const auto& [name, t] : ops) {
    pass = pass && t.cases >= kShapes && t.worst <= kGradTol && t.checked > 0;
    detail << ' ' << name << ' ' << fmt("%.1e", t.worst);
  }
  std::size_t checked = 0, skipped = 0;
  for (const auto& [name, t] : ops) {
    checked += t.checked;
    skipped += t.skipped;
  }
  detail << fmt("; %zu probes, %zu skipped at kinks", checked, skipped);
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------

Outcome criterion_causality() {
  const DcnModel model = build_dcn(tiny_dcn(), 2024);
  std::mt19937_64 rng(202);
  NoGradGuard no_grad;
  std::size_t violations = 0, unchanged_future = 0;
  const std::size_t trials = 100;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t t = pick(rng, 3, 24);
    const std::size_t m = (t - 1) * 32 + pick(rng, 1, 32);
    FrameMatrix fm = frame_signal(random_values(rng, m), 64, 32);
    const Tensor base = forward(model, fm);
    const std::size_t cut = pick(rng, 1, fm.num_frames() - 1);
    std::vector<double> frames(fm.frames.data().begin(), fm.frames.data().end());
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = cut * 64; i < frames.size(); ++i) frames[i] += gauss(rng);
    const Tensor out = forward(model, FrameMatrix{Tensor({fm.num_frames(), 64}, frames), m, 64, 32});
    auto a = base.data();
    auto b = out.data();
    for (std::size_t i = 0; i < cut * 64; ++i) violations += a[i] != b[i];
    bool changed = false;
    for (std::size_t i = cut * 64; i < a.size(); ++i) changed = changed || a[i] != b[i];
    unchanged_future += !changed;
  }
  return {violations == 0 && unchanged_future == 0,
          fmt("%zu trials, %zu past samples changed, %zu trials with no future change", trials, violations,
              unchanged_future)};
}

// ---------------------------------------------------------------------------

Outcome criterion_ola() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t l = pick(rng, 1, 600);
    const std::size_t j = pick(rng, 1, l);
    const std::size_t m = pick(rng, 1, 5000);
    const auto y = random_values(rng, m);
    const Tensor back = overlap_add(frame_signal(y, l, j));
    for (std::size_t k = 0; k < m; ++k) worst = std::max(worst, std::abs(back.data()[k] - y[k]));
  }
  return {worst <= 1e-10, fmt("50 cases, max error %.2e", worst)};
}

// ---------------------------------------------------------------------------

Outcome criterion_subpixel() {
  std::mt19937_64 rng(404);
  const std::vector<std::pair<std::size_t, std::size_t>> rates{{2, 3}, {1, 2}, {2, 2}, {3, 1}, {1, 1}};
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto [r, s] = rates[i % rates.size()];
    const std::size_t c = pick(rng, 1, 4), t = pick(rng, 1, 6), l = pick(rng, 1, 7);
    SubPixelParams p = make_subpixel(c, pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), r, s, i % 2 == 1, rng);
    for (auto& k : p.kernels) k.bias = random_tensor(rng, {k.out_channels()}, false);
    const Tensor x = random_tensor(rng, {c, t, l}, false);
    const Tensor out = subpixel_conv(x, p);
    // out(i, j) = S[i % r][j % s](i / r, j / s)
    std::vector<Tensor> parts;
    for (const auto& k : p.kernels) parts.push_back(conv2d(x, k));
    const std::size_t co = parts[0].extent(0);
    if (out.shape() != Shape{co, t * r, l * s}) {
      ++mismatches;
      continue;
    }
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t a = 0; a < t * r; ++a) {
        for (std::size_t b = 0; b < l * s; ++b) {
          const Tensor& src = parts[(a % r) * s + (b % s)];
          mismatches += out.data()[(o * t * r + a) * l * s + b] != src.data()[(o * t + a / r) * l + b / s];
        }
      }
    }
  }
  return {mismatches == 0, fmt("20 cases incl. rates (2,3) and (1,2), %zu mismatched entries", mismatches)};
}

// ---------------------------------------------------------------------------

Outcome criterion_attention_mask() {
  std::mt19937_64 rng(505);
  double worst_upper = 0.0, worst_row = 0.0;
  for (std::size_t t : {1u, 2u, 17u, 64u}) {
    const std::size_t c = 3, l = 5;
    AttentionParams p = make_attention(c, 2, 2, true, rng);
    const Tensor x = random_tensor(rng, {c, t, l}, false, -3.0, 3.0);
    const Tensor w = self_attention(x, p).weights;
    for (std::size_t i = 0; i < t; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        const double v = w.data()[i * t + j];
        sum += v;
        if (j > i) worst_upper = std::max(worst_upper, std::abs(v));
      }
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
  }
  return {worst_upper <= 1e-15 && worst_row <= 1e-12,
          fmt("T in {1,2,17,64}: max above-diagonal %.1e, max |row sum - 1| %.1e", worst_upper, worst_row)};
}

// ---------------------------------------------------------------------------

Outcome criterion_pcm_geometry() {
  const auto t0 = Clock::now();
  const std::size_t n = 16, bin = 3;
  const StftConfig cfg{n, n, WindowKind::rectangular};
  auto tone = [&](double amplitude, double degrees) {
    std::vector<double> v(n);
    const double phase = degrees * std::numbers::pi / 180.0;
    for (std::size_t k = 0; k < n; ++k) {
      v[k] = amplitude * std::cos(2.0 * std::numbers::pi * static_cast<double>(bin * k) / n + phase);
    }
    return Tensor({n}, v);
  };
  // magnitude in the loss is |Re| + |Im|; the sweep keeps it equal to the clean bin's
  auto l1 = [](double degrees) {
    const double r = degrees * std::numbers::pi / 180.0;
    return std::abs(std::cos(r)) + std::abs(std::sin(r));
  };
  const double clean_phase = 30.0;
  const Tensor s = tone(1.0, clean_phase);
  const Tensor y = add(s, tone(0.8, 100.0));
  std::size_t sm_zero = 0, pcm_zero = 0;
  NoGradGuard no_grad;
  for (int deg = 0; deg < 360; ++deg) {
    const Tensor e = tone(l1(clean_phase) / l1(deg), deg);
    sm_zero += loss_sm(s, e, cfg).item() < 1e-12;
    pcm_zero += loss_pcm(s, e, y, cfg).item() < 1e-9;
  }
  const double elapsed = seconds_since(t0);
  return {pcm_zero <= 2 && sm_zero == 360 && elapsed < 1.0,
          fmt("PCM near-zero at %zu phases, SM at %zu/360, %.3f s", pcm_zero, sm_zero, elapsed)};
}

// ---------------------------------------------------------------------------

Outcome criterion_loss_identities() {
  std::mt19937_64 rng(707);
  std::size_t failures = 0;
  NoGradGuard no_grad;
  for (int i = 0; i < 100; ++i) {
    StftConfig cfg;
    cfg.frame_len = 2 * pick(rng, 4, 64);
    cfg.hop = pick(rng, 1, cfg.frame_len);
    cfg.window = i % 2 ? WindowKind::hann : WindowKind::rectangular;
    const std::size_t m = pick(rng, 16, 2000);
    const Tensor s = random_tensor(rng, {m}, false);
    const Tensor e = random_tensor(rng, {m}, false);
    const Tensor y = add(s, random_tensor(rng, {m}, false));
    const double lt = loss_time(s, e).item();
    const double lsm = loss_sm(s, e, cfg).item();
    failures += loss_tf(s, e, 1.0, cfg).item() != lt;
    failures += loss_tf(s, e, 0.0, cfg).item() != lsm;
    const double noise_term = loss_sm(sub(y, s), sub(y, e), cfg).item();
    failures += loss_pcm(s, e, y, cfg).item() != 0.5 * (lsm + noise_term);
  }
  return {failures == 0, fmt("100 random triples, %zu identities not bit-exact", failures)};
}

// ---------------------------------------------------------------------------

TrainConfig toy_training_config(LossKind loss) {
  TrainConfig c;
  c.model = tiny_dcn();
  c.loss.kind = loss;
  c.loss.stft = StftConfig{512, 256, WindowKind::hann};
  c.train_count = 200;
  c.valid_count = 40;
  c.duration_s = 2.0;
  c.batch_size = 4;
  c.segment_samples = 4000;
  c.epochs = 10;
  c.steps_per_epoch = 300;
  c.max_steps = 3000;
  c.schedule = parse_lr_schedule("1-4:2e-3,5-7:1e-3,8-9:5e-4,10-10:2e-4");
  c.validate_every = c.epochs;
  c.seed = 8;
  return c;
}

Outcome criterion_toy_training() {
  struct Run {
    std::string name;
    EpochLog last;
    double seconds = 0.0;
    std::size_t steps = 0;
  };
  std::vector<Run> runs;
  for (LossKind kind : {LossKind::time, LossKind::phase_constrained}) {
    const auto t0 = Clock::now();
    const TrainConfig cfg = toy_training_config(kind);
    TrainResult r = train(cfg, [&](const EpochLog& e) {
      std::fprintf(stderr, "  [%s] epoch %zu step %zu loss %.5g\n", loss_kind_name(kind).c_str(), e.epoch, e.step,
                   e.train_loss);
    });
    runs.push_back({loss_kind_name(kind), r.epochs.back(), seconds_since(t0), r.step_losses.size()});
  }
  const Run& t = runs[0];
  const Run& p = runs[1];
  const bool pass_t = t.last.validated && t.last.valid_si_sdr_gain >= 5.0 && t.seconds <= 1800.0 && t.steps <= 3000;
  const bool pass_p = p.last.validated && p.last.valid_si_sdr_gain >= 5.0 && p.last.valid_snr_gain >= 3.0 &&
                      p.seconds <= 1800.0 && p.steps <= 3000;
  return {pass_t && pass_p,
          fmt("L_T: +%.2f dB SI-SDR (+%.2f SNR), %zu steps, %.0f s; L_PCM: +%.2f dB SI-SDR, +%.2f dB SNR, %zu steps, "
              "%.0f s",
              t.last.valid_si_sdr_gain, t.last.valid_snr_gain, t.steps, t.seconds, p.last.valid_si_sdr_gain,
              p.last.valid_snr_gain, p.steps, p.seconds)};
}

// ---------------------------------------------------------------------------

Outcome criterion_overfit() {
  TrainConfig c;
  c.model = tiny_dcn();
  c.loss.kind = LossKind::time;
  c.train_count = 1;
  c.valid_count = 1;
  c.duration_s = 0.5;
  c.batch_size = 1;
  c.epochs = 1;
  c.steps_per_epoch = 500;
  c.schedule = {{1, 1, 2e-3}};
  c.validate_every = 0;
  c.seed = 9;
  const TrainResult r = train(c);
  const auto& loss = r.step_losses;
  const double initial = loss.front();
  std::size_t reached = 0;
  for (std::size_t i = 0; i < loss.size(); ++i) {
    if (loss[i] < 1e-2 * initial) {
      reached = i + 1;
      break;
    }
  }
  auto window_mean = [&](std::size_t from) {
    double acc = 0.0;
    for (std::size_t i = from; i < from + 50; ++i) acc += loss[i];
    return acc / 50.0;
  };
  const double first = window_mean(0);
  const double last = window_mean(loss.size() - 50);
  return {reached > 0 && reached <= 500 && last < first,
          fmt("initial %.3e, below 1%% at step %zu, final %.3e; 50-step mean %.3e -> %.3e", initial, reached,
              loss.back(), first, last)};
}

// ---------------------------------------------------------------------------

Outcome criterion_ablation() {
  AblationConfig a;
  a.base.model = tiny_dcn();
  a.base.loss.kind = LossKind::time;
  a.base.train_count = 8;
  a.base.valid_count = 4;
  a.base.duration_s = 0.5;
  a.base.batch_size = 2;
  a.base.segment_samples = 2000;
  a.base.schedule = {{1, 1, 1e-3}};
  a.base.seed = 10;
  a.steps = 100;
  a.causal_modes = {true};
  a.m_values = {1, 2, 3};
  a.dilation_modes = {false, true};
  a.attention_modes = {false, true};
  const auto rows = run_ablation(a);
  const auto csv = std::filesystem::temp_directory_path() / "dcn_acceptance_ablation.csv";
  write_ablation_csv(rows, csv);
  std::ifstream in(csv);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  std::set<std::tuple<std::size_t, bool, bool>> combos;
  std::size_t finite = 0;
  for (const auto& r : rows) {
    combos.insert({r.m, r.dilation, r.attention});
    finite += r.finite && std::isfinite(r.final_loss);
  }
  return {rows.size() == 12 && combos.size() == 12 && finite == 12 && lines == 13,
          fmt("%zu configurations, %zu distinct, %zu finite after 100 steps, CSV %zu lines at %s", rows.size(),
              combos.size(), finite, lines, csv.string().c_str())};
}

// ---------------------------------------------------------------------------

Outcome criterion_metrics() {
  std::mt19937_64 rng(1111);
  double mix_err = 0.0, scale_err = 0.0, wav_err = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto s = random_values(rng, pick(rng, 100, 5000));
    const auto n = random_values(rng, s.size() + pick(rng, 0, 100), -2.0, 2.0);
    const double snr = std::uniform_real_distribution<double>(-10.0, 20.0)(rng);
    const Mixture mix = mix_at_snr(s, n, snr);
    mix_err = std::max(mix_err, std::abs(10.0 * std::log10(energy(s) / energy(mix.scaled_noise)) - snr));

    const auto e = random_values(rng, s.size());
    const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng) * (i % 2 ? -1.0 : 1.0);
    std::vector<double> scaled(e.size());
    for (std::size_t k = 0; k < e.size(); ++k) scaled[k] = c * e[k];
    scale_err = std::max(scale_err, std::abs(si_sdr(s, e) - si_sdr(s, scaled)));
  }
  const auto path = std::filesystem::temp_directory_path() / "dcn_acceptance.wav";
  const auto audio = random_values(rng, 16000);
  wav_write(path, {audio, 16000});
  const AudioBuffer back = wav_read(path);
  for (std::size_t k = 0; k < audio.size(); ++k) {
    const double clamped = std::clamp(audio[k], -1.0, 1.0 - 1.0 / 32768.0);
    wav_err = std::max(wav_err, std::abs(back.samples[k] - clamped) * 32768.0);
  }
  return {mix_err <= 1e-9 && scale_err <= 1e-9 && wav_err <= 1.0 && back.samples.size() == audio.size(),
          fmt("mix error %.1e dB, SI-SDR scale error %.1e dB, WAV max error %.2f LSB", mix_err, scale_err, wav_err)};
}

std::set<int> parse_set(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, skip;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--only") {
      only = parse_set(argv[i + 1]);
    } else if (flag == "--skip") {
      skip = parse_set(argv[i + 1]);
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--skip 8,...]\n", argv[0]);
      return 1;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", criterion_gradients},
      {"causality suite", criterion_causality},
      {"OLA reconstruction", criterion_ola},
      {"sub-pixel oracle", criterion_subpixel},
      {"attention mask", criterion_attention_mask},
      {"PCM geometry", criterion_pcm_geometry},
      {"loss identities", criterion_loss_identities},
      {"toy training", criterion_toy_training},
      {"overfit sanity", criterion_overfit},
      {"ablation lattice", criterion_ablation},
      {"mixing/metrics", criterion_metrics},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if ((!only.empty() && !only.count(id)) || skip.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %-20s %s  %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
