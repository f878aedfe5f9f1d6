#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dcn/audio.hpp"
#include "dcn/model.hpp"
#include "dcn/signal.hpp"
#include "dcn/train.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw std::invalid_argument("not an integer list: " + text);
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty integer list");
  return out;
}

void print_epoch(const dcn::EpochLog& e) {
  std::printf("epoch %zu step %zu lr %g loss %.6g", e.epoch, e.step, e.lr, e.train_loss);
  if (e.validated) {
    std::printf(" valid_snr %.3f valid_si_sdr %.3f gain_snr %.3f gain_si_sdr %.3f", e.valid_snr, e.valid_si_sdr,
                e.valid_snr_gain, e.valid_si_sdr_gain);
  }
  std::printf("\n");
  std::fflush(stdout);
}

dcn::Enhancer enhancer_for(const dcn::DcnModel& model) {
  return [&model](std::span<const double> y) { return dcn::enhance_utterance(model, y); };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Densely connected speech enhancement network"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt, in_path, out_path, manifest, out_csv;
  std::uint64_t seed = 1;
  std::size_t count = 10;
  double duration = 2.0;
  std::string snrs = "-5,0,5";
  int frame_ms = 32;
  std::size_t layer = 0;
  std::string grid = "m,dilation,attention";
  std::string causal_modes = "causal";
  std::size_t steps = 100;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a key = value config file");
  train_cmd->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out-dir", out_dir, "Checkpoint directory (overrides checkpoint_dir)");

  auto* enhance_cmd = app.add_subcommand("enhance", "Enhance a mono 16-bit WAV file");
  enhance_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  enhance_cmd->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
  enhance_cmd->add_option("--out", out_path)->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  eval_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out-csv", out_csv)->required();

  auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic noisy/clean corpus");
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--count", count)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--duration", duration, "Seconds per utterance")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--snrs", snrs, "Comma-separated SNR conditions in dB");
  synth_cmd->add_option("--out-dir", out_dir)->required();

  auto* spec_cmd = app.add_subcommand("spectrogram", "Export a log-magnitude spectrogram image");
  spec_cmd->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
  spec_cmd->add_option("--frame-ms", frame_ms)->check(CLI::IsMember({32, 64}));
  spec_cmd->add_option("--out", out_path)->required();

  auto* attn_cmd = app.add_subcommand("attention-map", "Export one attention module's weights as an image");
  attn_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--layer", layer, "Attention module index, encoder modules first");
  attn_cmd->add_option("--out", out_path)->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "Short training runs over a configuration grid");
  ablate_cmd->add_option("--config", config_path, "Base config file")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--grid", grid, "Axes to vary: any of m,dilation,attention");
  ablate_cmd->add_option("--causal", causal_modes)->check(CLI::IsMember({"causal", "noncausal", "both"}));
  ablate_cmd->add_option("--steps", steps)->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--out-csv", out_csv)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) {
      dcn::TrainConfig cfg = dcn::TrainConfig::from_file(config_path);
      if (!out_dir.empty()) cfg.checkpoint_dir = out_dir;
      try {
        dcn::TrainResult result = dcn::train(cfg, print_epoch);
        if (!result.last_checkpoint.empty()) std::printf("checkpoint %s\n", result.last_checkpoint.string().c_str());
      } catch (const dcn::TrainingDiverged& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return kExitRuntime;
      }
    } else if (*enhance_cmd) {
      const dcn::DcnModel model = dcn::load_checkpoint(ckpt);
      const dcn::AudioBuffer in = dcn::wav_read(in_path);
      dcn::wav_write(out_path, {dcn::enhance_utterance(model, in.samples), in.sample_rate});
    } else if (*eval_cmd) {
      const dcn::DcnModel model = dcn::load_checkpoint(ckpt);
      const dcn::EvalTable table = dcn::evaluate(enhancer_for(model), manifest);
      dcn::write_eval_csv(table, out_csv);
      std::size_t failed = 0;
      for (const auto& row : table.rows) failed += row.error.empty() ? 0 : 1;
      for (const auto& s : table.summary) {
        std::printf("snr %+.0f dB  n=%zu  snr %.3f -> %.3f  si-sdr %.3f -> %.3f\n", s.snr_condition, s.count,
                    s.mean.input_snr, s.mean.output_snr, s.mean.input_si_sdr, s.mean.output_si_sdr);
      }
      if (failed) std::fprintf(stderr, "%zu row(s) failed; see %s\n", failed, out_csv.c_str());
    } else if (*synth_cmd) {
      const auto data = dcn::synth_dataset(seed, count, duration, 16000, parse_int_list(snrs));
      dcn::write_dataset(data, 16000, out_dir);
    } else if (*spec_cmd) {
      const dcn::AudioBuffer in = dcn::wav_read(in_path);
      const dcn::Spectrogram s = dcn::export_spectrogram(in.samples, in.sample_rate, frame_ms, out_path);
      std::printf("%zu frames x %zu bins\n", s.frames, s.bins);
    } else if (*attn_cmd) {
      const dcn::DcnModel model = dcn::load_checkpoint(ckpt);
      const dcn::AudioBuffer in = dcn::wav_read(in_path);
      const auto maps = dcn::attention_maps(model, in.samples);
      if (layer >= maps.size()) {
        throw std::out_of_range("--layer " + std::to_string(layer) + " but the model has " +
                                std::to_string(maps.size()) + " attention modules");
      }
      const dcn::Tensor& w = maps[layer];
      dcn::write_pgm(out_path, w.extent(0), w.extent(1), w.data());
    } else if (*ablate_cmd) {
      dcn::AblationConfig cfg;
      if (!config_path.empty()) cfg.base = dcn::TrainConfig::from_file(config_path);
      cfg.steps = steps;
      const dcn::DcnConfig& m = cfg.base.model;
      cfg.m_values = {m.dense_kernel_time};
      cfg.dilation_modes = {m.use_dilation};
      cfg.attention_modes = {m.use_attention};
      std::stringstream ss(grid);
      std::string axis;
      while (std::getline(ss, axis, ',')) {
        if (axis == "m") {
          cfg.m_values = {1, 2, 3};
        } else if (axis == "dilation") {
          cfg.dilation_modes = {false, true};
        } else if (axis == "attention") {
          cfg.attention_modes = {false, true};
        } else {
          std::fprintf(stderr, "unknown grid axis '%s' (expected m, dilation, attention)\n", axis.c_str());
          return kExitUsage;
        }
      }
      if (causal_modes == "causal") cfg.causal_modes = {true};
      if (causal_modes == "noncausal") cfg.causal_modes = {false};
      if (causal_modes == "both") cfg.causal_modes = {true, false};
      const auto rows = dcn::run_ablation(cfg, [](const dcn::AblationRow& r) {
        std::printf("causal=%d m=%zu dilation=%d attention=%d params=%zu loss %.5g -> %.5g\n", r.causal, r.m,
                    r.dilation, r.attention, r.parameters, r.initial_loss, r.final_loss);
        std::fflush(stdout);
      });
      dcn::write_ablation_csv(rows, out_csv);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
