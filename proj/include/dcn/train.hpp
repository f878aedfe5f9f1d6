#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcn/audio.hpp"
#include "dcn/config.hpp"
#include "dcn/losses.hpp"
#include "dcn/model.hpp"

namespace dcn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;   // aligned with the parameter list
  std::vector<std::vector<double>> second;
};

// One Adam update from each parameter's accumulated gradient multiplied by
// `grad_scale`; parameters without a gradient see zeros. Throws before
// touching anything if a gradient is not finite.
void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr, double grad_scale = 1.0);

struct LrPhase {
  std::size_t first_epoch = 1;
  std::size_t last_epoch = 1;
  double lr = 1e-4;
};

// "1-3:2e-4,4-9:1e-4" style text.
std::vector<LrPhase> parse_lr_schedule(const std::string& text);
std::string format_lr_schedule(const std::vector<LrPhase>& schedule);

struct TrainConfig {
  DcnConfig model;
  LossConfig loss;
  std::size_t batch_size = 4;
  std::size_t epochs = 15;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the training set
  std::size_t max_steps = 0;        // 0: no cap
  std::vector<LrPhase> schedule{{1, 3, 2e-4}, {4, 9, 1e-4}, {10, 12, 5e-5}, {13, 15, 1e-5}};
  std::uint64_t seed = 1;

  std::size_t train_count = 200;
  std::size_t valid_count = 40;
  double duration_s = 2.0;
  int sample_rate = 16000;
  std::size_t segment_samples = 0;  // random training crops; 0 uses whole utterances
  std::size_t validate_every = 1;   // epochs; 0 disables validation

  std::filesystem::path checkpoint_dir;  // empty: nothing written
  std::filesystem::path resume_from;     // checkpoint whose .state sibling holds optimiser state

  double lr_for_epoch(std::size_t epoch) const;
  void validate() const;

  // Keys mirror the field names; model keys are shared with DcnConfig.
  // DCN_SEED in the environment overrides `seed`.
  static TrainConfig read(const KeyValues& kv);
  static TrainConfig from_file(const std::string& path);
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global steps completed
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the epoch's steps
  double valid_snr = 0.0;
  double valid_si_sdr = 0.0;
  double valid_snr_gain = 0.0;     // vs the noisy input
  double valid_si_sdr_gain = 0.0;
  bool validated = false;
};

struct TrainResult {
  DcnModel model;
  AdamState optimizer;
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;  // batch-mean loss per step
  std::filesystem::path last_checkpoint;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ProgressFn = std::function<void(const EpochLog&)>;

TrainResult train(const TrainConfig& cfg, const ProgressFn& progress = {});

// Per-utterance training data shared by the loop, tests and the CLI.
std::vector<Utterance> training_set(const TrainConfig& cfg);
std::vector<Utterance> validation_set(const TrainConfig& cfg);

struct EnhancementScores {
  double input_snr = 0.0;
  double input_si_sdr = 0.0;
  double output_snr = 0.0;
  double output_si_sdr = 0.0;
};

using Enhancer = std::function<std::vector<double>(std::span<const double>)>;

EnhancementScores score_enhancement(const Enhancer& enhancer, const Utterance& u);

struct EvalRow {
  std::string path_y;
  double snr_condition = 0.0;
  EnhancementScores scores;
  std::string error;  // non-empty when the row could not be processed
};

struct EvalSummary {
  double snr_condition = 0.0;
  std::size_t count = 0;
  EnhancementScores mean;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  std::vector<EvalSummary> summary;  // one per SNR condition, ascending
};

// Manifest: CSV with header path_s,path_n,path_y,snr_db,seed. Relative paths
// resolve against the manifest's directory. Row failures are recorded and
// evaluation continues.
EvalTable evaluate(const Enhancer& enhancer, const std::filesystem::path& manifest);
void write_eval_csv(const EvalTable& table, const std::filesystem::path& out_csv);

// Writes clean/noise/noisy WAVs plus manifest.csv into out_dir.
void write_dataset(const std::vector<Utterance>& data, int sample_rate, const std::filesystem::path& out_dir);

struct AblationRow {
  bool causal = true;
  std::size_t m = 2;
  bool dilation = false;
  bool attention = false;
  std::size_t parameters = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double valid_si_sdr_gain = 0.0;
  bool finite = true;
};

struct AblationConfig {
  TrainConfig base;  // model/loss/data settings shared by every grid point
  std::vector<bool> causal_modes{true};
  std::vector<std::size_t> m_values{1, 2, 3};
  std::vector<bool> dilation_modes{false, true};
  std::vector<bool> attention_modes{false, true};
  std::size_t steps = 100;
};

std::vector<AblationRow> run_ablation(const AblationConfig& cfg,
                                      const std::function<void(const AblationRow&)>& progress = {});
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& out_csv);

}  // namespace dcn
