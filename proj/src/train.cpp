#include "dcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dcn {

namespace {

constexpr char kStateMagic[8] = {'D', 'C', 'N', 'S', 'T', 'A', 'T', 'E'};
constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;

std::string format_plain(double v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(10);
  out << v;
  return out.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) parts.push_back(item);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t\r\n") - a + 1);
}

double parse_number(const std::string& s, const std::string& what) {
  std::istringstream in(trim(s));
  in.imbue(std::locale::classic());
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof()) throw std::invalid_argument("cannot parse " + what + " from '" + s + "'");
  return v;
}

std::vector<Tensor> parameter_tensors(const DcnModel& model) {
  std::vector<Tensor> out;
  for (NamedTensor& p : model.parameters()) out.push_back(std::move(p.tensor));
  return out;
}

std::filesystem::path state_path(const std::filesystem::path& checkpoint) { return checkpoint.string() + ".state"; }

void save_state(const std::filesystem::path& checkpoint, const DcnModel& model, const AdamState& adam,
                std::size_t epoch, std::size_t step) {
  std::ofstream out(state_path(checkpoint), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write optimiser state for " + checkpoint.string());
  out.write(kStateMagic, sizeof(kStateMagic));
  const std::uint64_t header[3] = {epoch, step, adam.step};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<NamedTensor> moments;
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].tensor.shape();
    if (adam.first.size() == params.size()) {
      moments.push_back({"m:" + params[i].name, Tensor(shape, adam.first[i])});
      moments.push_back({"v:" + params[i].name, Tensor(shape, adam.second[i])});
    }
  }
  write_named_tensors(out, moments);
  if (!out) throw std::runtime_error("failed writing optimiser state for " + checkpoint.string());
}

struct ResumePoint {
  std::size_t epoch = 0;
  std::size_t step = 0;
};

ResumePoint load_state(const std::filesystem::path& checkpoint, const DcnModel& model, AdamState& adam) {
  std::ifstream in(state_path(checkpoint), std::ios::binary);
  if (!in) throw std::runtime_error("cannot open optimiser state " + state_path(checkpoint).string());
  char magic[sizeof(kStateMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kStateMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(state_path(checkpoint).string() + " is not an optimiser state file");
  }
  std::uint64_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw std::runtime_error("optimiser state truncated");
  std::map<std::string, Tensor> stored;
  for (NamedTensor& nt : read_named_tensors(in)) stored.emplace(nt.name, std::move(nt.tensor));
  adam.step = header[2];
  adam.first.clear();
  adam.second.clear();
  if (!stored.empty()) {
    for (const NamedTensor& p : model.parameters()) {
      auto m = stored.find("m:" + p.name);
      auto v = stored.find("v:" + p.name);
      if (m == stored.end() || v == stored.end()) throw std::runtime_error("optimiser state lacks " + p.name);
      adam.first.emplace_back(m->second.data().begin(), m->second.data().end());
      adam.second.emplace_back(v->second.data().begin(), v->second.data().end());
    }
  }
  return {header[0], header[1]};
}

// Loss of the model on one (possibly cropped) utterance; gradients are
// accumulated into the parameters when recording is on.
double utterance_step(const DcnModel& model, const LossConfig& loss_cfg, std::span<const double> clean,
                      std::span<const double> noisy) {
  const DcnConfig& mc = model.config;
  FrameMatrix fm = frame_signal(noisy, mc.frame_len, mc.frame_shift);
  FrameMatrix out{forward(model, fm), fm.original_len, fm.frame_len, fm.frame_shift};
  Tensor estimate = overlap_add(out);
  Tensor s({clean.size()}, std::vector<double>(clean.begin(), clean.end()));
  Tensor y({noisy.size()}, std::vector<double>(noisy.begin(), noisy.end()));
  Tensor loss = compute_loss(loss_cfg, s, estimate, y);
  const double value = loss.item();
  if (!std::isfinite(value)) return value;
  if (loss.requires_grad()) backward(loss);
  return value;
}

void write_log_header(std::ofstream& log) {
  log << "epoch,step,lr,train_loss,valid_snr,valid_si_sdr,valid_snr_gain,valid_si_sdr_gain\n";
}

void write_log_row(std::ofstream& log, const EpochLog& e) {
  log << e.epoch << ',' << e.step << ',' << format_plain(e.lr) << ',' << format_plain(e.train_loss) << ',';
  if (e.validated) {
    log << format_plain(e.valid_snr) << ',' << format_plain(e.valid_si_sdr) << ',' << format_plain(e.valid_snr_gain)
        << ',' << format_plain(e.valid_si_sdr_gain);
  } else {
    log << ",,,";
  }
  log << '\n';
  log.flush();
}

void validate_model(const DcnModel& model, const std::vector<Utterance>& data, EpochLog& log) {
  if (data.empty()) return;
  Enhancer enhancer = [&model](std::span<const double> y) { return enhance_utterance(model, y); };
  double snr = 0.0, sisdr = 0.0, snr_in = 0.0, sisdr_in = 0.0;
  for (const Utterance& u : data) {
    const EnhancementScores s = score_enhancement(enhancer, u);
    snr += s.output_snr;
    sisdr += s.output_si_sdr;
    snr_in += s.input_snr;
    sisdr_in += s.input_si_sdr;
  }
  const double n = static_cast<double>(data.size());
  log.validated = true;
  log.valid_snr = snr / n;
  log.valid_si_sdr = sisdr / n;
  log.valid_snr_gain = (snr - snr_in) / n;
  log.valid_si_sdr_gain = (sisdr - sisdr_in) / n;
}

void tune_allocator() {
#ifdef __GLIBC__
  // keep per-step activation buffers on the heap instead of fresh mmaps
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr, double grad_scale) {
  if (state.first.size() != params.size()) {
    state.first.clear();
    state.second.clear();
    for (const Tensor& p : params) {
      state.first.emplace_back(p.numel(), 0.0);
      state.second.emplace_back(p.numel(), 0.0);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first[i].size() != params[i].numel()) {
      throw std::invalid_argument("adam_step: moment buffer " + std::to_string(i) + " does not match its parameter");
    }
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam_step: non-finite gradient in parameter " + std::to_string(i) +
                                 "; training halted");
      }
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto grad = p.grad();
    auto values = p.mutable_data();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k] * grad_scale;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

std::vector<LrPhase> parse_lr_schedule(const std::string& text) {
  std::vector<LrPhase> phases;
  for (const std::string& raw : split(text, ',')) {
    const std::string item = trim(raw);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("lr schedule entry '" + item + "' lacks ':'");
    const std::string range = item.substr(0, colon);
    LrPhase phase;
    const auto dash = range.find('-');
    if (dash == std::string::npos) {
      phase.first_epoch = phase.last_epoch = static_cast<std::size_t>(parse_number(range, "epoch"));
    } else {
      phase.first_epoch = static_cast<std::size_t>(parse_number(range.substr(0, dash), "epoch"));
      phase.last_epoch = static_cast<std::size_t>(parse_number(range.substr(dash + 1), "epoch"));
    }
    phase.lr = parse_number(item.substr(colon + 1), "learning rate");
    if (phase.first_epoch == 0 || phase.last_epoch < phase.first_epoch || !(phase.lr > 0.0)) {
      throw std::invalid_argument("invalid lr schedule entry '" + item + "'");
    }
    phases.push_back(phase);
  }
  if (phases.empty()) throw std::invalid_argument("empty lr schedule");
  return phases;
}

std::string format_lr_schedule(const std::vector<LrPhase>& schedule) {
  std::string out;
  for (const LrPhase& p : schedule) {
    if (!out.empty()) out += ',';
    out += std::to_string(p.first_epoch) + "-" + std::to_string(p.last_epoch) + ":" + format_plain(p.lr);
  }
  return out;
}

double TrainConfig::lr_for_epoch(std::size_t epoch) const {
  for (const LrPhase& p : schedule) {
    if (epoch >= p.first_epoch && epoch <= p.last_epoch) return p.lr;
  }
  throw std::out_of_range("lr schedule does not cover epoch " + std::to_string(epoch));
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (train_count == 0) throw std::invalid_argument("training set is empty");
  if (!(duration_s > 0.0) || sample_rate <= 0) throw std::invalid_argument("invalid dataset duration or sample rate");
  for (std::size_t e = 1; e <= epochs; ++e) lr_for_epoch(e);
}

TrainConfig TrainConfig::read(const KeyValues& kv) {
  TrainConfig c;
  c.model = DcnConfig::read(kv);
  c.loss.kind = parse_loss_kind(kv.get_string("loss", "T"));
  c.loss.alpha = kv.get_double("alpha", c.loss.alpha);
  c.loss.stft.frame_len = kv.get_size("stft_frame_len", c.loss.stft.frame_len);
  c.loss.stft.hop = kv.get_size("stft_hop", c.loss.stft.hop);
  const std::string window = kv.get_string("stft_window", "hann");
  if (window == "hann") {
    c.loss.stft.window = WindowKind::hann;
  } else if (window == "rectangular") {
    c.loss.stft.window = WindowKind::rectangular;
  } else {
    throw std::invalid_argument("stft_window must be hann or rectangular, got '" + window + "'");
  }
  c.batch_size = kv.get_size("batch_size", c.batch_size);
  c.epochs = kv.get_size("epochs", c.epochs);
  c.steps_per_epoch = kv.get_size("steps_per_epoch", c.steps_per_epoch);
  c.max_steps = kv.get_size("max_steps", c.max_steps);
  if (kv.has("lr_schedule")) c.schedule = parse_lr_schedule(kv.get("lr_schedule"));
  c.seed = kv.get_size("seed", c.seed);
  if (const char* env = std::getenv("DCN_SEED"); env && *env) {
    KeyValues override_kv;
    override_kv.set("DCN_SEED", env);
    c.seed = override_kv.get_size("DCN_SEED", c.seed);
  }
  c.train_count = kv.get_size("train_count", c.train_count);
  c.valid_count = kv.get_size("valid_count", c.valid_count);
  c.duration_s = kv.get_double("duration_s", c.duration_s);
  c.sample_rate = static_cast<int>(kv.get_size("sample_rate", static_cast<std::size_t>(c.sample_rate)));
  c.segment_samples = kv.get_size("segment_samples", c.segment_samples);
  c.validate_every = kv.get_size("validate_every", c.validate_every);
  c.checkpoint_dir = kv.get_string("checkpoint_dir", "");
  c.resume_from = kv.get_string("resume_from", "");
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) { return read(KeyValues::parse_file(path)); }

std::vector<Utterance> training_set(const TrainConfig& cfg) {
  return synth_dataset(cfg.seed, cfg.train_count, cfg.duration_s, cfg.sample_rate);
}

std::vector<Utterance> validation_set(const TrainConfig& cfg) {
  if (cfg.valid_count == 0) return {};
  return synth_dataset(derive_seed(cfg.seed, kValidationStream), cfg.valid_count, cfg.duration_s, cfg.sample_rate);
}

TrainResult train(const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  tune_allocator();
  const std::vector<Utterance> train_data = training_set(cfg);
  const std::vector<Utterance> valid_data = validation_set(cfg);

  TrainResult result;
  std::size_t start_epoch = 1;
  std::size_t global_step = 0;
  if (!cfg.resume_from.empty()) {
    result.model = load_checkpoint(cfg.resume_from);
    const ResumePoint rp = load_state(cfg.resume_from, result.model, result.optimizer);
    start_epoch = rp.epoch + 1;
    global_step = rp.step;
  } else {
    result.model = build_dcn(cfg.model, cfg.seed);
  }
  const std::vector<Tensor> params = parameter_tensors(result.model);
  for (Tensor p : params) p.zero_grad();

  std::ofstream log;
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    const auto log_path = cfg.checkpoint_dir / "train_log.csv";
    const bool fresh = cfg.resume_from.empty() || !std::filesystem::exists(log_path);
    log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot write " + log_path.string());
    if (fresh) write_log_header(log);
  }

  const std::size_t n = train_data.size();
  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (n + cfg.batch_size - 1) / cfg.batch_size;

  for (std::size_t epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    if (cfg.max_steps && global_step >= cfg.max_steps) break;
    const double lr = cfg.lr_for_epoch(epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      if (cfg.max_steps && global_step >= cfg.max_steps) break;
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        const std::size_t slot = (step * cfg.batch_size + k) % n;
        const Utterance& u = train_data[order[slot]];
        std::span<const double> clean = u.clean;
        std::span<const double> noisy = u.noisy;
        if (cfg.segment_samples && cfg.segment_samples < clean.size()) {
          std::mt19937_64 crop_rng(derive_seed(derive_seed(cfg.seed, epoch), step * cfg.batch_size + k));
          std::uniform_int_distribution<std::size_t> pick(0, clean.size() - cfg.segment_samples);
          const std::size_t offset = pick(crop_rng);
          clean = clean.subspan(offset, cfg.segment_samples);
          noisy = noisy.subspan(offset, cfg.segment_samples);
        }
        const double loss = utterance_step(result.model, cfg.loss, clean, noisy);
        if (!std::isfinite(loss)) {
          throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(global_step + 1) + " (loss " + std::to_string(loss) +
                                 "); last good checkpoint: " +
                                 (result.last_checkpoint.empty() ? "none" : result.last_checkpoint.string()));
        }
        batch_loss += loss;
      }
      adam_step(params, result.optimizer, lr, 1.0 / static_cast<double>(cfg.batch_size));
      for (Tensor p : params) p.zero_grad();
      batch_loss /= static_cast<double>(cfg.batch_size);
      result.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss;
      ++epoch_steps;
      ++global_step;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.step = global_step;
    entry.lr = lr;
    entry.train_loss = epoch_steps ? epoch_loss / static_cast<double>(epoch_steps) : 0.0;
    const bool last = epoch == cfg.epochs || (cfg.max_steps && global_step >= cfg.max_steps);
    if (cfg.validate_every && (epoch % cfg.validate_every == 0 || last)) validate_model(result.model, valid_data, entry);
    result.epochs.push_back(entry);
    if (log.is_open()) write_log_row(log, entry);
    if (!cfg.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch);
      result.last_checkpoint = cfg.checkpoint_dir / name;
      save_checkpoint(result.model, result.last_checkpoint);
      save_state(result.last_checkpoint, result.model, result.optimizer, epoch, global_step);
    }
    if (progress) progress(entry);
  }
  return result;
}

EnhancementScores score_enhancement(const Enhancer& enhancer, const Utterance& u) {
  const std::vector<double> estimate = enhancer(u.noisy);
  if (estimate.size() != u.clean.size()) throw std::runtime_error("enhancer changed the signal length");
  EnhancementScores s;
  s.input_snr = snr_db(u.clean, u.noisy);
  s.input_si_sdr = si_sdr(u.clean, u.noisy);
  s.output_snr = snr_db(u.clean, estimate);
  s.output_si_sdr = si_sdr(u.clean, estimate);
  return s;
}

EvalTable evaluate(const Enhancer& enhancer, const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  const std::filesystem::path base = manifest.parent_path();
  auto resolve = [&base](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("manifest " + manifest.string() + " is empty");
  const std::vector<std::string> header = split(trim(line), ',');
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[trim(header[i])] = i;
  for (const char* key : {"path_s", "path_y", "snr_db"}) {
    if (!column.count(key)) throw std::runtime_error("manifest lacks column " + std::string(key));
  }

  EvalTable table;
  std::map<double, std::pair<std::size_t, EnhancementScores>> totals;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split(trim(line), ',');
    EvalRow row;
    try {
      if (cells.size() < header.size()) throw std::runtime_error("expected " + std::to_string(header.size()) + " columns");
      row.path_y = trim(cells[column["path_y"]]);
      row.snr_condition = parse_number(cells[column["snr_db"]], "snr_db");
      Utterance u;
      u.clean = wav_read(resolve(trim(cells[column["path_s"]]))).samples;
      u.noisy = wav_read(resolve(row.path_y)).samples;
      if (u.clean.size() != u.noisy.size()) throw std::runtime_error("clean and noisy lengths differ");
      row.scores = score_enhancement(enhancer, u);
      auto& [count, sum] = totals[row.snr_condition];
      ++count;
      sum.input_snr += row.scores.input_snr;
      sum.input_si_sdr += row.scores.input_si_sdr;
      sum.output_snr += row.scores.output_snr;
      sum.output_si_sdr += row.scores.output_si_sdr;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  for (const auto& [condition, entry] : totals) {
    const auto& [count, sum] = entry;
    const double c = static_cast<double>(count);
    table.summary.push_back({condition, count,
                             {sum.input_snr / c, sum.input_si_sdr / c, sum.output_snr / c, sum.output_si_sdr / c}});
  }
  return table;
}

void write_eval_csv(const EvalTable& table, const std::filesystem::path& out_csv) {
  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("cannot write " + out_csv.string());
  out << "kind,path_y,snr_db,count,input_snr,input_si_sdr,output_snr,output_si_sdr,error\n";
  for (const EvalRow& r : table.rows) {
    std::string error = r.error;
    std::replace(error.begin(), error.end(), ',', ';');
    out << "row," << r.path_y << ',' << format_plain(r.snr_condition) << ",1,";
    if (r.error.empty()) {
      out << format_plain(r.scores.input_snr) << ',' << format_plain(r.scores.input_si_sdr) << ','
          << format_plain(r.scores.output_snr) << ',' << format_plain(r.scores.output_si_sdr) << ",\n";
    } else {
      out << ",,,," << error << '\n';
    }
  }
  for (const EvalSummary& s : table.summary) {
    out << "mean,," << format_plain(s.snr_condition) << ',' << s.count << ',' << format_plain(s.mean.input_snr) << ','
        << format_plain(s.mean.input_si_sdr) << ',' << format_plain(s.mean.output_snr) << ','
        << format_plain(s.mean.output_si_sdr) << ",\n";
  }
  if (!out) throw std::runtime_error("failed writing " + out_csv.string());
}

void write_dataset(const std::vector<Utterance>& data, int sample_rate, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream manifest(out_dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  manifest << "path_s,path_n,path_y,snr_db,seed\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "utt%05zu", i);
    const std::string s_name = std::string(stem) + "_clean.wav";
    const std::string n_name = std::string(stem) + "_noise.wav";
    const std::string y_name = std::string(stem) + "_noisy.wav";
    wav_write(out_dir / s_name, {data[i].clean, sample_rate});
    wav_write(out_dir / n_name, {data[i].noise, sample_rate});
    wav_write(out_dir / y_name, {data[i].noisy, sample_rate});
    manifest << s_name << ',' << n_name << ',' << y_name << ',' << format_plain(data[i].snr_db) << ','
             << data[i].seed << '\n';
  }
}

std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const std::function<void(const AblationRow&)>& progress) {
  std::vector<AblationRow> rows;
  for (bool causal : cfg.causal_modes) {
    for (std::size_t m : cfg.m_values) {
      for (bool dilation : cfg.dilation_modes) {
        for (bool attention : cfg.attention_modes) {
          TrainConfig tc = cfg.base;
          tc.model.causal = causal;
          tc.model.dense_kernel_time = m;
          tc.model.use_dilation = dilation;
          tc.model.use_attention = attention;
          tc.epochs = 1;
          tc.steps_per_epoch = cfg.steps;
          tc.max_steps = cfg.steps;
          tc.schedule = {{1, 1, cfg.base.schedule.front().lr}};
          tc.validate_every = 1;
          tc.checkpoint_dir.clear();
          tc.resume_from.clear();
          AblationRow row;
          row.causal = causal;
          row.m = m;
          row.dilation = dilation;
          row.attention = attention;
          try {
            TrainResult r = train(tc);
            row.parameters = r.model.parameter_count();
            row.initial_loss = r.step_losses.front();
            row.final_loss = r.step_losses.back();
            row.valid_si_sdr_gain = r.epochs.back().valid_si_sdr_gain;
            row.finite = std::all_of(r.step_losses.begin(), r.step_losses.end(),
                                     [](double v) { return std::isfinite(v); }) &&
                         std::isfinite(row.valid_si_sdr_gain);
          } catch (const TrainingDiverged&) {
            row.finite = false;
          }
          rows.push_back(row);
          if (progress) progress(row);
        }
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& out_csv) {
  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("cannot write " + out_csv.string());
  out << "causal,m,dilation,attention,parameters,initial_loss,final_loss,valid_si_sdr_gain,finite\n";
  for (const AblationRow& r : rows) {
    out << (r.causal ? 1 : 0) << ',' << r.m << ',' << (r.dilation ? 1 : 0) << ',' << (r.attention ? 1 : 0) << ','
        << r.parameters << ',' << format_plain(r.initial_loss) << ',' << format_plain(r.final_loss) << ','
        << format_plain(r.valid_si_sdr_gain) << ',' << (r.finite ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + out_csv.string());
}

}  // namespace dcn
