#include "dcn/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dcn {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

Tensor norm_act(const Tensor& x, const LayerNormParams& norm, const Tensor& slopes) {
  return prelu(layer_norm(x, norm), slopes);
}

std::size_t time_pad_before(std::size_t m, std::size_t dilation, bool causal) {
  const std::size_t reach = (m - 1) * dilation;
  return causal ? reach : (reach + 1) / 2;
}

std::size_t time_pad_after(std::size_t m, std::size_t dilation, bool causal) {
  const std::size_t reach = (m - 1) * dilation;
  return causal ? 0 : reach / 2;
}

template <typename Fn>
void visit_conv(const std::string& prefix, const Conv2dParams& conv, Fn& fn) {
  fn(prefix + ".kernel", conv.kernel);
  fn(prefix + ".bias", conv.bias);
}

template <typename Fn>
void visit_norm(const std::string& prefix, const LayerNormParams& norm, Fn& fn) {
  fn(prefix + ".gamma", norm.gamma);
  fn(prefix + ".beta", norm.beta);
}

template <typename Fn>
void visit_dense(const std::string& prefix, const DenseBlockParams& block, Fn& fn) {
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    visit_conv(p + ".conv", block.layers[i].conv, fn);
    visit_norm(p + ".norm", block.layers[i].norm, fn);
    fn(p + ".prelu", block.layers[i].slopes);
  }
}

template <typename Fn>
void visit_attention(const std::string& prefix, const AttentionParams& attn, Fn& fn) {
  visit_conv(prefix + ".query", attn.query, fn);
  visit_conv(prefix + ".key", attn.key, fn);
  visit_conv(prefix + ".value", attn.value, fn);
}

template <typename Fn>
void visit_parameters(const DcnModel& model, Fn&& fn) {
  const bool attention = model.config.use_attention;
  visit_conv("input", model.input, fn);
  visit_dense("input.dense", model.input_dense, fn);
  for (std::size_t i = 0; i < model.encoder.size(); ++i) {
    const EncoderStage& s = model.encoder[i];
    const std::string p = "encoder" + std::to_string(i + 1);
    visit_conv(p + ".down", s.down, fn);
    visit_norm(p + ".down_norm", s.down_norm, fn);
    fn(p + ".down_prelu", s.down_slopes);
    if (attention) {
      visit_attention(p + ".attention", s.attention, fn);
      visit_conv(p + ".projection", s.projection, fn);
      visit_norm(p + ".projection_norm", s.projection_norm, fn);
      fn(p + ".projection_prelu", s.projection_slopes);
    }
    visit_dense(p + ".dense", s.dense, fn);
  }
  for (std::size_t i = 0; i < model.decoder.size(); ++i) {
    const DecoderStage& s = model.decoder[i];
    const std::string p = "decoder" + std::to_string(i + 1);
    for (std::size_t k = 0; k < s.up.kernels.size(); ++k) visit_conv(p + ".up" + std::to_string(k), s.up.kernels[k], fn);
    visit_norm(p + ".up_norm", s.up_norm, fn);
    fn(p + ".up_prelu", s.up_slopes);
    if (attention) {
      visit_attention(p + ".attention", s.attention, fn);
      visit_conv(p + ".projection", s.projection, fn);
      visit_norm(p + ".projection_norm", s.projection_norm, fn);
      fn(p + ".projection_prelu", s.projection_slopes);
    }
    visit_dense(p + ".dense", s.dense, fn);
  }
  visit_conv("output", model.output, fn);
}

Tensor checked_concat(const std::vector<Tensor>& xs, const std::string& where) {
  const Shape& a = xs.front().shape();
  for (const Tensor& t : xs) {
    const Shape& b = t.shape();
    if (b.size() != 3 || b[1] != a[1] || b[2] != a[2]) {
      throw std::invalid_argument("skip junction at " + where + ": " + shape_string(a) + " vs " + shape_string(b));
    }
  }
  return concat_channels(xs);
}

}  // namespace

void DcnConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid DCN config: " + msg); };
  if (frame_len == 0 || frame_shift == 0 || frame_shift > frame_len) fail("need frame_len >= frame_shift >= 1");
  if (channels == 0) fail("channels must be positive");
  if (dense_kernel_time == 0) fail("dense_kernel_time must be positive");
  if (dense_depth == 0) fail("dense_depth must be positive");
  if (downsample_rate < 1) fail("downsample_rate must be >= 1");
  if (use_attention && (attn_q_channels == 0 || attn_v_channels == 0)) fail("attention channels must be positive");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
  std::size_t len = frame_len;
  for (std::size_t i = 0; i < encoder_depth; ++i) {
    if (len % downsample_rate != 0) {
      fail("frame_len " + std::to_string(frame_len) + " not divisible by " + std::to_string(downsample_rate) + "^" +
           std::to_string(encoder_depth));
    }
    len /= downsample_rate;
  }
  if (len == 0) fail("frame_len collapses to zero");
}

std::vector<std::size_t> DcnConfig::level_lengths() const {
  std::vector<std::size_t> lengths{frame_len};
  for (std::size_t i = 0; i < encoder_depth; ++i) lengths.push_back(lengths.back() / downsample_rate);
  return lengths;
}

void DcnConfig::write(KeyValues& kv) const {
  kv.set("frame_len", std::to_string(frame_len));
  kv.set("frame_shift", std::to_string(frame_shift));
  kv.set("channels", std::to_string(channels));
  kv.set("attn_q_channels", std::to_string(attn_q_channels));
  kv.set("attn_v_channels", std::to_string(attn_v_channels));
  kv.set("dense_kernel_time", std::to_string(dense_kernel_time));
  kv.set("causal", causal ? "true" : "false");
  kv.set("use_attention", use_attention ? "true" : "false");
  kv.set("use_dilation", use_dilation ? "true" : "false");
  kv.set("encoder_depth", std::to_string(encoder_depth));
  kv.set("downsample_rate", std::to_string(downsample_rate));
  kv.set("dense_depth", std::to_string(dense_depth));
  kv.set("norm_eps", format_double(norm_eps));
}

DcnConfig DcnConfig::read(const KeyValues& kv) {
  DcnConfig c;
  c.frame_len = kv.get_size("frame_len", c.frame_len);
  c.frame_shift = kv.get_size("frame_shift", c.frame_shift);
  c.channels = kv.get_size("channels", c.channels);
  c.attn_q_channels = kv.get_size("attn_q_channels", c.attn_q_channels);
  c.attn_v_channels = kv.get_size("attn_v_channels", c.attn_v_channels);
  c.causal = kv.get_bool("causal", c.causal);
  c.dense_kernel_time = kv.get_size("dense_kernel_time", c.causal ? 2 : 3);
  c.use_attention = kv.get_bool("use_attention", c.use_attention);
  c.use_dilation = kv.get_bool("use_dilation", c.use_dilation);
  c.encoder_depth = kv.get_size("encoder_depth", c.encoder_depth);
  c.downsample_rate = kv.get_size("downsample_rate", c.downsample_rate);
  c.dense_depth = kv.get_size("dense_depth", c.dense_depth);
  c.norm_eps = kv.get_double("norm_eps", c.norm_eps);
  return c;
}

std::string DcnConfig::to_text() const {
  KeyValues kv;
  write(kv);
  std::string text;
  for (const auto& [k, v] : kv.entries()) text += k + "=" + v + "\n";
  return text;
}

CausalitySpec causality_of(const DcnConfig& cfg) {
  const std::size_t m = cfg.dense_kernel_time;
  std::size_t back = 0;
  std::size_t ahead = 0;
  auto add_conv = [&](std::size_t kernel, std::size_t dilation) {
    back += time_pad_before(kernel, dilation, cfg.causal);
    ahead += time_pad_after(kernel, dilation, cfg.causal);
  };
  auto add_dense = [&] {
    for (std::size_t i = 0; i < cfg.dense_depth; ++i) add_conv(m, cfg.use_dilation ? (std::size_t{1} << i) : 1);
  };
  add_dense();
  for (std::size_t i = 0; i < cfg.encoder_depth; ++i) {
    add_conv(m, 1);
    add_dense();
    add_conv(m, 1);  // decoder sub-pixel
    add_dense();
  }
  CausalitySpec spec{back, ahead};
  if (cfg.use_attention) {
    spec.lookback_frames = CausalitySpec::kUnbounded;
    if (!cfg.causal) spec.lookahead_frames = CausalitySpec::kUnbounded;
  }
  return spec;
}

std::vector<NamedTensor> DcnModel::parameters() const {
  std::vector<NamedTensor> out;
  visit_parameters(*this, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::size_t DcnModel::parameter_count() const {
  std::size_t n = 0;
  visit_parameters(*this, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

DcnModel build_dcn(const DcnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DcnModel model;
  model.config = cfg;
  const std::size_t c = cfg.channels;
  const std::size_t m = cfg.dense_kernel_time;
  const bool causal = cfg.causal;
  const Padding time_padding = causal ? Padding::causal_time : Padding::same;
  const std::vector<std::size_t> lengths = cfg.level_lengths();
  const std::size_t depth = cfg.encoder_depth;
  const std::size_t f_att = cfg.attn_v_channels;

  auto dense = [&](std::size_t len) {
    return make_dense_block(c, len, m, causal, cfg.use_dilation, cfg.norm_eps, rng, cfg.dense_depth);
  };

  model.input = make_conv(1, c, 1, 1, Padding::same, rng);
  model.input_dense = dense(lengths[0]);
  model.audit.push_back({"input", c, 0, lengths[0]});

  for (std::size_t i = 1; i <= depth; ++i) {
    const std::size_t len = lengths[i];
    EncoderStage s;
    s.down = make_conv(c, c, m, 3, time_padding, rng, 1, cfg.downsample_rate);
    s.down_norm = make_layer_norm(len, cfg.norm_eps);
    s.down_slopes = make_prelu_slopes(c);
    if (cfg.use_attention) {
      s.attention = make_attention(c, cfg.attn_q_channels, f_att, causal, rng);
      s.projection = make_conv(c + f_att, c, 1, 1, Padding::same, rng);
      s.projection_norm = make_layer_norm(len, cfg.norm_eps);
      s.projection_slopes = make_prelu_slopes(c);
    }
    s.dense = dense(len);
    model.encoder.push_back(std::move(s));
    model.audit.push_back({"encoder" + std::to_string(i), c, 0, len});
  }

  for (std::size_t i = depth; i >= 1; --i) {
    const std::size_t len = lengths[i - 1];
    DecoderStage s;
    s.up = make_subpixel(2 * c, c, m, 3, 1, cfg.downsample_rate, causal, rng);
    s.up_norm = make_layer_norm(len, cfg.norm_eps);
    s.up_slopes = make_prelu_slopes(c);
    if (cfg.use_attention) {
      s.attention = make_attention(c, cfg.attn_q_channels, f_att, causal, rng);
      s.projection = make_conv(c + f_att, c, 1, 1, Padding::same, rng);
      s.projection_norm = make_layer_norm(len, cfg.norm_eps);
      s.projection_slopes = make_prelu_slopes(c);
    }
    s.dense = dense(len);
    model.decoder.push_back(std::move(s));
    model.audit.push_back({"decoder" + std::to_string(depth - i + 1), c, 0, len});
  }

  model.output = make_conv(2 * c, 1, 1, 1, Padding::same, rng);
  model.audit.push_back({"output", 1, 0, lengths[0]});
  return model;
}

Tensor forward(const DcnModel& model, const FrameMatrix& frames, ForwardTrace* trace) {
  const DcnConfig& cfg = model.config;
  if (!frames.frames.defined() || frames.frames.rank() != 2 || frames.frame_len != cfg.frame_len ||
      frames.frames.extent(1) != cfg.frame_len) {
    throw std::invalid_argument("forward: frames of length " + std::to_string(frames.frame_len) +
                                " but model expects " + std::to_string(cfg.frame_len));
  }
  const std::size_t t = frames.frames.extent(0);
  auto record = [&](const std::string& name, const Tensor& x) {
    if (trace) trace->shapes.push_back({name, x.extent(0), x.extent(1), x.extent(2)});
  };
  auto attend = [&](const Tensor& x, const AttentionParams& attn, const Conv2dParams& proj,
                    const LayerNormParams& norm, const Tensor& slopes, const std::string& where) {
    AttentionOutput a = self_attention(x, attn);
    if (trace) trace->attention_weights.push_back(a.weights);
    Tensor joined = checked_concat({a.output, x}, where);
    return norm_act(conv2d(joined, proj), norm, slopes);
  };

  Tensor x = reshape(frames.frames, {1, t, cfg.frame_len});
  std::vector<Tensor> skips;
  Tensor h = dense_block(conv2d(x, model.input), model.input_dense);
  record("input", h);
  skips.push_back(h);

  for (std::size_t i = 0; i < model.encoder.size(); ++i) {
    const EncoderStage& s = model.encoder[i];
    const std::string name = "encoder" + std::to_string(i + 1);
    h = norm_act(conv2d(h, s.down), s.down_norm, s.down_slopes);
    if (cfg.use_attention) h = attend(h, s.attention, s.projection, s.projection_norm, s.projection_slopes, name);
    h = dense_block(h, s.dense);
    record(name, h);
    skips.push_back(h);
  }

  for (std::size_t i = 0; i < model.decoder.size(); ++i) {
    const DecoderStage& s = model.decoder[i];
    const std::string name = "decoder" + std::to_string(i + 1);
    const Tensor& skip = skips[skips.size() - 1 - i];
    h = checked_concat({h, skip}, name);
    h = norm_act(subpixel_conv(h, s.up), s.up_norm, s.up_slopes);
    if (cfg.use_attention) h = attend(h, s.attention, s.projection, s.projection_norm, s.projection_slopes, name);
    h = dense_block(h, s.dense);
    record(name, h);
  }

  h = conv2d(checked_concat({h, skips.front()}, "output"), model.output);
  record("output", h);
  return reshape(h, {t, cfg.frame_len});
}

std::vector<double> enhance_utterance(const DcnModel& model, std::span<const double> y) {
  if (y.empty()) throw std::invalid_argument("enhance_utterance: empty signal");
  NoGradGuard no_grad;
  FrameMatrix fm = frame_signal(y, model.config.frame_len, model.config.frame_shift);
  fm.frames = forward(model, fm);
  Tensor out = overlap_add(fm);
  return {out.data().begin(), out.data().end()};
}

std::vector<Tensor> attention_maps(const DcnModel& model, std::span<const double> y) {
  if (!model.config.use_attention) throw std::invalid_argument("attention_maps: model has attention disabled");
  if (y.empty()) throw std::invalid_argument("attention_maps: empty signal");
  NoGradGuard no_grad;
  FrameMatrix fm = frame_signal(y, model.config.frame_len, model.config.frame_shift);
  ForwardTrace trace;
  forward(model, fm, &trace);
  return std::move(trace.attention_weights);
}

std::uint64_t fnv1a64(std::span<const double> values) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void write_named_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  write_pod<std::uint64_t>(out, tensors.size());
  for (const NamedTensor& nt : tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    const Shape& shape = nt.tensor.shape();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) write_pod<std::uint64_t>(out, e);
    auto data = nt.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  }
}

std::vector<NamedTensor> read_named_tensors(std::istream& in) {
  const auto count = read_pod<std::uint64_t>(in);
  std::vector<NamedTensor> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in);
    if (name_len > 4096) throw std::runtime_error("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = read_pod<std::uint64_t>(in);
    std::vector<double> data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated in tensor " + name);
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return tensors;
}

void save_checkpoint(const DcnModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  const std::string config = model.config.to_text();
  write_pod<std::uint64_t>(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto params = model.parameters();
  write_named_tensors(out, params);
  if (!out) throw std::runtime_error("failed writing " + path.string());

  std::ofstream manifest(path.string() + ".manifest");
  if (!manifest) throw std::runtime_error("cannot write manifest for " + path.string());
  manifest << "# name shape fnv1a64\n";
  for (const NamedTensor& p : params) {
    manifest << p.name << ' ' << shape_string(p.tensor.shape()) << ' ' << std::hex << std::setw(16)
             << std::setfill('0') << fnv1a64(p.tensor.data()) << std::dec << '\n';
  }
}

DcnModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a DCN checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto config_len = read_pod<std::uint64_t>(in);
  if (config_len > (1u << 20)) throw std::runtime_error("checkpoint: implausible config length");
  std::string config(config_len, '\0');
  in.read(config.data(), static_cast<std::streamsize>(config_len));
  if (!in) throw std::runtime_error("checkpoint truncated in config block");

  DcnModel model = build_dcn(DcnConfig::read(KeyValues::parse_string(config)), 0);
  std::map<std::string, Tensor> stored;
  for (NamedTensor& nt : read_named_tensors(in)) stored.emplace(nt.name, std::move(nt.tensor));
  for (NamedTensor& p : model.parameters()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw std::runtime_error("checkpoint missing parameter " + p.name);
    if (it->second.shape() != p.tensor.shape()) {
      throw std::runtime_error("checkpoint parameter " + p.name + " has shape " + shape_string(it->second.shape()) +
                               ", expected " + shape_string(p.tensor.shape()));
    }
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
    stored.erase(it);
  }
  if (!stored.empty()) throw std::runtime_error("checkpoint has unknown parameter " + stored.begin()->first);
  return model;
}

}  // namespace dcn
