#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dcn/config.hpp"
#include "dcn/layers.hpp"
#include "dcn/signal.hpp"
#include "dcn/tensor.hpp"

namespace dcn {

struct DcnConfig {
  std::size_t frame_len = 512;
  std::size_t frame_shift = 256;
  std::size_t channels = 64;
  std::size_t attn_q_channels = 5;
  std::size_t attn_v_channels = 32;
  std::size_t dense_kernel_time = 2;  // m; 2 for causal, 3 for non-causal
  bool causal = true;
  bool use_attention = true;
  bool use_dilation = false;
  std::size_t encoder_depth = 6;
  std::size_t downsample_rate = 2;
  std::size_t dense_depth = 5;
  double norm_eps = 1e-5;

  void validate() const;
  // Frame lengths seen by each encoder level, input level first.
  std::vector<std::size_t> level_lengths() const;

  void write(KeyValues& kv) const;
  static DcnConfig read(const KeyValues& kv);
  std::string to_text() const;
};

// Frame context used per output frame; kUnbounded when attention can see
// the whole utterance in that direction.
struct CausalitySpec {
  static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();
  std::size_t lookback_frames = 0;
  std::size_t lookahead_frames = 0;
};

CausalitySpec causality_of(const DcnConfig& cfg);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct EncoderStage {
  Conv2dParams down;
  LayerNormParams down_norm;
  Tensor down_slopes;
  AttentionParams attention;  // unset kernels when attention is disabled
  Conv2dParams projection;
  LayerNormParams projection_norm;
  Tensor projection_slopes;
  DenseBlockParams dense;
};

struct DecoderStage {
  SubPixelParams up;
  LayerNormParams up_norm;
  Tensor up_slopes;
  AttentionParams attention;
  Conv2dParams projection;
  LayerNormParams projection_norm;
  Tensor projection_slopes;
  DenseBlockParams dense;
};

struct LayerShape {
  std::string name;
  std::size_t channels = 0;
  std::size_t frames = 0;  // 0 in the build-time audit (frame count is data dependent)
  std::size_t length = 0;

  bool operator==(const LayerShape&) const = default;
};

struct DcnModel {
  DcnConfig config;
  Conv2dParams input;
  DenseBlockParams input_dense;
  std::vector<EncoderStage> encoder;
  std::vector<DecoderStage> decoder;  // decoder[0] runs first (deepest level)
  Conv2dParams output;
  std::vector<LayerShape> audit;      // per-layer output [channels, L]

  // Stable order; names identify the layer and role.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
};

DcnModel build_dcn(const DcnConfig& cfg, std::uint64_t seed);

struct ForwardTrace {
  std::vector<Tensor> attention_weights;  // encoder modules first, then decoder
  std::vector<LayerShape> shapes;
};

// Maps [T, L] noisy frames to [T, L] enhanced frames.
Tensor forward(const DcnModel& model, const FrameMatrix& frames, ForwardTrace* trace = nullptr);

std::vector<double> enhance_utterance(const DcnModel& model, std::span<const double> y);

// Softmax weights of every attention module for utterance `y`. Row i holds
// the weights frame i places on each frame.
std::vector<Tensor> attention_maps(const DcnModel& model, std::span<const double> y);

std::uint64_t fnv1a64(std::span<const double> values);

// Binary blob section shared by checkpoints and optimizer state files.
void write_named_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_named_tensors(std::istream& in);

// Layout: "DCNCKPT\0", uint32 version, uint64 config length, config text,
// named tensor section. `<path>.manifest` lists name, shape and checksum.
void save_checkpoint(const DcnModel& model, const std::filesystem::path& path);
DcnModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dcn
