#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dcn/tensor.hpp"

namespace dcn {

enum class Padding { valid, same, causal_time };

// Cross-correlation over [C_in, T, L] inputs. Along L, `same` and
// `causal_time` both use SAME padding with the extra zero placed before;
// along T, `causal_time` pads (m - 1) * dilation zeros in front only.
struct Conv2dParams {
  Tensor kernel;  // [C_out, C_in, m, n]
  Tensor bias;    // [C_out]
  std::size_t stride_time = 1;
  std::size_t stride_freq = 1;
  Padding padding = Padding::same;
  std::size_t dilation_time = 1;

  std::size_t out_channels() const { return kernel.extent(0); }
  std::size_t in_channels() const { return kernel.extent(1); }
  std::size_t kernel_time() const { return kernel.extent(2); }
  std::size_t kernel_freq() const { return kernel.extent(3); }
};

struct ConvGeometry {
  std::size_t out_time = 0;
  std::size_t out_len = 0;
  std::size_t pad_time_before = 0;
  std::size_t pad_len_before = 0;
};

ConvGeometry conv_geometry(const Conv2dParams& p, std::size_t time, std::size_t len);

Tensor conv2d(const Tensor& x, const Conv2dParams& p);

// Upsampling by (rate_time, rate_freq): one SAME convolution per sub-pixel
// position, interleaved so out(i, j) = S[i % r][j % s](i / r, j / s).
struct SubPixelParams {
  std::vector<Conv2dParams> kernels;  // row-major over (i, j), r * s entries
  std::size_t rate_time = 1;
  std::size_t rate_freq = 1;
};

Tensor subpixel_conv(const Tensor& x, const SubPixelParams& p);

// Normalises each (channel, frame) slice over the last axis; gamma and beta
// are shared across channels and frames.
struct LayerNormParams {
  Tensor gamma;  // [L]
  Tensor beta;   // [L]
  double eps = 1e-5;
};

Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

struct DenseLayer {
  Conv2dParams conv;
  LayerNormParams norm;
  Tensor slopes;  // PReLU, one per output channel
};

struct DenseBlockParams {
  std::vector<DenseLayer> layers;
  std::size_t growth_channels = 0;

  std::vector<std::size_t> input_channels() const;
};

// Each layer sees concat(previous input, previous output); the last layer's
// output is returned.
Tensor dense_block(const Tensor& x, const DenseBlockParams& p);

struct AttentionParams {
  Conv2dParams query;  // 1x1, C -> E
  Conv2dParams key;    // 1x1, C -> E
  Conv2dParams value;  // 1x1, C -> F
  bool causal = false;
};

struct AttentionOutput {
  Tensor output;   // [F, T, L]
  Tensor weights;  // [T, T] row-stochastic
};

AttentionOutput self_attention(const Tensor& x, const AttentionParams& p);

// Parameter construction. Kernels are drawn uniformly from
// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases start at zero.
Conv2dParams make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_time,
                       std::size_t kernel_freq, Padding padding, std::mt19937_64& rng,
                       std::size_t stride_time = 1, std::size_t stride_freq = 1, std::size_t dilation_time = 1);
LayerNormParams make_layer_norm(std::size_t features, double eps);
Tensor make_prelu_slopes(std::size_t channels, double init = 0.25);
DenseBlockParams make_dense_block(std::size_t channels, std::size_t features, std::size_t kernel_time,
                                  bool causal, bool dilated, double eps, std::mt19937_64& rng,
                                  std::size_t depth = 5);
AttentionParams make_attention(std::size_t in_channels, std::size_t qk_channels, std::size_t v_channels, bool causal,
                               std::mt19937_64& rng);
SubPixelParams make_subpixel(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_time,
                             std::size_t kernel_freq, std::size_t rate_time, std::size_t rate_freq, bool causal,
                             std::mt19937_64& rng);

}  // namespace dcn
