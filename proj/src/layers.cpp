#include "dcn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace dcn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Im2ColLayout {
  std::size_t channels, time, len;
  std::size_t kt, kf;
  std::size_t stride_t, stride_f, dilation;
  ConvGeometry geo;

  std::size_t rows() const { return channels * kt * kf; }
  std::size_t cols() const { return geo.out_time * geo.out_len; }

  // Valid output range [lo, hi) along L for kernel column v.
  std::pair<std::size_t, std::size_t> len_range(std::size_t v) const {
    const auto shift = static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(geo.pad_len_before);
    const auto sf = static_cast<std::ptrdiff_t>(stride_f);
    std::ptrdiff_t lo = shift >= 0 ? 0 : (-shift + sf - 1) / sf;
    std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(len) - shift + sf - 1) / sf;
    hi = std::clamp<std::ptrdiff_t>(hi, 0, static_cast<std::ptrdiff_t>(geo.out_len));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }

  // Calls fn(output_row_offset, input_row_offset, lo, hi) for each output
  // frame of row r whose input frame is in bounds; taps j in [lo, hi) read
  // input (j * stride_f + v - pad_len_before).
  template <typename Fn>
  void for_each_run(std::size_t r, Fn&& fn) const {
    const std::size_t v = r % kf;
    const std::size_t u = (r / kf) % kt;
    const std::size_t c = r / (kf * kt);
    const auto [lo, hi] = len_range(v);
    for (std::size_t i = 0; i < geo.out_time; ++i) {
      const auto ti = static_cast<std::ptrdiff_t>(i * stride_t + u * dilation) -
                      static_cast<std::ptrdiff_t>(geo.pad_time_before);
      if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(time)) continue;
      fn(i * geo.out_len, (c * time + static_cast<std::size_t>(ti)) * len, lo, hi);
    }
  }

  std::ptrdiff_t len_offset(std::size_t r) const {
    return static_cast<std::ptrdiff_t>(r % kf) - static_cast<std::ptrdiff_t>(geo.pad_len_before);
  }

  void im2col(const double* in, double* columns) const {
    std::fill(columns, columns + rows() * cols(), 0.0);
    for (std::size_t r = 0; r < rows(); ++r) {
      double* dst = columns + r * cols();
      const std::ptrdiff_t shift = len_offset(r);
      for_each_run(r, [&](std::size_t out_row, std::size_t in_row, std::size_t lo, std::size_t hi) {
        if (lo == hi) return;
        const double* src = in + static_cast<std::ptrdiff_t>(in_row + lo * stride_f) + shift;
        if (stride_f == 1) {
          std::copy(src, src + (hi - lo), dst + out_row + lo);
        } else {
          for (std::size_t j = lo; j < hi; ++j) dst[out_row + j] = src[(j - lo) * stride_f];
        }
      });
    }
  }

  void col2im(const double* columns, double* grad) const {
    for (std::size_t r = 0; r < rows(); ++r) {
      const double* src = columns + r * cols();
      const std::ptrdiff_t shift = len_offset(r);
      for_each_run(r, [&](std::size_t out_row, std::size_t in_row, std::size_t lo, std::size_t hi) {
        if (lo == hi) return;
        double* dst = grad + static_cast<std::ptrdiff_t>(in_row + lo * stride_f) + shift;
        const double* s = src + out_row + lo;
        if (stride_f == 1) {
          for (std::size_t j = 0; j < hi - lo; ++j) dst[j] += s[j];
        } else {
          for (std::size_t j = 0; j < hi - lo; ++j) dst[j * stride_f] += s[j];
        }
      });
    }
  }
};

void check_conv_params(const Conv2dParams& p) {
  if (!p.kernel.defined() || p.kernel.rank() != 4) throw std::invalid_argument("conv2d: kernel must be 4-D");
  if (!p.bias.defined() || p.bias.rank() != 1 || p.bias.extent(0) != p.kernel.extent(0)) {
    throw std::invalid_argument("conv2d: bias " + (p.bias.defined() ? shape_string(p.bias.shape()) : "[]") +
                                " does not match kernel " + shape_string(p.kernel.shape()));
  }
  if (p.stride_time == 0 || p.stride_freq == 0 || p.dilation_time == 0) {
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1");
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }


void add_bias(std::vector<double>& out, std::span<const double> bias, std::size_t cols) {
  for (std::size_t c = 0; c < bias.size(); ++c) {
    double* row = out.data() + c * cols;
    for (std::size_t k = 0; k < cols; ++k) row[k] += bias[c];
  }
}

void accumulate_bias_grad(Node& bias, const double* upstream, std::size_t c_out, std::size_t cols) {
  if (!bias.requires_grad) return;
  auto& g = bias.grad_buffer();
  for (std::size_t c = 0; c < c_out; ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < cols; ++k) acc += upstream[c * cols + k];
    g[c] += acc;
  }
}

Tensor conv_full_im2col(const Tensor& x, const Conv2dParams& p, const Im2ColLayout& layout) {
  const std::size_t rows = layout.rows();
  const std::size_t cols = layout.cols();
  const std::size_t c_out = p.out_channels();

  std::vector<double> columns(rows * cols);
  layout.im2col(x.data().data(), columns.data());

  std::vector<double> out(c_out * cols);
  MatrixMap result(out.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(cols));
  result.noalias() = ConstMatrixMap(p.kernel.data().data(), static_cast<Eigen::Index>(c_out),
                                    static_cast<Eigen::Index>(rows)) *
                     ConstMatrixMap(columns.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  add_bias(out, p.bias.data(), cols);

  return make_op_result(
      "conv2d", {c_out, layout.geo.out_time, layout.geo.out_len}, std::move(out), {x, p.kernel, p.bias},
      [layout, rows, cols, c_out](Node& self) {
        Node& input = *self.inputs[0];
        Node& kernel = *self.inputs[1];
        const auto er = static_cast<Eigen::Index>(rows);
        const auto ec = static_cast<Eigen::Index>(cols);
        const auto eo = static_cast<Eigen::Index>(c_out);
        ConstMatrixMap upstream(self.grad.data(), eo, ec);
        if (kernel.requires_grad) {
          // columns are rebuilt rather than kept alive between passes
          std::vector<double> columns(rows * cols);
          layout.im2col(input.data.data(), columns.data());
          MatrixMap(kernel.grad_buffer().data(), eo, er).noalias() +=
              upstream * ConstMatrixMap(columns.data(), er, ec).transpose();
        }
        accumulate_bias_grad(*self.inputs[2], self.grad.data(), c_out, cols);
        if (input.requires_grad) {
          RowMatrix grad_cols = ConstMatrixMap(kernel.data.data(), eo, er).transpose() * upstream;
          layout.col2im(grad_cols.data(), input.grad_buffer().data());
        }
      });
}

// Unit time stride: the frequency taps are unrolled once into a band matrix
// [C_in * n, T * L_out] and each time tap becomes a GEMM over a contiguous
// column range of it.
struct TimeTapPlan {
  Im2ColLayout band;
  std::size_t c_out = 0;
  std::size_t kt = 0;
  std::size_t out_len = 0;
  std::size_t out_time = 0;
  std::size_t dilation = 1;
  std::size_t pad_before = 0;
  bool band_is_input = false;  // 1-wide kernel without padding or stride along L

  std::size_t band_rows() const { return band.rows(); }
  std::size_t band_cols() const { return band.cols(); }

  // Output frames [lo, hi) that read input frame i + shift for tap u.
  bool tap_range(std::size_t u, std::size_t& lo, std::size_t& hi, std::ptrdiff_t& shift) const {
    shift = static_cast<std::ptrdiff_t>(u * dilation) - static_cast<std::ptrdiff_t>(pad_before);
    const auto t_in = static_cast<std::ptrdiff_t>(band.time);
    const std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t b = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_time), t_in - shift);
    if (b <= a) return false;
    lo = static_cast<std::size_t>(a);
    hi = static_cast<std::size_t>(b);
    return true;
  }

  // Kernel slice for time tap u as a [C_out, C_in * n] matrix.
  std::vector<double> tap_kernel(std::span<const double> kernel, std::size_t u) const {
    const std::size_t n = band.kf;
    const std::size_t c_in = band.channels;
    std::vector<double> k(c_out * c_in * n);
    for (std::size_t o = 0; o < c_out; ++o) {
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* src = kernel.data() + ((o * c_in + c) * kt + u) * n;
        std::copy(src, src + n, k.data() + (o * c_in + c) * n);
      }
    }
    return k;
  }

  void scatter_tap_kernel(const std::vector<double>& k, std::vector<double>& grad, std::size_t u) const {
    const std::size_t n = band.kf;
    const std::size_t c_in = band.channels;
    for (std::size_t o = 0; o < c_out; ++o) {
      for (std::size_t c = 0; c < c_in; ++c) {
        double* dst = grad.data() + ((o * c_in + c) * kt + u) * n;
        for (std::size_t v = 0; v < n; ++v) dst[v] += k[(o * c_in + c) * n + v];
      }
    }
  }

  // Returns a pointer to the band matrix, building it into `storage` if needed.
  const double* build_band(const double* input, std::vector<double>& storage) const {
    if (band_is_input) return input;
    storage.resize(band_rows() * band_cols());
    band.im2col(input, storage.data());
    return storage.data();
  }
};

using StridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using MutableStridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

Tensor conv_time_taps(const Tensor& x, const Conv2dParams& p, const Im2ColLayout& layout) {
  TimeTapPlan plan;
  plan.band = layout;
  plan.band.kt = 1;
  plan.band.stride_t = 1;
  plan.band.dilation = 1;
  plan.band.geo.pad_time_before = 0;
  plan.band.geo.out_time = layout.time;
  plan.c_out = p.out_channels();
  plan.kt = layout.kt;
  plan.out_len = layout.geo.out_len;
  plan.out_time = layout.geo.out_time;
  plan.dilation = layout.dilation;
  plan.pad_before = layout.geo.pad_time_before;
  plan.band_is_input = layout.kf == 1 && layout.stride_f == 1 && layout.geo.pad_len_before == 0;

  const std::size_t cols = plan.out_time * plan.out_len;
  const auto eo = static_cast<Eigen::Index>(plan.c_out);
  const auto er = static_cast<Eigen::Index>(plan.band_rows());
  const auto band_stride = static_cast<Eigen::Index>(plan.band_cols());
  const auto ecols = static_cast<Eigen::Index>(cols);

  std::vector<double> storage;
  const double* band = plan.build_band(x.data().data(), storage);
  std::vector<double> out(plan.c_out * cols, 0.0);
  for (std::size_t u = 0; u < plan.kt; ++u) {
    std::size_t lo = 0, hi = 0;
    std::ptrdiff_t shift = 0;
    if (!plan.tap_range(u, lo, hi, shift)) continue;
    const std::vector<double> k = plan.tap_kernel(p.kernel.data(), u);
    const auto width = static_cast<Eigen::Index>((hi - lo) * plan.out_len);
    const std::size_t in_col = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo) + shift) * plan.out_len;
    MutableStridedMap(out.data() + lo * plan.out_len, eo, width, Eigen::OuterStride<>(ecols)).noalias() +=
        ConstMatrixMap(k.data(), eo, er) *
        StridedMap(band + in_col, er, width, Eigen::OuterStride<>(band_stride));
  }
  add_bias(out, p.bias.data(), cols);

  return make_op_result(
      "conv2d", {plan.c_out, plan.out_time, plan.out_len}, std::move(out), {x, p.kernel, p.bias},
      [plan, cols](Node& self) {
        Node& input = *self.inputs[0];
        Node& kernel = *self.inputs[1];
        const auto eo = static_cast<Eigen::Index>(plan.c_out);
        const auto er = static_cast<Eigen::Index>(plan.band_rows());
        const auto band_stride = static_cast<Eigen::Index>(plan.band_cols());
        const auto ecols = static_cast<Eigen::Index>(cols);
        std::vector<double> storage;
        const double* band = kernel.requires_grad ? plan.build_band(input.data.data(), storage) : nullptr;
        std::vector<double> band_grad;
        double* band_grad_ptr = nullptr;
        if (input.requires_grad) {
          if (plan.band_is_input) {
            band_grad_ptr = input.grad_buffer().data();
          } else {
            band_grad.assign(plan.band_rows() * plan.band_cols(), 0.0);
            band_grad_ptr = band_grad.data();
          }
        }
        for (std::size_t u = 0; u < plan.kt; ++u) {
          std::size_t lo = 0, hi = 0;
          std::ptrdiff_t shift = 0;
          if (!plan.tap_range(u, lo, hi, shift)) continue;
          const auto width = static_cast<Eigen::Index>((hi - lo) * plan.out_len);
          const std::size_t in_col = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo) + shift) * plan.out_len;
          StridedMap upstream(self.grad.data() + lo * plan.out_len, eo, width, Eigen::OuterStride<>(ecols));
          if (kernel.requires_grad) {
            RowMatrix k_grad = upstream * StridedMap(band + in_col, er, width, Eigen::OuterStride<>(band_stride)).transpose();
            std::vector<double> flat(k_grad.data(), k_grad.data() + k_grad.size());
            plan.scatter_tap_kernel(flat, kernel.grad_buffer(), u);
          }
          if (band_grad_ptr) {
            const std::vector<double> k = plan.tap_kernel(kernel.data, u);
            MutableStridedMap(band_grad_ptr + in_col, er, width, Eigen::OuterStride<>(band_stride)).noalias() +=
                ConstMatrixMap(k.data(), eo, er).transpose() * upstream;
          }
        }
        accumulate_bias_grad(*self.inputs[2], self.grad.data(), plan.c_out, cols);
        if (input.requires_grad && !plan.band_is_input) plan.band.col2im(band_grad.data(), input.grad_buffer().data());
      });
}

// Stride-1 convolution along L: the input is copied once into rows of width
// W = out_len + n - 1 with the L padding in place, so every (u, v) tap is a
// single GEMM between the kernel slice and a shifted column window. Output
// columns out_len..W-1 of each frame are scratch and dropped.
Tensor conv_shifted_taps(const Tensor& x, const Conv2dParams& p, const Im2ColLayout& layout) {
  const std::size_t c_in = layout.channels;
  const std::size_t t_in = layout.time;
  const std::size_t len = layout.len;
  const std::size_t kt = layout.kt;
  const std::size_t n = layout.kf;
  const std::size_t c_out = p.out_channels();
  const std::size_t out_time = layout.geo.out_time;
  const std::size_t out_len = layout.geo.out_len;
  const std::size_t width = out_len + n - 1;
  const std::size_t pad_before = layout.geo.pad_len_before;
  const std::size_t row = t_in * width + n - 1;
  const std::size_t wide_cols = out_time * width;
  const bool direct = width == len && n == 1;

  std::shared_ptr<std::vector<double>> padded;
  const double* src = x.data().data();
  std::size_t src_row = t_in * len;
  if (!direct) {
    padded = std::make_shared<std::vector<double>>(c_in * row, 0.0);
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t t = 0; t < t_in; ++t) {
        std::copy_n(src + (c * t_in + t) * len, len, padded->data() + c * row + t * width + pad_before);
      }
    }
    src = padded->data();
    src_row = row;
  }

  TimeTapPlan taps;
  taps.band = layout;
  taps.out_time = out_time;
  taps.dilation = layout.dilation;
  taps.pad_before = layout.geo.pad_time_before;

  using KernelMap = Eigen::Map<const RowMatrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
  using MutableKernelMap = Eigen::Map<RowMatrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
  const auto eo = static_cast<Eigen::Index>(c_out);
  const auto ei = static_cast<Eigen::Index>(c_in);
  const Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic> kstride(static_cast<Eigen::Index>(c_in * kt * n),
                                                              static_cast<Eigen::Index>(kt * n));

  std::vector<double> wide(c_out * wide_cols, 0.0);
  for (std::size_t u = 0; u < kt; ++u) {
    std::size_t lo = 0, hi = 0;
    std::ptrdiff_t shift = 0;
    if (!taps.tap_range(u, lo, hi, shift)) continue;
    const auto cols = static_cast<Eigen::Index>((hi - lo) * width);
    const std::size_t in_frame = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo) + shift);
    for (std::size_t v = 0; v < n; ++v) {
      MutableStridedMap(wide.data() + lo * width, eo, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(wide_cols)))
          .noalias() += KernelMap(p.kernel.data().data() + u * n + v, eo, ei, kstride) *
                        StridedMap(src + in_frame * width + v, ei, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(src_row)));
    }
  }
  std::vector<double> out(c_out * out_time * out_len);
  auto bias = p.bias.data();
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t t = 0; t < out_time; ++t) {
      const double* w = wide.data() + o * wide_cols + t * width;
      double* dst = out.data() + (o * out_time + t) * out_len;
      for (std::size_t j = 0; j < out_len; ++j) dst[j] = w[j] + bias[o];
    }
  }

  return make_op_result(
      "conv2d", {c_out, out_time, out_len}, std::move(out), {x, p.kernel, p.bias},
      [=](Node& self) {
        Node& input = *self.inputs[0];
        Node& kernel = *self.inputs[1];
        std::vector<double> g_wide(c_out * wide_cols, 0.0);
        for (std::size_t o = 0; o < c_out; ++o) {
          for (std::size_t t = 0; t < out_time; ++t) {
            std::copy_n(self.grad.data() + (o * out_time + t) * out_len, out_len, g_wide.data() + o * wide_cols + t * width);
          }
        }
        const double* fwd = direct ? input.data.data() : padded->data();
        std::vector<double> g_padded;
        double* g_src = nullptr;
        if (input.requires_grad) {
          if (direct) {
            g_src = input.grad_buffer().data();
          } else {
            g_padded.assign(c_in * row, 0.0);
            g_src = g_padded.data();
          }
        }
        for (std::size_t u = 0; u < kt; ++u) {
          std::size_t lo = 0, hi = 0;
          std::ptrdiff_t shift = 0;
          if (!taps.tap_range(u, lo, hi, shift)) continue;
          const auto cols = static_cast<Eigen::Index>((hi - lo) * width);
          const std::size_t in_frame = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo) + shift);
          StridedMap upstream(g_wide.data() + lo * width, eo, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(wide_cols)));
          for (std::size_t v = 0; v < n; ++v) {
            const std::size_t at = in_frame * width + v;
            if (kernel.requires_grad) {
              MutableKernelMap(kernel.grad_buffer().data() + u * n + v, eo, ei, kstride).noalias() +=
                  upstream * StridedMap(fwd + at, ei, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(src_row))).transpose();
            }
            if (g_src) {
              MutableStridedMap(g_src + at, ei, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(src_row))).noalias() +=
                  KernelMap(kernel.data.data() + u * n + v, eo, ei, kstride).transpose() * upstream;
            }
          }
        }
        accumulate_bias_grad(*self.inputs[2], self.grad.data(), c_out, out_time * out_len);
        if (input.requires_grad && !direct) {
          auto& g = input.grad_buffer();
          for (std::size_t c = 0; c < c_in; ++c) {
            for (std::size_t t = 0; t < t_in; ++t) {
              const double* from = g_padded.data() + c * row + t * width + pad_before;
              double* to = g.data() + (c * t_in + t) * len;
              for (std::size_t j = 0; j < len; ++j) to[j] += from[j];
            }
          }
        }
      });
}

}  // namespace

ConvGeometry conv_geometry(const Conv2dParams& p, std::size_t time, std::size_t len) {
  check_conv_params(p);
  const std::size_t m = p.kernel_time();
  const std::size_t n = p.kernel_freq();
  const std::size_t span_t = (m - 1) * p.dilation_time + 1;
  ConvGeometry g;
  if (p.padding == Padding::valid) {
    if (time < span_t || len < n) {
      throw std::invalid_argument("conv2d: kernel " + std::to_string(span_t) + "x" + std::to_string(n) +
                                  " larger than input " + std::to_string(time) + "x" + std::to_string(len));
    }
    g.out_time = (time - span_t) / p.stride_time + 1;
    g.out_len = (len - n) / p.stride_freq + 1;
    return g;
  }
  g.out_len = ceil_div(len, p.stride_freq);
  const std::size_t need_l = (g.out_len - 1) * p.stride_freq + n;
  const std::size_t pad_l = need_l > len ? need_l - len : 0;
  g.pad_len_before = ceil_div(pad_l, 2);

  g.out_time = ceil_div(time, p.stride_time);
  if (p.padding == Padding::causal_time) {
    g.pad_time_before = (m - 1) * p.dilation_time;
  } else {
    const std::size_t need_t = (g.out_time - 1) * p.stride_time + span_t;
    const std::size_t pad_t = need_t > time ? need_t - time : 0;
    g.pad_time_before = ceil_div(pad_t, 2);
  }
  return g;
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  check_conv_params(p);
  if (!x.defined() || x.rank() != 3) {
    throw std::invalid_argument("conv2d: expected [C, T, L] input, got " + (x.defined() ? shape_string(x.shape()) : "[]"));
  }
  if (x.extent(0) != p.in_channels()) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.extent(0)) + " channels, kernel expects " +
                                std::to_string(p.in_channels()));
  }
  Im2ColLayout layout{x.extent(0),   x.extent(1),   x.extent(2),      p.kernel_time(),
                      p.kernel_freq(), p.stride_time, p.stride_freq, p.dilation_time,
                      conv_geometry(p, x.extent(1), x.extent(2))};
  if (p.stride_time != 1) return conv_full_im2col(x, p, layout);
  return p.stride_freq == 1 ? conv_shifted_taps(x, p, layout) : conv_time_taps(x, p, layout);
}

Tensor subpixel_conv(const Tensor& x, const SubPixelParams& p) {
  const std::size_t r = p.rate_time;
  const std::size_t s = p.rate_freq;
  if (r == 0 || s == 0) throw std::invalid_argument("subpixel_conv: rates must be >= 1");
  if (p.kernels.size() != r * s) {
    throw std::invalid_argument("subpixel_conv: expected " + std::to_string(r * s) + " kernels, got " +
                                std::to_string(p.kernels.size()));
  }
  const Shape& first = p.kernels.front().kernel.shape();
  std::vector<Tensor> kernels;
  std::vector<Tensor> biases;
  for (const Conv2dParams& k : p.kernels) {
    check_conv_params(k);
    if (k.kernel.shape() != first || k.padding == Padding::valid || k.stride_time != 1 || k.stride_freq != 1) {
      throw std::invalid_argument("subpixel_conv: kernels must share shape and use unit-stride SAME padding");
    }
    kernels.push_back(k.kernel);
    biases.push_back(k.bias);
  }
  if (r * s == 1) return conv2d(x, p.kernels.front());

  // One convolution with the stacked kernels, then interleave the r*s blocks.
  Conv2dParams stacked = p.kernels.front();
  stacked.kernel = concat_channels(kernels);
  stacked.bias = concat_channels(biases);
  Tensor y = conv2d(x, stacked);
  const std::size_t c_out = first[0];
  const std::size_t t = y.extent(1);
  const std::size_t l = y.extent(2);
  Tensor blocks = reshape(y, {r, s, c_out, t, l});
  Tensor woven = permute(blocks, {2, 3, 0, 4, 1});
  return reshape(woven, {c_out, t * r, l * s});
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  if (!x.defined() || x.rank() < 1) throw std::invalid_argument("layer_norm: undefined input");
  const std::size_t features = x.shape().back();
  if (!p.gamma.defined() || !p.beta.defined() || p.gamma.numel() != features || p.beta.numel() != features) {
    throw std::invalid_argument("layer_norm: gamma/beta must have " + std::to_string(features) + " entries");
  }
  if (!(p.eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t slices = x.numel() / features;
  auto in = x.data();
  auto gamma = p.gamma.data();
  auto beta = p.beta.data();
  auto normalized = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(slices);
  std::vector<double> out(x.numel());
  const double n = static_cast<double>(features);
  for (std::size_t s = 0; s < slices; ++s) {
    const double* row = in.data() + s * features;
    double mu = 0.0;
    for (std::size_t k = 0; k < features; ++k) mu += row[k];
    mu /= n;
    // second pass corrects the rounding of the first mean
    double correction = 0.0;
    for (std::size_t k = 0; k < features; ++k) correction += row[k] - mu;
    mu += correction / n;
    double var = 0.0;
    for (std::size_t k = 0; k < features; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + p.eps);
    (*inv_std)[s] = inv;
    for (std::size_t k = 0; k < features; ++k) {
      const double xhat = (row[k] - mu) * inv;
      (*normalized)[s * features + k] = xhat;
      out[s * features + k] = xhat * gamma[k] + beta[k];
    }
  }
  return make_op_result("layer_norm", x.shape(), std::move(out), {x, p.gamma, p.beta},
                        [normalized, inv_std, slices, features, n](Node& self) {
                          Node& input = *self.inputs[0];
                          Node& gamma_node = *self.inputs[1];
                          Node& beta_node = *self.inputs[2];
                          const auto& xhat = *normalized;
                          if (gamma_node.requires_grad) {
                            auto& g = gamma_node.grad_buffer();
                            for (std::size_t i = 0; i < xhat.size(); ++i) g[i % features] += self.grad[i] * xhat[i];
                          }
                          if (beta_node.requires_grad) {
                            auto& g = beta_node.grad_buffer();
                            for (std::size_t i = 0; i < xhat.size(); ++i) g[i % features] += self.grad[i];
                          }
                          if (!input.requires_grad) return;
                          auto& g = input.grad_buffer();
                          std::vector<double> gx(features);
                          for (std::size_t s = 0; s < slices; ++s) {
                            const std::size_t base = s * features;
                            double mean_g = 0.0;
                            double mean_gx = 0.0;
                            for (std::size_t k = 0; k < features; ++k) {
                              gx[k] = self.grad[base + k] * gamma_node.data[k];
                              mean_g += gx[k];
                              mean_gx += gx[k] * xhat[base + k];
                            }
                            mean_g /= n;
                            mean_gx /= n;
                            const double inv = (*inv_std)[s];
                            for (std::size_t k = 0; k < features; ++k) {
                              g[base + k] += inv * (gx[k] - mean_g - xhat[base + k] * mean_gx);
                            }
                          }
                        });
}

std::vector<std::size_t> DenseBlockParams::input_channels() const {
  std::vector<std::size_t> channels;
  channels.reserve(layers.size());
  for (const DenseLayer& layer : layers) channels.push_back(layer.conv.in_channels());
  return channels;
}

Tensor dense_block(const Tensor& x, const DenseBlockParams& p) {
  if (p.layers.empty()) throw std::invalid_argument("dense_block: no layers");
  if (!x.defined() || x.rank() != 3 || x.extent(0) != p.layers.front().conv.in_channels()) {
    throw std::invalid_argument("dense_block: input " + (x.defined() ? shape_string(x.shape()) : "[]") + " but block expects " +
                                std::to_string(p.layers.front().conv.in_channels()) + " channels");
  }
  Tensor input = x;
  Tensor output;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    if (i > 0) input = concat_channels({input, output});
    const DenseLayer& layer = p.layers[i];
    output = prelu(layer_norm(conv2d(input, layer.conv), layer.norm), layer.slopes);
  }
  return output;
}

AttentionOutput self_attention(const Tensor& x, const AttentionParams& p) {
  if (!x.defined() || x.rank() != 3) throw std::invalid_argument("self_attention: expected [C, T, L] input");
  const std::size_t t = x.extent(1);
  const std::size_t l = x.extent(2);
  if (t == 0) throw std::invalid_argument("self_attention: no frames");
  if (p.query.out_channels() != p.key.out_channels()) {
    throw std::invalid_argument("self_attention: query and key channel counts differ");
  }
  auto as_rows = [t, l](const Tensor& y) {
    const std::size_t c = y.extent(0);
    return reshape(permute(y, {1, 0, 2}), {t, c * l});
  };
  Tensor q = as_rows(conv2d(x, p.query));
  Tensor k = as_rows(conv2d(x, p.key));
  Tensor v = as_rows(conv2d(x, p.value));
  Tensor scores = matmul(q, transpose(k));
  if (p.causal) scores = causal_mask(scores);
  Tensor weights = softmax_rows(scores);
  Tensor mixed = matmul(weights, v);
  const std::size_t f = p.value.out_channels();
  Tensor out = permute(reshape(mixed, {t, f, l}), {1, 0, 2});
  return AttentionOutput{std::move(out), std::move(weights)};
}

Conv2dParams make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_time,
                       std::size_t kernel_freq, Padding padding, std::mt19937_64& rng, std::size_t stride_time,
                       std::size_t stride_freq, std::size_t dilation_time) {
  const std::size_t fan_in = in_channels * kernel_time * kernel_freq;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(out_channels * fan_in);
  for (double& v : w) v = dist(rng);
  Conv2dParams p;
  p.kernel = Tensor({out_channels, in_channels, kernel_time, kernel_freq}, std::move(w), true);
  p.bias = Tensor::zeros({out_channels}, true);
  p.stride_time = stride_time;
  p.stride_freq = stride_freq;
  p.padding = padding;
  p.dilation_time = dilation_time;
  return p;
}

LayerNormParams make_layer_norm(std::size_t features, double eps) {
  return LayerNormParams{Tensor::full({features}, 1.0, true), Tensor::zeros({features}, true), eps};
}

Tensor make_prelu_slopes(std::size_t channels, double init) { return Tensor::full({channels}, init, true); }

DenseBlockParams make_dense_block(std::size_t channels, std::size_t features, std::size_t kernel_time, bool causal,
                                  bool dilated, double eps, std::mt19937_64& rng, std::size_t depth) {
  DenseBlockParams block;
  block.growth_channels = channels;
  const Padding padding = causal ? Padding::causal_time : Padding::same;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t dilation = dilated ? (std::size_t{1} << i) : 1;
    DenseLayer layer;
    layer.conv = make_conv((i + 1) * channels, channels, kernel_time, 3, padding, rng, 1, 1, dilation);
    layer.norm = make_layer_norm(features, eps);
    layer.slopes = make_prelu_slopes(channels);
    block.layers.push_back(std::move(layer));
  }
  return block;
}

AttentionParams make_attention(std::size_t in_channels, std::size_t qk_channels, std::size_t v_channels, bool causal,
                               std::mt19937_64& rng) {
  AttentionParams p;
  p.query = make_conv(in_channels, qk_channels, 1, 1, Padding::same, rng);
  p.key = make_conv(in_channels, qk_channels, 1, 1, Padding::same, rng);
  p.value = make_conv(in_channels, v_channels, 1, 1, Padding::same, rng);
  p.causal = causal;
  return p;
}

SubPixelParams make_subpixel(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_time,
                             std::size_t kernel_freq, std::size_t rate_time, std::size_t rate_freq, bool causal,
                             std::mt19937_64& rng) {
  SubPixelParams p;
  p.rate_time = rate_time;
  p.rate_freq = rate_freq;
  const Padding padding = causal ? Padding::causal_time : Padding::same;
  for (std::size_t i = 0; i < rate_time * rate_freq; ++i) {
    p.kernels.push_back(make_conv(in_channels, out_channels, kernel_time, kernel_freq, padding, rng));
  }
  return p;
}

}  // namespace dcn
