#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "td3net/tape.hpp"
#include "td3net/tensor.hpp"

namespace td3 {

enum class Mode { kTrain, kEval };
enum class PadMode { kSame, kCausal };

inline const char* pad_mode_name(PadMode m) { return m == PadMode::kSame ? "same" : "causal"; }

namespace detail {

// Treat rank-2 [C,T] as a single-item batch; all kernels work on [N,C,T].
inline Shape as_nct(const Shape& s, const std::string& where) {
  if (s.size() == 3) return s;
  if (s.size() == 2) return Shape{1, s[0], s[1]};
  throw ConfigError(where + ": expected rank 2 or 3 input, got " + shape_str(s));
}

inline Shape like_input(const Shape& input, std::int64_t channels) {
  if (input.size() == 3) return Shape{input[0], channels, input[2]};
  return Shape{channels, input[1]};
}

// Kernel tap anchor: "same" centers the kernel, "causal" ends it at t.
inline std::int64_t conv_anchor(std::int64_t kernel, PadMode pad) {
  return pad == PadMode::kSame ? (kernel - 1) / 2 : kernel - 1;
}

template <typename S>
void conv1d_forward(const S* x, const S* w, S* y, std::int64_t batch, std::int64_t cin,
                    std::int64_t cout, std::int64_t t_len, std::int64_t kernel,
                    std::int64_t dilation, PadMode pad) {
  const std::int64_t anchor = conv_anchor(kernel, pad);
  for (std::int64_t n = 0; n < batch; ++n) {
    const S* xn = x + n * cin * t_len;
    S* yn = y + n * cout * t_len;
    for (std::int64_t co = 0; co < cout; ++co) {
      S* yrow = yn + co * t_len;
      for (std::int64_t ci = 0; ci < cin; ++ci) {
        const S* xrow = xn + ci * t_len;
        const S* wrow = w + (co * cin + ci) * kernel;
        for (std::int64_t j = 0; j < kernel; ++j) {
          const S wv = wrow[j];
          if (wv == S(0)) continue;
          const std::int64_t off = (j - anchor) * dilation;
          const std::int64_t t0 = std::max<std::int64_t>(0, -off);
          const std::int64_t t1 = std::min<std::int64_t>(t_len, t_len - off);
          for (std::int64_t t = t0; t < t1; ++t) yrow[t] += wv * xrow[t + off];
        }
      }
    }
  }
}

template <typename S>
void conv1d_backward_x(const S* gy, const S* w, S* gx, std::int64_t batch, std::int64_t cin,
                       std::int64_t cout, std::int64_t t_len, std::int64_t kernel,
                       std::int64_t dilation, PadMode pad) {
  const std::int64_t anchor = conv_anchor(kernel, pad);
  for (std::int64_t n = 0; n < batch; ++n) {
    const S* gyn = gy + n * cout * t_len;
    S* gxn = gx + n * cin * t_len;
    for (std::int64_t co = 0; co < cout; ++co) {
      const S* gyrow = gyn + co * t_len;
      for (std::int64_t ci = 0; ci < cin; ++ci) {
        S* gxrow = gxn + ci * t_len;
        const S* wrow = w + (co * cin + ci) * kernel;
        for (std::int64_t j = 0; j < kernel; ++j) {
          const S wv = wrow[j];
          if (wv == S(0)) continue;
          const std::int64_t off = (j - anchor) * dilation;
          const std::int64_t t0 = std::max<std::int64_t>(0, -off);
          const std::int64_t t1 = std::min<std::int64_t>(t_len, t_len - off);
          for (std::int64_t t = t0; t < t1; ++t) gxrow[t + off] += wv * gyrow[t];
        }
      }
    }
  }
}

template <typename S>
void conv1d_backward_w(const S* gy, const S* x, S* gw, std::int64_t batch, std::int64_t cin,
                       std::int64_t cout, std::int64_t t_len, std::int64_t kernel,
                       std::int64_t dilation, PadMode pad) {
  const std::int64_t anchor = conv_anchor(kernel, pad);
  for (std::int64_t n = 0; n < batch; ++n) {
    const S* xn = x + n * cin * t_len;
    const S* gyn = gy + n * cout * t_len;
    for (std::int64_t co = 0; co < cout; ++co) {
      const S* gyrow = gyn + co * t_len;
      for (std::int64_t ci = 0; ci < cin; ++ci) {
        const S* xrow = xn + ci * t_len;
        S* gwrow = gw + (co * cin + ci) * kernel;
        for (std::int64_t j = 0; j < kernel; ++j) {
          const std::int64_t off = (j - anchor) * dilation;
          const std::int64_t t0 = std::max<std::int64_t>(0, -off);
          const std::int64_t t1 = std::min<std::int64_t>(t_len, t_len - off);
          S acc = S(0);
          for (std::int64_t t = t0; t < t1; ++t) acc += gyrow[t] * xrow[t + off];
          gwrow[j] += acc;
        }
      }
    }
  }
}

template <typename S>
void row_log_softmax(const S* x, S* out, std::int64_t cols) {
  S mx = x[0];
  for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
  S sum = S(0);
  for (std::int64_t c = 0; c < cols; ++c) sum += std::exp(x[c] - mx);
  const S log_z = std::log(sum) + mx;
  for (std::int64_t c = 0; c < cols; ++c) out[c] = x[c] - log_z;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Taped operations. Each returns the id of the produced node; outputs are
// checked for finiteness on creation.
// ---------------------------------------------------------------------------

template <typename S>
int constant(Tape<S>& tape, Tensor<S> v, const std::string& label = "constant") {
  return tape.leaf(std::move(v), false, label);
}

template <typename S>
int parameter(Tape<S>& tape, Tensor<S> v, const std::string& label = "parameter") {
  return tape.leaf(std::move(v), true, label);
}

// Dilated 1D convolution, no bias, temporal length preserved.
//   x: [C_in, T] or [N, C_in, T];  w: [C_out, C_in, K]
template <typename S>
int conv1d(Tape<S>& tape, int x, int w, std::int64_t dilation, PadMode pad,
           const std::string& label = "conv1d") {
  const Tensor<S>& xt = tape.value(x);
  const Tensor<S>& wt = tape.value(w);
  if (wt.rank() != 3) throw ConfigError(label + ": weight must be [C_out, C_in, K]");
  const Shape nct = detail::as_nct(xt.shape, label);
  const std::int64_t batch = nct[0], cin = nct[1], t_len = nct[2];
  const std::int64_t cout = wt.shape[0], kernel = wt.shape[2];
  if (dilation < 1) throw ConfigError(label + ": dilation must be >= 1, got " + std::to_string(dilation));
  if (wt.shape[1] != cin)
    throw ConfigError(label + ": weight expects " + std::to_string(wt.shape[1]) +
                      " input channels, input has " + std::to_string(cin));
  if (pad == PadMode::kSame && kernel % 2 == 0)
    throw ConfigError(label + ": same padding requires odd kernel size, got " + std::to_string(kernel));

  Tensor<S> y = Tensor<S>::zeros(detail::like_input(xt.shape, cout));
  detail::conv1d_forward(xt.data.data(), wt.data.data(), y.data.data(), batch, cin, cout, t_len,
                         kernel, dilation, pad);
  int out = tape.emit(std::move(y), {x, w}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x, w, dilation, pad, batch, cin, cout, t_len, kernel](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(out);
      if (tp.needs_grad(x)) {
        Tensor<S>& gx = tp.grad_buffer(x);
        detail::conv1d_backward_x(gy.data.data(), tp.value(w).data.data(), gx.data.data(), batch,
                                  cin, cout, t_len, kernel, dilation, pad);
      }
      if (tp.needs_grad(w)) {
        Tensor<S>& gw = tp.grad_buffer(w);
        detail::conv1d_backward_w(gy.data.data(), tp.value(x).data.data(), gw.data.data(), batch,
                                  cin, cout, t_len, kernel, dilation, pad);
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Per-channel batch normalization over the batch and temporal axes.
// Running statistics live outside the tape (they are buffers, not
// parameters); `update_running` is off for gradient checks and analysis.
template <typename S>
struct BnRunning {
  Tensor<S> mean;
  Tensor<S> var;

  static BnRunning init(std::int64_t channels) {
    BnRunning r;
    r.mean = Tensor<S>::zeros({channels});
    r.var = Tensor<S>::full({channels}, S(1));
    return r;
  }
};

template <typename S>
int batch_norm(Tape<S>& tape, int x, int gamma, int beta, BnRunning<S>& running, Mode mode,
               double eps, double momentum, bool update_running,
               const std::string& label = "batch_norm") {
  const Tensor<S>& xt = tape.value(x);
  const Shape nct = detail::as_nct(xt.shape, label);
  const std::int64_t batch = nct[0], channels = nct[1], t_len = nct[2];
  if (eps <= 0) throw ConfigError(label + ": eps must be positive");
  if (tape.value(gamma).numel() != channels || tape.value(beta).numel() != channels)
    throw ConfigError(label + ": gamma/beta must have one entry per channel");
  if (running.mean.numel() != channels || running.var.numel() != channels)
    throw ConfigError(label + ": running stats must have one entry per channel");

  const std::int64_t m = batch * t_len;
  std::vector<S> mean(static_cast<std::size_t>(channels), S(0));
  std::vector<S> inv_std(static_cast<std::size_t>(channels), S(0));
  const S* xd = xt.data.data();
  const Tensor<S>& g = tape.value(gamma);
  const Tensor<S>& b = tape.value(beta);

  Tensor<S> y = Tensor<S>::zeros(xt.shape);
  // Normalized activations are saved for the backward pass and for the
  // gamma gradient in eval mode.
  auto xhat = std::make_shared<std::vector<S>>(xt.data.size());

  if (mode == Mode::kTrain) {
    for (std::int64_t c = 0; c < channels; ++c) {
      S acc = S(0);
      for (std::int64_t n = 0; n < batch; ++n) {
        const S* row = xd + (n * channels + c) * t_len;
        for (std::int64_t t = 0; t < t_len; ++t) acc += row[t];
      }
      mean[static_cast<std::size_t>(c)] = acc / static_cast<S>(m);
    }
    for (std::int64_t c = 0; c < channels; ++c) {
      const S mu = mean[static_cast<std::size_t>(c)];
      S acc = S(0);
      for (std::int64_t n = 0; n < batch; ++n) {
        const S* row = xd + (n * channels + c) * t_len;
        for (std::int64_t t = 0; t < t_len; ++t) {
          const S d = row[t] - mu;
          acc += d * d;
        }
      }
      const S var_b = acc / static_cast<S>(m);
      inv_std[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var_b + static_cast<S>(eps));
      if (update_running) {
        const S var_u = m > 1 ? acc / static_cast<S>(m - 1) : var_b;
        running.mean.data[static_cast<std::size_t>(c)] =
            static_cast<S>((1.0 - momentum)) * running.mean.data[static_cast<std::size_t>(c)] +
            static_cast<S>(momentum) * mu;
        running.var.data[static_cast<std::size_t>(c)] =
            static_cast<S>((1.0 - momentum)) * running.var.data[static_cast<std::size_t>(c)] +
            static_cast<S>(momentum) * var_u;
      }
    }
  } else {
    for (std::int64_t c = 0; c < channels; ++c) {
      mean[static_cast<std::size_t>(c)] = running.mean.data[static_cast<std::size_t>(c)];
      inv_std[static_cast<std::size_t>(c)] =
          S(1) / std::sqrt(running.var.data[static_cast<std::size_t>(c)] + static_cast<S>(eps));
    }
  }

  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const S mu = mean[static_cast<std::size_t>(c)];
      const S is = inv_std[static_cast<std::size_t>(c)];
      const S gc = g.data[static_cast<std::size_t>(c)];
      const S bc = b.data[static_cast<std::size_t>(c)];
      const S* row = xd + (n * channels + c) * t_len;
      S* yrow = y.data.data() + (n * channels + c) * t_len;
      S* hrow = xhat->data() + (n * channels + c) * t_len;
      for (std::int64_t t = 0; t < t_len; ++t) {
        const S h = (row[t] - mu) * is;
        hrow[t] = h;
        yrow[t] = gc * h + bc;
      }
    }
  }

  std::vector<int> parents{x, gamma, beta};
  int out = tape.emit(std::move(y), parents, label);
  if (tape.needs_grad(out)) {
    auto inv = std::make_shared<std::vector<S>>(inv_std);
    auto fn = [out, x, gamma, beta, xhat, inv, batch, channels, t_len, mode](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(out);
      const Tensor<S>& g = tp.value(gamma);
      const std::int64_t m = batch * t_len;
      std::vector<S> sum_gy(static_cast<std::size_t>(channels), S(0));
      std::vector<S> sum_gy_h(static_cast<std::size_t>(channels), S(0));
      for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t c = 0; c < channels; ++c) {
          const S* gyrow = gy.data.data() + (n * channels + c) * t_len;
          const S* hrow = xhat->data() + (n * channels + c) * t_len;
          S a = S(0), bacc = S(0);
          for (std::int64_t t = 0; t < t_len; ++t) {
            a += gyrow[t];
            bacc += gyrow[t] * hrow[t];
          }
          sum_gy[static_cast<std::size_t>(c)] += a;
          sum_gy_h[static_cast<std::size_t>(c)] += bacc;
        }
      }
      if (tp.needs_grad(gamma)) {
        Tensor<S>& gg = tp.grad_buffer(gamma);
        for (std::int64_t c = 0; c < channels; ++c)
          gg.data[static_cast<std::size_t>(c)] += sum_gy_h[static_cast<std::size_t>(c)];
      }
      if (tp.needs_grad(beta)) {
        Tensor<S>& gb = tp.grad_buffer(beta);
        for (std::int64_t c = 0; c < channels; ++c)
          gb.data[static_cast<std::size_t>(c)] += sum_gy[static_cast<std::size_t>(c)];
      }
      if (tp.needs_grad(x)) {
        Tensor<S>& gx = tp.grad_buffer(x);
        for (std::int64_t n = 0; n < batch; ++n) {
          for (std::int64_t c = 0; c < channels; ++c) {
            const S is = (*inv)[static_cast<std::size_t>(c)];
            const S gc = g.data[static_cast<std::size_t>(c)];
            const S* gyrow = gy.data.data() + (n * channels + c) * t_len;
            const S* hrow = xhat->data() + (n * channels + c) * t_len;
            S* gxrow = gx.data.data() + (n * channels + c) * t_len;
            if (mode == Mode::kTrain) {
              const S mg = sum_gy[static_cast<std::size_t>(c)] / static_cast<S>(m);
              const S mgh = sum_gy_h[static_cast<std::size_t>(c)] / static_cast<S>(m);
              for (std::int64_t t = 0; t < t_len; ++t)
                gxrow[t] += gc * is * (gyrow[t] - mg - hrow[t] * mgh);
            } else {
              for (std::int64_t t = 0; t < t_len; ++t) gxrow[t] += gc * is * gyrow[t];
            }
          }
        }
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

template <typename S>
int relu(Tape<S>& tape, int x, const std::string& label = "relu") {
  const Tensor<S>& xt = tape.value(x);
  Tensor<S> y = xt;
  for (S& v : y.data) v = std::max(v, S(0));
  int out = tape.emit(std::move(y), {x}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x](Tape<S>& tp) {
      if (!tp.needs_grad(x)) return;
      const Tensor<S>& gy = tp.grad(out);
      const Tensor<S>& xin = tp.value(x);
      Tensor<S>& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < gx.data.size(); ++i)
        if (xin.data[i] > S(0)) gx.data[i] += gy.data[i];
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Inverted dropout: survivors are rescaled by 1/(1-p). Identity in eval
// mode and for p == 0.
template <typename S>
int dropout(Tape<S>& tape, int x, double p, Mode mode, std::mt19937_64& stream,
            const std::string& label = "dropout") {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError(label + ": dropout probability must be in [0,1), got " + std::to_string(p));
  if (mode == Mode::kEval || p == 0.0) return x;
  const Tensor<S>& xt = tape.value(x);
  auto mask = std::make_shared<std::vector<S>>(xt.data.size());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  Tensor<S> y = xt;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    const S m = uni(stream) < p ? S(0) : keep_scale;
    (*mask)[i] = m;
    y.data[i] *= m;
  }
  int out = tape.emit(std::move(y), {x}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x, mask](Tape<S>& tp) {
      if (!tp.needs_grad(x)) return;
      const Tensor<S>& gy = tp.grad(out);
      Tensor<S>& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy.data[i] * (*mask)[i];
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Channel-wise concatenation of [N,C_i,T] inputs.
template <typename S>
int concat_channels(Tape<S>& tape, const std::vector<int>& xs,
                    const std::string& label = "concat") {
  if (xs.empty()) throw ConfigError(label + ": needs at least one input");
  if (xs.size() == 1) return xs[0];
  const Shape first = detail::as_nct(tape.value(xs[0]).shape, label);
  const std::int64_t batch = first[0], t_len = first[2];
  std::int64_t channels = 0;
  for (int id : xs) {
    const Shape s = detail::as_nct(tape.value(id).shape, label);
    if (s[0] != batch || s[2] != t_len)
      throw ConfigError(label + ": inputs disagree on batch or temporal length");
    channels += s[1];
  }
  Shape out_shape = tape.value(xs[0]).rank() == 3 ? Shape{batch, channels, t_len}
                                                  : Shape{channels, t_len};
  Tensor<S> y = Tensor<S>::zeros(out_shape);
  std::vector<std::int64_t> offsets;
  std::int64_t at = 0;
  for (int id : xs) {
    const Tensor<S>& xt = tape.value(id);
    const std::int64_t ci = detail::as_nct(xt.shape, label)[1];
    offsets.push_back(at);
    for (std::int64_t n = 0; n < batch; ++n) {
      const S* src = xt.data.data() + n * ci * t_len;
      S* dst = y.data.data() + (n * channels + at) * t_len;
      std::copy(src, src + ci * t_len, dst);
    }
    at += ci;
  }
  int out = tape.emit(std::move(y), xs, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, xs, offsets, batch, channels, t_len](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(out);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!tp.needs_grad(xs[i])) continue;
        Tensor<S>& gx = tp.grad_buffer(xs[i]);
        const std::int64_t ci = detail::as_nct(gx.shape, "concat backward")[1];
        for (std::int64_t n = 0; n < batch; ++n) {
          const S* src = gy.data.data() + (n * channels + offsets[i]) * t_len;
          S* dst = gx.data.data() + n * ci * t_len;
          for (std::int64_t j = 0; j < ci * t_len; ++j) dst[j] += src[j];
        }
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// View of channels [c0, c1) as its own tensor.
template <typename S>
int slice_channels(Tape<S>& tape, int x, std::int64_t c0, std::int64_t c1,
                   const std::string& label = "slice") {
  const Tensor<S>& xt = tape.value(x);
  const Shape s = detail::as_nct(xt.shape, label);
  const std::int64_t batch = s[0], channels = s[1], t_len = s[2];
  if (c0 < 0 || c1 > channels || c0 >= c1)
    throw ConfigError(label + ": invalid channel range [" + std::to_string(c0) + "," +
                      std::to_string(c1) + ") for " + std::to_string(channels) + " channels");
  const std::int64_t ci = c1 - c0;
  Tensor<S> y = Tensor<S>::zeros(detail::like_input(xt.shape, ci));
  for (std::int64_t n = 0; n < batch; ++n) {
    const S* src = xt.data.data() + (n * channels + c0) * t_len;
    std::copy(src, src + ci * t_len, y.data.data() + n * ci * t_len);
  }
  int out = tape.emit(std::move(y), {x}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x, c0, batch, channels, t_len, ci](Tape<S>& tp) {
      if (!tp.needs_grad(x)) return;
      const Tensor<S>& gy = tp.grad(out);
      Tensor<S>& gx = tp.grad_buffer(x);
      for (std::int64_t n = 0; n < batch; ++n) {
        const S* src = gy.data.data() + n * ci * t_len;
        S* dst = gx.data.data() + (n * channels + c0) * t_len;
        for (std::int64_t j = 0; j < ci * t_len; ++j) dst[j] += src[j];
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Element-wise sum of same-shape tensors.
template <typename S>
int add_n(Tape<S>& tape, const std::vector<int>& xs, const std::string& label = "add") {
  if (xs.empty()) throw ConfigError(label + ": needs at least one input");
  if (xs.size() == 1) return xs[0];
  const Tensor<S>& first = tape.value(xs[0]);
  Tensor<S> y = first;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Tensor<S>& xt = tape.value(xs[i]);
    if (xt.shape != first.shape)
      throw ConfigError(label + ": shape mismatch " + shape_str(xt.shape) + " vs " +
                        shape_str(first.shape));
    for (std::size_t j = 0; j < y.data.size(); ++j) y.data[j] += xt.data[j];
  }
  int out = tape.emit(std::move(y), xs, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, xs](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(out);
      for (int id : xs) {
        if (!tp.needs_grad(id)) continue;
        Tensor<S>& gx = tp.grad_buffer(id);
        for (std::size_t j = 0; j < gx.data.size(); ++j) gx.data[j] += gy.data[j];
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

template <typename S>
int add(Tape<S>& tape, int a, int b, const std::string& label = "add") {
  return add_n(tape, std::vector<int>{a, b}, label);
}

template <typename S>
int mul(Tape<S>& tape, int a, int b, const std::string& label = "mul") {
  const Tensor<S>& at = tape.value(a);
  const Tensor<S>& bt = tape.value(b);
  if (at.shape != bt.shape)
    throw ConfigError(label + ": shape mismatch " + shape_str(at.shape) + " vs " +
                      shape_str(bt.shape));
  Tensor<S> y = at;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= bt.data[i];
  int out = tape.emit(std::move(y), {a, b}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, a, b](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(out);
      if (tp.needs_grad(a)) {
        Tensor<S>& ga = tp.grad_buffer(a);
        const Tensor<S>& bv = tp.value(b);
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gy.data[i] * bv.data[i];
      }
      if (tp.needs_grad(b)) {
        Tensor<S>& gb = tp.grad_buffer(b);
        const Tensor<S>& av = tp.value(a);
        for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gy.data[i] * av.data[i];
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

template <typename S>
int sum_all(Tape<S>& tape, int x, const std::string& label = "sum") {
  const Tensor<S>& xt = tape.value(x);
  S acc = S(0);
  for (S v : xt.data) acc += v;
  int out = tape.emit(Tensor<S>({1}, {acc}), {x}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x](Tape<S>& tp) {
      if (!tp.needs_grad(x)) return;
      const S g = tp.grad(out).data[0];
      Tensor<S>& gx = tp.grad_buffer(x);
      for (S& v : gx.data) v += g;
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Sequence-wise average pooling: [N,C,T] -> [N,C].
template <typename S>
int global_avg_pool_time(Tape<S>& tape, int x, const std::string& label = "avg_pool") {
  const Tensor<S>& xt = tape.value(x);
  const Shape s = detail::as_nct(xt.shape, label);
  const std::int64_t batch = s[0], channels = s[1], t_len = s[2];
  Tensor<S> y = Tensor<S>::zeros({batch, channels});
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      const S* row = xt.data.data() + (n * channels + c) * t_len;
      S acc = S(0);
      for (std::int64_t t = 0; t < t_len; ++t) acc += row[t];
      y.data[static_cast<std::size_t>(n * channels + c)] = acc / static_cast<S>(t_len);
    }
  int out = tape.emit(std::move(y), {x}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x, batch, channels, t_len](Tape<S>& tp) {
      if (!tp.needs_grad(x)) return;
      const Tensor<S>& gy = tp.grad(out);
      Tensor<S>& gx = tp.grad_buffer(x);
      for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t c = 0; c < channels; ++c) {
          const S g = gy.data[static_cast<std::size_t>(n * channels + c)] / static_cast<S>(t_len);
          S* row = gx.data.data() + (n * channels + c) * t_len;
          for (std::int64_t t = 0; t < t_len; ++t) row[t] += g;
        }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Affine map on feature vectors: x [N,C_in], w [C_out,C_in], b [C_out].
template <typename S>
int linear(Tape<S>& tape, int x, int w, int b, const std::string& label = "linear") {
  const Tensor<S>& xt = tape.value(x);
  const Tensor<S>& wt = tape.value(w);
  const Tensor<S>& bt = tape.value(b);
  if (xt.rank() != 2 || wt.rank() != 2 || bt.rank() != 1)
    throw ConfigError(label + ": expected x [N,C_in], w [C_out,C_in], b [C_out]");
  const std::int64_t batch = xt.shape[0], cin = xt.shape[1], cout = wt.shape[0];
  if (wt.shape[1] != cin || bt.shape[0] != cout)
    throw ConfigError(label + ": shape mismatch, x " + shape_str(xt.shape) + " w " +
                      shape_str(wt.shape));
  Tensor<S> y = Tensor<S>::zeros({batch, cout});
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t o = 0; o < cout; ++o) {
      const S* wrow = wt.data.data() + o * cin;
      const S* xrow = xt.data.data() + n * cin;
      S acc = bt.data[static_cast<std::size_t>(o)];
      for (std::int64_t i = 0; i < cin; ++i) acc += wrow[i] * xrow[i];
      y.data[static_cast<std::size_t>(n * cout + o)] = acc;
    }
  int out = tape.emit(std::move(y), {x, w, b}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x, w, b, batch, cin, cout](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(out);
      if (tp.needs_grad(x)) {
        Tensor<S>& gx = tp.grad_buffer(x);
        const Tensor<S>& wv = tp.value(w);
        for (std::int64_t n = 0; n < batch; ++n)
          for (std::int64_t o = 0; o < cout; ++o) {
            const S g = gy.data[static_cast<std::size_t>(n * cout + o)];
            const S* wrow = wv.data.data() + o * cin;
            S* gxrow = gx.data.data() + n * cin;
            for (std::int64_t i = 0; i < cin; ++i) gxrow[i] += g * wrow[i];
          }
      }
      if (tp.needs_grad(w)) {
        Tensor<S>& gw = tp.grad_buffer(w);
        const Tensor<S>& xv = tp.value(x);
        for (std::int64_t n = 0; n < batch; ++n)
          for (std::int64_t o = 0; o < cout; ++o) {
            const S g = gy.data[static_cast<std::size_t>(n * cout + o)];
            const S* xrow = xv.data.data() + n * cin;
            S* gwrow = gw.data.data() + o * cin;
            for (std::int64_t i = 0; i < cin; ++i) gwrow[i] += g * xrow[i];
          }
      }
      if (tp.needs_grad(b)) {
        Tensor<S>& gb = tp.grad_buffer(b);
        for (std::int64_t n = 0; n < batch; ++n)
          for (std::int64_t o = 0; o < cout; ++o)
            gb.data[static_cast<std::size_t>(o)] += gy.data[static_cast<std::size_t>(n * cout + o)];
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Row-wise softmax on [N,C].
template <typename S>
int softmax(Tape<S>& tape, int x, const std::string& label = "softmax") {
  const Tensor<S>& xt = tape.value(x);
  if (xt.rank() != 2) throw ConfigError(label + ": expected [N,C] logits");
  const std::int64_t batch = xt.shape[0], cols = xt.shape[1];
  Tensor<S> y = Tensor<S>::zeros(xt.shape);
  std::vector<S> lsm(static_cast<std::size_t>(cols));
  for (std::int64_t n = 0; n < batch; ++n) {
    detail::row_log_softmax(xt.data.data() + n * cols, lsm.data(), cols);
    for (std::int64_t c = 0; c < cols; ++c)
      y.data[static_cast<std::size_t>(n * cols + c)] = std::exp(lsm[static_cast<std::size_t>(c)]);
  }
  int out = tape.emit(std::move(y), {x}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, x, batch, cols](Tape<S>& tp) {
      if (!tp.needs_grad(x)) return;
      const Tensor<S>& gy = tp.grad(out);
      const Tensor<S>& yv = tp.value(out);
      Tensor<S>& gx = tp.grad_buffer(x);
      for (std::int64_t n = 0; n < batch; ++n) {
        const S* yrow = yv.data.data() + n * cols;
        const S* grow = gy.data.data() + n * cols;
        S dot = S(0);
        for (std::int64_t c = 0; c < cols; ++c) dot += yrow[c] * grow[c];
        S* gxrow = gx.data.data() + n * cols;
        for (std::int64_t c = 0; c < cols; ++c) gxrow[c] += yrow[c] * (grow[c] - dot);
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

// Mean negative log-likelihood over the batch against soft target rows.
// Hard integer labels are the one-hot special case.
template <typename S>
int cross_entropy(Tape<S>& tape, int logits, int target_probs,
                  const std::string& label = "cross_entropy") {
  const Tensor<S>& xt = tape.value(logits);
  const Tensor<S>& yt = tape.value(target_probs);
  if (xt.rank() != 2 || yt.shape != xt.shape)
    throw ConfigError(label + ": logits and targets must both be [N,C]");
  const std::int64_t batch = xt.shape[0], cols = xt.shape[1];
  auto lsm = std::make_shared<std::vector<S>>(xt.data.size());
  S loss = S(0);
  for (std::int64_t n = 0; n < batch; ++n) {
    detail::row_log_softmax(xt.data.data() + n * cols, lsm->data() + n * cols, cols);
    for (std::int64_t c = 0; c < cols; ++c)
      loss -= yt.data[static_cast<std::size_t>(n * cols + c)] *
              (*lsm)[static_cast<std::size_t>(n * cols + c)];
  }
  loss /= static_cast<S>(batch);
  int out = tape.emit(Tensor<S>({1}, {loss}), {logits, target_probs}, label);
  if (tape.needs_grad(out)) {
    auto fn = [out, logits, target_probs, lsm, batch, cols](Tape<S>& tp) {
      if (!tp.needs_grad(logits)) return;
      const S g = tp.grad(out).data[0];
      const Tensor<S>& yv = tp.value(target_probs);
      Tensor<S>& gx = tp.grad_buffer(logits);
      for (std::int64_t n = 0; n < batch; ++n) {
        S row_mass = S(0);
        for (std::int64_t c = 0; c < cols; ++c)
          row_mass += yv.data[static_cast<std::size_t>(n * cols + c)];
        for (std::int64_t c = 0; c < cols; ++c) {
          const S p = std::exp((*lsm)[static_cast<std::size_t>(n * cols + c)]);
          gx.data[static_cast<std::size_t>(n * cols + c)] +=
              g * (p * row_mass - yv.data[static_cast<std::size_t>(n * cols + c)]) /
              static_cast<S>(batch);
        }
      }
    };
    tape.set_backward(out, fn);
  }
  return out;
}

template <typename S>
int cross_entropy(Tape<S>& tape, int logits, const std::vector<std::int64_t>& targets,
                  const std::string& label = "cross_entropy") {
  const Tensor<S>& xt = tape.value(logits);
  if (xt.rank() != 2) throw ConfigError(label + ": logits must be [N,C]");
  const std::int64_t batch = xt.shape[0], cols = xt.shape[1];
  if (static_cast<std::int64_t>(targets.size()) != batch)
    throw ConfigError(label + ": one target per batch item");
  Tensor<S> onehot = Tensor<S>::zeros(xt.shape);
  for (std::int64_t n = 0; n < batch; ++n) {
    if (targets[static_cast<std::size_t>(n)] < 0 || targets[static_cast<std::size_t>(n)] >= cols)
      throw ConfigError(label + ": target class out of range");
    onehot.data[static_cast<std::size_t>(n * cols + targets[static_cast<std::size_t>(n)])] = S(1);
  }
  int y = constant(tape, std::move(onehot), label + "/targets");
  return cross_entropy(tape, logits, y, label);
}

}  // namespace td3
