#include "spdnn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "spdnn/errors.hpp"

namespace spdnn {

namespace {

std::string shape_msg(const char* what, Index expected, Index actual) {
  return std::string(what) + ": expected " + std::to_string(expected) + ", got " +
         std::to_string(actual);
}

// Unfolds sample n into a (C*k*k) x (H*W) column matrix with zero padding.
template <typename Scalar>
void im2col(const Tensor<Scalar>& in, Index n, int k, RowMatrix<Scalar>& col) {
  const Index C = in.channels(), H = in.height(), W = in.width();
  const int pad = (k - 1) / 2;
  col.resize(C * k * k, H * W);
  const Scalar* src = in.data() + n * in.sample_size();
  for (Index c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col.data() + conv_column(k, ky, kx, c) * H * W;
        const int dx = kx - pad;
        const Index x_lo = std::max<Index>(0, -dx);
        const Index x_hi = std::min<Index>(W, W - dx);
        for (Index y = 0; y < H; ++y) {
          Scalar* dst = row + y * W;
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= H || x_lo >= x_hi) {
            std::fill(dst, dst + W, Scalar(0));
            continue;
          }
          std::fill(dst, dst + x_lo, Scalar(0));
          const Scalar* s = src + (c * H + sy) * W;
          for (Index x = x_lo; x < x_hi; ++x) dst[x] = s[x + dx];
          std::fill(dst + x_hi, dst + W, Scalar(0));
        }
      }
}

// Adjoint of im2col: accumulates the column matrix back into sample n.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& col, int k, Tensor<Scalar>& out, Index n) {
  const Index C = out.channels(), H = out.height(), W = out.width();
  const int pad = (k - 1) / 2;
  Scalar* dst = out.data() + n * out.sample_size();
  for (Index c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col.data() + conv_column(k, ky, kx, c) * H * W;
        const int dx = kx - pad;
        const Index x_lo = std::max<Index>(0, -dx);
        const Index x_hi = std::min<Index>(W, W - dx);
        for (Index y = 0; y < H; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          Scalar* d = dst + (c * H + sy) * W;
          const Scalar* s = row + y * W;
          for (Index x = x_lo; x < x_hi; ++x) d[x + dx] += s[x];
        }
      }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                      const Vector<Scalar>& bias, int kernel) {
  if (weight.cols() != input.channels() * kernel * kernel)
    throw ShapeError(shape_msg("conv2d input channels * k * k", weight.cols(),
                               input.channels() * kernel * kernel));
  if (bias.size() != weight.rows())
    throw ShapeError(shape_msg("conv2d bias length", weight.rows(), bias.size()));

  Tensor<Scalar> out(input.batch(), weight.rows(), input.height(), input.width());
  RowMatrix<Scalar> col;
  for (Index n = 0; n < input.batch(); ++n) {
    im2col(input, n, kernel, col);
    auto o = out.sample(n);
    o.noalias() = weight * col;
    o.colwise() += bias;
  }
  return out;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                                  int kernel, const Tensor<Scalar>& grad_output) {
  ConvGrads<Scalar> g{Tensor<Scalar>(input.batch(), input.channels(), input.height(),
                                     input.width()),
                      Matrix<Scalar>::Zero(weight.rows(), weight.cols()),
                      Vector<Scalar>::Zero(weight.rows())};
  RowMatrix<Scalar> col, dcol;
  for (Index n = 0; n < input.batch(); ++n) {
    im2col(input, n, kernel, col);
    const auto go = grad_output.sample(n);
    g.weight.noalias() += go * col.transpose();
    g.bias += go.rowwise().sum();
    dcol.noalias() = weight.transpose() * go;
    col2im(dcol, kernel, g.input, n);
  }
  return g;
}

template <typename Scalar>
PoolResult<Scalar> maxpool(const Tensor<Scalar>& input, int window) {
  if (window < 1) throw ShapeError("maxpool window must be positive");
  if (input.height() < window || input.width() < window)
    throw ShapeError("maxpool window " + std::to_string(window) + " exceeds " +
                     std::to_string(input.height()) + "x" + std::to_string(input.width()) +
                     " input");
  const Index OH = input.height() / window, OW = input.width() / window;
  PoolResult<Scalar> r{Tensor<Scalar>(input.batch(), input.channels(), OH, OW), {}};
  r.argmax.resize(static_cast<std::size_t>(r.output.size()));
  Index o = 0;
  for (Index n = 0; n < input.batch(); ++n)
    for (Index c = 0; c < input.channels(); ++c)
      for (Index oy = 0; oy < OH; ++oy)
        for (Index ox = 0; ox < OW; ++ox, ++o) {
          Index best = -1;
          Scalar best_v = 0;
          for (Index wy = 0; wy < window; ++wy)
            for (Index wx = 0; wx < window; ++wx) {
              const Index y = oy * window + wy, x = ox * window + wx;
              const Index flat = ((n * input.channels() + c) * input.height() + y) * input.width() + x;
              const Scalar v = input.data()[flat];
              if (best < 0 || v > best_v) {
                best = flat;
                best_v = v;
              }
            }
          r.output.data()[o] = best_v;
          r.argmax[static_cast<std::size_t>(o)] = best;
        }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool_backward(const Tensor<Scalar>& input, const PoolResult<Scalar>& forward,
                                const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> g(input.batch(), input.channels(), input.height(), input.width());
  for (Index o = 0; o < grad_output.size(); ++o)
    g.data()[forward.argmax[static_cast<std::size_t>(o)]] += grad_output.data()[o];
  return g;
}

template <typename Scalar>
BatchNormResult<Scalar> batch_norm(const Tensor<Scalar>& input, const Vector<Scalar>& scale,
                                   const Vector<Scalar>& shift,
                                   const RunningStats<Scalar>& running, Mode mode) {
  const Index C = input.channels(), N = input.batch(), P = input.plane_size();
  if (scale.size() != C || shift.size() != C)
    throw ShapeError(shape_msg("batch_norm scale/shift length", C, scale.size()));
  if (running.mean.size() != C || running.var.size() != C)
    throw ShapeError(shape_msg("batch_norm running statistics length", C, running.mean.size()));
  const Index m = N * P;
  if (mode == Mode::Train && m < 2)
    throw ShapeError("batch_norm in train mode needs batch*H*W >= 2");

  BatchNormResult<Scalar> r;
  r.mode = mode;
  r.output = Tensor<Scalar>(N, C, input.height(), input.width());
  r.normalized = Tensor<Scalar>(N, C, input.height(), input.width());
  r.inv_std.resize(C);
  r.running = running;
  const Scalar eps = static_cast<Scalar>(kBatchNormEpsilon);
  const Scalar mom = static_cast<Scalar>(kBatchNormMomentum);

  for (Index c = 0; c < C; ++c) {
    Scalar mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (Index n = 0; n < N; ++n) sum += static_cast<double>(input.sample(n).row(c).sum());
      mean = static_cast<Scalar>(sum / static_cast<double>(m));
      double sq = 0.0;
      for (Index n = 0; n < N; ++n)
        sq += static_cast<double>((input.sample(n).row(c).array() - mean).square().sum());
      var = static_cast<Scalar>(sq / static_cast<double>(m));
      const Scalar unbiased = static_cast<Scalar>(sq / static_cast<double>(m - 1));
      r.running.mean[c] = mom * running.mean[c] + (Scalar(1) - mom) * mean;
      r.running.var[c] = mom * running.var[c] + (Scalar(1) - mom) * unbiased;
    } else {
      mean = running.mean[c];
      var = running.var[c];
    }
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    r.inv_std[c] = inv;
    for (Index n = 0; n < N; ++n) {
      auto xh = r.normalized.sample(n).row(c);
      xh = ((input.sample(n).row(c).array() - mean) * inv).matrix();
      r.output.sample(n).row(c) = (xh.array() * scale[c] + shift[c]).matrix();
    }
  }
  return r;
}

template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_backward(const BatchNormResult<Scalar>& f,
                                           const Vector<Scalar>& scale,
                                           const Tensor<Scalar>& grad_output) {
  const auto& xh = f.normalized;
  const Index C = xh.channels(), N = xh.batch();
  const Scalar m = static_cast<Scalar>(N * xh.plane_size());
  BatchNormGrads<Scalar> g{Tensor<Scalar>(N, C, xh.height(), xh.width()), Vector<Scalar>(C),
                           Vector<Scalar>(C)};
  for (Index c = 0; c < C; ++c) {
    Scalar sum_dy = 0, sum_dy_xh = 0;
    for (Index n = 0; n < N; ++n) {
      const auto dy = grad_output.sample(n).row(c);
      sum_dy += dy.sum();
      sum_dy_xh += dy.dot(xh.sample(n).row(c));
    }
    g.shift[c] = sum_dy;
    g.scale[c] = sum_dy_xh;
    const Scalar gi = scale[c] * f.inv_std[c];
    for (Index n = 0; n < N; ++n) {
      const auto dy = grad_output.sample(n).row(c).array();
      auto dx = g.input.sample(n).row(c);
      if (f.mode == Mode::Train)
        dx = (gi / m * (m * dy - sum_dy - xh.sample(n).row(c).array() * sum_dy_xh)).matrix();
      else
        dx = (gi * dy).matrix();
    }
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                     const Vector<Scalar>& bias) {
  if (weight.rows() != input.sample_size())
    throw ShapeError(shape_msg("dense fan_in", weight.rows(), input.sample_size()));
  if (bias.size() != weight.cols())
    throw ShapeError(shape_msg("dense bias length", weight.cols(), bias.size()));
  Tensor<Scalar> out(input.batch(), weight.cols(), 1, 1);
  auto y = out.rows();
  y.noalias() = input.rows() * weight;
  y.rowwise() += bias.transpose();
  return out;
}

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                                  const Tensor<Scalar>& grad_output) {
  DenseGrads<Scalar> g{Tensor<Scalar>(input.batch(), input.channels(), input.height(),
                                      input.width()),
                       input.rows().transpose() * grad_output.rows(),
                       grad_output.rows().colwise().sum().transpose()};
  g.input.rows().noalias() = grad_output.rows() * weight.transpose();
  return g;
}

template <typename Scalar>
Tensor<Scalar> activate(const Tensor<Scalar>& input, Activation act) {
  Tensor<Scalar> out = input;
  switch (act) {
    case Activation::ReLU: out.values() = input.values().max(Scalar(0)); break;
    case Activation::Sigmoid:
      out.values() = Scalar(1) / (Scalar(1) + (-input.values()).exp());
      break;
    case Activation::None: break;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> activate_backward(const Tensor<Scalar>& output, Activation act,
                                 const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> g = grad_output;
  switch (act) {
    case Activation::ReLU:
      g.values() = (output.values() > Scalar(0)).select(grad_output.values(), Scalar(0));
      break;
    case Activation::Sigmoid:
      g.values() = grad_output.values() * output.values() * (Scalar(1) - output.values());
      break;
    case Activation::None: break;
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const auto& first = *parts.front();
  Index channels = 0;
  for (const auto* p : parts) {
    if (p->batch() != first.batch() || p->height() != first.height() ||
        p->width() != first.width())
      throw ShapeError("concat of " + p->shape_string() + " with " + first.shape_string());
    channels += p->channels();
  }
  if (parts.size() == 1) return first;
  Tensor<Scalar> out(first.batch(), channels, first.height(), first.width());
  for (Index n = 0; n < first.batch(); ++n) {
    Index at = 0;
    for (const auto* p : parts) {
      out.sample(n).middleRows(at, p->channels()) = p->sample(n);
      at += p->channels();
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, Index first, Index count) {
  Tensor<Scalar> out(t.batch(), count, t.height(), t.width());
  for (Index n = 0; n < t.batch(); ++n) out.sample(n) = t.sample(n).middleRows(first, count);
  return out;
}

template <typename Scalar>
double bce_loss(const Tensor<Scalar>& prediction, const Tensor<Scalar>& target) {
  if (!prediction.same_shape(target))
    throw ShapeError("bce_loss shape mismatch: " + prediction.shape_string() + " vs " +
                     target.shape_string());
  if (prediction.size() == 0) throw ShapeError("bce_loss of an empty tensor");
  double sum = 0.0;
  for (Index i = 0; i < prediction.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prediction.data()[i]), kBceEpsilon,
                                1.0 - kBceEpsilon);
    const double t = static_cast<double>(target.data()[i]);
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(prediction.size());
}

template <typename Scalar>
Tensor<Scalar> bce_loss_grad(const Tensor<Scalar>& prediction, const Tensor<Scalar>& target) {
  if (!prediction.same_shape(target))
    throw ShapeError("bce_loss shape mismatch: " + prediction.shape_string() + " vs " +
                     target.shape_string());
  Tensor<Scalar> g = prediction;
  const double m = static_cast<double>(prediction.size());
  for (Index i = 0; i < prediction.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prediction.data()[i]), kBceEpsilon,
                                1.0 - kBceEpsilon);
    const double t = static_cast<double>(target.data()[i]);
    g.data()[i] = static_cast<Scalar>((p - t) / (p * (1.0 - p)) / m);
  }
  return g;
}

#define SPDNN_INSTANTIATE_LAYERS(S)                                                          \
  template Tensor<S> conv2d(const Tensor<S>&, const Matrix<S>&, const Vector<S>&, int);     \
  template ConvGrads<S> conv2d_backward(const Tensor<S>&, const Matrix<S>&, int,            \
                                        const Tensor<S>&);                                  \
  template PoolResult<S> maxpool(const Tensor<S>&, int);                                    \
  template Tensor<S> maxpool_backward(const Tensor<S>&, const PoolResult<S>&,               \
                                      const Tensor<S>&);                                    \
  template BatchNormResult<S> batch_norm(const Tensor<S>&, const Vector<S>&,                \
                                         const Vector<S>&, const RunningStats<S>&, Mode);   \
  template BatchNormGrads<S> batch_norm_backward(const BatchNormResult<S>&,                 \
                                                 const Vector<S>&, const Tensor<S>&);       \
  template Tensor<S> dense(const Tensor<S>&, const Matrix<S>&, const Vector<S>&);           \
  template DenseGrads<S> dense_backward(const Tensor<S>&, const Matrix<S>&,                 \
                                        const Tensor<S>&);                                  \
  template Tensor<S> activate(const Tensor<S>&, Activation);                                \
  template Tensor<S> activate_backward(const Tensor<S>&, Activation, const Tensor<S>&);     \
  template Tensor<S> concat_channels(const std::vector<const Tensor<S>*>&);                 \
  template Tensor<S> slice_channels(const Tensor<S>&, Index, Index);                        \
  template double bce_loss(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> bce_loss_grad(const Tensor<S>&, const Tensor<S>&);

SPDNN_INSTANTIATE_LAYERS(float)
SPDNN_INSTANTIATE_LAYERS(double)

}  // namespace spdnn
