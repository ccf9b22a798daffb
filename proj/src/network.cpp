#include "spdnn/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>

#include "spdnn/errors.hpp"
#include "overloaded.hpp"

namespace spdnn {

using detail::overloaded;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename Scalar>
int ParameterStore<Scalar>::find(std::string_view node, std::string_view role) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].node == node && params_[i].role == role) return static_cast<int>(i);
  return -1;
}

template <typename Scalar>
Matrix<Scalar>& ParameterStore<Scalar>::value(std::string_view node, std::string_view role) {
  const int i = find(node, role);
  if (i < 0) throw MismatchError(std::string(node), "no parameter '" + std::string(role) + "'");
  return params_[i].value;
}

template <typename Scalar>
const Matrix<Scalar>& ParameterStore<Scalar>::value(std::string_view node,
                                                    std::string_view role) const {
  const int i = find(node, role);
  if (i < 0) throw MismatchError(std::string(node), "no parameter '" + std::string(role) + "'");
  return params_[i].value;
}

template <typename Scalar>
Index ParameterStore<Scalar>::total_size() const {
  Index n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Scalar>
ParameterStore<Scalar> ParameterStore<Scalar>::initialize(const MergedNetworkSpec& spec,
                                                          std::uint64_t seed) {
  check_merged(spec);
  const auto resolved = spec.resolve();
  ParameterStore store;
  std::mt19937_64 rng(seed);

  auto add = [&](const std::string& node, const char* role, Matrix<Scalar> value) {
    Matrix<Scalar> velocity = Matrix<Scalar>::Zero(value.rows(), value.cols());
    store.params_.push_back({node, role, std::move(value), std::move(velocity)});
  };
  auto he = [&](Index rows, Index cols, Index fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Matrix<Scalar> w(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) w(i, j) = static_cast<Scalar>(dist(rng));
    return w;
  };
  auto add_conv = [&](const std::string& node, int k, Index cin, Index cout) {
    add(node, "weight", he(cout, cin * k * k, cin * k * k));
    add(node, "bias", Matrix<Scalar>::Zero(cout, 1));
  };
  auto add_dense = [&](const std::string& node, Index fan_in, Index units) {
    add(node, "weight", he(fan_in, units, fan_in));
    add(node, "bias", Matrix<Scalar>::Zero(units, 1));
  };

  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto& node = spec.nodes[i];
    const auto& in = resolved[i].in;
    std::visit(overloaded{
                   [&](const ConvLayer& c) {
                     add_conv(node.id, c.kernel, in.channels, c.out_channels);
                     if (c.batch_norm) {
                       add(node.id, "bn_scale", Matrix<Scalar>::Ones(c.out_channels, 1));
                       add(node.id, "bn_shift", Matrix<Scalar>::Zero(c.out_channels, 1));
                       store.running_[node.id] = {Vector<Scalar>::Zero(c.out_channels),
                                                  Vector<Scalar>::Ones(c.out_channels)};
                     }
                   },
                   [&](const DenseLayer& d) {
                     add_dense(node.id, Index{in.channels} * in.height * in.width, d.units);
                   },
                   [](const MaxPoolLayer&) {},
               },
               node.op);
  }
  const std::string merge_id(kOutputMergeId);
  std::visit(overloaded{
                 [&](const ConvMerge& m) {
                   add_conv(merge_id, m.kernel, m.in_channels, m.out_channels);
                 },
                 [&](const DenseMerge& m) { add_dense(merge_id, m.in_units, m.out_units); },
                 [](const Passthrough&) {},
             },
             spec.output_merge);
  return store;
}

namespace {

// Feeder indices per node (-1 = network input).
std::vector<std::vector<int>> feeder_indices(const MergedNetworkSpec& spec) {
  std::vector<std::vector<int>> out;
  for (const auto& node : spec.nodes) {
    std::vector<int> idx;
    for (const auto& f : node.feeders) idx.push_back(f == kInputId ? -1 : spec.find(f));
    out.push_back(std::move(idx));
  }
  return out;
}

std::vector<int> output_feeder_indices(const MergedNetworkSpec& spec) {
  std::vector<int> idx;
  for (const auto& f : spec.output_feeders) idx.push_back(spec.find(f));
  return idx;
}

template <typename Scalar>
Vector<Scalar> as_vector(const Matrix<Scalar>& m) {
  return Eigen::Map<const Vector<Scalar>>(m.data(), m.size());
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const std::string& node, const char* what) {
  if (!t.all_finite()) throw NumericError("node '" + node + "'", std::string("non-finite ") + what);
}

Activation merge_activation(const OutputMerge& m) {
  return std::visit(overloaded{
                        [](const ConvMerge& c) { return c.activation; },
                        [](const DenseMerge& d) { return d.activation; },
                        [](const Passthrough&) { return Activation::None; },
                    },
                    m);
}

}  // namespace

template <typename Scalar>
ForwardPass<Scalar> run_forward(const MergedNetworkSpec& spec, const ParameterStore<Scalar>& store,
                                const Tensor<Scalar>& batch, Mode mode) {
  if (batch.channels() != spec.input.channels || batch.height() != spec.input.height ||
      batch.width() != spec.input.width)
    throw ShapeError("batch " + batch.shape_string() + " does not match network input " +
                     std::to_string(spec.input.height) + "x" + std::to_string(spec.input.width) +
                     "x" + std::to_string(spec.input.channels));
  const auto feeders = feeder_indices(spec);
  ForwardPass<Scalar> pass;
  pass.mode = mode;
  pass.running = store.running();
  pass.nodes.resize(spec.nodes.size());

  auto gather = [&](const std::vector<int>& idx) {
    std::vector<const Tensor<Scalar>*> parts;
    for (int i : idx) parts.push_back(i < 0 ? &batch : &pass.nodes[i].output);
    return concat_channels(parts);
  };

  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto& node = spec.nodes[i];
    auto& cache = pass.nodes[i];
    cache.input = gather(feeders[i]);
    std::visit(overloaded{
                   [&](const ConvLayer& c) {
                     Tensor<Scalar> z = conv2d(cache.input, store.value(node.id, "weight"),
                                               as_vector(store.value(node.id, "bias")), c.kernel);
                     if (c.batch_norm) {
                       cache.pre_norm = std::move(z);
                       cache.norm = batch_norm(cache.pre_norm,
                                               as_vector(store.value(node.id, "bn_scale")),
                                               as_vector(store.value(node.id, "bn_shift")),
                                               pass.running.at(node.id), mode);
                       if (mode == Mode::Train) pass.running[node.id] = cache.norm.running;
                       z = cache.norm.output;
                     }
                     cache.output = activate(z, c.activation);
                   },
                   [&](const DenseLayer& d) {
                     cache.output = activate(dense(cache.input, store.value(node.id, "weight"),
                                                   as_vector(store.value(node.id, "bias"))),
                                             d.activation);
                   },
                   [&](const MaxPoolLayer& p) {
                     cache.pool = maxpool(cache.input, p.window);
                     cache.output = cache.pool.output;
                   },
               },
               node.op);
    require_finite(cache.output, node.id, "activation");
  }

  const auto out_idx = output_feeder_indices(spec);
  const std::string merge_id(kOutputMergeId);
  std::visit(overloaded{
                 [&](const ConvMerge& m) {
                   pass.merge.input = gather(out_idx);
                   pass.merge.output = activate(
                       conv2d(pass.merge.input, store.value(merge_id, "weight"),
                              as_vector(store.value(merge_id, "bias")), m.kernel),
                       m.activation);
                   pass.output = pass.merge.output;
                 },
                 [&](const DenseMerge& m) {
                   pass.merge.input = gather(out_idx);
                   pass.merge.output = activate(dense(pass.merge.input,
                                                      store.value(merge_id, "weight"),
                                                      as_vector(store.value(merge_id, "bias"))),
                                                m.activation);
                   pass.output = pass.merge.output;
                 },
                 [&](const Passthrough&) { pass.output = pass.nodes[out_idx.front()].output; },
             },
             spec.output_merge);
  require_finite(pass.output, merge_id, "output");
  return pass;
}

template <typename Scalar>
Gradients<Scalar> run_backward(const MergedNetworkSpec& spec, const ParameterStore<Scalar>& store,
                               const ForwardPass<Scalar>& pass,
                               const Tensor<Scalar>& grad_output) {
  if (pass.nodes.size() != spec.nodes.size())
    throw ShapeError("forward cache does not belong to this network");
  if (!grad_output.same_shape(pass.output))
    throw ShapeError("loss gradient " + grad_output.shape_string() + " vs output " +
                     pass.output.shape_string());

  Gradients<Scalar> grads;
  for (const auto& p : store.params())
    grads.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
  auto set_grad = [&](const std::string& node, const char* role, const auto& g) {
    const int i = store.find(node, role);
    grads[i] = Eigen::Map<const Matrix<Scalar>>(g.data(), grads[i].rows(), grads[i].cols());
    if (!grads[i].allFinite())
      throw NumericError("node '" + node + "'", std::string("non-finite gradient for ") + role);
  };

  std::vector<Tensor<Scalar>> d_out(spec.nodes.size());
  auto accumulate = [&](int idx, Tensor<Scalar> g) {
    if (idx < 0) return;
    if (d_out[idx].size() == 0)
      d_out[idx] = std::move(g);
    else
      d_out[idx].values() += g.values();
  };
  // Splits a gradient w.r.t. a concatenated input back to its feeders.
  auto scatter = [&](const std::vector<int>& idx, const Tensor<Scalar>& g) {
    if (idx.size() == 1) {
      accumulate(idx.front(), g);
      return;
    }
    Index at = 0;
    for (int i : idx) {
      const Index c = i < 0 ? spec.input.channels : pass.nodes[i].output.channels();
      if (i >= 0) accumulate(i, slice_channels(g, at, c));
      at += c;
    }
  };

  const auto feeders = feeder_indices(spec);
  const auto out_idx = output_feeder_indices(spec);
  const std::string merge_id(kOutputMergeId);
  const Activation merge_act = merge_activation(spec.output_merge);
  std::visit(overloaded{
                 [&](const ConvMerge& m) {
                   const auto dz = activate_backward(pass.merge.output, merge_act, grad_output);
                   auto g = conv2d_backward(pass.merge.input, store.value(merge_id, "weight"),
                                            m.kernel, dz);
                   set_grad(merge_id, "weight", g.weight);
                   set_grad(merge_id, "bias", g.bias);
                   scatter(out_idx, g.input);
                 },
                 [&](const DenseMerge&) {
                   const auto dz = activate_backward(pass.merge.output, merge_act, grad_output);
                   auto g = dense_backward(pass.merge.input, store.value(merge_id, "weight"), dz);
                   set_grad(merge_id, "weight", g.weight);
                   set_grad(merge_id, "bias", g.bias);
                   scatter(out_idx, g.input);
                 },
                 [&](const Passthrough&) { accumulate(out_idx.front(), grad_output); },
             },
             spec.output_merge);

  for (std::size_t r = spec.nodes.size(); r-- > 0;) {
    if (d_out[r].size() == 0) continue;  // node does not reach the output
    const auto& node = spec.nodes[r];
    const auto& cache = pass.nodes[r];
    const Tensor<Scalar>& dy = d_out[r];
    Tensor<Scalar> dx;
    std::visit(overloaded{
                   [&](const ConvLayer& c) {
                     Tensor<Scalar> dz = activate_backward(cache.output, c.activation, dy);
                     if (c.batch_norm) {
                       auto bg = batch_norm_backward(cache.norm,
                                                     as_vector(store.value(node.id, "bn_scale")), dz);
                       set_grad(node.id, "bn_scale", bg.scale);
                       set_grad(node.id, "bn_shift", bg.shift);
                       dz = std::move(bg.input);
                     }
                     auto g = conv2d_backward(cache.input, store.value(node.id, "weight"),
                                              c.kernel, dz);
                     set_grad(node.id, "weight", g.weight);
                     set_grad(node.id, "bias", g.bias);
                     dx = std::move(g.input);
                   },
                   [&](const DenseLayer& d) {
                     const auto dz = activate_backward(cache.output, d.activation, dy);
                     auto g = dense_backward(cache.input, store.value(node.id, "weight"), dz);
                     set_grad(node.id, "weight", g.weight);
                     set_grad(node.id, "bias", g.bias);
                     dx = std::move(g.input);
                   },
                   [&](const MaxPoolLayer&) { dx = maxpool_backward(cache.input, cache.pool, dy); },
               },
               node.op);
    require_finite(dx, node.id, "input gradient");
    scatter(feeders[r], dx);
  }
  return grads;
}

template <typename Scalar>
void commit_running_stats(ParameterStore<Scalar>& store, const ForwardPass<Scalar>& pass) {
  for (const auto& [node, stats] : pass.running) store.running().at(node) = stats;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'S', 'P', 'D', 'W', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  read_exact(in, reinterpret_cast<char*>(&v), sizeof v, what);
  return v;
}

std::string read_string(std::istream& in, const char* what) {
  const std::uint32_t n = read_u32(in, what);
  if (n > 4096) throw FormatError(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  read_exact(in, s.data(), n, what);
  return s;
}

template <typename Scalar>
void write_matrix(std::ostream& out, const std::string& node, const std::string& role,
                  const Matrix<Scalar>& m) {
  write_string(out, node);
  write_string(out, role);
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
}

}  // namespace

int checkpoint_scalar_width(std::istream& in) {
  char magic[5];
  read_exact(in, magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError("not a checkpoint (bad magic)");
  char width = 0;
  read_exact(in, &width, 1, "scalar width");
  if (width != 4 && width != 8) throw FormatError("unsupported scalar width in checkpoint");
  return width;
}

template <typename Scalar>
void save_checkpoint(std::ostream& out, const ParameterStore<Scalar>& store) {
  out.write(kMagic, sizeof kMagic);
  const char width = static_cast<char>(sizeof(Scalar));
  out.write(&width, 1);
  write_u32(out, static_cast<std::uint32_t>(store.params().size() + 2 * store.running().size()));
  for (const auto& p : store.params()) write_matrix(out, p.node, p.role, p.value);
  for (const auto& [node, stats] : store.running()) {
    write_matrix<Scalar>(out, node, "bn_running_mean", stats.mean);
    write_matrix<Scalar>(out, node, "bn_running_var", stats.var);
  }
}

template <typename Scalar>
ParameterStore<Scalar> load_checkpoint(std::istream& in, const MergedNetworkSpec& spec) {
  if (checkpoint_scalar_width(in) != static_cast<int>(sizeof(Scalar)))
    throw FormatError("checkpoint precision differs from the requested one");
  ParameterStore<Scalar> store = ParameterStore<Scalar>::initialize(spec, 0);

  const std::uint32_t count = read_u32(in, "entry count");
  const std::size_t expected = store.params().size() + 2 * store.running().size();
  std::vector<char> seen_param(store.params().size(), 0);
  std::size_t seen = 0;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string node = read_string(in, "node id");
    const std::string role = read_string(in, "role");
    const std::uint32_t rows = read_u32(in, "rows");
    const std::uint32_t cols = read_u32(in, "cols");

    Matrix<Scalar>* target = nullptr;
    Vector<Scalar>* vtarget = nullptr;
    if (role == "bn_running_mean" || role == "bn_running_var") {
      auto it = store.running().find(node);
      if (it == store.running().end())
        throw MismatchError(node, "checkpoint has batch-norm statistics the network lacks");
      vtarget = role == "bn_running_mean" ? &it->second.mean : &it->second.var;
      if (rows != vtarget->size() || cols != 1)
        throw MismatchError(node, role + " has the wrong shape");
    } else {
      const int i = store.find(node, role);
      if (i < 0) throw MismatchError(node, "checkpoint parameter '" + role + "' not in network");
      target = &store.params()[i].value;
      if (rows != target->rows() || cols != target->cols())
        throw MismatchError(node, role + " is " + std::to_string(rows) + "x" +
                                      std::to_string(cols) + " in checkpoint, " +
                                      std::to_string(target->rows()) + "x" +
                                      std::to_string(target->cols()) + " in network");
      seen_param[i] = 1;
    }
    const std::size_t bytes = std::size_t{rows} * cols * sizeof(Scalar);
    char* dst = target ? reinterpret_cast<char*>(target->data())
                       : reinterpret_cast<char*>(vtarget->data());
    read_exact(in, dst, bytes, "values");
    ++seen;
  }
  for (std::size_t i = 0; i < seen_param.size(); ++i)
    if (!seen_param[i])
      throw MismatchError(store.params()[i].node,
                          "parameter '" + store.params()[i].role + "' missing from checkpoint");
  if (seen != expected) throw MismatchError(spec.name, "checkpoint entry count differs");
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("trailing bytes after checkpoint payload");
  return store;
}

#define SPDNN_INSTANTIATE_NETWORK(S)                                                        \
  template class ParameterStore<S>;                                                        \
  template ForwardPass<S> run_forward(const MergedNetworkSpec&, const ParameterStore<S>&,  \
                                      const Tensor<S>&, Mode);                             \
  template Gradients<S> run_backward(const MergedNetworkSpec&, const ParameterStore<S>&,   \
                                     const ForwardPass<S>&, const Tensor<S>&);             \
  template void commit_running_stats(ParameterStore<S>&, const ForwardPass<S>&);           \
  template void save_checkpoint(std::ostream&, const ParameterStore<S>&);                  \
  template ParameterStore<S> load_checkpoint(std::istream&, const MergedNetworkSpec&);

SPDNN_INSTANTIATE_NETWORK(float)
SPDNN_INSTANTIATE_NETWORK(double)

}  // namespace spdnn
