#include "segsel/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace segsel {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

std::string dim_mismatch(std::string_view op, std::string_view what, std::size_t got, std::size_t want) {
  return std::string(op) + ": " + std::string(what) + " is " + std::to_string(got) + ", expected " +
         std::to_string(want);
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op, std::string_view name) {
  require(t.rank() == rank, std::string(op) + ": " + std::string(name) + " must have rank " +
                                std::to_string(rank) + ", got shape " + shape_to_string(t.shape()));
}

Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    require(v.valid(), "op on an unrecorded variable");
    if (tape == nullptr) tape = v.tape();
    require(v.tape() == tape, "op mixes variables from different tapes");
  }
  return *tape;
}

std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride, std::string_view op) {
  require(stride >= 1, std::string(op) + ": stride must be >= 1");
  require(kernel >= 1, std::string(op) + ": kernel length must be >= 1");
  require(len >= kernel, std::string(op) + ": input length " + std::to_string(len) +
                             " is shorter than kernel length " + std::to_string(kernel));
  return (len - kernel) / stride + 1;
}

}  // namespace

const Tensor& Var::value() const {
  require(valid(), "value() on an unrecorded variable");
  return tape_->value(id_);
}

const Tensor& Var::grad() const {
  require(valid(), "grad() on an unrecorded variable");
  return tape_->grad(id_);
}

Var Tape::constant(Tensor value) {
  value.require_finite("constant");
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, 0, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  value.require_finite("input");
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, 0, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamStore& store, std::string_view name) {
  const std::size_t index = store.index_of(name);
  auto key = std::make_pair(static_cast<const ParamStore*>(&store), index);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var(this, it->second);
  const Tensor& value = store.entry(index).value;
  value.require_finite("parameter '" + std::string(name) + "'");
  nodes_.push_back(Node{value, {}, {}, &store, index, true});
  param_nodes_.emplace(key, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn, std::string_view op) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn), op);
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn, std::string_view op) {
  value.require_finite(std::string(op));
  bool needs = false;
  for (const Var& p : parents) {
    require(p.tape() == this, std::string(op) + ": parent recorded on a different tape");
    needs = needs || nodes_.at(p.id()).needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr, 0, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  if (!backward_done_) throw std::logic_error("gradient requested before backward()");
  Node& node = nodes_.at(id);
  if (node.grad.size() != node.value.size()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.tape() != this || nodes_.empty()) {
    throw std::logic_error("backward() called without a recorded forward pass");
  }
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward() target must be a scalar, got shape " +
                                shape_to_string(loss.value().shape()));
  }
  std::set<ParamStore*> stores;
  for (auto& node : nodes_) {
    node.grad = node.needs_grad ? Tensor(node.value.shape(), 0.0) : Tensor();
    if (node.store != nullptr) stores.insert(node.store);
  }
  for (ParamStore* s : stores) s->zero_grad();
  backward_done_ = true;

  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad) continue;
    if (node.backward) node.backward(*this, i);
    node.grad.require_finite("gradient");
    if (node.store != nullptr) {
      Tensor& target = node.store->entry(node.param_index).grad;
      for (std::size_t k = 0; k < target.size(); ++k) target[k] += node.grad[k];
    }
  }
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "elu") return Activation::elu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "square") return Activation::square;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::identity: return "identity";
    case Activation::elu: return "elu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::square: return "square";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

// ---------------------------------------------------------------------------
// kernels

Tensor conv1d_forward(const Tensor& input, const Tensor& kernels, std::size_t stride) {
  constexpr std::string_view op = "conv1d";
  require_rank(input, 2, op, "input");
  require_rank(kernels, 3, op, "kernels");
  const std::size_t cin = input.dim(0), len = input.dim(1);
  const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
  require(kernels.dim(1) == cin, dim_mismatch(op, "kernel input-channel dimension", kernels.dim(1), cin));
  const std::size_t out_len = conv_out_len(len, k, stride, op);
  Tensor out({cout, out_len}, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < cin; ++c) {
      const double* w = &kernels.data()[(o * cin + c) * k];
      const double* x = &input.data()[c * len];
      double* y = &out.data()[o * out_len];
      for (std::size_t j = 0; j < out_len; ++j) {
        const double* xs = x + j * stride;
        double acc = 0.0;
        for (std::size_t q = 0; q < k; ++q) acc += xs[q] * w[q];
        y[j] += acc;
      }
    }
  }
  return out;
}

Tensor channelwise_conv1d_forward(const Tensor& input, const Tensor& kernels, std::size_t stride) {
  constexpr std::string_view op = "channelwise_conv1d";
  require_rank(input, 2, op, "input");
  require_rank(kernels, 2, op, "kernels");
  const std::size_t channels = input.dim(0), len = input.dim(1);
  const std::size_t filters = kernels.dim(0), k = kernels.dim(1);
  const std::size_t out_len = conv_out_len(len, k, stride, op);
  Tensor out({channels * filters, out_len}, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* x = &input.data()[c * len];
    for (std::size_t f = 0; f < filters; ++f) {
      const double* w = &kernels.data()[f * k];
      double* y = &out.data()[(c * filters + f) * out_len];
      for (std::size_t j = 0; j < out_len; ++j) {
        const double* xs = x + j * stride;
        double acc = 0.0;
        for (std::size_t q = 0; q < k; ++q) acc += xs[q] * w[q];
        y[j] = acc;
      }
    }
  }
  return out;
}

Tensor avg_pool1d_forward(const Tensor& input, std::size_t window, std::size_t stride) {
  constexpr std::string_view op = "avg_pool1d";
  require_rank(input, 2, op, "input");
  const std::size_t rows = input.dim(0), len = input.dim(1);
  const std::size_t out_len = conv_out_len(len, window, stride, op);
  Tensor out({rows, out_len}, 0.0);
  const double inv = 1.0 / static_cast<double>(window);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &input.data()[r * len];
    for (std::size_t j = 0; j < out_len; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < window; ++q) acc += x[j * stride + q];
      out.at(r, j) = acc * inv;
    }
  }
  return out;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  constexpr std::string_view op = "dense";
  require_rank(input, 1, op, "input");
  require_rank(weights, 2, op, "weights");
  require_rank(bias, 1, op, "bias");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  require(input.dim(0) == n, dim_mismatch(op, "input length", input.dim(0), n));
  require(bias.dim(0) == m, dim_mismatch(op, "bias length", bias.dim(0), m));
  Tensor out({m}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* w = &weights.data()[i * n];
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += w[j] * input[j];
    out[i] = acc + bias[i];
  }
  return out;
}

namespace {

double activate_scalar(double x, Activation kind) {
  switch (kind) {
    case Activation::identity: return x;
    case Activation::elu: return x > 0.0 ? x : std::expm1(x);
    case Activation::leaky_relu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::square: return x * x;
    case Activation::sigmoid:
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
  }
  return x;
}

// Derivative in terms of input x and output y.
double activate_derivative(double x, double y, Activation kind) {
  switch (kind) {
    case Activation::identity: return 1.0;
    case Activation::elu: return x > 0.0 ? 1.0 : y + 1.0;
    case Activation::leaky_relu: return x > 0.0 ? 1.0 : kLeakySlope;
    case Activation::square: return 2.0 * x;
    case Activation::sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

}  // namespace

Tensor activation_forward(const Tensor& x, Activation kind) {
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = activate_scalar(x[i], kind);
  return out;
}

Tensor softmax_forward(const Tensor& x) {
  require(x.rank() == 1 && x.size() > 0, "softmax: input must be a non-empty vector, got shape " +
                                             shape_to_string(x.shape()));
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  Tensor out(x.shape(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] /= total;
  return out;
}

double bce_value(double predicted, int label) {
  require(label == 0 || label == 1, "bce: label must be 0 or 1");
  const double p = std::clamp(predicted, kBceEpsilon, 1.0 - kBceEpsilon);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

Tensor mean_columns_forward(const Tensor& features, std::span<const std::size_t> columns) {
  require_rank(features, 2, "mean_columns", "features");
  const std::size_t d = features.dim(0), t = features.dim(1);
  Tensor out({d}, 0.0);
  if (columns.empty()) return out;
  for (std::size_t col : columns) {
    require(col < t, "mean_columns: column " + std::to_string(col) + " out of range for length " +
                         std::to_string(t));
  }
  const double inv = 1.0 / static_cast<double>(columns.size());
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = &features.data()[i * t];
    double acc = 0.0;
    for (std::size_t col : columns) acc += row[col];
    out[i] = acc * inv;
  }
  return out;
}

double elastic_net_value(const ParamStore& store, double l1, double l2) {
  require(l1 >= 0.0 && l2 >= 0.0, "elastic_net: coefficients must be non-negative");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& e : store.entries()) {
    for (double w : e.value.data()) {
      abs_sum += std::abs(w);
      sq_sum += w * w;
    }
  }
  return l1 * abs_sum + l2 * sq_sum;
}

// ---------------------------------------------------------------------------
// recorded ops

Var conv1d(Var input, Var kernels, std::size_t stride) {
  Tape& tape = same_tape({input, kernels});
  Tensor out = conv1d_forward(input.value(), kernels.value(), stride);
  const std::size_t in_id = input.id(), k_id = kernels.id();
  return tape.record(std::move(out), {input, kernels}, [in_id, k_id, stride](Tape& t, std::size_t self) {
    const Tensor& x = t.value(in_id);
    const Tensor& w = t.value(k_id);
    const Tensor& gy = t.grad(self);
    const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(0), k = w.dim(2);
    const std::size_t out_len = gy.dim(1);
    const bool want_x = t.needs_grad(in_id), want_w = t.needs_grad(k_id);
    Tensor* gx = want_x ? &t.grad(in_id) : nullptr;
    Tensor* gw = want_w ? &t.grad(k_id) : nullptr;
    for (std::size_t o = 0; o < cout; ++o) {
      const double* g = &gy.data()[o * out_len];
      for (std::size_t c = 0; c < cin; ++c) {
        const double* wr = &w.data()[(o * cin + c) * k];
        const double* xr = &x.data()[c * len];
        for (std::size_t j = 0; j < out_len; ++j) {
          const double gj = g[j];
          if (gj == 0.0) continue;
          const std::size_t base = j * stride;
          if (gw) {
            double* gwr = &gw->data()[(o * cin + c) * k];
            for (std::size_t q = 0; q < k; ++q) gwr[q] += gj * xr[base + q];
          }
          if (gx) {
            double* gxr = &gx->data()[c * len];
            for (std::size_t q = 0; q < k; ++q) gxr[base + q] += gj * wr[q];
          }
        }
      }
    }
  }, "conv1d");
}

Var channelwise_conv1d(Var input, Var kernels, std::size_t stride) {
  Tape& tape = same_tape({input, kernels});
  Tensor out = channelwise_conv1d_forward(input.value(), kernels.value(), stride);
  const std::size_t in_id = input.id(), k_id = kernels.id();
  return tape.record(std::move(out), {input, kernels}, [in_id, k_id, stride](Tape& t, std::size_t self) {
    const Tensor& x = t.value(in_id);
    const Tensor& w = t.value(k_id);
    const Tensor& gy = t.grad(self);
    const std::size_t channels = x.dim(0), len = x.dim(1), filters = w.dim(0), k = w.dim(1);
    const std::size_t out_len = gy.dim(1);
    Tensor* gx = t.needs_grad(in_id) ? &t.grad(in_id) : nullptr;
    Tensor* gw = t.needs_grad(k_id) ? &t.grad(k_id) : nullptr;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* xr = &x.data()[c * len];
      for (std::size_t f = 0; f < filters; ++f) {
        const double* g = &gy.data()[(c * filters + f) * out_len];
        const double* wr = &w.data()[f * k];
        for (std::size_t j = 0; j < out_len; ++j) {
          const double gj = g[j];
          const std::size_t base = j * stride;
          if (gw) {
            double* gwr = &gw->data()[f * k];
            for (std::size_t q = 0; q < k; ++q) gwr[q] += gj * xr[base + q];
          }
          if (gx) {
            double* gxr = &gx->data()[c * len];
            for (std::size_t q = 0; q < k; ++q) gxr[base + q] += gj * wr[q];
          }
        }
      }
    }
  }, "channelwise_conv1d");
}

Var add_row_bias(Var input, Var bias) {
  Tape& tape = same_tape({input, bias});
  const Tensor& x = input.value();
  const Tensor& b = bias.value();
  require_rank(x, 2, "add_row_bias", "input");
  require_rank(b, 1, "add_row_bias", "bias");
  require(b.dim(0) == x.dim(0), dim_mismatch("add_row_bias", "bias length", b.dim(0), x.dim(0)));
  Tensor out = x;
  const std::size_t len = x.dim(1);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    for (std::size_t j = 0; j < len; ++j) out.at(r, j) += b[r];
  }
  const std::size_t in_id = input.id(), b_id = bias.id();
  return tape.record(std::move(out), {input, bias}, [in_id, b_id](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(in_id)) {
      Tensor& gx = t.grad(in_id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (t.needs_grad(b_id)) {
      Tensor& gb = t.grad(b_id);
      const std::size_t len = gy.dim(1);
      for (std::size_t r = 0; r < gy.dim(0); ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < len; ++j) acc += gy.at(r, j);
        gb[r] += acc;
      }
    }
  }, "add_row_bias");
}

Var avg_pool1d(Var input, std::size_t window, std::size_t stride) {
  Tape& tape = same_tape({input});
  Tensor out = avg_pool1d_forward(input.value(), window, stride);
  const std::size_t in_id = input.id();
  return tape.record(std::move(out), {input}, [in_id, window, stride](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(in_id);
    const std::size_t len = gx.dim(1), out_len = gy.dim(1);
    const double inv = 1.0 / static_cast<double>(window);
    for (std::size_t r = 0; r < gy.dim(0); ++r) {
      double* gxr = &gx.data()[r * len];
      for (std::size_t j = 0; j < out_len; ++j) {
        const double g = gy.at(r, j) * inv;
        for (std::size_t q = 0; q < window; ++q) gxr[j * stride + q] += g;
      }
    }
  }, "avg_pool1d");
}

Var dense(Var input, Var weights, Var bias) {
  Tape& tape = same_tape({input, weights, bias});
  Tensor out = dense_forward(input.value(), weights.value(), bias.value());
  const std::size_t x_id = input.id(), w_id = weights.id(), b_id = bias.id();
  return tape.record(std::move(out), {input, weights, bias}, [x_id, w_id, b_id](Tape& t, std::size_t self) {
    const Tensor& x = t.value(x_id);
    const Tensor& w = t.value(w_id);
    const Tensor& gy = t.grad(self);
    const std::size_t m = w.dim(0), n = w.dim(1);
    if (t.needs_grad(b_id)) {
      Tensor& gb = t.grad(b_id);
      for (std::size_t i = 0; i < m; ++i) gb[i] += gy[i];
    }
    if (t.needs_grad(w_id)) {
      Tensor& gw = t.grad(w_id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gw.at(i, j) += gy[i] * x[j];
      }
    }
    if (t.needs_grad(x_id)) {
      Tensor& gx = t.grad(x_id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gx[j] += gy[i] * w.at(i, j);
      }
    }
  }, "dense");
}

Var activate(Var x, Activation kind) {
  Tape& tape = same_tape({x});
  Tensor out = activation_forward(x.value(), kind);
  const std::size_t x_id = x.id();
  return tape.record(std::move(out), {x}, [x_id, kind](Tape& t, std::size_t self) {
    const Tensor& in = t.value(x_id);
    const Tensor& y = t.value(self);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(x_id);
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] += gy[i] * activate_derivative(in[i], y[i], kind);
  }, "activation");
}

Var softmax(Var x) {
  Tape& tape = same_tape({x});
  Tensor out = softmax_forward(x.value());
  const std::size_t x_id = x.id();
  return tape.record(std::move(out), {x}, [x_id](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(x_id);
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (gy[i] - dot);
  }, "softmax");
}

Var mean_columns(Var features, std::span<const std::size_t> columns) {
  Tape& tape = same_tape({features});
  Tensor out = mean_columns_forward(features.value(), columns);
  const std::size_t f_id = features.id();
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  return tape.record(std::move(out), {features}, [f_id, cols = std::move(cols)](Tape& t, std::size_t self) {
    if (cols.empty()) return;
    const Tensor& gy = t.grad(self);
    Tensor& gf = t.grad(f_id);
    const double inv = 1.0 / static_cast<double>(cols.size());
    for (std::size_t i = 0; i < gy.size(); ++i) {
      for (std::size_t col : cols) gf.at(i, col) += gy[i] * inv;
    }
  }, "mean_columns");
}

Var concat(Var a, Var b) {
  Tape& tape = same_tape({a, b});
  require_rank(a.value(), 1, "concat", "first operand");
  require_rank(b.value(), 1, "concat", "second operand");
  std::vector<double> data(a.value().data().begin(), a.value().data().end());
  data.insert(data.end(), b.value().data().begin(), b.value().data().end());
  const std::size_t a_id = a.id(), b_id = b.id(), na = a.value().size();
  return tape.record(Tensor::vector(std::move(data)), {a, b}, [a_id, b_id, na](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(a_id)) {
      Tensor& ga = t.grad(a_id);
      for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
    }
    if (t.needs_grad(b_id)) {
      Tensor& gb = t.grad(b_id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
    }
  }, "concat");
}

Var element(Var x, std::size_t index) {
  Tape& tape = same_tape({x});
  require(index < x.value().size(), "element: index " + std::to_string(index) + " out of range");
  const std::size_t x_id = x.id();
  return tape.record(Tensor::scalar(x.value()[index]), {x}, [x_id, index](Tape& t, std::size_t self) {
    t.grad(x_id)[index] += t.grad(self)[0];
  }, "element");
}

Var add(Var a, Var b) {
  Tape& tape = same_tape({a, b});
  require(a.value().shape() == b.value().shape(), "add: shape " + shape_to_string(a.value().shape()) +
                                                      " vs " + shape_to_string(b.value().shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t a_id = a.id(), b_id = b.id();
  return tape.record(std::move(out), {a, b}, [a_id, b_id](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    for (std::size_t id : {a_id, b_id}) {
      if (!t.needs_grad(id)) continue;
      Tensor& g = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  }, "add");
}

Var scale(Var x, double factor) {
  Tape& tape = same_tape({x});
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t x_id = x.id();
  return tape.record(std::move(out), {x}, [x_id, factor](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(x_id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
  }, "scale");
}

Var mean(std::span<const Var> scalars) {
  require(!scalars.empty(), "mean: no terms");
  Tape* tape = scalars.front().tape();
  double acc = 0.0;
  std::vector<std::size_t> ids;
  ids.reserve(scalars.size());
  for (const Var& v : scalars) {
    require(v.valid() && v.tape() == tape, "mean: terms must share one tape");
    acc += v.value().item();
    ids.push_back(v.id());
  }
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return tape->record(Tensor::scalar(acc * inv), scalars, [ids = std::move(ids), inv](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] * inv;
    for (std::size_t id : ids) {
      if (t.needs_grad(id)) t.grad(id)[0] += g;
    }
  }, "mean");
}

Var bce(Var predicted, int label) {
  Tape& tape = same_tape({predicted});
  const double p = predicted.value().item();
  const double loss = bce_value(p, label);
  const std::size_t p_id = predicted.id();
  return tape.record(Tensor::scalar(loss), {predicted}, [p_id, label, p](Tape& t, std::size_t self) {
    if (p <= kBceEpsilon || p >= 1.0 - kBceEpsilon) return;  // clamped region is flat
    const double g = t.grad(self)[0];
    t.grad(p_id)[0] += g * (label == 1 ? -1.0 / p : 1.0 / (1.0 - p));
  }, "bce");
}

Var actor_objective(Var probs, std::size_t action, double advantage) {
  Tape& tape = same_tape({probs});
  require(action < probs.value().size(), "actor_objective: action out of range");
  const double pi = probs.value()[action];
  const double clamped = std::max(pi, kLogProbFloor);
  const std::size_t p_id = probs.id();
  return tape.record(Tensor::scalar(std::log(clamped) * advantage), {probs},
                     [p_id, action, pi, advantage](Tape& t, std::size_t self) {
                       if (pi < kLogProbFloor) return;
                       t.grad(p_id)[action] += t.grad(self)[0] * advantage / pi;
                     },
                     "actor_objective");
}

Var critic_loss(Var value, double target) {
  Tape& tape = same_tape({value});
  const double v = value.value().item();
  const double diff = v - target;
  const std::size_t v_id = value.id();
  return tape.record(Tensor::scalar(0.5 * diff * diff), {value}, [v_id, diff](Tape& t, std::size_t self) {
    t.grad(v_id)[0] += t.grad(self)[0] * diff;
  }, "critic_loss");
}

Var elastic_net(Tape& tape, ParamStore& store, double l1, double l2) {
  const double total = elastic_net_value(store, l1, l2);
  std::vector<Var> params;
  std::vector<std::size_t> ids;
  for (const auto& e : store.entries()) {
    params.push_back(tape.param(store, e.name));
    ids.push_back(params.back().id());
  }
  if (params.empty()) return tape.constant(Tensor::scalar(0.0));
  return tape.record(Tensor::scalar(total), params, [ids = std::move(ids), l1, l2](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (std::size_t id : ids) {
      const Tensor& w = t.value(id);
      Tensor& gw = t.grad(id);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double sign = w[i] > 0.0 ? 1.0 : (w[i] < 0.0 ? -1.0 : 0.0);
        gw[i] += g * (l1 * sign + 2.0 * l2 * w[i]);
      }
    }
  }, "elastic_net");
}

}  // namespace segsel
