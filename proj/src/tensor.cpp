#include "gopt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gopt/error.hpp"
#include "gopt/random.hpp"

namespace gopt {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->value.assign(shape_size(shape), 0.0);
  t.node_->shape = std::move(shape);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->value = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() > 2) throw DimensionError("expected rank <= 2, got " + shape_string(s));
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.size() > 2) throw DimensionError("expected rank <= 2, got " + shape_string(s));
  return s.empty() ? 1 : s.back();
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<double> Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::release_grad() { node_->grad.clear(); }

void Tape::record(Tensor output, std::function<void()> backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that does not depend on any trainable tensor");
  }
  for (auto& e : entries_) e.output.release_grad();
  loss.grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

namespace {

bool track(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(Tape& tape, const Tensor& x, Fwd fwd, Deriv deriv) {
  const bool tracked = track(tape, {&x});
  Tensor out = Tensor::zeros(x.shape(), tracked);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  if (tracked) {
    tape.record(out, [x, out, deriv]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto xv = x.data();
      auto ov = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], ov[i]);
    });
  }
  return out;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool tracked = track(tape, {&a, &b});
  Tensor out = Tensor::zeros({m, n}, tracked);
  auto av = a.data();
  auto bv = b.data();
  auto cv = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = cv.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  if (tracked) {
    tape.record(out, [a, b, out, m, k, n]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        // dA = dC * B^T
        auto ga = a.grad();
        auto bv = b.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = bv.data() + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // dB = A^T * dC
        auto gb = b.grad();
        auto av = a.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            double* gbrow = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  const bool tracked = track(tape, {&x});
  Tensor out = Tensor::zeros({n, m}, tracked);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
  if (tracked) {
    tape.record(out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool tracked = track(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), tracked);
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (tracked) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool tracked = track(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), tracked);
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (tracked) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool tracked = track(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), tracked);
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (tracked) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        auto bv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        auto av = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  const bool tracked = track(tape, {&x, &bias});
  Tensor out = Tensor::zeros(x.shape(), tracked);
  auto xv = x.data(), bv = bias.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + bv[j];
  if (tracked) {
    tape.record(out, [x, bias, out, m, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return unary(
      tape, x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(Tape& tape, const Tensor& x, double value) {
  return unary(
      tape, x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.rank() > 2 || p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    m += p.rows();
    tracked = tracked || p.requires_grad();
  }
  tracked = tracked && tape.recording();
  Tensor out = Tensor::zeros({m, n}, tracked);
  auto ov = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), ov.begin() + offset);
    offset += p.size();
  }
  if (tracked) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape.record(out, [inputs, out]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.rank() > 2 || p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    n += p.cols();
    tracked = tracked || p.requires_grad();
  }
  tracked = tracked && tape.recording();
  Tensor out = Tensor::zeros({m, n}, tracked);
  auto ov = out.data();
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    auto pv = p.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pc; ++j) ov[i * n + col + j] = pv[i * pc + j];
    col += pc;
  }
  if (tracked) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape.record(out, [inputs, out, m, n]() mutable {
      auto g = out.grad();
      std::size_t col = 0;
      for (auto& p : inputs) {
        const std::size_t pc = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * n + col + j];
        }
        col += pc;
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows");
  const std::size_t n = x.cols();
  if (begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_string(x.shape()));
  }
  const bool tracked = track(tape, {&x});
  Tensor out = Tensor::zeros({count, n}, tracked);
  auto xv = x.data();
  std::copy(xv.begin() + begin * n, xv.begin() + (begin + count) * n, out.data().begin());
  if (tracked) {
    tape.record(out, [x, out, begin, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin + count > n) {
    throw DimensionError("slice_cols: cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_string(x.shape()));
  }
  const bool tracked = track(tape, {&x});
  Tensor out = Tensor::zeros({m, count}, tracked);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) ov[i * count + j] = xv[i * n + begin + j];
  if (tracked) {
    tape.record(out, [x, out, begin, m, n, count]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> index) {
  require_rank2(table, "gather_rows");
  const std::size_t rows = table.rows(), n = table.cols();
  for (std::size_t r : index) {
    if (r >= rows) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of " +
                           shape_string(table.shape()));
    }
  }
  const bool tracked = track(tape, {&table});
  Tensor out = Tensor::zeros({index.size(), n}, tracked);
  auto tv = table.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(tv.begin() + index[i] * n, n, ov.begin() + i * n);
  if (tracked) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    tape.record(out, [table, out, idx = std::move(idx), n]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += g[i * n + j];
    });
  }
  return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& x, std::span<const std::uint8_t> key_mask) {
  require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (!key_mask.empty() && key_mask.size() != n) {
    throw DimensionError("softmax_rows: mask of length " + std::to_string(key_mask.size()) +
                         " for " + shape_string(x.shape()));
  }
  auto keep = [&](std::size_t j) { return key_mask.empty() || key_mask[j] != 0; };
  const bool tracked = track(tape, {&x});
  Tensor out = Tensor::zeros(x.shape(), tracked);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double* orow = ov.data() + i * n;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep(j)) continue;
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN in row " + std::to_string(i));
      hi = std::max(hi, row[j]);
    }
    if (!std::isfinite(hi)) {
      throw NumericError("softmax_rows: row " + std::to_string(i) + " has no finite unmasked entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep(j)) continue;
      orow[j] = std::exp(row[j] - hi);
      total += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= total;
  }
  if (tracked) {
    tape.record(out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto y = out.data();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.rank() == 0 ? 1 : x.shape().back();
  if (d == 0 || x.size() == 0) throw DimensionError("layer_norm: empty feature dimension");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " do not match " + shape_string(x.shape()));
  }
  const std::size_t m = x.size() / d;
  const bool tracked = track(tape, {&x, &gain, &bias});
  Tensor out = Tensor::zeros(x.shape(), tracked);
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(m);
  auto xv = x.data(), gv = gain.data(), bv = bias.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      ov[i * d + j] = gv[j] * xhat[i * d + j] + bv[j];
    }
  }
  if (tracked) {
    tape.record(out, [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), m,
                      d]() mutable {
      auto g = out.grad();
      auto gv = gain.data();
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t i = 0; i < m * d; ++i) gg[i % d] += g[i] * xhat[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m * d; ++i) gb[i % d] += g[i];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * gv[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat[i * d + j];
          }
          mean_dxh *= inv_d;
          mean_dxh_xh *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * gv[j];
            gx[i * d + j] += inv_std[i] * (dxh - mean_dxh - xhat[i * d + j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (p == 0.0) return x;
  const bool tracked = track(tape, {&x});
  std::vector<double> keep(x.size());
  const double s = 1.0 / (1.0 - p);
  for (auto& k : keep) k = rng.uniform() >= p ? s : 0.0;
  Tensor out = Tensor::zeros(x.shape(), tracked);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * keep[i];
  if (tracked) {
    tape.record(out, [x, out, keep = std::move(keep)]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
    });
  }
  return out;
}

namespace {

Tensor reduce(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask, bool average,
              const char* op) {
  if (!mask.empty() && mask.size() != x.size()) {
    throw DimensionError(std::string(op) + ": mask of length " + std::to_string(mask.size()) +
                         " for " + shape_string(x.shape()));
  }
  std::size_t count = 0;
  double total = 0.0;
  auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    total += xv[i];
    ++count;
  }
  if (average && count == 0) throw ContractError(std::string(op) + ": every element is masked");
  const double factor = average ? 1.0 / static_cast<double>(count) : 1.0;
  const bool tracked = track(tape, {&x});
  Tensor out = Tensor::scalar(average ? total / static_cast<double>(count) : total, tracked);
  if (tracked) {
    Mask m(mask.begin(), mask.end());
    tape.record(out, [x, out, m = std::move(m), factor]() mutable {
      const double g = out.grad()[0] * factor;
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (m.empty() || m[i]) gx[i] += g;
      }
    });
  }
  return out;
}

}  // namespace

Tensor sum(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask) {
  return reduce(tape, x, mask, false, "sum");
}

Tensor mean(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask) {
  return reduce(tape, x, mask, true, "mean");
}

Tensor column_mean(Tape& tape, const Tensor& x, std::span<const std::uint8_t> row_mask) {
  require_rank2(x, "column_mean");
  const std::size_t m = x.rows(), n = x.cols();
  if (!row_mask.empty() && row_mask.size() != m) {
    throw DimensionError("column_mean: mask of length " + std::to_string(row_mask.size()) +
                         " for " + shape_string(x.shape()));
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) count += (row_mask.empty() || row_mask[i]) ? 1 : 0;
  if (count == 0) throw ContractError("column_mean: every row is masked");
  const bool tracked = track(tape, {&x});
  Tensor out = Tensor::zeros({n}, tracked);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    for (std::size_t j = 0; j < n; ++j) ov[j] += xv[i * n + j];
  }
  for (auto& v : ov) v /= static_cast<double>(count);
  if (tracked) {
    Mask rm(row_mask.begin(), row_mask.end());
    const double inv = 1.0 / static_cast<double>(count);
    tape.record(out, [x, out, rm = std::move(rm), m, n, inv]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        if (!rm.empty() && !rm[i]) continue;
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
      }
    });
  }
  return out;
}

GradCheckResult gradient_check(std::span<const std::pair<std::string, Tensor>> params,
                               const std::function<Tensor(Tape&)>& loss_fn, double step,
                               double floor) {
  std::vector<Tensor> handles;
  for (const auto& [name, t] : params) handles.push_back(t);
  for (auto& t : handles) t.zero_grad();
  {
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);
  }
  GradCheckResult result;
  for (std::size_t p = 0; p < handles.size(); ++p) {
    Tensor& t = handles[p];
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      Tape probe(Tape::Mode::inference);
      values[i] = saved + step;
      const double up = loss_fn(probe).item();
      values[i] = saved - step;
      const double down = loss_fn(probe).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++result.checked;
      if (!(rel <= result.max_rel_error)) {
        result.max_rel_error = rel;
        result.worst = params[p].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace gopt
