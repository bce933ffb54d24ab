#pragma once

// Dense 64-bit tensors with a define-by-run tape for reverse-mode autodiff.
//
// Tensors are cheap shared handles. Operations take the Tape as their first
// argument; when the tape is recording and any input requires a gradient, the
// operation appends its backward rule to the tape. Tape::backward replays the
// rules in reverse order, accumulating into the `grad` buffers of leaves.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gopt {

class Rng;

using Shape = std::vector<std::size_t>;
using Mask = std::vector<std::uint8_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // 2-D view helpers: rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Lazily allocated, zero-initialised gradient buffer. Handles share the
  // buffer, so this is available through const handles too.
  std::span<double> grad() const;
  void zero_grad();
  // Drops the buffer so has_grad() is false until a gradient flows in again.
  void release_grad();

  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

class Tape {
 public:
  enum class Mode { record, inference };

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::record; }
  std::size_t size() const { return entries_.size(); }

  void record(Tensor output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and replays every recorded rule in reverse.
  // Intermediate gradients are reset first, so replaying the same tape twice
  // (after zeroing leaf gradients) gives bit-identical results.
  void backward(Tensor& loss);

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    Tensor output;
    std::function<void()> backward;
  };
  Mode mode_;
  std::vector<Entry> entries_;
};

// ---- primitives -----------------------------------------------------------
// All 2-D operations take row-major [rows x cols] tensors.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
// x[m x n] + bias[n] broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double value);

Tensor relu(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count);
// out[i] = table[index[i]]; also serves as the embedding lookup.
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> index);

// Row softmax with max subtraction. Columns whose key_mask entry is 0 get
// probability exactly 0; an empty mask keeps every column.
Tensor softmax_rows(Tape& tape, const Tensor& x, std::span<const std::uint8_t> key_mask = {});
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Inverted dropout; identity when p == 0.
Tensor dropout(Tape& tape, const Tensor& x, double p, Rng& rng);

// Reductions to a scalar. A non-empty mask has one entry per element;
// masked-out elements contribute nothing to value or gradient.
Tensor sum(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask = {});
Tensor mean(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask = {});
// x[n x k] -> [k]: per-column mean over rows with row_mask set, summed in
// increasing row order then divided by the row count.
Tensor column_mean(Tape& tape, const Tensor& x, std::span<const std::uint8_t> row_mask = {});

// ---- finite-difference checking ---------------------------------------------

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "<name>[index]" of the worst entry
};

// Compares analytic gradients of every listed parameter against central
// differences. `loss_fn` must rebuild the graph on the given tape and return
// the scalar loss. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(
    std::span<const std::pair<std::string, Tensor>> params,
    const std::function<Tensor(Tape&)>& loss_fn, double step = 1e-4, double floor = 1e-6);

}  // namespace gopt
