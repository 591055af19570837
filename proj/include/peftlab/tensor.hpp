#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle to shared storage. Operations in ops.hpp produce
// new tensors; when a Tape is active on the calling thread and any input
// requires a gradient, the operation appends a node to that tape. backward()
// walks the tape in reverse creation order, which is a valid topological order
// because a node can only consume tensors that existed before it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "peftlab/rng.hpp"

namespace peftlab::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::span<double> grad_buffer();
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  // Extents of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // In-place mutation is reserved for parameter initialization, checkpoint
  // loading and optimizer updates.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  // Marks a leaf tensor as trainable. Turning it off drops any stored grad.
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void clear_grad();

  // Deep copy without gradient state.
  Tensor detach() const;
  const void* id() const { return s_.get(); }

  const std::shared_ptr<detail::Storage>& storage() const { return s_; }
  explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}

 private:
  std::shared_ptr<detail::Storage> s_;
};

/// Records differentiable operations executed on this thread while alive.
/// Constructing a Tape makes it current; destruction restores the previous one.
/// A tape is single-use: backward() consumes it.
class Tape {
 public:
  using BackwardFn = std::function<void(detail::Storage& out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::shared_ptr<detail::Storage> out, BackwardFn fn);
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend void backward(const Tensor& loss);
  struct Node {
    std::shared_ptr<detail::Storage> out;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  Tape* previous_;
  bool consumed_ = false;
};

// Disables recording for the enclosing scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// Populates .grad of every requires_grad tensor reachable from `loss` with
// d(loss)/d(tensor), accumulating into existing grads. Consumes the tape.
void backward(const Tensor& loss);

// When on, every op output is scanned for NaN/Inf. Defaults to on in debug
// builds and off with NDEBUG.
void set_finite_checks(bool on);
bool finite_checks();

}  // namespace peftlab::ad
