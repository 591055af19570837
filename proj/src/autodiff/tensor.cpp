#include "peftlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "peftlab/errors.hpp"

namespace peftlab::ad {

namespace {
thread_local Tape* t_current = nullptr;

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

void check_shape(const Shape& shape, std::size_t n) {
  if (ad::numel(shape) != n) {
    throw DimensionError("tensor data length " + std::to_string(n) +
                         " does not match shape " + to_string(shape));
  }
}
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> detail::Storage::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto s = std::make_shared<detail::Storage>();
  s->data.assign(ad::numel(shape), value);
  s->shape = std::move(shape);
  return Tensor(std::move(s));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  check_shape(shape, data.size());
  auto s = std::make_shared<detail::Storage>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::vector<double> data(ad::numel(shape));
  for (auto& v : data) v = stddev * rng.normal();
  return from_data(std::move(shape), std::move(data));
}

const Shape& Tensor::shape() const { return s_->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= s_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         to_string(s_->shape));
  }
  return s_->shape[axis];
}

std::size_t Tensor::numel() const { return s_->data.size(); }

std::size_t Tensor::rows() const {
  if (dim() != 2) throw DimensionError("rows() on non-matrix " + to_string(shape()));
  return s_->shape[0];
}

std::size_t Tensor::cols() const {
  if (dim() != 2) throw DimensionError("cols() on non-matrix " + to_string(shape()));
  return s_->shape[1];
}

std::span<const double> Tensor::data() const { return s_->data; }
std::span<double> Tensor::mutable_data() { return s_->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return s_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  if (!on) s_->grad.clear();
  return *this;
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }
std::span<const double> Tensor::grad() const { return s_->grad; }
std::span<double> Tensor::mutable_grad() { return s_->grad_buffer(); }
void Tensor::clear_grad() { s_->grad.clear(); }

Tensor Tensor::detach() const { return from_data(shape(), s_->data); }

Tape::Tape() : previous_(t_current) { t_current = this; }

Tape::~Tape() { t_current = previous_; }

Tape* Tape::current() { return t_current; }

void Tape::record(std::shared_ptr<detail::Storage> out, BackwardFn fn) {
  if (consumed_) throw ConfigError("recording onto a consumed tape");
  nodes_.push_back({std::move(out), std::move(fn)});
}

NoGradGuard::NoGradGuard() : saved_(t_current) { t_current = nullptr; }
NoGradGuard::~NoGradGuard() { t_current = saved_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr || tape->consumed_) {
    throw ConfigError("backward() requires an active, unconsumed tape");
  }
  if (!loss.defined() || loss.numel() != 1 || !loss.shape().empty()) {
    throw ConfigError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw ConfigError("loss does not depend on any tensor that requires grad");
  }
  loss.storage()->grad_buffer()[0] += 1.0;
  for (auto it = tape->nodes_.rbegin(); it != tape->nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // not reachable from the loss
    it->fn(*it->out);
  }
  tape->nodes_.clear();
  tape->consumed_ = true;
}

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks() { return g_finite_checks.load(); }

}  // namespace peftlab::ad
