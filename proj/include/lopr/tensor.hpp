#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lopr/errors.hpp"
#include "lopr/random.hpp"

namespace lopr {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense row-major float64 array with value semantics. Copies share storage
// (and the gradient buffer), so a parameter handed to an optimizer and the
// same parameter inside a model see one another's updates. All operations
// allocate fresh storage for their result; nothing aliases across ops.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return full({1}, value); }
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor randn(Shape shape, RandomStream& rng);
  // Uniform in (-bound, bound).
  static Tensor uniform(Shape shape, double bound, RandomStream& rng);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int dim(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const;

  const double* data() const;
  double* data();
  double item() const;  // requires size() == 1
  double at(std::int64_t flat_index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();
  void accumulate_grad(const double* g, std::int64_t n);

  // Same storage, detached from gradient bookkeeping of future ops.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return st_ == other.st_; }
  const void* storage_id() const { return st_.get(); }

 private:
  struct Storage {
    std::vector<double> data;
    std::vector<double> grad;  // empty until first backward materializes it
    bool requires_grad = false;
  };

  std::shared_ptr<Storage> st_;
  Shape shape_;

  static Tensor alloc(Shape shape);
  friend class ComputationTape;
};

// One recorded primitive. `backward` maps the output gradient to per-input
// gradients, expressed with tensor ops so that gradients themselves can be
// differentiated (tape recording stays active during backward when a graph
// is requested, e.g. for gradient penalties).
struct TapeEntry {
  const char* name;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<std::vector<Tensor>(const Tensor& dout)> backward;
};

// Ordered record of primitive ops. Confined to one thread; backward walks
// entries in exact reverse recording order, which is a valid topological
// order because inputs are always recorded before the ops that use them.
class ComputationTape {
 public:
  ComputationTape() = default;
  ComputationTape(const ComputationTape&) = delete;
  ComputationTape& operator=(const ComputationTape&) = delete;

  static ComputationTape* active();
  static bool recording();

  void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Accumulates d(loss)/dx into .grad of every reachable requires_grad
  // tensor. Repeated calls without zero_grad() accumulate.
  void backward(const Tensor& loss);

  // Gradient of `output` w.r.t. `wrt` as a tensor; does not touch .grad
  // buffers. With create_graph the returned tensor is itself recorded and
  // can be differentiated again.
  Tensor grad(const Tensor& output, const Tensor& wrt, bool create_graph);

 private:
  std::vector<TapeEntry> entries_;

  std::unordered_map<const void*, Tensor> reverse_pass(const Tensor& seed_output,
                                                       bool create_graph);

  friend struct TapeGuard;
  friend struct NoGradGuard;
};

// Binds a tape as the active recorder for the current scope.
struct TapeGuard {
  explicit TapeGuard(ComputationTape& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;

 private:
  ComputationTape* previous_;
};

// Suspends recording (forward results become constants).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Records an op result on the active tape when recording is on and any
// input requires grad. Used by every primitive in ops.cpp.
Tensor record_op(const char* name, std::vector<Tensor> inputs, Tensor output,
                 std::function<std::vector<Tensor>(const Tensor&)> backward);

// Convenience: backward through the active tape.
void backward(const Tensor& loss);

}  // namespace lopr
