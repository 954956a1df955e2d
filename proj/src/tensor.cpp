#include "lopr/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "lopr/ops.hpp"

namespace lopr {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

Tensor Tensor::alloc(Shape shape) {
  for (int e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->data.resize(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::zeros(Shape shape) { return alloc(std::move(shape)); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = alloc(std::move(shape));
  std::fill(t.st_->data.begin(), t.st_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->data = std::move(data);
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::randn(Shape shape, RandomStream& rng) {
  Tensor t = alloc(std::move(shape));
  for (double& v : t.st_->data) v = rng.gaussian();
  return t;
}

Tensor Tensor::uniform(Shape shape, double bound, RandomStream& rng) {
  Tensor t = alloc(std::move(shape));
  for (double& v : t.st_->data) v = rng.uniform(-bound, bound);
  return t;
}

std::int64_t Tensor::size() const {
  return st_ ? static_cast<std::int64_t>(st_->data.size()) : 0;
}

const double* Tensor::data() const { return st_->data.data(); }
double* Tensor::data() { return st_->data.data(); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape_));
  return st_->data[0];
}

double Tensor::at(std::int64_t i) const { return st_->data[static_cast<size_t>(i)]; }

bool Tensor::requires_grad() const { return st_ && st_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  st_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return st_ && !st_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient; run backward() first");
  return st_->grad;
}

void Tensor::zero_grad() {
  if (st_) st_->grad.assign(st_->data.size(), 0.0);
}

void Tensor::accumulate_grad(const double* g, std::int64_t n) {
  if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
  for (std::int64_t i = 0; i < n; ++i) st_->grad[static_cast<size_t>(i)] += g[i];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->data = st_->data;
  t.shape_ = shape_;
  return t;
}

namespace {
thread_local ComputationTape* g_active_tape = nullptr;
thread_local bool g_recording = true;
}  // namespace

ComputationTape* ComputationTape::active() { return g_active_tape; }
bool ComputationTape::recording() { return g_recording; }

TapeGuard::TapeGuard(ComputationTape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}
TapeGuard::~TapeGuard() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

Tensor record_op(const char* name, std::vector<Tensor> inputs, Tensor output,
                 std::function<std::vector<Tensor>(const Tensor&)> backward) {
  ComputationTape* tape = ComputationTape::active();
  bool needs_grad = false;
  for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (tape && g_recording && needs_grad) {
    output.set_requires_grad(true);
    tape->record(TapeEntry{name, std::move(inputs), output, std::move(backward)});
  }
  return output;
}

std::unordered_map<const void*, Tensor> ComputationTape::reverse_pass(
    const Tensor& seed_output, bool create_graph) {
  if (entries_.empty()) throw ContractError("backward on an empty tape");
  if (seed_output.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(seed_output.shape()));
  }

  std::unordered_map<const void*, Tensor> grad_map;
  grad_map[seed_output.storage_id()] = Tensor::ones({1});

  const std::size_t end = entries_.size();
  auto run = [&]() {
    for (std::size_t idx = end; idx-- > 0;) {
      // By value: backward ops may append to entries_ (create_graph) and
      // reallocate the vector under a reference.
      TapeEntry e = entries_[idx];
      auto it = grad_map.find(e.output.storage_id());
      if (it == grad_map.end()) continue;
      Tensor dout = it->second;
      std::vector<Tensor> gs = e.backward(dout);
      for (std::size_t j = 0; j < e.inputs.size(); ++j) {
        if (!e.inputs[j].requires_grad() || j >= gs.size() || !gs[j].defined()) continue;
        auto slot = grad_map.find(e.inputs[j].storage_id());
        if (slot == grad_map.end()) {
          grad_map[e.inputs[j].storage_id()] = gs[j];
        } else {
          slot->second = add(slot->second, gs[j]);
        }
      }
    }
  };

  if (create_graph) {
    run();
  } else {
    NoGradGuard ng;
    run();
  }
  return grad_map;
}

void ComputationTape::backward(const Tensor& loss) {
  auto grads = reverse_pass(loss, /*create_graph=*/false);

  // Materialize into every reachable requires_grad tensor, leaves and
  // intermediates alike. Each storage gets its gradient exactly once.
  std::unordered_map<const void*, bool> done;
  auto materialize = [&](const Tensor& t) {
    if (!t.requires_grad() || done.count(t.storage_id())) return;
    auto it = grads.find(t.storage_id());
    if (it == grads.end()) return;
    Tensor copy = t;  // shares storage
    copy.accumulate_grad(it->second.data(), it->second.size());
    done[t.storage_id()] = true;
  };
  materialize(loss);
  for (const TapeEntry& e : entries_) {
    for (const Tensor& in : e.inputs) materialize(in);
    materialize(e.output);
  }
}

Tensor ComputationTape::grad(const Tensor& output, const Tensor& wrt, bool create_graph) {
  auto grads = reverse_pass(output, create_graph);
  auto it = grads.find(wrt.storage_id());
  if (it != grads.end()) return it->second;
  return Tensor::zeros(wrt.shape());
}

void backward(const Tensor& loss) {
  ComputationTape* tape = ComputationTape::active();
  if (!tape) throw ContractError("backward requires an active ComputationTape");
  tape->backward(loss);
}

}  // namespace lopr
