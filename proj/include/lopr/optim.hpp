#pragma once

#include <string>
#include <vector>

#include "lopr/tensor.hpp"

namespace lopr {

struct Param {
  std::string name;
  Tensor tensor;  // shares storage with the model
};

using ParamMap = std::vector<Param>;

struct AdamWConfig {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<double> m, v;
};

// One decoupled-weight-decay update with bias-corrected moments. `t` is the
// 1-based step count after this update. Throws TrainingError naming the
// parameter on non-finite gradients.
void adamw_step(const std::string& name, Tensor& param, const std::vector<double>& grad,
                AdamWState& state, long t, const AdamWConfig& cfg);

class AdamW {
 public:
  AdamW(ParamMap params, AdamWConfig cfg = {});

  void step();
  void zero_grad();
  long steps_taken() const { return t_; }
  const ParamMap& params() const { return params_; }

 private:
  ParamMap params_;
  AdamWConfig cfg_;
  std::vector<AdamWState> state_;
  long t_ = 0;
};

}  // namespace lopr
