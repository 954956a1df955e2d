#include "lopr/optim.hpp"

#include <cmath>

#include "lopr/errors.hpp"

namespace lopr {

void adamw_step(const std::string& name, Tensor& param, const std::vector<double>& grad,
                AdamWState& state, long t, const AdamWConfig& cfg) {
  const std::int64_t n = param.size();
  if (static_cast<std::int64_t>(grad.size()) != n ||
      static_cast<std::int64_t>(state.m.size()) != n) {
    throw DimensionError("adamw_step: state/grad size mismatch for " + name);
  }
  for (double g : grad) {
    if (!std::isfinite(g)) {
      throw TrainingError("non-finite gradient in parameter " + name, name, t);
    }
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  double* p = param.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double g = grad[static_cast<size_t>(i)];
    double& m = state.m[static_cast<size_t>(i)];
    double& v = state.v[static_cast<size_t>(i)];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    p[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
  }
}

AdamW::AdamW(ParamMap params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  state_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    const size_t n = static_cast<size_t>(params_[i].tensor.size());
    state_[i].m.assign(n, 0.0);
    state_[i].v.assign(n, 0.0);
  }
}

void AdamW::step() {
  ++t_;
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = params_[i];
    if (!p.tensor.has_grad()) continue;  // untouched this step
    adamw_step(p.name, p.tensor, p.tensor.grad(), state_[i], t_, cfg_);
  }
}

void AdamW::zero_grad() {
  for (Param& p : params_) p.tensor.zero_grad();
}

}  // namespace lopr
