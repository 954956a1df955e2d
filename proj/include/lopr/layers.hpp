#pragma once

#include <string>

#include "lopr/ops.hpp"
#include "lopr/optim.hpp"
#include "lopr/random.hpp"

namespace lopr::nn {

// Weight init: centered uniform with fan-in scaling, U(-a, a), a = 1/sqrt(fan_in).
Tensor init_uniform(Shape shape, int fan_in, RandomStream& rng);

Tensor add_channel_bias(const Tensor& x, const Tensor& b);  // [C,H,W] + [C]

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [1, out]

  Linear() = default;
  Linear(int in, int out, RandomStream& rng);
  Tensor forward(const Tensor& x) const;  // [n, in] -> [n, out]
  void collect(ParamMap& params, const std::string& prefix);
};

struct Conv2d {
  Tensor w;  // [cout, cin, kh, kw]
  Tensor b;  // [cout]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride, int pad, RandomStream& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamMap& params, const std::string& prefix);
};

struct ConvT2d {
  Tensor w;  // [cin, cout, kh, kw]
  Tensor b;  // [cout]
  int stride = 1;
  int pad = 0;

  ConvT2d() = default;
  ConvT2d(int cin, int cout, int k, int stride, int pad, RandomStream& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamMap& params, const std::string& prefix);
};

struct LayerNorm {
  Tensor gain;  // [dim]
  Tensor bias;  // [dim]

  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Tensor forward(const Tensor& x) const;
  void collect(ParamMap& params, const std::string& prefix);
};

}  // namespace lopr::nn
