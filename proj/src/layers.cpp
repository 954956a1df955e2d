#include "lopr/layers.hpp"

#include <cmath>

namespace lopr::nn {

Tensor init_uniform(Shape shape, int fan_in, RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), bound, rng).set_requires_grad(true);
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  const int c = x.dim(0);
  const int hw = static_cast<int>(x.size() / c);
  Tensor flat = reshape(x, {c, hw});
  Tensor bias = repeat_last(reshape(b, {c, 1}), hw);
  return reshape(add(flat, bias), x.shape());
}

Linear::Linear(int in, int out, RandomStream& rng)
    : w(init_uniform({in, out}, in, rng)),
      b(Tensor::zeros({1, out}).set_requires_grad(true)) {}

Tensor Linear::forward(const Tensor& x) const {
  return add(matmul(x, w), repeat_rows(b, x.dim(0)));
}

void Linear::collect(ParamMap& params, const std::string& prefix) {
  params.push_back({prefix + ".w", w});
  params.push_back({prefix + ".b", b});
}

Conv2d::Conv2d(int cin, int cout, int k, int stride_, int pad_, RandomStream& rng)
    : w(init_uniform({cout, cin, k, k}, cin * k * k, rng)),
      b(Tensor::zeros({cout}).set_requires_grad(true)),
      stride(stride_),
      pad(pad_) {}

Tensor Conv2d::forward(const Tensor& x) const {
  return add_channel_bias(conv2d(x, w, stride, pad), b);
}

void Conv2d::collect(ParamMap& params, const std::string& prefix) {
  params.push_back({prefix + ".w", w});
  params.push_back({prefix + ".b", b});
}

ConvT2d::ConvT2d(int cin, int cout, int k, int stride_, int pad_, RandomStream& rng)
    : w(init_uniform({cin, cout, k, k}, cin * k * k, rng)),
      b(Tensor::zeros({cout}).set_requires_grad(true)),
      stride(stride_),
      pad(pad_) {}

Tensor ConvT2d::forward(const Tensor& x) const {
  return add_channel_bias(conv2d_transpose(x, w, stride, pad), b);
}

void ConvT2d::collect(ParamMap& params, const std::string& prefix) {
  params.push_back({prefix + ".w", w});
  params.push_back({prefix + ".b", b});
}

LayerNorm::LayerNorm(int dim)
    : gain(Tensor::ones({dim}).set_requires_grad(true)),
      bias(Tensor::zeros({dim}).set_requires_grad(true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(ParamMap& params, const std::string& prefix) {
  params.push_back({prefix + ".gain", gain});
  params.push_back({prefix + ".bias", bias});
}

}  // namespace lopr::nn
