#pragma once

// Test-only oracles, independent of the library's compute paths: central
// finite differences for gradients, brute-force convolution, quadrature.

#include <cmath>
#include <functional>
#include <vector>

#include "lopr/ops.hpp"
#include "lopr/tensor.hpp"

namespace oracles {

// Max relative error between reverse-mode gradients and central finite
// differences on every element of every leaf. `fn` must rebuild the scalar
// loss from the leaves' current contents on each call.
inline double grad_check(const std::function<lopr::Tensor()>& fn,
                         std::vector<lopr::Tensor> leaves, double eps = 1e-5) {
  using namespace lopr;
  for (Tensor& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  ComputationTape tape;
  {
    TapeGuard guard(tape);
    Tensor loss = fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> ad;
  for (Tensor& leaf : leaves) ad.push_back(leaf.grad());
  for (Tensor& leaf : leaves) leaf.set_requires_grad(false);

  auto eval = [&]() {
    NoGradGuard ng;
    return fn().item();
  };

  double scale = 1e-6, worst = 0.0;
  std::vector<std::vector<double>> fd(leaves.size());
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    fd[li].resize(static_cast<size_t>(leaf.size()));
    for (std::int64_t i = 0; i < leaf.size(); ++i) {
      const double saved = leaf.data()[i];
      leaf.data()[i] = saved + eps;
      const double fp = eval();
      leaf.data()[i] = saved - eps;
      const double fm = eval();
      leaf.data()[i] = saved;
      fd[li][static_cast<size_t>(i)] = (fp - fm) / (2.0 * eps);
    }
  }
  for (size_t li = 0; li < leaves.size(); ++li) {
    for (size_t i = 0; i < fd[li].size(); ++i) {
      scale = std::max({scale, std::abs(ad[li][i]), std::abs(fd[li][i])});
    }
  }
  for (size_t li = 0; li < leaves.size(); ++li) {
    for (size_t i = 0; i < fd[li].size(); ++i) {
      worst = std::max(worst, std::abs(ad[li][i] - fd[li][i]));
    }
  }
  for (lopr::Tensor& leaf : leaves) leaf.set_requires_grad(true);
  return worst / scale;
}

// Direct-summation cross-correlation, the conv oracle.
inline lopr::Tensor conv2d_direct(const lopr::Tensor& x, const lopr::Tensor& w,
                                  int stride, int pad) {
  using lopr::Tensor;
  const int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oi = 0; oi < oh; ++oi)
      for (int oj = 0; oj < ow; ++oj) {
        double acc = 0.0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
              const int y = oi * stride - pad + ki;
              const int xx = oj * stride - pad + kj;
              if (y < 0 || y >= h || xx < 0 || xx >= ww) continue;
              acc += x.at((static_cast<std::int64_t>(ci) * h + y) * ww + xx) *
                     w.at(((static_cast<std::int64_t>(co) * cin + ci) * kh + ki) * kw + kj);
            }
        out.data()[(static_cast<std::int64_t>(co) * oh + oi) * ow + oj] = acc;
      }
  return out;
}

// Simpson quadrature of KL(N(mu, sigma^2) || N(0,1)) on a 1-d slice.
inline double kl_gaussian_quadrature(double mu, double sigma) {
  const double lo = mu - 12.0 * sigma - 12.0;
  const double hi = mu + 12.0 * sigma + 12.0;
  const int n = 40000;  // even
  const double h = (hi - lo) / n;
  auto integrand = [&](double x) {
    const double q = std::exp(-0.5 * (x - mu) * (x - mu) / (sigma * sigma)) /
                     (sigma * std::sqrt(2.0 * M_PI));
    if (q < 1e-300) return 0.0;
    const double logp = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI);
    const double logq = -0.5 * (x - mu) * (x - mu) / (sigma * sigma) -
                        std::log(sigma) - 0.5 * std::log(2.0 * M_PI);
    return q * (logq - logp);
  };
  double acc = integrand(lo) + integrand(hi);
  for (int i = 1; i < n; ++i) acc += integrand(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace oracles
