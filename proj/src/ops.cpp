#include "lopr/ops.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace lopr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_broadcast(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape() || a.size() == 1 || b.size() == 1) return;
  throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()) +
                       " are neither equal nor scalar-vs-tensor");
}

const Shape& broadcast_shape(const Tensor& a, const Tensor& b) {
  return a.size() == 1 && b.size() > 1 ? b.shape() : a.shape();
}

// Reduce a full-shape gradient back to a scalar operand's shape.
Tensor reduce_to(const Tensor& operand, const Tensor& g) {
  if (operand.size() == 1 && g.size() > 1) return reshape(sum_all(g), operand.shape());
  return g;
}

template <typename F>
Tensor unary_kernel(const Tensor& a, F f) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

template <typename F>
Tensor binary_kernel(const Tensor& a, const Tensor& b, F f) {
  Tensor out = Tensor::zeros(broadcast_shape(a, b));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = out.size();
  const bool sa = a.size() == 1, sb = b.size() == 1;
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[sa ? 0 : i], pb[sb ? 0 : i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast("add", a, b);
  Tensor out = binary_kernel(a, b, [](double x, double y) { return x + y; });
  return record_op("add", {a, b}, out, [a, b](const Tensor& dout) {
    return std::vector<Tensor>{reduce_to(a, dout), reduce_to(b, dout)};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast("sub", a, b);
  Tensor out = binary_kernel(a, b, [](double x, double y) { return x - y; });
  return record_op("sub", {a, b}, out, [a, b](const Tensor& dout) {
    return std::vector<Tensor>{reduce_to(a, dout), reduce_to(b, neg(dout))};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast("mul", a, b);
  Tensor out = binary_kernel(a, b, [](double x, double y) { return x * y; });
  return record_op("mul", {a, b}, out, [a, b](const Tensor& dout) {
    return std::vector<Tensor>{reduce_to(a, mul(dout, b)), reduce_to(b, mul(dout, a))};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_broadcast("div", a, b);
  Tensor out = binary_kernel(a, b, [](double x, double y) { return x / y; });
  return record_op("div", {a, b}, out, [a, b](const Tensor& dout) {
    Tensor da = div(dout, b);
    Tensor db = neg(div(mul(dout, a), square(b)));
    return std::vector<Tensor>{reduce_to(a, da), reduce_to(b, db)};
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = unary_kernel(a, [s](double x) { return x + s; });
  return record_op("add_scalar", {a}, out, [](const Tensor& dout) {
    return std::vector<Tensor>{dout};
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  Tensor out = unary_kernel(a, [s](double x) { return x * s; });
  return record_op("mul_scalar", {a}, out, [s](const Tensor& dout) {
    return std::vector<Tensor>{mul_scalar(dout, s)};
  });
}

Tensor neg(const Tensor& a) {
  Tensor out = unary_kernel(a, [](double x) { return -x; });
  return record_op("neg", {a}, out, [](const Tensor& dout) {
    return std::vector<Tensor>{neg(dout)};
  });
}

Tensor exp(const Tensor& a) {
  Tensor out = unary_kernel(a, [](double x) { return std::exp(x); });
  Tensor saved = out;
  return record_op("exp", {a}, out, [saved](const Tensor& dout) {
    return std::vector<Tensor>{mul(dout, saved)};
  });
}

Tensor log(const Tensor& a) {
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (!(pa[i] > 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(pa[i]));
    }
  }
  Tensor out = unary_kernel(a, [](double x) { return std::log(x); });
  return record_op("log", {a}, out, [a](const Tensor& dout) {
    return std::vector<Tensor>{div(dout, a)};
  });
}

Tensor sqrt(const Tensor& a) {
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (pa[i] < 0.0) throw DomainError("sqrt of negative value " + std::to_string(pa[i]));
  }
  Tensor out = unary_kernel(a, [](double x) { return std::sqrt(x); });
  Tensor saved = out;
  return record_op("sqrt", {a}, out, [saved](const Tensor& dout) {
    return std::vector<Tensor>{mul_scalar(div(dout, saved), 0.5)};
  });
}

Tensor square(const Tensor& a) {
  Tensor out = unary_kernel(a, [](double x) { return x * x; });
  return record_op("square", {a}, out, [a](const Tensor& dout) {
    return std::vector<Tensor>{mul(dout, mul_scalar(a, 2.0))};
  });
}

Tensor tanh(const Tensor& a) {
  Tensor out = unary_kernel(a, [](double x) { return std::tanh(x); });
  Tensor saved = out;
  return record_op("tanh", {a}, out, [saved](const Tensor& dout) {
    return std::vector<Tensor>{mul(dout, add_scalar(neg(square(saved)), 1.0))};
  });
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = unary_kernel(a, [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Tensor saved = out;
  return record_op("sigmoid", {a}, out, [saved](const Tensor& dout) {
    return std::vector<Tensor>{mul(dout, mul(saved, add_scalar(neg(saved), 1.0)))};
  });
}

Tensor relu(const Tensor& a) {
  Tensor out = unary_kernel(a, [](double x) { return x > 0.0 ? x : 0.0; });
  Tensor mask = unary_kernel(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
  return record_op("relu", {a}, out, [mask](const Tensor& dout) {
    return std::vector<Tensor>{mul(dout, mask)};
  });
}

Tensor softplus(const Tensor& a) {
  Tensor out = unary_kernel(a, [](double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  });
  return record_op("softplus", {a}, out, [a](const Tensor& dout) {
    return std::vector<Tensor>{mul(dout, sigmoid(a))};
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double c1 = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c2 = 0.044715;
  Tensor x3 = mul(square(a), a);
  Tensor inner = tanh(mul_scalar(add(a, mul_scalar(x3, c2)), c1));
  return mul(mul_scalar(a, 0.5), add_scalar(inner, 1.0));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape from " + shape_str(a.shape()) + " to " +
                         shape_str(shape) + " changes element count");
  }
  Tensor out = Tensor::from_data(shape, std::vector<double>(a.data(), a.data() + a.size()));
  Shape in_shape = a.shape();
  return record_op("reshape", {a}, out, [in_shape](const Tensor& dout) {
    return std::vector<Tensor>{reshape(dout, in_shape)};
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose requires rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<std::int64_t>(j) * m + i] = pa[static_cast<std::int64_t>(i) * n + j];
  return record_op("transpose", {a}, out, [](const Tensor& dout) {
    return std::vector<Tensor>{transpose(dout)};
  });
}

namespace {

// Row extent of axis 0 and the byte-free stride of one "row" for any rank.
std::int64_t inner_stride(const Shape& s) {
  std::int64_t n = 1;
  for (size_t i = 1; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

Tensor narrow(const Tensor& a, int axis, int start, int len) {
  if (axis == 0) {
    if (start < 0 || len <= 0 || start + len > a.dim(0)) {
      throw DimensionError("narrow axis 0 range [" + std::to_string(start) + "," +
                           std::to_string(start + len) + ") out of bounds for " +
                           shape_str(a.shape()));
    }
    Shape out_shape = a.shape();
    out_shape[0] = len;
    const std::int64_t stride = inner_stride(a.shape());
    Tensor out = Tensor::zeros(out_shape);
    std::copy(a.data() + start * stride, a.data() + (start + len) * stride, out.data());
    const int full = a.dim(0);
    Shape in_shape = a.shape();
    return record_op("narrow0", {a}, out, [in_shape, start, len, full](const Tensor& dout) {
      std::vector<Tensor> parts;
      if (start > 0) {
        Shape s = in_shape;
        s[0] = start;
        parts.push_back(Tensor::zeros(s));
      }
      parts.push_back(dout);
      if (start + len < full) {
        Shape s = in_shape;
        s[0] = full - start - len;
        parts.push_back(Tensor::zeros(s));
      }
      return std::vector<Tensor>{concat(parts, 0)};
    });
  }
  if (axis == 1 && a.rank() == 2) {
    const int rows = a.dim(0), cols = a.dim(1);
    if (start < 0 || len <= 0 || start + len > cols) {
      throw DimensionError("narrow axis 1 range out of bounds for " + shape_str(a.shape()));
    }
    Tensor out = Tensor::zeros({rows, len});
    for (int i = 0; i < rows; ++i)
      std::copy(a.data() + static_cast<std::int64_t>(i) * cols + start,
                a.data() + static_cast<std::int64_t>(i) * cols + start + len,
                out.data() + static_cast<std::int64_t>(i) * len);
    return record_op("narrow1", {a}, out, [rows, cols, start, len](const Tensor& dout) {
      std::vector<Tensor> parts;
      if (start > 0) parts.push_back(Tensor::zeros({rows, start}));
      parts.push_back(dout);
      if (start + len < cols) parts.push_back(Tensor::zeros({rows, cols - start - len}));
      return std::vector<Tensor>{concat(parts, 1)};
    });
  }
  throw DimensionError("narrow supports axis 0 (any rank) or axis 1 (rank 2)");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  if (parts.size() == 1) {
    // Still a recorded identity so gradients flow.
    return reshape(parts[0], parts[0].shape());
  }
  if (axis == 0) {
    Shape out_shape = parts[0].shape();
    const std::int64_t stride = inner_stride(out_shape);
    int total = 0;
    for (const Tensor& p : parts) {
      if (p.rank() != parts[0].rank() || inner_stride(p.shape()) != stride) {
        throw DimensionError("concat axis 0: incompatible shapes " +
                             shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
      }
      total += p.dim(0);
    }
    out_shape[0] = total;
    Tensor out = Tensor::zeros(out_shape);
    std::int64_t offset = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data(), p.data() + p.size(), out.data() + offset);
      offset += p.size();
    }
    std::vector<int> extents;
    for (const Tensor& p : parts) extents.push_back(p.dim(0));
    return record_op("concat0", parts, out, [extents](const Tensor& dout) {
      std::vector<Tensor> grads;
      int at = 0;
      for (int e : extents) {
        grads.push_back(narrow(dout, 0, at, e));
        at += e;
      }
      return grads;
    });
  }
  if (axis == 1) {
    const int rows = parts[0].dim(0);
    int total = 0;
    for (const Tensor& p : parts) {
      if (p.rank() != 2 || p.dim(0) != rows) {
        throw DimensionError("concat axis 1 requires rank-2 parts with equal rows");
      }
      total += p.dim(1);
    }
    Tensor out = Tensor::zeros({rows, total});
    int at = 0;
    for (const Tensor& p : parts) {
      const int c = p.dim(1);
      for (int i = 0; i < rows; ++i)
        std::copy(p.data() + static_cast<std::int64_t>(i) * c,
                  p.data() + static_cast<std::int64_t>(i) * c + c,
                  out.data() + static_cast<std::int64_t>(i) * total + at);
      at += c;
    }
    std::vector<int> extents;
    for (const Tensor& p : parts) extents.push_back(p.dim(1));
    return record_op("concat1", parts, out, [extents](const Tensor& dout) {
      std::vector<Tensor> grads;
      int at = 0;
      for (int e : extents) {
        grads.push_back(narrow(dout, 1, at, e));
        at += e;
      }
      return grads;
    });
  }
  throw DimensionError("concat supports axis 0 or axis 1");
}

Tensor repeat_rows(const Tensor& a, int n) {
  if (a.rank() != 2 || a.dim(0) != 1) {
    throw DimensionError("repeat_rows requires shape [1,D], got " + shape_str(a.shape()));
  }
  const int d = a.dim(1);
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) std::copy(a.data(), a.data() + d, out.data() + static_cast<std::int64_t>(i) * d);
  return record_op("repeat_rows", {a}, out, [](const Tensor& dout) {
    return std::vector<Tensor>{sum_rows(dout)};
  });
}

Tensor sum_rows(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("sum_rows requires rank 2");
  const int n = a.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros({1, d});
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    const double* row = a.data() + static_cast<std::int64_t>(i) * d;
    for (int j = 0; j < d; ++j) po[j] += row[j];
  }
  return record_op("sum_rows", {a}, out, [n](const Tensor& dout) {
    return std::vector<Tensor>{repeat_rows(dout, n)};
  });
}

Tensor repeat_last(const Tensor& a, int n) {
  if (a.rank() < 1 || a.shape().back() != 1) {
    throw DimensionError("repeat_last requires trailing extent 1, got " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out = Tensor::zeros(out_shape);
  const std::int64_t rows = a.size();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double v = a.data()[i];
    double* row = out.data() + i * n;
    for (int j = 0; j < n; ++j) row[j] = v;
  }
  return record_op("repeat_last", {a}, out, [](const Tensor& dout) {
    return std::vector<Tensor>{sum_last(dout)};
  });
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("sum_last requires rank >= 1");
  const int n = a.shape().back();
  Shape out_shape = a.shape();
  out_shape.back() = 1;
  Tensor out = Tensor::zeros(out_shape);
  const std::int64_t rows = out.size();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = a.data() + i * n;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += row[j];
    out.data()[i] = acc;
  }
  return record_op("sum_last", {a}, out, [n](const Tensor& dout) {
    return std::vector<Tensor>{repeat_last(dout, n)};
  });
}

Tensor max_last_detached(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("max_last requires rank >= 1");
  const int n = a.shape().back();
  Shape out_shape = a.shape();
  out_shape.back() = 1;
  Tensor out = Tensor::zeros(out_shape);
  const std::int64_t rows = out.size();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = a.data() + i * n;
    double m = row[0];
    for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
    out.data()[i] = m;
  }
  return out;  // constant: no recording
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) acc += pa[i];
  Tensor out = Tensor::scalar(acc);
  Tensor ones = Tensor::ones(a.shape());
  return record_op("sum_all", {a}, out, [ones](const Tensor& dout) {
    return std::vector<Tensor>{mul(ones, dout)};
  });
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  Eigen::Map<const RowMat> A(a.data(), m, k);
  Eigen::Map<const RowMat> B(b.data(), k, n);
  Eigen::Map<RowMat> C(out.data(), m, n);
  C.noalias() = A * B;
  return record_op("matmul", {a, b}, out, [a, b](const Tensor& dout) {
    return std::vector<Tensor>{matmul(dout, transpose(b)), matmul(transpose(a), dout)};
  });
}

namespace {

struct ConvDims {
  int c, h, w, kh, kw, sh, sw, ph, pw, oh, ow;
};

ConvDims conv_dims(const Shape& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  ConvDims d{x[0], x[1], x[2], kh, kw, sh, sw, ph, pw, 0, 0};
  if (kh > d.h + 2 * ph || kw > d.w + 2 * pw) {
    throw DimensionError("kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + shape_str(x));
  }
  if (sh <= 0 || sw <= 0) throw ContractError("stride must be positive");
  d.oh = (d.h + 2 * ph - kh) / sh + 1;
  d.ow = (d.w + 2 * pw - kw) / sw + 1;
  return d;
}

}  // namespace

Tensor im2col(const Tensor& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  if (x.rank() != 3) throw DimensionError("im2col requires [C,H,W], got " + shape_str(x.shape()));
  const ConvDims d = conv_dims(x.shape(), kh, kw, sh, sw, ph, pw);
  Tensor out = Tensor::zeros({d.c * kh * kw, d.oh * d.ow});
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t ncols = static_cast<std::int64_t>(d.oh) * d.ow;
  for (int c = 0; c < d.c; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = po + (static_cast<std::int64_t>(c) * kh * kw + ki * kw + kj) * ncols;
        for (int oi = 0; oi < d.oh; ++oi) {
          const int y = oi * sh - ph + ki;
          for (int oj = 0; oj < d.ow; ++oj) {
            const int xx = oj * sw - pw + kj;
            row[static_cast<std::int64_t>(oi) * d.ow + oj] =
                (y >= 0 && y < d.h && xx >= 0 && xx < d.w)
                    ? px[(static_cast<std::int64_t>(c) * d.h + y) * d.w + xx]
                    : 0.0;
          }
        }
      }
    }
  }
  const int C = d.c, H = d.h, W = d.w;
  return record_op("im2col", {x}, out, [C, H, W, kh, kw, sh, sw, ph, pw](const Tensor& dout) {
    return std::vector<Tensor>{col2im(dout, C, H, W, kh, kw, sh, sw, ph, pw)};
  });
}

Tensor col2im(const Tensor& cols, int channels, int height, int width, int kh,
              int kw, int sh, int sw, int ph, int pw) {
  const ConvDims d = conv_dims({channels, height, width}, kh, kw, sh, sw, ph, pw);
  if (cols.rank() != 2 || cols.dim(0) != channels * kh * kw ||
      cols.dim(1) != d.oh * d.ow) {
    throw DimensionError("col2im: cols shape " + shape_str(cols.shape()) +
                         " does not match target " +
                         shape_str({channels, height, width}));
  }
  Tensor out = Tensor::zeros({channels, height, width});
  const double* pc = cols.data();
  double* po = out.data();
  const std::int64_t ncols = static_cast<std::int64_t>(d.oh) * d.ow;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = pc + (static_cast<std::int64_t>(c) * kh * kw + ki * kw + kj) * ncols;
        for (int oi = 0; oi < d.oh; ++oi) {
          const int y = oi * sh - ph + ki;
          if (y < 0 || y >= height) continue;
          for (int oj = 0; oj < d.ow; ++oj) {
            const int xx = oj * sw - pw + kj;
            if (xx < 0 || xx >= width) continue;
            po[(static_cast<std::int64_t>(c) * height + y) * width + xx] +=
                row[static_cast<std::int64_t>(oi) * d.ow + oj];
          }
        }
      }
    }
  }
  return record_op("col2im", {cols}, out, [kh, kw, sh, sw, ph, pw](const Tensor& dout) {
    return std::vector<Tensor>{im2col(dout, kh, kw, sh, sw, ph, pw)};
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
  return conv2d(x, w, stride, stride, padding, padding);
}

Tensor conv2d(const Tensor& x, const Tensor& w, int sh, int sw, int ph, int pw) {
  if (x.rank() != 3 || w.rank() != 4) {
    throw DimensionError("conv2d requires x [C,H,W] and w [Cout,Cin,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (w.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d channel mismatch: x " + shape_str(x.shape()) +
                         " vs w " + shape_str(w.shape()));
  }
  const int kh = w.dim(2), kw = w.dim(3);
  const ConvDims d = conv_dims(x.shape(), kh, kw, sh, sw, ph, pw);
  Tensor cols = im2col(x, kh, kw, sh, sw, ph, pw);
  Tensor wm = reshape(w, {w.dim(0), w.dim(1) * kh * kw});
  Tensor y = matmul(wm, cols);
  return reshape(y, {w.dim(0), d.oh, d.ow});
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int stride, int padding) {
  return conv2d_transpose(x, w, stride, stride, padding, padding);
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int sh, int sw, int ph, int pw) {
  if (x.rank() != 3 || w.rank() != 4) {
    throw DimensionError("conv2d_transpose requires x [C,H,W] and w [Cin,Cout,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (w.dim(0) != x.dim(0)) {
    throw DimensionError("conv2d_transpose channel mismatch: x " + shape_str(x.shape()) +
                         " vs w " + shape_str(w.shape()));
  }
  const int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int hout = (h - 1) * sh - 2 * ph + kh;
  const int wout = (ww - 1) * sw - 2 * pw + kw;
  if (hout <= 0 || wout <= 0) {
    throw DimensionError("conv2d_transpose output would be empty for input " +
                         shape_str(x.shape()));
  }
  Tensor wm = reshape(w, {cin, cout * kh * kw});
  Tensor cols = matmul(transpose(wm), reshape(x, {cin, h * ww}));
  return col2im(cols, cout, hout, wout, kh, kw, sh, sw, ph, pw);
}

Tensor avg_pool2d(const Tensor& x, int k) {
  if (x.rank() != 3) throw DimensionError("avg_pool2d requires [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % k != 0 || w % k != 0) {
    throw DimensionError("avg_pool2d: " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(k));
  }
  const int oh = h / k, ow = w / k;
  Tensor out = Tensor::zeros({c, oh, ow});
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / (k * k);
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b)
            acc += px[(static_cast<std::int64_t>(ci) * h + i * k + a) * w + j * k + b];
        po[(static_cast<std::int64_t>(ci) * oh + i) * ow + j] = acc * inv;
      }
  return record_op("avg_pool2d", {x}, out, [k](const Tensor& dout) {
    return std::vector<Tensor>{mul_scalar(nearest_upsample2d(dout, k), 1.0 / (k * k))};
  });
}

Tensor nearest_upsample2d(const Tensor& x, int k) {
  if (x.rank() != 3) throw DimensionError("nearest_upsample2d requires [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out = Tensor::zeros({c, h * k, w * k});
  const double* px = x.data();
  double* po = out.data();
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < h * k; ++i)
      for (int j = 0; j < w * k; ++j)
        po[(static_cast<std::int64_t>(ci) * h * k + i) * w * k + j] =
            px[(static_cast<std::int64_t>(ci) * h + i / k) * w + j / k];
  return record_op("nearest_upsample2d", {x}, out, [k](const Tensor& dout) {
    return std::vector<Tensor>{mul_scalar(avg_pool2d(dout, k), static_cast<double>(k) * k)};
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  if (r == 0) throw DimensionError("softmax requires rank >= 1");
  int ax = axis < 0 ? r + axis : axis;
  if (ax < 0 || ax >= r) throw ContractError("softmax: axis " + std::to_string(axis) +
                                             " invalid for " + shape_str(x.shape()));
  if (r == 2 && ax == 0) return transpose(softmax(transpose(x), 1));
  if (ax != r - 1) {
    throw ContractError("softmax supports the last axis (or either axis of rank 2)");
  }
  const int n = x.shape().back();
  Shape flat{static_cast<int>(x.size() / n), n};
  Tensor x2 = reshape(x, flat);
  Tensor shifted = sub(x2, repeat_last(max_last_detached(x2), n));
  Tensor e = exp(shifted);
  Tensor y = div(e, repeat_last(sum_last(e), n));
  return reshape(y, x.shape());
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm requires rank >= 1");
  const int n = x.shape().back();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm gain/bias must have " + std::to_string(n) +
                         " elements");
  }
  const int rows = static_cast<int>(x.size() / n);
  Tensor x2 = reshape(x, {rows, n});
  Tensor mean = mul_scalar(sum_last(x2), 1.0 / n);
  Tensor centered = sub(x2, repeat_last(mean, n));
  Tensor var = mul_scalar(sum_last(square(centered)), 1.0 / n);
  Tensor inv = div(Tensor::ones({rows, 1}), sqrt(add_scalar(var, eps)));
  Tensor normed = mul(centered, repeat_last(inv, n));
  Tensor g2 = repeat_rows(reshape(gain, {1, n}), rows);
  Tensor b2 = repeat_rows(reshape(bias, {1, n}), rows);
  return reshape(add(mul(normed, g2), b2), x.shape());
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  return mean_all(square(sub(a, b)));
}

}  // namespace lopr
