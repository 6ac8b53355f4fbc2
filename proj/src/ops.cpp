#include <algorithm>
#include <cmath>
#include <limits>

#include "ecac/errors.hpp"
#include "ecac/grid.hpp"
#include "ecac/kernels.hpp"
#include "graph_internal.hpp"

namespace ecac {
namespace {

using Slots = std::span<std::vector<double>*>;
using Span = std::span<const double>;

void require_rank(const Grid& g, std::size_t rank, const char* op) {
  if (g.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(g.shape()));
  }
}

void require_same_shape(const Grid& a, const Grid& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::vector<double> transposed(Span v, std::size_t rows, std::size_t cols) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = v[i * cols + j];
  }
  return out;
}

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisLayout axis_layout(const Grid& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(x.shape()));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= x.shape()[i];
  l.len = x.shape()[axis];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) l.inner *= x.shape()[i];
  return l;
}

template <class F>
void for_each_lane(const AxisLayout& l, F&& f) {
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) f(o * l.len * l.inner + i, l.inner);
  }
}

}  // namespace

Grid matmul(const Grid& a, const Grid& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(p * r);
  kernels::matmul(a.values(), b.values(), out, p, q, r);
  return GraphAccess::make(
      "matmul", {p, r}, std::move(out), {a, b},
      [a, b, p, q, r](Span gout, Slots gin) {
        if (gin[0]) {  // dA = dC * B^T
          const auto bt = transposed(b.values(), q, r);
          kernels::matmul(gout, bt, *gin[0], p, r, q, true);
        }
        if (gin[1]) {  // dB = A^T * dC
          const auto at = transposed(a.values(), p, q);
          kernels::matmul(at, gout, *gin[1], q, p, r, true);
        }
      });
}

Grid transpose(const Grid& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), k = a.dim(1);
  return GraphAccess::make("transpose", {k, m}, transposed(a.values(), m, k), {a},
                           [m, k](Span gout, Slots gin) {
                             auto& g = *gin[0];
                             for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < k; ++j) g[i * k + j] += gout[j * m + i];
                             }
                           });
}

Grid reshape(const Grid& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return GraphAccess::make("reshape", std::move(shape),
                           std::vector<double>(a.values().begin(), a.values().end()), {a},
                           [](Span gout, Slots gin) { kernels::axpy(1.0, gout, *gin[0]); });
}

Grid add(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  kernels::add(a.values(), b.values(), out);
  return GraphAccess::make("add", a.shape(), std::move(out), {a, b}, [](Span gout, Slots gin) {
    if (gin[0]) kernels::axpy(1.0, gout, *gin[0]);
    if (gin[1]) kernels::axpy(1.0, gout, *gin[1]);
  });
}

Grid sub(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  kernels::axpy(-1.0, b.values(), out);
  return GraphAccess::make("sub", a.shape(), std::move(out), {a, b}, [](Span gout, Slots gin) {
    if (gin[0]) kernels::axpy(1.0, gout, *gin[0]);
    if (gin[1]) kernels::axpy(-1.0, gout, *gin[1]);
  });
}

Grid mul(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  kernels::mul(a.values(), b.values(), out);
  return GraphAccess::make("mul", a.shape(), std::move(out), {a, b},
                           [a, b](Span gout, Slots gin) {
                             std::vector<double> tmp(gout.size());
                             if (gin[0]) {
                               kernels::mul(gout, b.values(), tmp);
                               kernels::axpy(1.0, tmp, *gin[0]);
                             }
                             if (gin[1]) {
                               kernels::mul(gout, a.values(), tmp);
                               kernels::axpy(1.0, tmp, *gin[1]);
                             }
                           });
}

Grid scale(const Grid& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  kernels::scale(factor, out);
  return GraphAccess::make("scale", a.shape(), std::move(out), {a},
                           [factor](Span gout, Slots gin) { kernels::axpy(factor, gout, *gin[0]); });
}

Grid relu(const Grid& a) {
  std::vector<double> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return GraphAccess::make("relu", a.shape(), std::move(out), {a}, [a](Span gout, Slots gin) {
    const auto in = a.values();
    auto& g = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) g[i] += gout[i];
    }
  });
}

Grid sum(const Grid& a) {
  return GraphAccess::make("sum", {}, {kernels::sum(a.values())}, {a}, [](Span gout, Slots gin) {
    for (double& g : *gin[0]) g += gout[0];
  });
}

Grid add_row_bias(const Grid& x, const Grid& bias) {
  require_rank(x, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t m = x.dim(0), k = x.dim(1);
  if (bias.dim(0) != k) {
    throw DimensionError("add_row_bias: " + shape_str(x.shape()) + " with bias " +
                         shape_str(bias.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < m; ++i) {
    kernels::axpy(1.0, bias.values(), std::span<double>(out).subspan(i * k, k));
  }
  return GraphAccess::make("add_row_bias", x.shape(), std::move(out), {x, bias},
                           [m, k](Span gout, Slots gin) {
                             if (gin[0]) kernels::axpy(1.0, gout, *gin[0]);
                             if (gin[1]) {
                               for (std::size_t i = 0; i < m; ++i) {
                                 kernels::axpy(1.0, gout.subspan(i * k, k), *gin[1]);
                               }
                             }
                           });
}

Grid add_col_bias(const Grid& x, const Grid& bias) {
  require_rank(x, 2, "add_col_bias");
  require_rank(bias, 1, "add_col_bias");
  const std::size_t m = x.dim(0), k = x.dim(1);
  if (bias.dim(0) != m) {
    throw DimensionError("add_col_bias: " + shape_str(x.shape()) + " with bias " +
                         shape_str(bias.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto b = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += b[i];
  }
  return GraphAccess::make("add_col_bias", x.shape(), std::move(out), {x, bias},
                           [m, k](Span gout, Slots gin) {
                             if (gin[0]) kernels::axpy(1.0, gout, *gin[0]);
                             if (gin[1]) {
                               for (std::size_t i = 0; i < m; ++i) {
                                 (*gin[1])[i] += kernels::sum(gout.subspan(i * k, k));
                               }
                             }
                           });
}

Grid scale_rows(const Grid& x, const Grid& factors) {
  require_rank(x, 2, "scale_rows");
  require_rank(factors, 1, "scale_rows");
  const std::size_t m = x.dim(0), k = x.dim(1);
  if (factors.dim(0) != m) {
    throw DimensionError("scale_rows: " + shape_str(x.shape()) + " with factors " +
                         shape_str(factors.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto g = factors.values();
  for (std::size_t i = 0; i < m; ++i) {
    kernels::scale(g[i], std::span<double>(out).subspan(i * k, k));
  }
  return GraphAccess::make(
      "scale_rows", x.shape(), std::move(out), {x, factors},
      [x, factors, m, k](Span gout, Slots gin) {
        const auto g = factors.values();
        const auto xv = x.values();
        for (std::size_t i = 0; i < m; ++i) {
          const auto grow = gout.subspan(i * k, k);
          if (gin[0]) {
            kernels::axpy(g[i], grow, std::span<double>(*gin[0]).subspan(i * k, k));
          }
          if (gin[1]) (*gin[1])[i] += kernels::dot(grow, xv.subspan(i * k, k));
        }
      });
}

Grid concat_cols(const Grid& a, const Grid& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: row count mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), ka = a.dim(1), kb = b.dim(1), k = ka + kb;
  std::vector<double> out(m * k);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.begin() + i * ka, ka, out.begin() + i * k);
    std::copy_n(bv.begin() + i * kb, kb, out.begin() + i * k + ka);
  }
  return GraphAccess::make("concat_cols", {m, k}, std::move(out), {a, b},
                           [m, ka, kb, k](Span gout, Slots gin) {
                             for (std::size_t i = 0; i < m; ++i) {
                               if (gin[0]) {
                                 kernels::axpy(1.0, gout.subspan(i * k, ka),
                                               std::span<double>(*gin[0]).subspan(i * ka, ka));
                               }
                               if (gin[1]) {
                                 kernels::axpy(1.0, gout.subspan(i * k + ka, kb),
                                               std::span<double>(*gin[1]).subspan(i * kb, kb));
                               }
                             }
                           });
}

Grid softmax(const Grid& x, std::size_t axis) {
  const auto l = axis_layout(x, axis, "softmax");
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for_each_lane(l, [&](std::size_t base, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < l.len; ++k) mx = std::max(mx, xv[base + k * stride]);
    double z = 0.0;
    for (std::size_t k = 0; k < l.len; ++k) {
      const double e = std::exp(xv[base + k * stride] - mx);
      out[base + k * stride] = e;
      z += e;
    }
    for (std::size_t k = 0; k < l.len; ++k) out[base + k * stride] /= z;
  });
  auto y = std::make_shared<std::vector<double>>(out);
  return GraphAccess::make("softmax", x.shape(), std::move(out), {x},
                           [l, y](Span gout, Slots gin) {
                             auto& g = *gin[0];
                             const auto& yv = *y;
                             for_each_lane(l, [&](std::size_t base, std::size_t stride) {
                               double s = 0.0;
                               for (std::size_t k = 0; k < l.len; ++k) {
                                 s += gout[base + k * stride] * yv[base + k * stride];
                               }
                               for (std::size_t k = 0; k < l.len; ++k) {
                                 const std::size_t idx = base + k * stride;
                                 g[idx] += yv[idx] * (gout[idx] - s);
                               }
                             });
                           });
}

Grid log_softmax(const Grid& x, std::size_t axis) {
  const auto l = axis_layout(x, axis, "log_softmax");
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for_each_lane(l, [&](std::size_t base, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < l.len; ++k) mx = std::max(mx, xv[base + k * stride]);
    double z = 0.0;
    for (std::size_t k = 0; k < l.len; ++k) z += std::exp(xv[base + k * stride] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < l.len; ++k) out[base + k * stride] = xv[base + k * stride] - lse;
  });
  auto y = std::make_shared<std::vector<double>>(out);
  return GraphAccess::make("log_softmax", x.shape(), std::move(out), {x},
                           [l, y](Span gout, Slots gin) {
                             auto& g = *gin[0];
                             const auto& yv = *y;
                             for_each_lane(l, [&](std::size_t base, std::size_t stride) {
                               double s = 0.0;
                               for (std::size_t k = 0; k < l.len; ++k) s += gout[base + k * stride];
                               for (std::size_t k = 0; k < l.len; ++k) {
                                 const std::size_t idx = base + k * stride;
                                 g[idx] += gout[idx] - std::exp(yv[idx]) * s;
                               }
                             });
                           });
}

Grid column_cosine(const Grid& a, const Grid& b, double eps) {
  require_rank(a, 2, "column_cosine");
  require_same_shape(a, b, "column_cosine");
  if (!(eps > 0.0)) throw ContractError("column_cosine: eps must be positive");
  const std::size_t k = a.dim(0), m = a.dim(1);
  // Column-major copies keep every reduction contiguous.
  auto at = std::make_shared<std::vector<double>>(transposed(a.values(), k, m));
  auto bt = std::make_shared<std::vector<double>>(transposed(b.values(), k, m));
  std::vector<double> out(m);
  std::vector<double> na(m), nb(m), dots(m);
  for (std::size_t j = 0; j < m; ++j) {
    const Span ac(at->data() + j * k, k), bc(bt->data() + j * k, k);
    dots[j] = kernels::dot(ac, bc);
    na[j] = std::sqrt(kernels::dot(ac, ac));
    nb[j] = std::sqrt(kernels::dot(bc, bc));
    out[j] = dots[j] / (std::max(na[j], eps) * std::max(nb[j], eps));
  }
  auto cos = std::make_shared<std::vector<double>>(out);
  return GraphAccess::make(
      "column_cosine", {m}, std::move(out), {a, b},
      [at, bt, cos, na, nb, k, m, eps](Span gout, Slots gin) {
        for (std::size_t j = 0; j < m; ++j) {
          const double* ac = at->data() + j * k;
          const double* bc = bt->data() + j * k;
          const double denom = std::max(na[j], eps) * std::max(nb[j], eps);
          const double c = (*cos)[j];
          const double g = gout[j];
          if (gin[0]) {
            // d/da: b/denom - c * a / |a|^2 while the norm is above the clamp
            const double ka = na[j] > eps ? c / (na[j] * na[j]) : 0.0;
            auto& ga = *gin[0];
            for (std::size_t i = 0; i < k; ++i) ga[i * m + j] += g * (bc[i] / denom - ka * ac[i]);
          }
          if (gin[1]) {
            const double kb = nb[j] > eps ? c / (nb[j] * nb[j]) : 0.0;
            auto& gb = *gin[1];
            for (std::size_t i = 0; i < k; ++i) gb[i * m + j] += g * (ac[i] / denom - kb * bc[i]);
          }
        }
      });
}

Grid cosine_similarity(const Grid& a, const Grid& b, double eps) {
  require_rank(a, 1, "cosine_similarity");
  require_rank(b, 1, "cosine_similarity");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("cosine_similarity: length mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t k = a.dim(0);
  return reshape(column_cosine(reshape(a, {k, 1}), reshape(b, {k, 1}), eps), {});
}

}  // namespace ecac
