#include "detectornet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "detectornet/error.hpp"
#include "detectornet/random.hpp"

namespace dnet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Strides of `in` laid against `out` (right-aligned); 0 where `in` broadcasts.
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t offset = out.size() - in.size();
  std::size_t stride = 1;
  for (std::size_t j = in.size(); j-- > 0;) {
    strides[j + offset] = in[j] == 1 ? 0 : stride;
    stride *= in[j];
  }
  return strides;
}

bool is_suffix_of(const Shape& small, const Shape& big) {
  // Leading unit axes of `small` do not change its memory layout.
  std::size_t start = 0;
  while (start < small.size() && small[start] == 1 && small.size() - start > 0) ++start;
  const std::size_t len = small.size() - start;
  if (len > big.size()) return false;
  return std::equal(small.begin() + static_cast<std::ptrdiff_t>(start), small.end(),
                    big.end() - static_cast<std::ptrdiff_t>(len));
}

/// Output-index to input-offset mapping for a broadcast binary op.
struct BroadcastPlan {
  enum class Kind { same, a_scalar, b_scalar, b_suffix, a_suffix, general };
  Kind kind = Kind::general;
  Shape out;
  std::size_t a_len = 0;
  std::size_t b_len = 0;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;

  BroadcastPlan(const Shape& a, const Shape& b) : out(broadcast_shapes(a, b)) {
    a_len = numel_of(a);
    b_len = numel_of(b);
    const std::size_t n = numel_of(out);
    if (a_len == n && b_len == n) {
      kind = Kind::same;
    } else if (a_len == 1) {
      kind = Kind::a_scalar;
    } else if (b_len == 1) {
      kind = Kind::b_scalar;
    } else if (a_len == n && is_suffix_of(b, out)) {
      kind = Kind::b_suffix;
    } else if (b_len == n && is_suffix_of(a, out)) {
      kind = Kind::a_suffix;
    } else {
      a_strides = aligned_strides(a, out);
      b_strides = aligned_strides(b, out);
    }
  }

  template <typename F>
  void for_each(F&& f) const {
    const std::size_t n = numel_of(out);
    switch (kind) {
      case Kind::same:
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
      case Kind::a_scalar:
        for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, b_len == 1 ? 0 : i);
        return;
      case Kind::b_scalar:
        for (std::size_t i = 0; i < n; ++i) f(i, a_len == 1 ? 0 : i, std::size_t{0});
        return;
      case Kind::b_suffix:
        for (std::size_t i = 0; i < n; ++i) f(i, i, i % b_len);
        return;
      case Kind::a_suffix:
        for (std::size_t i = 0; i < n; ++i) f(i, i % a_len, i);
        return;
      case Kind::general:
        break;
    }
    const std::size_t r = out.size();
    std::vector<std::size_t> counter(r, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, ia, ib);
      for (std::size_t ax = r; ax-- > 0;) {
        ++counter[ax];
        ia += a_strides[ax];
        ib += b_strides[ax];
        if (counter[ax] < out[ax]) break;
        ia -= a_strides[ax] * out[ax];
        ib -= b_strides[ax] * out[ax];
        counter[ax] = 0;
      }
    }
  }
};

template <typename Forward, typename GradA, typename GradB>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, std::string_view name, Forward fwd, GradA da,
                        GradB db) {
  auto plan = std::make_shared<BroadcastPlan>(a.shape(), b.shape());
  std::vector<double> out(numel_of(plan->out));
  const auto av = a.values();
  const auto bv = b.values();
  plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  return Tensor::from_op(
      plan->out, std::move(out), {a, b},
      [plan, da, db](const BackwardContext& ctx) {
        const auto g = ctx.out_grad();
        const auto x = ctx.input_value(0);
        const auto y = ctx.input_value(1);
        auto gx = ctx.input_grad(0);
        auto gy = ctx.input_grad(1);
        if (!gx.empty()) {
          plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { gx[ia] += da(g[i], x[ia], y[ib]); });
        }
        if (!gy.empty()) {
          plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { gy[ib] += db(g[i], x[ia], y[ib]); });
        }
      },
      name);
}

template <typename Fn, typename Deriv>
Tensor unary(const Tensor& x, std::string_view name, Fn fn, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fn(xv[i]);
  return Tensor::from_op(
      x.shape(), std::move(out), {x},
      [deriv](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const auto g = ctx.out_grad();
        const auto v = ctx.input_value(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(v[i]);
      },
      name);
}

void check_finite(std::span<const double> values, std::string_view op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_to_string(a) + " and " + shape_to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_to_string(as) + " and " +
                         shape_to_string(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_to_string(as) + " x " + shape_to_string(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(a_batch, b_batch);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch axes do not broadcast: " + shape_to_string(as) + " x " +
                         shape_to_string(bs));
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  // Shared right operand: fold every leading axis of `a` into the row count.
  if (b_batch.empty()) {
    const std::size_t rows = a.numel() / k;
    std::vector<double> out(rows * n);
    MatrixMap(out.data(), rows, n).noalias() =
        ConstMatrixMap(a.values().data(), rows, k) * ConstMatrixMap(b.values().data(), k, n);
    return Tensor::from_op(
        std::move(out_shape), std::move(out), {a, b},
        [rows, k, n](const BackwardContext& ctx) {
          ConstMatrixMap g(ctx.out_grad().data(), rows, n);
          auto ga = ctx.input_grad(0);
          auto gb = ctx.input_grad(1);
          if (!ga.empty()) {
            MatrixMap(ga.data(), rows, k).noalias() += g * ConstMatrixMap(ctx.input_value(1).data(), k, n).transpose();
          }
          if (!gb.empty()) {
            MatrixMap(gb.data(), k, n).noalias() += ConstMatrixMap(ctx.input_value(0).data(), rows, k).transpose() * g;
          }
        },
        "matmul");
  }

  // General batched case: per-batch offsets into a and b.
  auto offsets = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
  {
    Shape a_view = a_batch;
    Shape b_view = b_batch;
    if (a_view.empty()) a_view.push_back(1);
    BroadcastPlan plan(a_view, b_view);
    // Batch-element indices from the plan scale to matrix-block offsets.
    offsets->resize(numel_of(batch));
    plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { (*offsets)[i] = {ia * m * k, ib * k * n}; });
  }
  std::vector<double> out(numel_of(out_shape));
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t i = 0; i < offsets->size(); ++i) {
    const auto [oa, ob] = (*offsets)[i];
    MatrixMap(out.data() + i * m * n, m, n).noalias() =
        ConstMatrixMap(ap + oa, m, k) * ConstMatrixMap(bp + ob, k, n);
  }
  return Tensor::from_op(
      std::move(out_shape), std::move(out), {a, b},
      [offsets, m, k, n](const BackwardContext& ctx) {
        const double* g = ctx.out_grad().data();
        const double* av = ctx.input_value(0).data();
        const double* bv = ctx.input_value(1).data();
        auto ga = ctx.input_grad(0);
        auto gb = ctx.input_grad(1);
        for (std::size_t i = 0; i < offsets->size(); ++i) {
          const auto [oa, ob] = (*offsets)[i];
          ConstMatrixMap gi(g + i * m * n, m, n);
          if (!ga.empty()) {
            MatrixMap(ga.data() + oa, m, k).noalias() += gi * ConstMatrixMap(bv + ob, k, n).transpose();
          }
          if (!gb.empty()) {
            MatrixMap(gb.data() + ob, k, n).noalias() += ConstMatrixMap(av + oa, m, k).transpose() * gi;
          }
        }
      },
      "matmul");
}

Tensor transpose_last2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_to_string(s));
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  const std::size_t batches = x.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t base = b * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[base + j * r + i] = xv[base + i * c + j];
    }
  }
  return Tensor::from_op(
      std::move(out_shape), std::move(out), {x},
      [batches, r, c](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const auto g = ctx.out_grad();
        for (std::size_t b = 0; b < batches; ++b) {
          const std::size_t base = b * r * c;
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) gx[base + i * c + j] += g[base + j * r + i];
          }
        }
      },
      "transpose");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
  }
  return Tensor::from_op(
      std::move(shape), x.to_vector(), {x},
      [](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const auto g = ctx.out_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  if (length == 0 || start + length > s[ax]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis " + std::to_string(ax) + " of " + shape_to_string(s));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[ax];
  Shape out_shape = s;
  out_shape[ax] = length;
  const auto xv = x.values();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), length * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  }
  return Tensor::from_op(
      std::move(out_shape), std::move(out), {x},
      [outer, inner, full, start, length](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const auto g = ctx.out_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const std::size_t src = o * length * inner;
          const std::size_t dst = (o * full + start) * inner;
          for (std::size_t i = 0; i < length * inner; ++i) gx[dst + i] += g[src + i];
        }
      },
      "slice");
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, s0.size());
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != ax && s[i] != s0[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat shape mismatch: " + shape_to_string(s0) + " vs " + shape_to_string(s) +
                           " along axis " + std::to_string(ax));
    }
    lengths.push_back(s[ax]);
    total += s[ax];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[ax] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t start = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].values();
    const std::size_t len = lengths[p];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + start) * inner));
    }
    start += len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::from_op(
      std::move(out_shape), std::move(out), std::move(inputs),
      [lengths, outer, inner, total](const BackwardContext& ctx) {
        const auto g = ctx.out_grad();
        std::size_t begin = 0;
        for (std::size_t p = 0; p < lengths.size(); ++p) {
          const std::size_t len = lengths[p];
          auto gp = ctx.input_grad(p);
          if (!gp.empty()) {
            for (std::size_t o = 0; o < outer; ++o) {
              const std::size_t src = (o * total + begin) * inner;
              const std::size_t dst = o * len * inner;
              for (std::size_t i = 0; i < len * inner; ++i) gp[dst + i] += g[src + i];
            }
          }
          begin += len;
        }
      },
      "concat");
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  const auto xv = x.values();
  check_finite(xv, "softmax");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double peak = xv[base];
      for (std::size_t j = 1; j < len; ++j) peak = std::max(peak, xv[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - peak);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return Tensor::from_op(
      s, std::move(out), {x},
      [outer, inner, len](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const auto g = ctx.out_grad();
        const auto y = ctx.out_value();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t idx = base + j * inner;
              gx[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("layer_norm needs rank >= 1");
  const std::size_t c = s.back();
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layer_norm gain/bias " + shape_to_string(gain.shape()) + "/" +
                         shape_to_string(bias.shape()) + " do not match last axis of " + shape_to_string(s));
  }
  const std::size_t rows = x.numel() / c;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto normalized = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      (*normalized)[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return Tensor::from_op(
      s, std::move(out), {x, gain, bias},
      [normalized, inv_std, rows, c](const BackwardContext& ctx) {
        const auto g = ctx.out_grad();
        const auto gv = ctx.input_value(1);
        auto gx = ctx.input_grad(0);
        auto ggain = ctx.input_grad(1);
        auto gbias = ctx.input_grad(2);
        const auto& h = *normalized;
        std::vector<double> dh(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * c;
          double mean_dh = 0.0;
          double mean_dh_h = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            if (!ggain.empty()) ggain[j] += g[base + j] * h[base + j];
            if (!gbias.empty()) gbias[j] += g[base + j];
            dh[j] = g[base + j] * gv[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[base + j];
          }
          if (gx.empty()) continue;
          mean_dh /= static_cast<double>(c);
          mean_dh_h /= static_cast<double>(c);
          const double is = (*inv_std)[r];
          for (std::size_t j = 0; j < c; ++j) {
            gx[base + j] += is * (dh[j] - mean_dh - h[base + j] * mean_dh_h);
          }
        }
      },
      "layer_norm");
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return Tensor::from_op(
      x.shape(), std::move(out), {x},
      [mask](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const auto g = ctx.out_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
      },
      "dropout");
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return Tensor::from_op(
      Shape{}, {total}, {x},
      [](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const double g = ctx.out_grad()[0];
        for (auto& v : gx) v += g;
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace dnet
