#include "pct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pct/errors.hpp"
#include "pct/kernels.hpp"

namespace pct {

using detail::make_result;
using detail::Node;

namespace {

// Gradient buffer of parent `i`, or an empty span if it needs none.
std::span<double> parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return {};
  return p.grad_buffer();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " differ");
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto g = parent_grad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_broadcast(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  bool suffix = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!suffix) {
    throw DimensionError("add_broadcast: shape " + to_string(bs) + " is not a suffix of " + to_string(as));
  }
  const std::size_t block = b.size();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % block];
  return make_result(as, std::move(out), {a, b}, [block](Node& self) {
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    auto gb = parent_grad(self, 1);
    if (!gb.empty()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % block] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  };
  std::size_t batch = 1;
  bool batched_b = false;
  if (as.size() == 2 && bs.size() == 2) {
  } else if (as.size() == 3 && bs.size() == 3) {
    if (as[0] != bs[0]) throw mismatch();
    batch = as[0];
    batched_b = true;
  } else if (as.size() == 3 && bs.size() == 2) {
    batch = as[0];
  } else {
    throw mismatch();
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t kb = bs[bs.size() - 2];
  const std::size_t n = bs.back();
  if (k != kb) throw mismatch();

  Shape out_shape = as.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    kernels::gemm_nn(ad + s * m * k, bd + (batched_b ? s * k * n : 0), out.data() + s * m * n, m, k, n);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [batch, batched_b, m, k, n](Node& self) {
                       const double* av = self.parents[0]->value.data();
                       const double* bv = self.parents[1]->value.data();
                       auto ga = parent_grad(self, 0);
                       auto gb = parent_grad(self, 1);
                       for (std::size_t s = 0; s < batch; ++s) {
                         const double* gs = self.grad.data() + s * m * n;
                         const std::size_t boff = batched_b ? s * k * n : 0;
                         if (!ga.empty()) kernels::gemm_nt(gs, bv + boff, ga.data() + s * m * k, m, n, k);
                         if (!gb.empty()) kernels::gemm_tn(av + s * m * k, gs, gb.data() + boff, m, k, n);
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got shape " + to_string(s));
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(a.size());
  auto ad = a.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = ad[b * r * c + i * c + j];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a}, [batch, r, c](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax_rows: scalar input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  auto xd = x.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = in[0];
    for (std::size_t j = 0; j < cols; ++j) {
      if (std::isnan(in[j])) throw NumericError("softmax_rows: NaN in row " + std::to_string(r));
      mx = std::max(mx, in[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(in[j] - mx);
      z += y[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto g = parent_grad(self, 0);
    const auto& in = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, {x}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape base = parts.front().shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != base.size() || !std::equal(s.begin(), s.end() - 1, base.begin())) {
      throw DimensionError("concat_last: shape " + to_string(s) + " incompatible with " + to_string(base));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = parts.front().size() / widths.front();
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto d = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(d.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    }
    offset += widths[p];
  }
  Shape out_shape = base;
  out_shape.back() = total;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [rows, total, widths](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < widths.size(); ++p) {
                         auto g = parent_grad(self, p);
                         if (!g.empty()) {
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < widths[p]; ++j) {
                               g[r * widths[p] + j] += self.grad[r * total + off + j];
                             }
                           }
                         }
                         off += widths[p];
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
  if (stride != 1 && stride != 2) {
    throw ConfigError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (padding < 0) throw ConfigError("conv2d: negative padding");
  require_rank(x, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks[2] != ks[3]) throw DimensionError("conv2d: kernel must be square, got " + to_string(ks));
  if (ks[1] != xs[1]) {
    throw DimensionError("conv2d: input " + to_string(xs) + " has " + std::to_string(xs[1]) +
                         " channels, kernel " + to_string(ks) + " expects " + std::to_string(ks[1]));
  }
  kernels::ConvGeometry geo;
  geo.channels = xs[1];
  geo.height = xs[2];
  geo.width = xs[3];
  geo.ksize = ks[2];
  geo.stride = static_cast<std::size_t>(stride);
  geo.padding = static_cast<std::size_t>(padding);
  if (geo.height + 2 * geo.padding < geo.ksize || geo.width + 2 * geo.padding < geo.ksize) {
    throw DimensionError("conv2d: kernel " + to_string(ks) + " larger than padded input " + to_string(xs));
  }
  const std::size_t batch = xs[0];
  const std::size_t out_c = ks[0];
  const std::size_t oh = geo.out_height();
  const std::size_t ow = geo.out_width();
  const std::size_t plane = oh * ow;
  const std::size_t ckk = geo.channels * geo.ksize * geo.ksize;
  const std::size_t in_size = geo.channels * geo.height * geo.width;

  std::vector<double> out(batch * out_c * plane, 0.0);
  std::vector<double> cols(ckk * plane);
  const double* xd = x.data().data();
  const double* kd = kernel.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::im2col(xd + b * in_size, geo, cols.data());
    kernels::gemm_nn(kd, cols.data(), out.data() + b * out_c * plane, out_c, ckk, plane);
  }
  return make_result({batch, out_c, oh, ow}, std::move(out), {x, kernel},
                     [geo, batch, out_c, plane, ckk, in_size](Node& self) {
                       auto gx = parent_grad(self, 0);
                       auto gk = parent_grad(self, 1);
                       const double* xv = self.parents[0]->value.data();
                       const double* kv = self.parents[1]->value.data();
                       std::vector<double> cols(ckk * plane);
                       for (std::size_t b = 0; b < batch; ++b) {
                         const double* gout = self.grad.data() + b * out_c * plane;
                         if (!gk.empty()) {
                           kernels::im2col(xv + b * in_size, geo, cols.data());
                           kernels::gemm_nt(gout, cols.data(), gk.data(), out_c, plane, ckk);
                         }
                         if (!gx.empty()) {
                           std::fill(cols.begin(), cols.end(), 0.0);
                           kernels::gemm_tn(kv, gout, cols.data(), out_c, ckk, plane);
                           kernels::col2im(cols.data(), geo, gx.data() + b * in_size);
                         }
                       }
                     });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 4, "add_channel_bias");
  const Shape& xs = x.shape();
  if (bias.rank() != 1 || bias.size() != xs[1]) {
    throw DimensionError("add_channel_bias: bias " + to_string(bias.shape()) + " for input " + to_string(xs));
  }
  const std::size_t batch = xs[0];
  const std::size_t channels = xs[1];
  const std::size_t plane = xs[2] * xs[3];
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = out.data() + (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bd[c];
    }
  }
  return make_result(xs, std::move(out), {x, bias}, [batch, channels, plane](Node& self) {
    auto gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    auto gb = parent_grad(self, 1);
    if (!gb.empty()) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double* g = self.grad.data() + (b * channels + c) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[i];
          gb[c] += acc;
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const Shape& xs = x.shape();
  const std::size_t rows = xs[0] * xs[1];
  const std::size_t plane = xs[2] * xs[3];
  auto xd = x.data();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xd[r * plane + i];
    out[r] = acc / static_cast<double>(plane);
  }
  return make_result({xs[0], xs[1]}, std::move(out), {x}, [rows, plane](Node& self) {
    auto g = parent_grad(self, 0);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < plane; ++i) g[r * plane + i] += self.grad[r] * inv;
    }
  });
}

Tensor to_tokens(const Tensor& x) {
  require_rank(x, 4, "to_tokens");
  const Shape& xs = x.shape();
  const std::size_t batch = xs[0], channels = xs[1], n = xs[2] * xs[3];
  auto xd = x.data();
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < n; ++i) out[(b * n + i) * channels + c] = xd[(b * channels + c) * n + i];
    }
  }
  return make_result({batch, n, channels}, std::move(out), {x}, [batch, channels, n](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < n; ++i) g[(b * channels + c) * n + i] += self.grad[(b * n + i) * channels + c];
      }
    }
  });
}

Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w) {
  require_rank(tokens, 3, "from_tokens");
  const Shape& ts = tokens.shape();
  const std::size_t batch = ts[0], n = ts[1], channels = ts[2];
  if (n != h * w) {
    throw DimensionError("from_tokens: " + std::to_string(n) + " positions cannot form " + std::to_string(h) +
                         "x" + std::to_string(w));
  }
  auto td = tokens.data();
  std::vector<double> out(tokens.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < n; ++i) out[(b * channels + c) * n + i] = td[(b * n + i) * channels + c];
    }
  }
  return make_result({batch, channels, h, w}, std::move(out), {tokens}, [batch, channels, n](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < n; ++i) g[(b * n + i) * channels + c] += self.grad[(b * channels + c) * n + i];
      }
    }
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("l2_normalize_rows: scalar input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  auto xd = x.data();
  std::vector<double> out(x.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cols; ++j) ss += xd[r * cols + j] * xd[r * cols + j];
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has zero or non-finite norm");
    }
    norms[r] = norm;
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = xd[r * cols + j] / norm;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, cols, norms](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += (dy[j] - y[j] * dot) / norms[r];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != rows) {
    throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                        " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto ld = logits.data();
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = ld.data() + r * k;
    double mx = z[0];
    for (std::size_t j = 0; j < k; ++j) {
      if (std::isnan(z[j])) throw NumericError("cross_entropy: NaN logit in row " + std::to_string(r));
      mx = std::max(mx, z[j]);
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[r * k + j] = std::exp(z[j] - mx);
      acc += probs[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= acc;
    total += (mx + std::log(acc)) - z[labels[r]];
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result({1}, {total / static_cast<double>(rows)}, {logits},
                     [rows, k, probs = std::move(probs), label_copy = std::move(label_copy)](Node& self) {
                       auto g = parent_grad(self, 0);
                       const double factor = self.grad[0] / static_cast<double>(rows);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < k; ++j) g[r * k + j] += factor * probs[r * k + j];
                         g[r * k + static_cast<std::size_t>(label_copy[r])] -= factor;
                       }
                     });
}

}  // namespace pct
