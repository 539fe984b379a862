#include "famadapt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "famadapt/kernels.hpp"

namespace famadapt {

namespace {

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
}

// rows x cols view of the last axis.
std::pair<Index, Index> row_view(const Tensor& t, const char* op) {
  if (t.rank() < 1) throw ShapeError(std::string(op) + ": expected rank >= 1");
  Index cols = t.dim(t.rank() - 1);
  if (cols == 0) throw ShapeError(std::string(op) + ": last axis must be nonempty");
  return {t.numel() / cols, cols};
}

bool wants_grad(const Tensor& out) {
  return Graph::current() != nullptr && out.requires_grad();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  const std::size_t m = static_cast<std::size_t>(a.dim(0));
  const std::size_t k = static_cast<std::size_t>(a.dim(1));
  const std::size_t n = static_cast<std::size_t>(b.dim(1));
  Tensor out({a.dim(0), b.dim(1)}, 0.0, a.requires_grad() || b.requires_grad());
  kernels::matmul_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  if (wants_grad(out)) {
    Graph::current()->record(out, [a, b, out, m, k, n]() mutable {
      const double* dc = out.grad().data();
      if (a.requires_grad())
        kernels::matmul_nt_acc(dc, b.values().data(), a.grad().data(), m, n, k);
      if (b.requires_grad())
        kernels::matmul_tn_acc(a.values().data(), dc, b.grad().data(), m, k, n);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const Index m = x.dim(0), n = x.dim(1);
  Tensor out({n, m}, 0.0, x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) ov[static_cast<std::size_t>(j * m + i)] = xv[static_cast<std::size_t>(i * n + j)];
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, out, m, n]() mutable {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j)
          xg[static_cast<std::size_t>(i * n + j)] += og[static_cast<std::size_t>(j * m + i)];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shapes disagree, " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  Tensor out(a.shape(), 0.0, a.requires_grad() || b.requires_grad());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (wants_grad(out)) {
    Graph::current()->record(out, [a, b, out]() mutable {
      const auto& og = out.grad();
      if (a.requires_grad()) {
        auto& ag = a.grad();
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (b.requires_grad()) {
        auto& bg = b.grad();
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shapes disagree, " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  Tensor out(a.shape(), 0.0, a.requires_grad() || b.requires_grad());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (wants_grad(out)) {
    Graph::current()->record(out, [a, b, out]() mutable {
      const auto& og = out.grad();
      if (a.requires_grad()) {
        auto& ag = a.grad();
        const auto& bv2 = b.values();
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto& bg = b.grad();
        const auto& av2 = a.values();
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * av2[i];
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  auto [rows, cols] = row_view(x, "add_bias");
  require_rank(bias, 1, "add_bias");
  if (bias.dim(0) != cols)
    throw ShapeError("add_bias: bias length " + shape_to_string(bias.shape()) +
                     " does not match last axis of " + shape_to_string(x.shape()));
  Tensor out(x.shape(), 0.0, x.requires_grad() || bias.requires_grad());
  const auto& xv = x.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (Index r = 0; r < rows; ++r)
    for (Index j = 0; j < cols; ++j) {
      std::size_t i = static_cast<std::size_t>(r * cols + j);
      ov[i] = xv[i] + bv[static_cast<std::size_t>(j)];
    }
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, bias, out, rows, cols]() mutable {
      const auto& og = out.grad();
      if (x.requires_grad()) {
        auto& xg = x.grad();
        for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
      }
      if (bias.requires_grad()) {
        auto& bg = bias.grad();
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < cols; ++j)
            bg[static_cast<std::size_t>(j)] += og[static_cast<std::size_t>(r * cols + j)];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape(), 0.0, x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, out, factor]() mutable {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i] * factor;
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape(), 0.0, x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, out]() mutable {
      const auto& og = out.grad();
      const auto& xv2 = x.values();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < og.size(); ++i)
        if (xv2[i] > 0.0) xg[i] += og[i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  auto [rows, cols] = row_view(x, "softmax");
  Tensor out(x.shape(), 0.0, x.requires_grad());
  kernels::softmax_rows(x.values().data(), out.values().data(),
                        static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, out, rows, cols]() mutable {
      const auto& og = out.grad();
      const auto& y = out.values();
      auto& xg = x.grad();
      for (Index r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r * cols);
        double dot = 0.0;
        for (Index j = 0; j < cols; ++j) dot += og[base + j] * y[base + j];
        for (Index j = 0; j < cols; ++j) xg[base + j] += y[base + j] * (og[base + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& ln_scale, const Tensor& ln_offset, double eps) {
  auto [rows, cols] = row_view(x, "layer_norm");
  require_rank(ln_scale, 1, "layer_norm");
  require_rank(ln_offset, 1, "layer_norm");
  if (ln_scale.dim(0) != cols || ln_offset.dim(0) != cols)
    throw ShapeError("layer_norm: scale " + shape_to_string(ln_scale.shape()) + " / offset " +
                     shape_to_string(ln_offset.shape()) + " do not match last axis of " +
                     shape_to_string(x.shape()));
  Tensor out(x.shape(), 0.0,
             x.requires_grad() || ln_scale.requires_grad() || ln_offset.requires_grad());
  std::vector<double> mean(static_cast<std::size_t>(rows));
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  kernels::layer_norm_rows(x.values().data(), ln_scale.values().data(), ln_offset.values().data(),
                           out.values().data(), mean.data(), inv_std.data(),
                           static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), eps);
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, ln_scale, ln_offset, out, rows, cols,
                                   mean = std::move(mean), inv_std = std::move(inv_std)]() mutable {
      const auto& og = out.grad();
      const auto& xv = x.values();
      const auto& gv = ln_scale.values();
      const double inv_cols = 1.0 / static_cast<double>(cols);
      for (Index r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r * cols);
        const double mu = mean[static_cast<std::size_t>(r)];
        const double istd = inv_std[static_cast<std::size_t>(r)];
        if (ln_offset.requires_grad()) {
          auto& bg = ln_offset.grad();
          for (Index j = 0; j < cols; ++j) bg[static_cast<std::size_t>(j)] += og[base + j];
        }
        if (ln_scale.requires_grad()) {
          auto& sg = ln_scale.grad();
          for (Index j = 0; j < cols; ++j)
            sg[static_cast<std::size_t>(j)] += og[base + j] * (xv[base + j] - mu) * istd;
        }
        if (x.requires_grad()) {
          auto& xg = x.grad();
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (Index j = 0; j < cols; ++j) {
            double xhat = (xv[base + j] - mu) * istd;
            double dxhat = og[base + j] * gv[static_cast<std::size_t>(j)];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          for (Index j = 0; j < cols; ++j) {
            double xhat = (xv[base + j] - mu) * istd;
            double dxhat = og[base + j] * gv[static_cast<std::size_t>(j)];
            xg[base + j] += istd * (dxhat - inv_cols * sum_dxhat - xhat * inv_cols * sum_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids) {
  require_rank(table, 2, "embedding_lookup");
  const Index vocab = table.dim(0), width = table.dim(1);
  for (TokenId id : ids)
    if (id < 0 || static_cast<Index>(id) >= vocab)
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(vocab) + ")");
  Tensor out({static_cast<Index>(ids.size()), width}, 0.0, table.requires_grad());
  const auto& tv = table.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i]) * width, width,
                ov.begin() + static_cast<std::ptrdiff_t>(i) * width);
  if (wants_grad(out)) {
    std::vector<TokenId> ids_copy(ids.begin(), ids.end());
    Graph::current()->record(out, [table, out, ids_copy = std::move(ids_copy), width]() mutable {
      const auto& og = out.grad();
      auto& tg = table.grad();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        double* dst = tg.data() + static_cast<std::ptrdiff_t>(ids_copy[i]) * width;
        const double* src = og.data() + static_cast<std::ptrdiff_t>(i) * width;
        for (Index j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor label_smoothed_nll(const Tensor& logits, std::span<const TokenId> targets,
                          double epsilon, TokenId pad_id) {
  require_rank(logits, 2, "label_smoothed_nll");
  if (epsilon < 0.0 || epsilon >= 1.0)
    throw DomainError("label_smoothed_nll: epsilon must be in [0,1), got " + std::to_string(epsilon));
  const Index n = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<Index>(targets.size()) != n)
    throw ShapeError("label_smoothed_nll: " + std::to_string(targets.size()) + " targets for " +
                     shape_to_string(logits.shape()) + " logits");
  Index live = 0;
  for (TokenId t : targets) {
    if (t != pad_id && (t < 0 || static_cast<Index>(t) >= vocab))
      throw IndexError("label_smoothed_nll: target " + std::to_string(t) + " out of range [0," +
                       std::to_string(vocab) + ")");
    if (t != pad_id) ++live;
  }
  if (live == 0) throw ContractError("label_smoothed_nll: every position is padding");

  // log p per row plus the smoothed loss.
  std::vector<double> log_probs(logits.values().size());
  const auto& lv = logits.values();
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const std::size_t base = static_cast<std::size_t>(r * vocab);
    double mx = lv[base];
    for (Index j = 1; j < vocab; ++j) mx = std::max(mx, lv[base + j]);
    double sum = 0.0;
    for (Index j = 0; j < vocab; ++j) sum += std::exp(lv[base + j] - mx);
    double lse = mx + std::log(sum);
    double row_sum_logp = 0.0;
    for (Index j = 0; j < vocab; ++j) {
      log_probs[base + j] = lv[base + j] - lse;
      row_sum_logp += log_probs[base + j];
    }
    if (targets[static_cast<std::size_t>(r)] == pad_id) continue;
    double logp_target = log_probs[base + targets[static_cast<std::size_t>(r)]];
    total += -(1.0 - epsilon) * logp_target -
             (epsilon / static_cast<double>(vocab)) * row_sum_logp;
  }
  const double inv_live = 1.0 / static_cast<double>(live);
  Tensor out = Tensor::scalar(total * inv_live, logits.requires_grad());
  if (wants_grad(out)) {
    std::vector<TokenId> tgt(targets.begin(), targets.end());
    Graph::current()->record(out, [logits, out, tgt = std::move(tgt),
                                   log_probs = std::move(log_probs), epsilon, pad_id, n, vocab,
                                   inv_live]() mutable {
      const double upstream = out.grad()[0];
      auto& lg = logits.grad();
      const double uniform_q = epsilon / static_cast<double>(vocab);
      for (Index r = 0; r < n; ++r) {
        if (tgt[static_cast<std::size_t>(r)] == pad_id) continue;
        const std::size_t base = static_cast<std::size_t>(r * vocab);
        for (Index j = 0; j < vocab; ++j) {
          double p = std::exp(log_probs[base + j]);
          double q = uniform_q + (j == static_cast<Index>(tgt[static_cast<std::size_t>(r)])
                                      ? 1.0 - epsilon
                                      : 0.0);
          lg[base + j] += upstream * inv_live * (p - q);
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw DomainError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  Tensor out(x.shape(), 0.0, x.requires_grad());
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.values().size());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    ov[i] = xv[i] * mask[i];
  }
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, out, mask = std::move(mask)]() mutable {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i] * mask[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total, x.requires_grad());
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, out]() mutable {
      const double upstream = out.grad()[0];
      auto& xg = x.grad();
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += upstream;
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  require_rank(x, 2, "slice_cols");
  const Index m = x.dim(0), n = x.dim(1);
  if (start < 0 || count < 0 || start + count > n)
    throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") out of " + shape_to_string(x.shape()));
  Tensor out({m, count}, 0.0, x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (Index i = 0; i < m; ++i)
    std::copy_n(xv.begin() + i * n + start, count, ov.begin() + i * count);
  if (wants_grad(out)) {
    Graph::current()->record(out, [x, out, start, count, m, n]() mutable {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < count; ++j)
          xg[static_cast<std::size_t>(i * n + start + j)] += og[static_cast<std::size_t>(i * count + j)];
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no tensors given");
  const Index m = parts[0].dim(0);
  Index total = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m)
      throw ShapeError("concat_cols: row counts disagree, " + shape_to_string(parts[0].shape()) +
                       " vs " + shape_to_string(p.shape()));
    total += p.dim(1);
    track = track || p.requires_grad();
  }
  Tensor out({m, total}, 0.0, track);
  auto& ov = out.values();
  Index col = 0;
  for (const Tensor& p : parts) {
    const Index w = p.dim(1);
    const auto& pv = p.values();
    for (Index i = 0; i < m; ++i)
      std::copy_n(pv.begin() + i * w, w, ov.begin() + i * total + col);
    col += w;
  }
  if (wants_grad(out)) {
    std::vector<Tensor> owned(parts.begin(), parts.end());
    Graph::current()->record(out, [owned = std::move(owned), out, m, total]() mutable {
      const auto& og = out.grad();
      Index col2 = 0;
      for (Tensor& p : owned) {
        const Index w = p.dim(1);
        if (p.requires_grad()) {
          auto& pg = p.grad();
          for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < w; ++j)
              pg[static_cast<std::size_t>(i * w + j)] += og[static_cast<std::size_t>(i * total + col2 + j)];
        }
        col2 += w;
      }
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double step) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  probe.zero_grad();
  {
    Graph g;
    Tensor y = fn(probe);
    g.backward(y);
  }
  std::vector<double> analytic = probe.grad();
  probe.set_requires_grad(false);

  double worst = 0.0;
  auto& pv = probe.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double saved = pv[i];
    pv[i] = saved + step;
    double up = fn(probe).item();
    pv[i] = saved - step;
    double down = fn(probe).item();
    pv[i] = saved;
    double numeric = (up - down) / (2.0 * step);
    double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace famadapt
