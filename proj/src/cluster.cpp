#include "famadapt/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "famadapt/error.hpp"

namespace famadapt {

namespace {

constexpr double kVarianceFloor = 1e-6;
constexpr int kEmRestarts = 5;

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is row-major
// [d x d] and is destroyed; eigenvectors come back as columns of v. Plenty
// at the ~100-dimensional covariances this module sees.
void jacobi_eigen(std::vector<double>& a, Index d, std::vector<double>& eigvals,
                  std::vector<double>& v) {
  const auto n = static_cast<std::size_t>(d);
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  double scale = 0.0;
  for (double e : a) scale += e * e;
  const double stop = 1e-24 * std::max(scale, 1.0);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a[p * n + q] * a[p * n + q];
    if (off < stop) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        a[p * n + p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
        a[q * n + q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = a[p * n + k] = c * akp - s * akq;
          a[k * n + q] = a[q * n + k] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

double log_gauss_diag(const double* x, const double* mu, const double* var, Index d) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  double quad = 0.0;
  double logdet = 0.0;
  for (Index j = 0; j < d; ++j) {
    const double diff = x[j] - mu[j];
    quad += diff * diff / var[j];
    logdet += std::log(var[j]);
  }
  return -0.5 * (static_cast<double>(d) * kLog2Pi + logdet + quad);
}

struct EmFit {
  std::vector<double> weights;
  std::vector<double> means;  // K x d
  std::vector<double> vars;   // K x d
  std::vector<double> trace;
};

// One E step over the whole data: fills resp (n x K) and returns the total
// log-likelihood.
double e_step(const Tensor& x, const std::vector<double>& weights,
              const std::vector<double>& means, const std::vector<double>& vars, Index K,
              std::vector<double>& resp) {
  const Index n = x.dim(0);
  const Index d = x.dim(1);
  const double* xs = x.values().data();
  std::vector<double> lp(static_cast<std::size_t>(K));
  double ll = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double* xi = xs + i * d;
    double m = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < K; ++k) {
      lp[static_cast<std::size_t>(k)] =
          std::log(weights[static_cast<std::size_t>(k)]) +
          log_gauss_diag(xi, means.data() + k * d, vars.data() + k * d, d);
      m = std::max(m, lp[static_cast<std::size_t>(k)]);
    }
    double sum = 0.0;
    for (Index k = 0; k < K; ++k) sum += std::exp(lp[static_cast<std::size_t>(k)] - m);
    const double ll_i = m + std::log(sum);
    ll += ll_i;
    for (Index k = 0; k < K; ++k) {
      resp[static_cast<std::size_t>(i * K + k)] = std::exp(lp[static_cast<std::size_t>(k)] - ll_i);
    }
  }
  return ll;
}

EmFit run_em_once(const Tensor& x, Index K, Rng& rng, Index max_iter, double tol) {
  const Index n = x.dim(0);
  const Index d = x.dim(1);
  const double* xs = x.values().data();

  // k-means++-style seeding: spread the initial means out proportionally to
  // squared distance from the centers picked so far.
  std::vector<Index> centers;
  centers.push_back(rng.randint(n));
  std::vector<double> min_dist(static_cast<std::size_t>(n));
  while (static_cast<Index>(centers.size()) < K) {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index c : centers) {
        double dist = 0.0;
        for (Index j = 0; j < d; ++j) {
          const double diff = xs[i * d + j] - xs[c * d + j];
          dist += diff * diff;
        }
        best = std::min(best, dist);
      }
      min_dist[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(rng.randint(n));
      continue;
    }
    double u = rng.uniform() * total;
    Index pick = n - 1;
    for (Index i = 0; i < n; ++i) {
      u -= min_dist[static_cast<std::size_t>(i)];
      if (u <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(pick);
  }

  EmFit fit;
  fit.weights.assign(static_cast<std::size_t>(K), 1.0 / static_cast<double>(K));
  fit.means.resize(static_cast<std::size_t>(K * d));
  for (Index k = 0; k < K; ++k) {
    for (Index j = 0; j < d; ++j) fit.means[static_cast<std::size_t>(k * d + j)] = xs[centers[static_cast<std::size_t>(k)] * d + j];
  }
  // Start every component at the global per-axis spread.
  std::vector<double> global_var(static_cast<std::size_t>(d), 0.0);
  {
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += xs[i * d + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < d; ++j) {
        const double diff = xs[i * d + j] - mean[static_cast<std::size_t>(j)];
        global_var[static_cast<std::size_t>(j)] += diff * diff;
      }
    }
    for (auto& v : global_var) v = std::max(v / static_cast<double>(n), kVarianceFloor);
  }
  fit.vars.resize(static_cast<std::size_t>(K * d));
  for (Index k = 0; k < K; ++k)
    for (Index j = 0; j < d; ++j) fit.vars[static_cast<std::size_t>(k * d + j)] = global_var[static_cast<std::size_t>(j)];

  std::vector<double> resp(static_cast<std::size_t>(n * K));
  for (Index iter = 0; iter < max_iter; ++iter) {
    const double ll = e_step(x, fit.weights, fit.means, fit.vars, K, resp);
    fit.trace.push_back(ll);
    if (fit.trace.size() >= 2 && ll - fit.trace[fit.trace.size() - 2] < tol) break;

    // M step.
    for (Index k = 0; k < K; ++k) {
      double nk = 0.0;
      for (Index i = 0; i < n; ++i) nk += resp[static_cast<std::size_t>(i * K + k)];
      const double nk_safe = std::max(nk, 1e-12);
      fit.weights[static_cast<std::size_t>(k)] = nk / static_cast<double>(n);

      for (Index j = 0; j < d; ++j) {
        double m = 0.0;
        for (Index i = 0; i < n; ++i) m += resp[static_cast<std::size_t>(i * K + k)] * xs[i * d + j];
        fit.means[static_cast<std::size_t>(k * d + j)] = m / nk_safe;
      }
      for (Index j = 0; j < d; ++j) {
        double s = 0.0;
        const double mu = fit.means[static_cast<std::size_t>(k * d + j)];
        for (Index i = 0; i < n; ++i) {
          const double diff = xs[i * d + j] - mu;
          s += resp[static_cast<std::size_t>(i * K + k)] * diff * diff;
        }
        fit.vars[static_cast<std::size_t>(k * d + j)] = std::max(s / nk_safe, kVarianceFloor);
      }
    }
    double wsum = 0.0;
    for (double w : fit.weights) wsum += w;
    for (auto& w : fit.weights) w = std::max(w / wsum, 1e-12);
  }
  return fit;
}

}  // namespace

Index EmbeddingBatch::dim() const {
  if (vectors.empty()) throw ContractError("empty embedding batch has no dimension");
  return vectors.begin()->second.dim(1);
}

Index EmbeddingBatch::total_rows() const {
  Index n = 0;
  for (const auto& [lang, m] : vectors) n += m.dim(0);
  return n;
}

void EmbeddingBatch::validate() const {
  if (vectors.empty()) throw DomainError("embedding batch has no languages");
  const Index width = dim();
  for (const auto& [lang, m] : vectors) {
    if (m.rank() != 2 || m.dim(1) != width) {
      throw DomainError("embedding batch: language '" + lang + "' has width " +
                        std::to_string(m.rank() == 2 ? m.dim(1) : -1) + ", expected " +
                        std::to_string(width));
    }
    if (m.dim(0) < 2) {
      throw DomainError("embedding batch: language '" + lang + "' has fewer than 2 vectors");
    }
  }
}

Tensor mean_pool_embed(Seq2SeqModel& model, const std::vector<std::vector<TokenId>>& sentences,
                       TokenId lang_tag) {
  const Index h = model.config().model_dim;
  Tensor out({static_cast<Index>(sentences.size()), h});
  double* dst = out.values().data();
  for (const auto& sentence : sentences) {
    if (sentence.empty()) throw DomainError("cannot embed an empty sentence");
    const Tensor states = model.encode(sentence, lang_tag, false);
    const double* src = states.values().data();
    const auto len = static_cast<Index>(sentence.size());
    // Row 0 is the prepended language tag; pool the sentence's own rows.
    for (Index j = 0; j < h; ++j) {
      double sum = 0.0;
      for (Index t = 1; t <= len; ++t) sum += src[t * h + j];
      dst[j] = sum / static_cast<double>(len);
    }
    dst += h;
  }
  return out;
}

EmbeddingBatch embed_languages(Seq2SeqModel& model,
                               const std::map<std::string, std::vector<std::vector<TokenId>>>& sentences,
                               const Vocab& vocab) {
  EmbeddingBatch batch;
  batch.provenance = "own-encoder";
  for (const auto& [lang, sents] : sentences) {
    batch.vectors.emplace(lang, mean_pool_embed(model, sents, vocab.lang_tag(lang)));
  }
  batch.validate();
  return batch;
}

PcaModel pca_fit(const Tensor& x, Index k) {
  if (x.rank() != 2) throw ShapeError("pca_fit expects a matrix, got " + shape_to_string(x.shape()));
  const Index n = x.dim(0);
  const Index dim = x.dim(1);
  if (n < 2) throw DomainError("pca_fit needs at least two rows");
  const Index k_max = std::min<Index>(n - 1, dim);
  if (k < 1 || k > k_max) {
    throw DomainError("pca dimension " + std::to_string(k) + " outside [1, " +
                      std::to_string(k_max) + "] for " + std::to_string(n) + " rows of width " +
                      std::to_string(dim));
  }

  PcaModel model;
  model.mean.assign(static_cast<std::size_t>(dim), 0.0);
  const double* xs = x.values().data();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < dim; ++j) model.mean[static_cast<std::size_t>(j)] += xs[i * dim + j];
  for (auto& m : model.mean) m /= static_cast<double>(n);

  std::vector<double> cov(static_cast<std::size_t>(dim * dim), 0.0);
  for (Index i = 0; i < n; ++i) {
    for (Index a = 0; a < dim; ++a) {
      const double da = xs[i * dim + a] - model.mean[static_cast<std::size_t>(a)];
      for (Index b = a; b < dim; ++b) {
        const double db = xs[i * dim + b] - model.mean[static_cast<std::size_t>(b)];
        cov[static_cast<std::size_t>(a * dim + b)] += da * db;
      }
    }
  }
  for (Index a = 0; a < dim; ++a) {
    for (Index b = a; b < dim; ++b) {
      const double v = cov[static_cast<std::size_t>(a * dim + b)] / static_cast<double>(n - 1);
      cov[static_cast<std::size_t>(a * dim + b)] = v;
      cov[static_cast<std::size_t>(b * dim + a)] = v;
    }
  }

  std::vector<double> eigvals;
  std::vector<double> eigvecs;  // columns
  jacobi_eigen(cov, dim, eigvals, eigvecs);

  std::vector<Index> order(static_cast<std::size_t>(dim));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return eigvals[static_cast<std::size_t>(a)] > eigvals[static_cast<std::size_t>(b)];
  });

  model.axes = Tensor({k, dim});
  model.explained.resize(static_cast<std::size_t>(k));
  double* axes = model.axes.values().data();
  for (Index r = 0; r < k; ++r) {
    const Index col = order[static_cast<std::size_t>(r)];
    // Deterministic sign: the largest-magnitude component points positive.
    Index arg = 0;
    double best = 0.0;
    for (Index j = 0; j < dim; ++j) {
      const double v = std::abs(eigvecs[static_cast<std::size_t>(j * dim + col)]);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    const double sign = eigvecs[static_cast<std::size_t>(arg * dim + col)] < 0.0 ? -1.0 : 1.0;
    for (Index j = 0; j < dim; ++j) {
      axes[r * dim + j] = sign * eigvecs[static_cast<std::size_t>(j * dim + col)];
    }
    model.explained[static_cast<std::size_t>(r)] =
        std::max(eigvals[static_cast<std::size_t>(col)], 0.0);
  }
  return model;
}

Tensor pca_project(const PcaModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != static_cast<Index>(model.mean.size())) {
    throw ShapeError("pca_project: data width " + shape_to_string(x.shape()) +
                     " does not match the fitted dimension " + std::to_string(model.mean.size()));
  }
  const Index n = x.dim(0);
  const Index dim = x.dim(1);
  const Index k = model.axes.dim(0);
  Tensor out({n, k});
  const double* xs = x.values().data();
  const double* axes = model.axes.values().data();
  double* dst = out.values().data();
  for (Index i = 0; i < n; ++i) {
    for (Index r = 0; r < k; ++r) {
      double s = 0.0;
      for (Index j = 0; j < dim; ++j) {
        s += (xs[i * dim + j] - model.mean[static_cast<std::size_t>(j)]) * axes[r * dim + j];
      }
      dst[i * k + r] = s;
    }
  }
  return out;
}

GmmModel gmm_fit_em(const Tensor& x, Index components, Rng& rng, Index max_iter, double tol) {
  if (x.rank() != 2) throw ShapeError("gmm_fit_em expects a matrix");
  const Index n = x.dim(0);
  const Index d = x.dim(1);
  if (components < 1) throw DomainError("mixture needs at least one component");
  if (n < components) {
    throw DomainError("cannot fit " + std::to_string(components) + " components to " +
                      std::to_string(n) + " points");
  }
  if (max_iter < 1) throw DomainError("max_iter must be >= 1");

  EmFit best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < kEmRestarts; ++restart) {
    EmFit fit = run_em_once(x, components, rng, max_iter, tol);
    if (fit.trace.back() > best_ll) {
      best_ll = fit.trace.back();
      best = std::move(fit);
    }
  }

  GmmModel model;
  model.weights = std::move(best.weights);
  model.means = Tensor::from_data({components, d}, std::move(best.means));
  model.variances = Tensor::from_data({components, d}, std::move(best.vars));
  model.log_likelihood_trace = std::move(best.trace);
  return model;
}

Tensor gmm_soft_assign(const GmmModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != model.means.dim(1)) {
    throw ShapeError("gmm_soft_assign: data width does not match the fitted mixture");
  }
  const Index K = model.means.dim(0);
  const Index n = x.dim(0);
  Tensor resp({n, K});
  std::vector<double> flat(resp.values().size());
  e_step(x, model.weights, model.means.values(), model.variances.values(), K, flat);
  resp.values() = std::move(flat);
  return resp;
}

std::map<std::string, Index> hard_assign_majority(const Tensor& responsibilities,
                                                  const std::vector<std::string>& row_langs) {
  if (responsibilities.rank() != 2) throw ShapeError("responsibilities must be a matrix");
  const Index n = responsibilities.dim(0);
  const Index K = responsibilities.dim(1);
  if (static_cast<Index>(row_langs.size()) != n) {
    throw ContractError("row labels (" + std::to_string(row_langs.size()) +
                        ") do not align with responsibility rows (" + std::to_string(n) + ")");
  }
  const double* r = responsibilities.values().data();
  std::map<std::string, std::vector<Index>> votes;
  for (Index i = 0; i < n; ++i) {
    Index arg = 0;
    for (Index k = 1; k < K; ++k) {
      if (r[i * K + k] > r[i * K + arg]) arg = k;  // ties keep the lowest id
    }
    auto& v = votes[row_langs[static_cast<std::size_t>(i)]];
    v.resize(static_cast<std::size_t>(K), 0);
    ++v[static_cast<std::size_t>(arg)];
  }
  std::map<std::string, Index> assignment;
  for (const auto& [lang, counts] : votes) {
    Index arg = 0;
    for (Index k = 1; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > counts[static_cast<std::size_t>(arg)]) arg = k;
    }
    assignment[lang] = arg;
  }
  return assignment;
}

ClusterReport cluster_report(const std::map<std::string, Index>& assignment,
                             const LanguageRegistry& registry) {
  for (const auto& info : registry.languages()) {
    if (assignment.find(info.code) == assignment.end()) {
      throw CoverageError("cluster assignment is missing language '" + info.code + "'");
    }
  }
  for (const auto& [code, cluster] : assignment) {
    if (!registry.contains(code)) {
      throw CoverageError("cluster assignment names unknown language '" + code + "'");
    }
  }

  ClusterReport report;
  for (const auto& info : registry.languages()) {
    if (std::find(report.families.begin(), report.families.end(), info.family) ==
        report.families.end()) {
      report.families.push_back(info.family);
    }
  }
  std::sort(report.families.begin(), report.families.end());
  for (const auto& [code, cluster] : assignment) {
    if (std::find(report.clusters.begin(), report.clusters.end(), cluster) ==
        report.clusters.end()) {
      report.clusters.push_back(cluster);
    }
  }
  std::sort(report.clusters.begin(), report.clusters.end());

  const auto family_row = [&](const std::string& family) {
    return static_cast<std::size_t>(std::find(report.families.begin(), report.families.end(),
                                              family) -
                                    report.families.begin());
  };
  const auto cluster_col = [&](Index cluster) {
    return static_cast<std::size_t>(std::find(report.clusters.begin(), report.clusters.end(),
                                              cluster) -
                                    report.clusters.begin());
  };

  report.confusion.assign(report.families.size(),
                          std::vector<Index>(report.clusters.size(), 0));
  for (const auto& [code, cluster] : assignment) {
    ++report.confusion[family_row(registry.at(code).family)][cluster_col(cluster)];
  }

  // Credit each cluster to its majority family; everything else in that
  // cluster is mis-allocated.
  std::vector<std::string> majority(report.clusters.size());
  for (std::size_t c = 0; c < report.clusters.size(); ++c) {
    std::size_t arg = 0;
    for (std::size_t f = 1; f < report.families.size(); ++f) {
      if (report.confusion[f][c] > report.confusion[arg][c]) arg = f;
    }
    majority[c] = report.families[arg];
    report.agreements += report.confusion[arg][c];
  }
  for (const auto& [code, cluster] : assignment) {
    if (registry.at(code).family != majority[cluster_col(cluster)]) {
      report.misallocated_langs.push_back(code);
    }
  }
  std::sort(report.misallocated_langs.begin(), report.misallocated_langs.end());
  report.misallocated = static_cast<Index>(report.misallocated_langs.size());

  report.scheme.kind = GroupingKind::custom;
  for (const auto& [code, cluster] : assignment) {
    report.scheme.groups["cluster." + std::to_string(cluster)].push_back(code);
  }
  for (auto& [group_id, members] : report.scheme.groups) {
    std::sort(members.begin(), members.end());
  }
  return report;
}

std::string cluster_report_text(const ClusterReport& report) {
  std::ostringstream out;
  out << "family\\cluster";
  for (Index c : report.clusters) out << '\t' << c;
  out << '\n';
  for (std::size_t f = 0; f < report.families.size(); ++f) {
    out << report.families[f];
    for (std::size_t c = 0; c < report.clusters.size(); ++c) out << '\t' << report.confusion[f][c];
    out << '\n';
  }
  out << "agreements\t" << report.agreements << '\n';
  out << "mis-allocated\t" << report.misallocated;
  for (const auto& lang : report.misallocated_langs) out << ' ' << lang;
  out << '\n';
  return out.str();
}

ClusterReport cluster_languages(const EmbeddingBatch& batch, const LanguageRegistry& registry,
                                Index pca_dim, Index components, Rng& rng) {
  batch.validate();
  const Index n = batch.total_rows();
  const Index dim = batch.dim();
  Tensor stacked({n, dim});
  std::vector<std::string> row_langs;
  row_langs.reserve(static_cast<std::size_t>(n));
  double* dst = stacked.values().data();
  for (const auto& [lang, m] : batch.vectors) {
    const auto& src = m.values();
    std::copy(src.begin(), src.end(), dst);
    dst += src.size();
    for (Index i = 0; i < m.dim(0); ++i) row_langs.push_back(lang);
  }

  if (components < 1) {
    std::vector<std::string> families;
    for (const auto& info : registry.languages()) {
      if (std::find(families.begin(), families.end(), info.family) == families.end()) {
        families.push_back(info.family);
      }
    }
    components = static_cast<Index>(families.size());
  }

  const Index k = std::clamp<Index>(pca_dim, 1, std::min<Index>(n - 1, dim));
  const PcaModel pca = pca_fit(stacked, k);
  const Tensor projected = pca_project(pca, stacked);
  const GmmModel gmm = gmm_fit_em(projected, components, rng);
  const Tensor resp = gmm_soft_assign(gmm, projected);
  return cluster_report(hard_assign_majority(resp, row_langs), registry);
}

EmbeddingBatch load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);

  auto fail = [&](int line_no, const std::string& msg) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::string line;
  int line_no = 0;
  Index total = 0;
  Index dim = 0;
  {
    if (!std::getline(in, line)) fail(1, "missing 'total dim' header");
    ++line_no;
    std::istringstream header(line);
    if (!(header >> total >> dim) || total < 1 || dim < 1) {
      fail(line_no, "header must be two positive integers: total rows and dimension");
    }
    std::string extra;
    if (header >> extra) fail(line_no, "trailing content after header");
  }

  EmbeddingBatch batch;
  batch.provenance = path;
  std::string current;
  std::map<std::string, std::vector<double>> rows;
  Index seen = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("#lang", 0) == 0) {
      std::istringstream sentinel(line);
      std::string marker, code, extra;
      sentinel >> marker >> code;
      if (code.empty() || (sentinel >> extra)) fail(line_no, "expected '#lang <code>'");
      if (rows.find(code) != rows.end()) fail(line_no, "duplicate language '" + code + "'");
      current = code;
      rows[current] = {};
      continue;
    }
    if (line[0] == '#') continue;
    if (current.empty()) fail(line_no, "vector row before any '#lang' sentinel");
    std::istringstream values(line);
    auto& store = rows[current];
    for (Index j = 0; j < dim; ++j) {
      double v = 0.0;
      if (!(values >> v)) {
        fail(line_no, "expected " + std::to_string(dim) + " numbers, found " + std::to_string(j));
      }
      store.push_back(v);
    }
    std::string extra;
    if (values >> extra) fail(line_no, "row has more than " + std::to_string(dim) + " numbers");
    ++seen;
  }
  if (seen != total) {
    fail(line_no, "header promised " + std::to_string(total) + " rows, file has " +
                      std::to_string(seen));
  }
  for (auto& [lang, flat] : rows) {
    const Index n = static_cast<Index>(flat.size()) / dim;
    if (n < 2) fail(line_no, "language '" + lang + "' has fewer than 2 vectors");
    batch.vectors.emplace(lang, Tensor::from_data({n, dim}, std::move(flat)));
  }
  batch.validate();
  return batch;
}

void save_embeddings(const EmbeddingBatch& batch, const std::string& path) {
  batch.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << batch.total_rows() << ' ' << batch.dim() << '\n';
  out << std::setprecision(17);
  for (const auto& [lang, m] : batch.vectors) {
    out << "#lang " << lang << '\n';
    const double* v = m.values().data();
    for (Index i = 0; i < m.dim(0); ++i) {
      for (Index j = 0; j < m.dim(1); ++j) {
        if (j) out << ' ';
        out << v[i * m.dim(1) + j];
      }
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace famadapt
