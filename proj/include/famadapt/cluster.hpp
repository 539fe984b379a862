#pragma once

#include <map>
#include <string>
#include <vector>

#include "famadapt/data.hpp"
#include "famadapt/langreg.hpp"
#include "famadapt/model.hpp"
#include "famadapt/rng.hpp"
#include "famadapt/tensor.hpp"

namespace famadapt {

// Sentence vectors per language, all of one width. Built either from this
// toolkit's own encoder or imported from a vector file.
struct EmbeddingBatch {
  std::map<std::string, Tensor> vectors;  // language -> [n x dim]
  std::string provenance;                 // "own-encoder" or the source path

  Index dim() const;
  Index total_rows() const;
  // Uniform width and at least two vectors per language.
  void validate() const;
};

// Mean over the sentence's own positions of the final encoder states; the
// language-tag row the encoder prepends is excluded, so a one-token sentence
// yields exactly that token's state. Returns [n x h].
Tensor mean_pool_embed(Seq2SeqModel& model, const std::vector<std::vector<TokenId>>& sentences,
                       TokenId lang_tag);

// Runs mean_pool_embed once per language with that language's own tag.
EmbeddingBatch embed_languages(Seq2SeqModel& model,
                               const std::map<std::string, std::vector<std::vector<TokenId>>>& sentences,
                               const Vocab& vocab);

struct PcaModel {
  std::vector<double> mean;       // [dim]
  Tensor axes;                    // [k x dim], orthonormal rows
  std::vector<double> explained;  // sample variance along each axis, descending
};

// Top-k variance directions of the rows of x via eigendecomposition of the
// sample covariance. Requires k <= min(n - 1, dim).
PcaModel pca_fit(const Tensor& x, Index k);

// Mean-centered projection, [n x k]. Projecting the fitted data gives
// columns with zero mean.
Tensor pca_project(const PcaModel& model, const Tensor& x);

struct GmmModel {
  std::vector<double> weights;  // [K], simplex
  Tensor means;                 // [K x d]
  Tensor variances;             // [K x d], diagonal, floored at 1e-6
  std::vector<double> log_likelihood_trace;  // winning restart, one entry per EM iteration
};

// Diagonal-covariance EM with k-means++-style seeding, best of five restarts
// by final log-likelihood. Stops a restart when the gain drops below tol or
// after max_iter iterations. Requires n >= K >= 1.
GmmModel gmm_fit_em(const Tensor& x, Index components, Rng& rng, Index max_iter = 200,
                    double tol = 1e-7);

// Posterior component probabilities per row; every row sums to 1.
Tensor gmm_soft_assign(const GmmModel& model, const Tensor& x);

// Per row take the argmax component (ties to the lowest id), then per
// language the modal component (ties to the lowest id). row_langs labels the
// responsibility rows and must align with them.
std::map<std::string, Index> hard_assign_majority(const Tensor& responsibilities,
                                                  const std::vector<std::string>& row_langs);

struct ClusterReport {
  std::vector<std::string> families;          // confusion rows, sorted
  std::vector<Index> clusters;                // confusion columns, ascending
  std::vector<std::vector<Index>> confusion;  // families x clusters language counts
  Index agreements = 0;
  Index misallocated = 0;
  std::vector<std::string> misallocated_langs;
  GroupingScheme scheme;  // the assignment as a trainable custom grouping
};

// Cross-tabulates the assignment against the registry's families. Every
// cluster is credited to its majority family (ties to the lexicographically
// first); languages outside that majority count as mis-allocated. The
// assignment must cover the registry exactly.
ClusterReport cluster_report(const std::map<std::string, Index>& assignment,
                             const LanguageRegistry& registry);

std::string cluster_report_text(const ClusterReport& report);

// Convenience pipeline: stack all vectors, PCA to pca_dim (clamped to what
// the data supports), fit a mixture with one component per family unless
// `components` overrides it, and report.
ClusterReport cluster_languages(const EmbeddingBatch& batch, const LanguageRegistry& registry,
                                Index pca_dim, Index components, Rng& rng);

// Vector file format: header "<total> <dim>", then per language a
// "#lang <code>" sentinel followed by that language's rows, one
// whitespace-separated vector per line.
EmbeddingBatch load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingBatch& batch, const std::string& path);

}  // namespace famadapt
