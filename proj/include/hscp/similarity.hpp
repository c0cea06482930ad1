#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hscp/activations.hpp"
#include "hscp/matrix.hpp"
#include "hscp/parallel.hpp"

namespace hscp {

/// Self-HSIC at or below this marks a representation as degenerate.
inline constexpr double kVarianceEpsilon = 1e-12;

/// b x b linear-kernel Gram matrix of the view's rows, accumulated in double.
Matrix gram(const FlatView& view);

/// Unbiased HSIC estimator on Grams whose diagonals are treated as zero.
double hsic1(const Matrix& k, const Matrix& l);

/// Precomputed pieces of a Gram that hsic1 reuses across pairings.
struct HsicTerms {
  Matrix zeroed;                 // Gram with zero diagonal
  std::vector<double> row_sums;  // of `zeroed`
  double total = 0.0;            // sum of row_sums
  double self = 0.0;             // hsic1(K, K)
};

HsicTerms hsic_terms(const Matrix& k);
double hsic1(const HsicTerms& k, const HsicTerms& l);

/// hsic1(K, L) / sqrt(hsic1(K, K) hsic1(L, L)) before clamping; no degeneracy check.
double cka_raw(const HsicTerms& k, const HsicTerms& l);

/// CKA clamped to [0, 1]. Throws DegenerateError if either self-HSIC is at or
/// below kVarianceEpsilon.
double cka(const FlatView& a, const FlatView& b);

enum class SimilarityKind { layer, channel };

struct SimilarityMatrix {
  SimilarityKind kind = SimilarityKind::layer;
  std::vector<std::string> labels;
  // Original channel index of each row (channel kind only).
  std::vector<std::int64_t> channels;
  Matrix values;

  std::size_t size() const { return values.rows; }
};

/// CKA between every pair of units' layer views. Throws DegenerateError naming
/// the first degenerate unit.
SimilarityMatrix layer_similarity(const ActivationSet& set, const std::vector<std::string>& unit_ids,
                                  Parallelism par = {});

/// CKA between the non-degenerate channels of one node. Degenerate channel
/// indices are appended to `degenerate` (if given). Throws DegenerateError when
/// no channel survives; the caller should then keep channel 0 alone.
SimilarityMatrix channel_similarity(const ActivationSet& set, std::string_view node_id,
                                    std::vector<std::int64_t>* degenerate = nullptr, Parallelism par = {});

/// Channel similarity shared by nodes whose output channels must be pruned
/// together: the element-wise mean of the members' matrices, over channels
/// that are non-degenerate in every member.
SimilarityMatrix group_channel_similarity(const ActivationSet& set, const std::vector<std::string>& node_ids,
                                          std::vector<std::int64_t>* degenerate = nullptr,
                                          Parallelism par = {});

}  // namespace hscp
