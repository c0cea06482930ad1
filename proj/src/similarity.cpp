#include "hscp/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hscp/error.hpp"
#include "hscp/log.hpp"

namespace hscp {
namespace {

constexpr double kClampWarnThreshold = -1e-6;

double dot(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sum += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return sum;
}

Matrix gram_impl(const FlatView& view, Parallelism par) {
  if (view.rows < 4) {
    throw ValidationError("Gram matrix needs at least 4 rows, got " + std::to_string(view.rows));
  }
  const std::size_t b = view.rows;
  Matrix g(b, b);
  parallel_for(b, par, [&](std::size_t i) {
    const auto ri = view.row(i);
    for (std::size_t j = i; j < b; ++j) g(i, j) = dot(ri, view.row(j));
  });
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  }
  return g;
}

double clamp_unit(double raw, double& most_negative) {
  most_negative = std::min(most_negative, raw);
  return std::clamp(raw, 0.0, 1.0);
}

void warn_if_clamped(double most_negative, std::string_view what) {
  if (most_negative < kClampWarnThreshold) {
    log::warn(std::string(what) + ": raw CKA as low as " + std::to_string(most_negative) + " was clamped to 0");
  }
}

/// Fills values(i, j) = clamp(cka_raw(terms[i], terms[j])) for i != j, 1 on the diagonal.
Matrix pairwise(const std::vector<const HsicTerms*>& terms, Parallelism par, double& most_negative) {
  const std::size_t n = terms.size();
  Matrix s(n, n);
  std::vector<double> row_min(n, 0.0);
  parallel_for(n, par, [&](std::size_t i) {
    s(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) s(i, j) = clamp_unit(cka_raw(*terms[i], *terms[j]), row_min[i]);
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) s(i, j) = s(j, i);
  }
  most_negative = *std::min_element(row_min.begin(), row_min.end());
  return s;
}

struct ChannelTerms {
  std::vector<HsicTerms> terms;  // indexed by channel
  std::vector<bool> degenerate;
};

ChannelTerms channel_terms(const Tensor& t, Parallelism par) {
  const auto c = static_cast<std::size_t>(t.channels());
  ChannelTerms out{std::vector<HsicTerms>(c), std::vector<bool>(c, false)};
  parallel_for(c, par, [&](std::size_t p) {
    out.terms[p] = hsic_terms(gram_impl(channel_view(t, static_cast<std::int64_t>(p)), {}));
  });
  for (std::size_t p = 0; p < c; ++p) out.degenerate[p] = out.terms[p].self <= kVarianceEpsilon;
  return out;
}

SimilarityMatrix channel_matrix(const std::vector<std::string>& node_ids, const std::vector<ChannelTerms>& members,
                                std::vector<std::int64_t>* degenerate, Parallelism par) {
  const std::size_t c = members.front().terms.size();
  SimilarityMatrix result;
  result.kind = SimilarityKind::channel;
  for (std::size_t p = 0; p < c; ++p) {
    const bool bad = std::any_of(members.begin(), members.end(), [&](const ChannelTerms& m) { return m.degenerate[p]; });
    if (bad) {
      if (degenerate) degenerate->push_back(static_cast<std::int64_t>(p));
    } else {
      result.channels.push_back(static_cast<std::int64_t>(p));
      result.labels.push_back(std::to_string(p));
    }
  }
  std::string subject = node_ids.front();
  for (std::size_t i = 1; i < node_ids.size(); ++i) subject += "+" + node_ids[i];
  if (result.channels.empty()) {
    throw DegenerateError(subject, "every channel of '" + subject + "' is degenerate; keep channel 0 only");
  }

  const std::size_t n = result.channels.size();
  result.values = Matrix(n, n);
  double most_negative = 0.0;
  for (const ChannelTerms& m : members) {
    std::vector<const HsicTerms*> live;
    for (std::int64_t p : result.channels) live.push_back(&m.terms[static_cast<std::size_t>(p)]);
    double member_min = 0.0;
    const Matrix s = pairwise(live, par, member_min);
    most_negative = std::min(most_negative, member_min);
    for (std::size_t k = 0; k < s.data.size(); ++k) result.values.data[k] += s.data[k];
  }
  const double scale = 1.0 / static_cast<double>(members.size());
  for (double& v : result.values.data) v *= scale;
  for (std::size_t i = 0; i < n; ++i) result.values(i, i) = 1.0;
  warn_if_clamped(most_negative, "channel similarity of '" + subject + "'");
  return result;
}

}  // namespace

Matrix gram(const FlatView& view) { return gram_impl(view, {}); }

HsicTerms hsic_terms(const Matrix& k) {
  if (k.rows != k.cols) throw ValidationError("Gram matrix must be square");
  if (k.rows < 4) throw ValidationError("HSIC needs at least 4 samples, got " + std::to_string(k.rows));
  HsicTerms t;
  t.zeroed = k;
  t.row_sums.assign(k.rows, 0.0);
  for (std::size_t i = 0; i < k.rows; ++i) {
    t.zeroed(i, i) = 0.0;
    double sum = 0.0;
    for (std::size_t j = 0; j < k.cols; ++j) sum += t.zeroed(i, j);
    t.row_sums[i] = sum;
    t.total += sum;
  }
  t.self = hsic1(t, t);
  return t;
}

double hsic1(const HsicTerms& k, const HsicTerms& l) {
  const std::size_t b = k.zeroed.rows;
  if (l.zeroed.rows != b) {
    throw ValidationError("HSIC dimension mismatch: " + std::to_string(b) + " vs " + std::to_string(l.zeroed.rows));
  }
  const double n = static_cast<double>(b);
  double trace = 0.0;
  for (std::size_t i = 0; i < k.zeroed.data.size(); ++i) trace += k.zeroed.data[i] * l.zeroed.data[i];
  double cross = 0.0;
  for (std::size_t i = 0; i < b; ++i) cross += k.row_sums[i] * l.row_sums[i];
  return (trace + k.total * l.total / ((n - 1.0) * (n - 2.0)) - 2.0 / (n - 2.0) * cross) / (n * (n - 3.0));
}

double hsic1(const Matrix& k, const Matrix& l) {
  if (k.rows != l.rows || k.cols != l.cols) {
    throw ValidationError("HSIC dimension mismatch: " + std::to_string(k.rows) + " vs " + std::to_string(l.rows));
  }
  HsicTerms tk = hsic_terms(k);
  HsicTerms tl = hsic_terms(l);
  return hsic1(tk, tl);
}

double cka_raw(const HsicTerms& k, const HsicTerms& l) { return hsic1(k, l) / std::sqrt(k.self * l.self); }

double cka(const FlatView& a, const FlatView& b) {
  if (a.rows != b.rows) {
    throw ValidationError("CKA row mismatch: " + std::to_string(a.rows) + " vs " + std::to_string(b.rows));
  }
  const HsicTerms ta = hsic_terms(gram(a));
  if (ta.self <= kVarianceEpsilon) throw DegenerateError("a", "first representation is degenerate");
  const HsicTerms tb = hsic_terms(gram(b));
  if (tb.self <= kVarianceEpsilon) throw DegenerateError("b", "second representation is degenerate");
  return std::clamp(cka_raw(ta, tb), 0.0, 1.0);
}

SimilarityMatrix layer_similarity(const ActivationSet& set, const std::vector<std::string>& unit_ids,
                                  Parallelism par) {
  if (unit_ids.empty()) throw ValidationError("layer similarity needs at least one unit");
  std::set<std::string> seen;
  for (const auto& id : unit_ids) {
    if (!seen.insert(id).second) throw ValidationError("unit '" + id + "' listed twice");
    if (!set.contains(id)) throw ValidationError("no activations recorded for unit '" + id + "'");
  }
  std::vector<HsicTerms> terms(unit_ids.size());
  // Grams are the expensive part; parallelize within each one rather than
  // across units so memory stays at one Gram build at a time.
  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    terms[i] = hsic_terms(gram_impl(layer_view(set, unit_ids[i]), par));
    if (terms[i].self <= kVarianceEpsilon) {
      throw DegenerateError(unit_ids[i], "unit '" + unit_ids[i] + "' has a degenerate (zero-variance) representation");
    }
  }
  std::vector<const HsicTerms*> ptrs;
  for (const auto& t : terms) ptrs.push_back(&t);
  SimilarityMatrix result;
  result.kind = SimilarityKind::layer;
  result.labels = unit_ids;
  double most_negative = 0.0;
  result.values = pairwise(ptrs, par, most_negative);
  warn_if_clamped(most_negative, "layer similarity");
  return result;
}

SimilarityMatrix channel_similarity(const ActivationSet& set, std::string_view node_id,
                                    std::vector<std::int64_t>* degenerate, Parallelism par) {
  return group_channel_similarity(set, {std::string(node_id)}, degenerate, par);
}

SimilarityMatrix group_channel_similarity(const ActivationSet& set, const std::vector<std::string>& node_ids,
                                          std::vector<std::int64_t>* degenerate, Parallelism par) {
  if (node_ids.empty()) throw ValidationError("channel similarity needs at least one node");
  std::vector<ChannelTerms> members;
  const std::int64_t c = set.at(node_ids.front()).channels();
  for (const auto& id : node_ids) {
    const Tensor& t = set.at(id);
    if (t.channels() != c) {
      throw ValidationError("coupled nodes '" + node_ids.front() + "' and '" + id + "' differ in channel count");
    }
    members.push_back(channel_terms(t, par));
  }
  return channel_matrix(node_ids, members, degenerate, par);
}

}  // namespace hscp
