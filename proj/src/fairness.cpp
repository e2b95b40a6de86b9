#include "pct/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pct/errors.hpp"

namespace pct::fairness {

namespace {

void require_both_classes(std::span<const ScoredPair> pairs, const char* op) {
  const bool genuine = std::any_of(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return p.same_identity; });
  const bool impostor = std::any_of(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return !p.same_identity; });
  if (!genuine || !impostor) throw ProtocolError(std::string(op) + ": need both genuine and impostor pairs");
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine_similarity: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

AveStd ave_std(std::span<const double> values) {
  if (values.size() < 2) throw ContractError("ave_std: need at least two groups");
  const double k = static_cast<double>(values.size());
  const double ave = std::accumulate(values.begin(), values.end(), 0.0) / k;
  double ss = 0.0;
  for (double v : values) ss += (v - ave) * (v - ave);
  return AveStd{ave, std::sqrt(ss / (k - 1.0))};
}

double global_threshold(std::span<const double> impostor_similarities, double target_fpr) {
  if (!(target_fpr > 0.0)) throw ContractError("global_threshold: target FPR must be positive");
  if (target_fpr >= 1.0) return -1.0;
  const std::size_t n = impostor_similarities.size();
  const auto needed = static_cast<std::size_t>(std::ceil(1.0 / target_fpr - 1e-9));
  if (n < needed) {
    throw ProtocolError("global_threshold: target FPR " + std::to_string(target_fpr) + " needs at least " +
                        std::to_string(needed) + " impostor pairs, got " + std::to_string(n));
  }
  std::vector<double> sorted(impostor_similarities.begin(), impostor_similarities.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::floor(target_fpr * static_cast<double>(n) + 1e-9));
  if (k == 0) return std::nextafter(sorted.front(), std::numeric_limits<double>::infinity());
  double t = sorted[k - 1];
  // Ties at t would push the accepted fraction above the target.
  if (k < n && sorted[k] == t) t = std::nextafter(t, std::numeric_limits<double>::infinity());
  return t;
}

std::vector<double> group_fpr(const std::vector<std::vector<double>>& grouped_impostors, double threshold) {
  std::vector<double> out;
  out.reserve(grouped_impostors.size());
  for (const auto& sims : grouped_impostors) {
    if (sims.empty()) throw ProtocolError("group_fpr: empty group");
    const auto accepted = std::count_if(sims.begin(), sims.end(), [&](double s) { return s >= threshold; });
    out.push_back(static_cast<double>(accepted) / static_cast<double>(sims.size()));
  }
  return out;
}

double bias_degree(std::span<const double> group_fprs, double target_fpr) {
  if (group_fprs.size() < 2) throw ContractError("bias_degree: need at least two groups");
  if (!(target_fpr > 0.0)) throw ContractError("bias_degree: target FPR must be positive");
  const double k = static_cast<double>(group_fprs.size());
  // Deviations from the first entry keep identical groups exactly at zero.
  const double ref = group_fprs.front();
  double shift = 0.0;
  for (double f : group_fprs) shift += f - ref;
  shift /= k;
  double ss = 0.0;
  for (double f : group_fprs) ss += (f - ref - shift) * (f - ref - shift);
  return std::sqrt(ss) / k / target_fpr;
}

VerificationResult verification_accuracy(std::span<const ScoredPair> pairs) {
  require_both_classes(pairs, "verification_accuracy");
  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.similarity < b.similarity; });
  const double total = static_cast<double>(sorted.size());
  // Threshold below every score: everything accepted.
  long correct = std::count_if(sorted.begin(), sorted.end(), [](const ScoredPair& p) { return p.same_identity; });
  VerificationResult best{static_cast<double>(correct) / total, sorted.front().similarity - 1.0};
  long best_correct = correct;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double v = sorted[i].similarity;
    while (i < sorted.size() && sorted[i].similarity == v) {
      correct += sorted[i].same_identity ? -1 : 1;
      ++i;
    }
    const double threshold = i < sorted.size() ? 0.5 * (v + sorted[i].similarity) : v + 1.0;
    if (correct > best_correct) {
      best_correct = correct;
      best = VerificationResult{static_cast<double>(correct) / total, threshold};
    }
  }
  return best;
}

std::vector<RocPoint> roc_points(std::span<const ScoredPair> pairs) {
  require_both_classes(pairs, "roc_points");
  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.similarity > b.similarity; });
  const auto genuine = static_cast<double>(
      std::count_if(sorted.begin(), sorted.end(), [](const ScoredPair& p) { return p.same_identity; }));
  const double impostor = static_cast<double>(sorted.size()) - genuine;
  std::vector<RocPoint> out;
  out.push_back({0.0, 0.0, std::nextafter(sorted.front().similarity, std::numeric_limits<double>::infinity())});
  double tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double v = sorted[i].similarity;
    while (i < sorted.size() && sorted[i].similarity == v) {
      (sorted[i].same_identity ? tp : fp) += 1.0;
      ++i;
    }
    out.push_back({fp / impostor, tp / genuine, v});
  }
  return out;
}

double roc_auc(std::span<const RocPoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].tpr + points[i - 1].tpr);
  }
  return area;
}

std::vector<double> feasible_fpr_grid(std::span<const double> grid, std::size_t impostor_count) {
  std::vector<double> out;
  const double floor_fpr = 10.0 / static_cast<double>(std::max<std::size_t>(impostor_count, 1));
  for (double t : grid) {
    if (t >= floor_fpr - 1e-12 && t < 1.0) out.push_back(t);
  }
  return out;
}

GroupMetrics evaluate_groups(const std::map<std::string, std::vector<ScoredPair>>& grouped,
                             std::span<const double> fpr_grid) {
  if (grouped.size() < 2) throw ProtocolError("evaluate_groups: need at least two groups");
  GroupMetrics out;
  std::vector<std::vector<double>> impostors;
  std::vector<double> pooled;
  for (const auto& [name, pairs] : grouped) {
    const VerificationResult r = verification_accuracy(pairs);
    out.groups.push_back(name);
    out.accuracy.push_back(r.accuracy);
    out.thresholds.push_back(r.threshold);
    std::vector<double> imp;
    for (const ScoredPair& p : pairs) {
      if (!p.same_identity) imp.push_back(p.similarity);
    }
    pooled.insert(pooled.end(), imp.begin(), imp.end());
    impostors.push_back(std::move(imp));
  }
  out.accuracy_summary = ave_std(out.accuracy);
  for (double target : feasible_fpr_grid(fpr_grid, pooled.size())) {
    FprReport rep;
    rep.target_fpr = target;
    rep.threshold = global_threshold(pooled, target);
    rep.group_fprs = group_fpr(impostors, rep.threshold);
    rep.pooled_fpr = group_fpr({pooled}, rep.threshold).front();
    rep.bias_degree = bias_degree(rep.group_fprs, target);
    out.fpr.push_back(std::move(rep));
  }
  return out;
}

}  // namespace pct::fairness
