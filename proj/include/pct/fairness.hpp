#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

// Verification-protocol fairness metrics: per-group best-threshold accuracy
// summarised by mean and sample standard deviation, and per-group false
// positive rates at one global threshold summarised by the bias degree.
namespace pct::fairness {

struct ScoredPair {
  double similarity = 0.0;
  bool same_identity = false;
};

struct AveStd {
  double ave = 0.0;
  double std = 0.0;  // sample standard deviation, divisor K-1
};

struct VerificationResult {
  double accuracy = 0.0;
  double threshold = 0.0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

AveStd ave_std(std::span<const double> values);

// Threshold t with accepted := similarity >= t. Sorting the impostor scores in
// descending order, t is the k-th largest score where k = floor(target * N),
// so that the accepted fraction is at most the target. target >= 1 returns -1
// (accept everything); k = 0 returns a value just above the largest score.
double global_threshold(std::span<const double> impostor_similarities, double target_fpr);

// Per group, the fraction of impostor scores >= threshold.
std::vector<double> group_fpr(const std::vector<std::vector<double>>& grouped_impostors, double threshold);

// (1/K) * sqrt(sum_k (F_k - mean)^2) / target_fpr
double bias_degree(std::span<const double> group_fprs, double target_fpr);

// Best accuracy over thresholds placed below all scores, above all scores and
// at midpoints between adjacent distinct scores; ties go to the smallest
// threshold.
VerificationResult verification_accuracy(std::span<const ScoredPair> pairs);

// ROC staircase from (0,0) to (1,1), one point per distinct score.
std::vector<RocPoint> roc_points(std::span<const ScoredPair> pairs);

// Trapezoidal area under a ROC staircase.
double roc_auc(std::span<const RocPoint> points);

// Per-target FPR-protocol results.
struct FprReport {
  double target_fpr = 0.0;
  double threshold = 0.0;
  double pooled_fpr = 0.0;
  std::vector<double> group_fprs;
  double bias_degree = 0.0;
};

struct GroupMetrics {
  std::vector<std::string> groups;
  std::vector<double> accuracy;
  std::vector<double> thresholds;
  AveStd accuracy_summary;
  std::vector<FprReport> fpr;
};

// FPR grid entries below 10 / N_impostor are dropped.
std::vector<double> feasible_fpr_grid(std::span<const double> grid, std::size_t impostor_count);

// Full protocol over scored pairs keyed by group name. The FPR grid is first
// passed through feasible_fpr_grid with the pooled impostor count.
GroupMetrics evaluate_groups(const std::map<std::string, std::vector<ScoredPair>>& grouped,
                             std::span<const double> fpr_grid);

}  // namespace pct::fairness
