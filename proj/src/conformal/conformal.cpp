#include "trace/conformal/conformal.hpp"

#include <algorithm>
#include <cmath>

#include "trace/errors.hpp"
#include "trace/parallel.hpp"

namespace trace::conformal {

std::size_t conformal_rank(std::size_t n_cal, double alpha) {
  require(n_cal >= 1, "calibrate: need at least one calibration score");
  require(alpha > 0.0 && alpha < 1.0, "calibrate: alpha must lie in (0, 1)");
  const double raw = (1.0 - alpha) * static_cast<double>(n_cal + 1);
  const double k = std::ceil(raw * (1.0 - 8 * std::numeric_limits<double>::epsilon()));
  return static_cast<std::size_t>(std::max(1.0, k));
}

CalibrationResult calibrate(std::span<const double> scores, double alpha) {
  CalibrationResult out;
  out.rank = conformal_rank(scores.size(), alpha);
  for (double s : scores)
    if (!std::isfinite(s)) throw InvalidArgument("calibrate: non-finite calibration score");
  out.sorted_scores.assign(scores.begin(), scores.end());
  std::sort(out.sorted_scores.begin(), out.sorted_scores.end());
  out.alpha = alpha;
  out.n_cal = scores.size();
  out.threshold = out.rank > out.n_cal ? kInfiniteThreshold : out.sorted_scores[out.rank - 1];
  return out;
}

nlohmann::json to_json(const CalibrationResult& cal, const std::string& score_kind,
                       std::uint64_t bank_hash) {
  nlohmann::json j = {{"alpha", cal.alpha},     {"n_cal", cal.n_cal},
                      {"rank", cal.rank},       {"score_kind", score_kind},
                      {"bank_hash", bank_hash}};
  // JSON has no infinity; the whole-space region is spelled out.
  if (cal.whole_space())
    j["threshold"] = "inf";
  else
    j["threshold"] = cal.threshold;
  return j;
}

bool RegionHandle::contains(const VectorXd& x, const VectorXd& y) const {
  if (threshold == kInfiniteThreshold) return true;
  return score->score(x, y) <= threshold;
}

std::vector<bool> RegionHandle::contains_many(const VectorXd& x, const MatrixXd& ys) const {
  if (threshold == kInfiniteThreshold) return std::vector<bool>(static_cast<std::size_t>(ys.cols()), true);
  const VectorXd s = score->scores(x, ys);
  std::vector<bool> out(static_cast<std::size_t>(ys.cols()));
  for (Eigen::Index i = 0; i < s.size(); ++i) out[static_cast<std::size_t>(i)] = s(i) <= threshold;
  return out;
}

bool contains(const RegionHandle& region, const VectorXd& x, const VectorXd& y) {
  return region.contains(x, y);
}

double coverage(const RegionHandle& region, const MatrixXd& X, const MatrixXd& Y) {
  if (X.rows() == 0) throw InvalidArgument("coverage: empty test set");
  require(X.rows() == Y.rows(), "coverage: X and Y row counts differ");
  std::vector<char> inside(static_cast<std::size_t>(X.rows()));
  parallel_for(inside.size(), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    inside[i] = region.contains(X.row(r).transpose(), Y.row(r).transpose());
  });
  return static_cast<double>(std::count(inside.begin(), inside.end(), 1)) /
         static_cast<double>(inside.size());
}

double coverage(std::span<const double> test_scores, double threshold) {
  if (test_scores.empty()) throw InvalidArgument("coverage: empty test set");
  const auto hits = std::count_if(test_scores.begin(), test_scores.end(),
                                  [threshold](double s) { return s <= threshold; });
  return static_cast<double>(hits) / static_cast<double>(test_scores.size());
}

}  // namespace trace::conformal
