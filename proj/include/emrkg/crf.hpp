#pragma once

// Linear-chain CRF over an emission matrix (length x tags) and a transition
// matrix of size (tags + 2)^2 whose last two indices are the virtual START
// and STOP states. transitions(i, j) scores moving from i to j. Disallowed
// moves carry -inf; every routine here is log-space with max-subtraction.

#include <cmath>
#include <limits>
#include <vector>

#include "emrkg/error.hpp"

namespace emrkg {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n) {
  double m = kNegInf;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline void check_shapes(const Matrix& emissions, const Matrix& transitions) {
  if (emissions.rows() == 0) throw Error(Errc::EmptySentence, "tagger", "empty emission matrix");
  const auto k = emissions.cols() + 2;
  if (transitions.rows() != k || transitions.cols() != k) {
    throw Error(Errc::InvalidArgument, "tagger", "transition matrix must be (tags + 2)^2");
  }
}

/// alpha(t, j): log-sum of all prefixes ending in tag j at position t.
inline Matrix forward_scores(const Matrix& e, const Matrix& tr) {
  const auto n = e.rows();
  const auto k = e.cols();
  const auto start = k;
  Matrix alpha(n, k);
  for (std::size_t j = 0; j < k; ++j) alpha(0, j) = tr(start, j) + e(0, j);
  std::vector<double> buf(k);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < k; ++i) buf[i] = alpha(t - 1, i) + tr(i, j);
      alpha(t, j) = log_sum_exp(buf.data(), k) + e(t, j);
    }
  }
  return alpha;
}

/// beta(t, i): log-sum of all suffixes after position t given tag i at t.
inline Matrix backward_scores(const Matrix& e, const Matrix& tr) {
  const auto n = e.rows();
  const auto k = e.cols();
  const auto stop = k + 1;
  Matrix beta(n, k);
  for (std::size_t i = 0; i < k; ++i) beta(n - 1, i) = tr(i, stop);
  std::vector<double> buf(k);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) buf[j] = tr(i, j) + e(t + 1, j) + beta(t + 1, j);
      beta(t, i) = log_sum_exp(buf.data(), k);
    }
  }
  return beta;
}

}  // namespace detail

/// log sum over all tag paths of exp(path score), START/STOP included.
inline double crf_log_partition(const Matrix& emissions, const Matrix& transitions) {
  detail::check_shapes(emissions, transitions);
  const auto alpha = detail::forward_scores(emissions, transitions);
  const auto n = emissions.rows();
  const auto k = emissions.cols();
  std::vector<double> last(k);
  for (std::size_t j = 0; j < k; ++j) last[j] = alpha(n - 1, j) + transitions(j, k + 1);
  return detail::log_sum_exp(last.data(), k);
}

inline double crf_path_score(const Matrix& emissions, const Matrix& transitions,
                             const std::vector<int>& tags) {
  detail::check_shapes(emissions, transitions);
  const auto k = emissions.cols();
  if (tags.size() != emissions.rows()) {
    throw Error(Errc::InvalidGoldTag, "tagger", "tag sequence length differs from emissions");
  }
  for (int t : tags) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw Error(Errc::InvalidGoldTag, "tagger", "tag index " + std::to_string(t) + " out of range");
    }
  }
  double s = transitions(k, static_cast<std::size_t>(tags[0]));
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const auto cur = static_cast<std::size_t>(tags[t]);
    s += emissions(t, cur);
    if (t > 0) s += transitions(static_cast<std::size_t>(tags[t - 1]), cur);
  }
  s += transitions(static_cast<std::size_t>(tags.back()), k + 1);
  return s;
}

/// Negative log-likelihood of `gold`; +inf when the gold path is disallowed.
inline double crf_nll(const Matrix& emissions, const Matrix& transitions, const std::vector<int>& gold) {
  const double gold_score = crf_path_score(emissions, transitions, gold);
  if (gold_score == kNegInf) return std::numeric_limits<double>::infinity();
  return crf_log_partition(emissions, transitions) - gold_score;
}

/// NLL plus its gradient with respect to emissions and transitions
/// (accumulated into d_emissions / d_transitions, which must be sized).
inline double crf_nll_backward(const Matrix& emissions, const Matrix& transitions,
                               const std::vector<int>& gold, Matrix& d_emissions,
                               Matrix& d_transitions) {
  const double gold_score = crf_path_score(emissions, transitions, gold);
  const auto n = emissions.rows();
  const auto k = emissions.cols();
  const auto start = k;
  const auto stop = k + 1;
  const auto alpha = detail::forward_scores(emissions, transitions);
  const auto beta = detail::backward_scores(emissions, transitions);
  std::vector<double> last(k);
  for (std::size_t j = 0; j < k; ++j) last[j] = alpha(n - 1, j) + transitions(j, stop);
  const double log_z = detail::log_sum_exp(last.data(), k);
  if (gold_score == kNegInf || log_z == kNegInf) return std::numeric_limits<double>::infinity();

  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const double lp = alpha(t, j) + beta(t, j) - log_z;
      d_emissions(t, j) += lp == kNegInf ? 0.0 : std::exp(lp);
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    const double first = alpha(0, j) + beta(0, j) - log_z;
    d_transitions(start, j) += first == kNegInf ? 0.0 : std::exp(first);
    const double lastp = alpha(n - 1, j) + transitions(j, stop) - log_z;
    d_transitions(j, stop) += lastp == kNegInf ? 0.0 : std::exp(lastp);
  }
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      if (alpha(t - 1, i) == kNegInf) continue;
      for (std::size_t j = 0; j < k; ++j) {
        const double lp = alpha(t - 1, i) + transitions(i, j) + emissions(t, j) + beta(t, j) - log_z;
        if (lp != kNegInf) d_transitions(i, j) += std::exp(lp);
      }
    }
  }

  // subtract the gold path's indicator features
  d_transitions(start, static_cast<std::size_t>(gold[0])) -= 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto g = static_cast<std::size_t>(gold[t]);
    d_emissions(t, g) -= 1.0;
    if (t > 0) d_transitions(static_cast<std::size_t>(gold[t - 1]), g) -= 1.0;
  }
  d_transitions(static_cast<std::size_t>(gold.back()), stop) -= 1.0;
  return log_z - gold_score;
}

/// Highest-scoring path; ties resolve to the smaller tag index.
inline std::vector<int> crf_viterbi(const Matrix& emissions, const Matrix& transitions) {
  detail::check_shapes(emissions, transitions);
  const auto n = emissions.rows();
  const auto k = emissions.cols();
  Matrix score(n, k);
  std::vector<std::vector<int>> back(n, std::vector<int>(k, 0));
  for (std::size_t j = 0; j < k; ++j) score(0, j) = transitions(k, j) + emissions(0, j);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      double best = kNegInf;
      int arg = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const double s = score(t - 1, i) + transitions(i, j);
        if (s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      score(t, j) = best + emissions(t, j);
      back[t][j] = arg;
    }
  }
  double best = kNegInf;
  int arg = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double s = score(n - 1, j) + transitions(j, k + 1);
    if (s > best) {
      best = s;
      arg = static_cast<int>(j);
    }
  }
  std::vector<int> path(n);
  path[n - 1] = arg;
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t][static_cast<std::size_t>(path[t])];
  return path;
}

}  // namespace emrkg
