#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace alqr {

//! Error taxonomy. `config` and `data` map to CLI exit code 2,
//! `numeric` to exit code 3.
class Error : public std::runtime_error {
 public:
  enum class Kind { config, data, numeric };

  Error(Kind kind, std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message),
        kind_(kind),
        code_(std::move(code)) {}

  Kind kind() const { return kind_; }
  const std::string& code() const { return code_; }

 private:
  Kind kind_;
  std::string code_;
};

[[noreturn]] inline void fail_config(const std::string& code, const std::string& msg) {
  throw Error(Error::Kind::config, code, msg);
}
[[noreturn]] inline void fail_data(const std::string& code, const std::string& msg) {
  throw Error(Error::Kind::data, code, msg);
}
[[noreturn]] inline void fail_numeric(const std::string& code, const std::string& msg) {
  throw Error(Error::Kind::numeric, code, msg);
}

// Two-sided 97.5% normal quantile pinned so confidence intervals are
// reproducible to the last bit across platforms.
inline constexpr double kZ975 = 1.959964;

//! Indicator I{y <= q}; ties count as covered everywhere in this library.
inline double leq(double y, double q) { return y <= q ? 1.0 : 0.0; }

//! Dense row-major matrix of doubles. Rows are observations.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double sum(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0);
}

//! Weighted mean sum(w*x)/sum(w). Weights empty means unit weights.
inline double weighted_mean(const std::vector<double>& x, const std::vector<double>& w) {
  if (w.empty()) return sum(x) / static_cast<double>(x.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += w[i] * x[i];
    den += w[i];
  }
  return num / den;
}

//! Weighted variance around the weighted mean (population form, Hajek).
inline double weighted_variance(const std::vector<double>& x, const std::vector<double>& w) {
  double m = weighted_mean(x, w);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double wi = w.empty() ? 1.0 : w[i];
    num += wi * (x[i] - m) * (x[i] - m);
    den += wi;
  }
  return num / den;
}

//! Type-1 (lower) weighted empirical quantile: smallest value v with
//! cumulative weight >= p * total weight.
inline double weighted_quantile(std::vector<double> values, std::vector<double> weights,
                                double p) {
  if (values.empty()) fail_data("LengthMismatch", "quantile of empty vector");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    total += weights.empty() ? 1.0 : weights[i];
  double target = p * total;
  double cum = 0.0;
  for (std::size_t k : order) {
    cum += weights.empty() ? 1.0 : weights[k];
    if (cum >= target) return values[k];
  }
  return values[order.back()];
}

inline double weighted_iqr(const std::vector<double>& values,
                           const std::vector<double>& weights) {
  return weighted_quantile(values, weights, 0.75) -
         weighted_quantile(values, weights, 0.25);
}

//! Unweighted sample median (type-1 lower convention for even n).
inline double median(std::vector<double> v) {
  return weighted_quantile(std::move(v), {}, 0.5);
}

inline double sample_sd(const std::vector<double>& x) {
  // n-1 denominator; 0 for n == 1.
  if (x.size() < 2) return 0.0;
  double m = sum(x) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

}  // namespace alqr
