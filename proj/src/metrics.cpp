#include "fmgp/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace fmgp::metrics {

double gaussian_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double gaussian_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

namespace {

// Acklam's rational approximation of the inverse normal CDF (|rel err| < 1.2e-9).
double quantile_seed(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,  -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double gaussian_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("gaussian_quantile: p must lie strictly in (0, 1)");
  double x = quantile_seed(p);
  // One Newton step on the CDF.
  const double err = gaussian_cdf(x) - p;
  const double dens = gaussian_pdf(x);
  if (dens > 0.0) x -= err / dens;
  return x;
}

double crps_gaussian(double y, double mean, double sd) {
  if (!(sd > 0.0)) throw DomainError("crps_gaussian: sd must be positive");
  const double z = (y - mean) / sd;
  return sd * (z * (2.0 * gaussian_cdf(z) - 1.0) + 2.0 * gaussian_pdf(z) - 1.0 / std::sqrt(M_PI));
}

double cqm(const Vec& y, const Vec& mean, const Vec& sd) {
  const Eigen::Index n = y.size();
  if (n == 0) throw EmptyInput("cqm: empty input");
  if (mean.size() != n || sd.size() != n) throw DimensionMismatch("cqm: size mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(sd[i] > 0.0)) throw DomainError("cqm: predictive sds must be positive");

  Vec zabs = ((y - mean).array() / sd.array()).abs();
  constexpr int kGrid = 101;
  Vec integrand(kGrid);
  for (int k = 0; k < kGrid; ++k) {
    const double alpha = static_cast<double>(k) / (kGrid - 1);
    double coverage;
    if (k == 0) {
      coverage = 0.0;  // empty open interval
    } else if (k == kGrid - 1) {
      coverage = 0.0;  // quantile undefined at p = 1; strict test cannot pass
    } else {
      const double lambda = gaussian_quantile(0.5 * (1.0 + alpha));
      Eigen::Index covered = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (zabs[i] < lambda) ++covered;
      coverage = static_cast<double>(covered) / static_cast<double>(n);
    }
    integrand[k] = std::abs(coverage - alpha);
  }
  const double h = 1.0 / (kGrid - 1);
  double total = 0.5 * (integrand[0] + integrand[kGrid - 1]);
  for (int k = 1; k < kGrid - 1; ++k) total += integrand[k];
  return total * h;
}

double nll_regression(const Vec& y, const Vec& mean, const Vec& total_variance) {
  const Eigen::Index n = y.size();
  if (n == 0) throw EmptyInput("nll_regression: empty input");
  if (mean.size() != n || total_variance.size() != n) throw DimensionMismatch("nll_regression: size mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = total_variance[i];
    if (!(s > 0.0)) throw DomainError("nll_regression: total variance must be positive");
    const double r = y[i] - mean[i];
    acc += 0.5 * std::log(2.0 * M_PI * s) + r * r / (2.0 * s);
  }
  return acc / static_cast<double>(n);
}

NllResult nll_classification(const std::vector<int>& labels, const Mat& probs) {
  const Eigen::Index n = probs.rows();
  if (n == 0) throw EmptyInput("nll_classification: empty input");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionMismatch("nll_classification: size mismatch");
  NllResult out;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw ClassOutOfRange("nll_classification: label out of range");
    double p = probs(i, y);
    if (p < 1e-12) {
      p = 1e-12;
      out.clamped += 1;
    }
    acc -= std::log(p);
  }
  out.value = acc / static_cast<double>(n);
  return out;
}

namespace {

void check_prob_rows(const Mat& probs) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double s = probs.row(i).sum();
    if (std::abs(s - 1.0) > 1e-6) throw DomainError("probability rows must sum to 1");
  }
}

}  // namespace

double ece(const std::vector<int>& labels, const Mat& probs, int bins) {
  const Eigen::Index n = probs.rows();
  if (n == 0) throw EmptyInput("ece: empty input");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionMismatch("ece: size mismatch");
  if (bins < 1) throw DomainError("ece: bins must be positive");
  check_prob_rows(probs);

  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<Eigen::Index> count(static_cast<std::size_t>(bins), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index pred;
    const double conf = probs.row(i).maxCoeff(&pred);
    int b = static_cast<int>(conf * bins);
    if (b >= bins) b = bins - 1;
    conf_sum[static_cast<std::size_t>(b)] += conf;
    acc_sum[static_cast<std::size_t>(b)] += (pred == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
    count[static_cast<std::size_t>(b)] += 1;
  }
  double out = 0.0;
  for (int b = 0; b < bins; ++b) {
    const auto c = count[static_cast<std::size_t>(b)];
    if (c == 0) continue;
    const double acc = acc_sum[static_cast<std::size_t>(b)] / static_cast<double>(c);
    const double conf = conf_sum[static_cast<std::size_t>(b)] / static_cast<double>(c);
    out += static_cast<double>(c) / static_cast<double>(n) * std::abs(acc - conf);
  }
  return out;
}

double brier(const std::vector<int>& labels, const Mat& probs) {
  const Eigen::Index n = probs.rows();
  if (n == 0) throw EmptyInput("brier: empty input");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionMismatch("brier: size mismatch");
  check_prob_rows(probs);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double t = (labels[static_cast<std::size_t>(i)] == c) ? 1.0 : 0.0;
      const double d = probs(i, c) - t;
      acc += d * d;
    }
  }
  return acc / static_cast<double>(n);
}

Vec predictive_entropy(const Mat& probs) {
  Vec out(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      if (p > 0.0) h -= p * std::log(p);
    }
    out[i] = h;
  }
  return out;
}

double ood_auc(const Vec& in_scores, const Vec& out_scores) {
  const Eigen::Index n_in = in_scores.size();
  const Eigen::Index n_out = out_scores.size();
  if (n_in == 0 || n_out == 0) throw EmptyInput("ood_auc: both score sets must be non-empty");

  struct Item {
    double score;
    bool is_out;
  };
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(n_in + n_out));
  for (Eigen::Index i = 0; i < n_in; ++i) items.push_back({in_scores[i], false});
  for (Eigen::Index i = 0; i < n_out; ++i) items.push_back({out_scores[i], true});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Midranks over tie groups.
  double rank_sum_out = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j + 1 < items.size() && items[j + 1].score == items[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (items[k].is_out) rank_sum_out += midrank;
    i = j + 1;
  }
  const double n_out_d = static_cast<double>(n_out);
  const double u = rank_sum_out - n_out_d * (n_out_d + 1.0) / 2.0;
  return u / (n_out_d * static_cast<double>(n_in));
}

RegressionEval evaluate_regression(const Vec& y, const Vec& mean, const Vec& total_variance) {
  RegressionEval out;
  out.nll = nll_regression(y, mean, total_variance);
  Vec sd = total_variance.array().sqrt();
  double crps_acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) crps_acc += crps_gaussian(y[i], mean[i], sd[i]);
  out.crps = crps_acc / static_cast<double>(y.size());
  out.cqm = cqm(y, mean, sd);
  return out;
}

ClassificationEval evaluate_classification(const std::vector<int>& labels, const Mat& probs) {
  ClassificationEval out;
  const NllResult nll = nll_classification(labels, probs);
  out.nll = nll.value;
  out.nll_clamped = nll.clamped;
  out.ece = ece(labels, probs);
  out.brier = brier(labels, probs);
  return out;
}

}  // namespace fmgp::metrics
