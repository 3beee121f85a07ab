#include "ahm/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace ahm {

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_fit needs >= 2 points");
  const int n = static_cast<int>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("degenerate abscissa in linear_fit");
  LinearFit f;
  f.n = n;
  f.slope = (n * sxy - sx * sy) / denom;
  f.intercept = (sy - f.slope * sx) / n;
  double ss = 0, yy = 0;
  for (int i = 0; i < n; ++i) {
    double r = y[i] - (f.intercept + f.slope * x[i]);
    ss += r * r;
    yy += y[i] * y[i];
  }
  f.rms_residual = std::sqrt(ss / n);
  f.relative_residual = yy > 0 ? std::sqrt(ss / yy) : 0.0;
  return f;
}

JackknifeEstimate jackknife(const std::vector<double>& bins) {
  JackknifeEstimate e;
  e.bins = static_cast<int>(bins.size());
  if (e.bins < 2) throw std::invalid_argument("jackknife needs >= 2 bins");
  double total = 0.0;
  for (double b : bins) total += b;
  e.mean = total / e.bins;
  double ss = 0.0;
  for (double b : bins) {
    double loo = (total - b) / (e.bins - 1);
    ss += (loo - e.mean) * (loo - e.mean);
  }
  e.error = std::sqrt(ss * (e.bins - 1) / e.bins);
  return e;
}

JackknifeEstimate jackknife_derived(
    int nbins, const std::function<double(const std::vector<char>&)>& estimate) {
  if (nbins < 2) throw std::invalid_argument("jackknife needs >= 2 bins");
  std::vector<char> mask(nbins, 1);
  double full = estimate(mask);
  std::vector<double> loo(nbins);
  for (int i = 0; i < nbins; ++i) {
    mask[i] = 0;
    loo[i] = estimate(mask);
    mask[i] = 1;
  }
  double lm = 0.0;
  for (double v : loo) lm += v;
  lm /= nbins;
  double ss = 0.0;
  for (double v : loo) ss += (v - lm) * (v - lm);
  JackknifeEstimate e;
  e.bins = nbins;
  e.mean = full;
  e.error = std::sqrt(ss * (nbins - 1) / nbins);
  return e;
}

double integrated_autocorrelation_time(const std::vector<double>& series) {
  const int n = static_cast<int>(series.size());
  if (n < 8) return 1.0;
  double m = mean(series);
  double var = 0.0;
  for (double v : series) var += (v - m) * (v - m);
  var /= n;
  if (var <= 0.0) return 1.0;
  double tau = 0.5;
  for (int t = 1; t < n / 2; ++t) {
    double c = 0.0;
    for (int i = 0; i + t < n; ++i) c += (series[i] - m) * (series[i + t] - m);
    c /= (n - t) * var;
    tau += c;
    if (t >= 6.0 * tau) break;  // self-consistent window
    if (c < 0.0) break;
  }
  return std::max(0.5, tau);
}

PlateauFit plateau_average(const std::vector<double>& y, const std::vector<double>& err) {
  if (y.size() != err.size() || y.empty()) throw std::invalid_argument("plateau_average input");
  PlateauFit f;
  double sw = 0, swy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double w = 1.0 / (err[i] * err[i]);
    sw += w;
    swy += w * y[i];
  }
  f.value = swy / sw;
  f.error = std::sqrt(1.0 / sw);
  f.points = static_cast<int>(y.size());
  double chi2 = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double r = (y[i] - f.value) / err[i];
    chi2 += r * r;
  }
  f.chi2_dof = y.size() > 1 ? chi2 / (y.size() - 1) : 0.0;
  return f;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

double variance(const std::vector<double>& v) {
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : s / v.size();
}

}  // namespace ahm
