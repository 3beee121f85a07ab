#pragma once

// Fitting and resampling helpers shared by the verification suites.

#include <cstddef>
#include <functional>
#include <vector>

namespace ahm {

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  // root-mean-square residual of the fit, and the same relative to the
  // RMS of the data values.
  double rms_residual = 0.0;
  double relative_residual = 0.0;
  int n = 0;
};

// Least-squares fit y = intercept + slope * x.
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

struct JackknifeEstimate {
  double mean = 0.0;
  double error = 0.0;
  int bins = 0;
};

// Jackknife mean/error of pre-binned scalar data.
JackknifeEstimate jackknife(const std::vector<double>& bins);

// Jackknife of a derived quantity: estimate(mask) must evaluate the
// statistic on all bins with mask[i] == 1.
JackknifeEstimate jackknife_derived(int nbins,
                                    const std::function<double(const std::vector<char>&)>& estimate);

// Integrated autocorrelation time of a scalar series (windowed sum,
// self-consistent cutoff at 6 tau).
double integrated_autocorrelation_time(const std::vector<double>& series);

// Weighted average of y with errors e; returns (mean, error, chi2/dof).
struct PlateauFit {
  double value = 0.0;
  double error = 0.0;
  double chi2_dof = 0.0;
  int points = 0;
};
PlateauFit plateau_average(const std::vector<double>& y, const std::vector<double>& err);

double mean(const std::vector<double>& v);
double variance(const std::vector<double>& v);

}  // namespace ahm
