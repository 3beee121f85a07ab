#pragma once

// Couplings and action functionals of the lattice Abelian Higgs model:
// non-compact and Villain gauge actions, minimally coupled Higgs action,
// the polar-shifted action, gauge fixing and plaquette sources.

#include <complex>
#include <cstdint>
#include <optional>

#include "ahm/lattice.hpp"

namespace ahm {

struct DerivedConstants {
  double m_A = 0.0;   // mu e0 / sqrt(8 lambda)
  double rho0 = 0.0;  // mu / sqrt(8 lambda)
  double E = 0.0;     // mu^4 / (64 lambda), vacuum energy scaled to zero
};

struct Couplings {
  double e0 = 0.2;      // gauge coupling
  double lambda = 0.005;  // quartic coupling
  double mu = 2.0;      // Higgs mass parameter
  double alpha = 1.0;   // gauge-fixing parameter
  // E is derived from the vacuum-energy-zero condition, not configured.
  // Override only for experiments.
  std::optional<double> E_override;

  double m_A() const;
  double rho0() const;
  double E() const;
  DerivedConstants derived() const;

  // lambda << 1, e0^2 << 1, e0^2/lambda = O(1)
  bool weak_coupling_regime() const;

  void validate() const;  // throws on non-positive couplings
};

DerivedConstants derived_constants(const Couplings& c);

struct GaugeHiggsConfig {
  ComplexForm phi;  // complex 0-form
  Form A;           // 1-form; |A_b| <= pi/e0 when compact
  Form v;           // 2-form with values in (2pi/e0) Z
  bool compact = false;
};

struct SourceField {
  ComplexForm J;        // complex 2-form
  double alpha_p = 0.0;  // sup_p |J(p)|, must stay < 1

  void validate() const;
};

// Config invariants: compact range of A, vortex quantization, and dv = 0 on
// every cube in d = 3 (vacuous in d = 2).
bool config_valid(const LatticeGeometry& g, const Couplings& c, const GaugeHiggsConfig& cfg,
                  double tol = 1e-9);

// S_NC(A) = 1/2 sum_p (dA)^2(p).
double action_noncompact(const LatticeGeometry& g, const Form& A);

// S_h(phi, A) = 1/2 sum_<xy> |e^{i e0 A} phi(y) - phi(x)|^2
//              + sum_x (lambda |phi|^4 - mu^2 |phi|^2 / 4 + E).
// The hopping sum runs over interior bonds.
double action_higgs(const LatticeGeometry& g, const Couplings& c, const ComplexForm& phi,
                    const Form& A);

// One vortex term of the Villain sum: 1/2 sum_p (dA(p) + v(p))^2.
// Throws if v is not in (2pi/e0) Z or (d = 3) dv != 0.
double villain_weight(const LatticeGeometry& g, const Couplings& c, const Form& A, const Form& v);

// The polar-shifted action with the log Jacobian term, evaluated as written:
//   1/2 sum_p (dA+v)^2 + m_A^2/2 sum_b A^2 + 1/2 sum_<xy> (drho)^2
// + mu^2/2 sum_x rho^2 + rho0^2 sum_b (1 - cos e0 A - e0^2 A^2 / 2)
// + rho0 sum_<xy> (rho(y)+rho(x))(1 - cos e0 A)
// + sum_<xy> rho(y) rho(x) (1 - cos e0 A)
// + sum_x (lambda rho^4 + sqrt(2 lambda) mu rho^3 - log[1 + rho/rho0]).
// Domain: rho > -rho0 everywhere.
double action_shifted(const LatticeGeometry& g, const Couplings& c, const Form& rho, const Form& A,
                      const Form& v);

// Gauge fixing G(A) = alpha/2 ||delta A||^2 + c with c from the unit
// normalization over theta, theta(x0) = 0.
double gauge_fix_constant(const LatticeGeometry& g, double alpha, int x0);
double gauge_fixing(const LatticeGeometry& g, const Couplings& c, const Form& A, int x0);

// Monte Carlo oracle for the normalization: the importance-sampling ratio
//   E_theta[ exp(-alpha/2 (||delta A + delta d theta||^2 - ||delta d theta||^2)) ]
// equals 1 for every A when c is correct. Returns (mean, sigma).
struct McEstimate {
  double mean = 0.0;
  double sigma = 0.0;
};
McEstimate gauge_average_ratio_mc(const LatticeGeometry& g, double alpha, int x0, const Form& A,
                                  int samples, std::uint64_t seed);

// e0 <dA + v, J>; the identity <dA,J> = <A, delta J> holds by adjointness.
std::complex<double> source_pairing(const LatticeGeometry& g, const Couplings& c, const Form& A,
                                    const Form& v, const SourceField& J);

// Constants dropped from the partition function, tracked explicitly so
// normalization comparisons are exact.
struct NormalizationLedger {
  double theta_volume_log = 0.0;     // |Lambda| log(2 pi)
  double polar_jacobian_log = 0.0;   // |Lambda| log(rho0)
  double dropped_total_log = 0.0;    // |Lambda| log(2 pi rho0)
  double compact_prefactor_log = 0.0;  // (-|Lambda|+1) log(2 pi / e0)
};
NormalizationLedger normalization_ledger(const LatticeGeometry& g, const Couplings& c);

}  // namespace ahm
