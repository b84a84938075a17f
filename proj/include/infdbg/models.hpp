#pragma once

// Canonical models with closed-form log densities and gradients on an
// unconstrained parameter vector. Positive parameters are sampled on the log
// scale with the Jacobian term included.

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "infdbg/error.hpp"
#include "infdbg/model.hpp"

namespace infdbg {

/// Log density (up to a constant) and gradient over an unconstrained vector,
/// plus the map back to the named draws the engine receives.
class DensityModel {
 public:
  virtual ~DensityModel() = default;
  virtual std::size_t dimension() const = 0;
  virtual double log_density(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> grad) const = 0;
  /// Flattened draws per latent/deterministic variable, descriptor order.
  virtual std::map<std::string, std::vector<double>> constrain(std::span<const double> x) const = 0;
};

struct BuiltinModel {
  std::string name;
  ModelDescriptor descriptor;
  std::shared_ptr<const DensityModel> density;
};

namespace models {

// Coaching-effect study of eight schools (Rubin, 1981): estimated effects and
// their standard errors. Fixture constants for the demos.
inline constexpr std::array<double, 8> kSchoolEffects = {28, 8, -3, 7, -1, 1, 18, 12};
inline constexpr std::array<double, 8> kSchoolErrors = {15, 10, 16, 11, 9, 11, 10, 18};

// Synthetic regression data: x = -2.5 + 0.25 i, y ~ 1.5 + 0.8 x + N(0, 0.5).
inline constexpr std::array<double, 20> kRegressionY = {
    -0.483, 0.380, 0.512, -0.155, 0.151, 0.236, 0.985, 0.872, 1.473, 0.376,
    2.283,  1.652, 2.240, 2.032,  2.110, 2.732, 3.112, 2.799, 3.024, 3.643};
inline double regression_x(std::size_t i) { return -2.5 + 0.25 * static_cast<double>(i); }

inline VariableDecl decl(std::string name, VariableKind kind, std::optional<std::string> dist,
                         std::vector<std::size_t> shape, Support support, const char* file, int line) {
  return {std::move(name), kind, std::move(dist), std::move(shape), support, SourceSpan{file, line, line}};
}

/// mu ~ Normal(0, 10); tau ~ HalfCauchy(5); theta[i] ~ Normal(mu, tau); y[i] ~ Normal(theta[i], sigma[i]).
/// Unconstrained vector: [mu, log tau, theta[0..7]].
class EightSchoolsCentered final : public DensityModel {
 public:
  std::size_t dimension() const override { return 10; }

  double log_density(std::span<const double> x) const override {
    const double mu = x[0], log_tau = x[1], tau = std::exp(log_tau);
    double lp = -mu * mu / 200.0 - std::log1p(tau * tau / 25.0) + log_tau;
    for (std::size_t i = 0; i < 8; ++i) {
      const double th = x[2 + i];
      const double d = th - mu;
      const double r = kSchoolEffects[i] - th;
      lp += -log_tau - d * d / (2 * tau * tau) - r * r / (2 * kSchoolErrors[i] * kSchoolErrors[i]);
    }
    return lp;
  }

  void gradient(std::span<const double> x, std::span<double> g) const override {
    const double mu = x[0], tau = std::exp(x[1]), tau2 = tau * tau;
    g[0] = -mu / 100.0;
    g[1] = -(2.0 * tau2 / 25.0) / (1.0 + tau2 / 25.0) + 1.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const double th = x[2 + i];
      const double d = th - mu;
      g[0] += d / tau2;
      g[1] += -1.0 + d * d / tau2;
      g[2 + i] = -d / tau2 + (kSchoolEffects[i] - th) / (kSchoolErrors[i] * kSchoolErrors[i]);
    }
  }

  std::map<std::string, std::vector<double>> constrain(std::span<const double> x) const override {
    return {{"mu", {x[0]}}, {"tau", {std::exp(x[1])}}, {"theta", std::vector<double>(x.begin() + 2, x.end())}};
  }
};

/// Same model with theta = mu + tau * Z, Z[i] ~ Normal(0, 1).
/// Unconstrained vector: [mu, log tau, Z[0..7]].
class EightSchoolsNonCentered final : public DensityModel {
 public:
  std::size_t dimension() const override { return 10; }

  double log_density(std::span<const double> x) const override {
    const double mu = x[0], log_tau = x[1], tau = std::exp(log_tau);
    double lp = -mu * mu / 200.0 - std::log1p(tau * tau / 25.0) + log_tau;
    for (std::size_t i = 0; i < 8; ++i) {
      const double z = x[2 + i];
      const double r = kSchoolEffects[i] - (mu + tau * z);
      lp += -z * z / 2 - r * r / (2 * kSchoolErrors[i] * kSchoolErrors[i]);
    }
    return lp;
  }

  void gradient(std::span<const double> x, std::span<double> g) const override {
    const double mu = x[0], tau = std::exp(x[1]), tau2 = tau * tau;
    g[0] = -mu / 100.0;
    g[1] = -(2.0 * tau2 / 25.0) / (1.0 + tau2 / 25.0) + 1.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const double z = x[2 + i];
      const double w = (kSchoolEffects[i] - (mu + tau * z)) / (kSchoolErrors[i] * kSchoolErrors[i]);
      g[0] += w;
      g[1] += w * z * tau;
      g[2 + i] = -z + w * tau;
    }
  }

  std::map<std::string, std::vector<double>> constrain(std::span<const double> x) const override {
    const double mu = x[0], tau = std::exp(x[1]);
    std::vector<double> z(x.begin() + 2, x.end()), theta(8);
    for (std::size_t i = 0; i < 8; ++i) theta[i] = mu + tau * z[i];
    return {{"mu", {mu}}, {"tau", {tau}}, {"Z", z}, {"theta", theta}};
  }
};

/// y ~ Normal(0, 3); x[i] ~ Normal(0, exp(y / 2)), nine of them.
class NealFunnel final : public DensityModel {
 public:
  static constexpr std::size_t kWidth = 9;
  std::size_t dimension() const override { return kWidth + 1; }

  double log_density(std::span<const double> v) const override {
    const double y = v[0];
    double lp = -y * y / 18.0;
    const double inv_var = std::exp(-y);
    for (std::size_t i = 1; i <= kWidth; ++i) lp += -y / 2.0 - v[i] * v[i] * inv_var / 2.0;
    return lp;
  }

  void gradient(std::span<const double> v, std::span<double> g) const override {
    const double y = v[0];
    const double inv_var = std::exp(-y);
    g[0] = -y / 9.0;
    for (std::size_t i = 1; i <= kWidth; ++i) {
      g[0] += -0.5 + v[i] * v[i] * inv_var / 2.0;
      g[i] = -v[i] * inv_var;
    }
  }

  std::map<std::string, std::vector<double>> constrain(std::span<const double> v) const override {
    return {{"y", {v[0]}}, {"x_scale", {std::exp(v[0] / 2.0)}}, {"x", std::vector<double>(v.begin() + 1, v.end())}};
  }
};

/// y[i] ~ Normal(alpha + beta x[i], sigma); alpha, beta ~ Normal(0, 10); sigma ~ HalfNormal(5).
/// Unconstrained vector: [alpha, beta, log sigma].
class LinearRegression final : public DensityModel {
 public:
  std::size_t dimension() const override { return 3; }

  double log_density(std::span<const double> v) const override {
    const double a = v[0], b = v[1], log_s = v[2], s = std::exp(log_s);
    double lp = -a * a / 200.0 - b * b / 200.0 - s * s / 50.0 + log_s;
    for (std::size_t i = 0; i < kRegressionY.size(); ++i) {
      const double r = kRegressionY[i] - a - b * regression_x(i);
      lp += -log_s - r * r / (2 * s * s);
    }
    return lp;
  }

  void gradient(std::span<const double> v, std::span<double> g) const override {
    const double a = v[0], b = v[1], s = std::exp(v[2]), s2 = s * s;
    g[0] = -a / 100.0;
    g[1] = -b / 100.0;
    g[2] = -s2 / 25.0 + 1.0;
    for (std::size_t i = 0; i < kRegressionY.size(); ++i) {
      const double xi = regression_x(i);
      const double r = kRegressionY[i] - a - b * xi;
      g[0] += r / s2;
      g[1] += r * xi / s2;
      g[2] += -1.0 + r * r / s2;
    }
  }

  std::map<std::string, std::vector<double>> constrain(std::span<const double> v) const override {
    return {{"alpha", {v[0]}}, {"beta", {v[1]}}, {"sigma", {std::exp(v[2])}}};
  }
};

}  // namespace models

inline std::vector<std::string> builtin_model_names() {
  return {"linreg", "eight_schools_centered", "eight_schools_noncentered", "neal_funnel"};
}

inline BuiltinModel builtin_model(std::string_view name) {
  using models::decl;
  using K = VariableKind;
  using S = Support;
  BuiltinModel m;
  m.name = std::string(name);
  if (name == "eight_schools_centered") {
    const char* f = "eight_schools.py";
    m.descriptor.variables = {decl("mu", K::latent, "Normal", {}, S::real, f, 2),
                              decl("tau", K::latent, "HalfCauchy", {}, S::positive, f, 3),
                              decl("theta", K::latent, "Normal", {8}, S::real, f, 5),
                              decl("y", K::observed, "Normal", {8}, S::real, f, 6)};
    m.descriptor.variables[2].source_span = SourceSpan{f, 4, 5};
    m.descriptor.edges = {{"mu", "theta", Slot::location}, {"tau", "theta", Slot::scale},
                          {"theta", "y", Slot::location}};
    m.density = std::make_shared<models::EightSchoolsCentered>();
  } else if (name == "eight_schools_noncentered") {
    const char* f = "eight_schools_noncentered.py";
    m.descriptor.variables = {decl("mu", K::latent, "Normal", {}, S::real, f, 2),
                              decl("tau", K::latent, "HalfCauchy", {}, S::positive, f, 3),
                              decl("Z", K::latent, "Normal", {8}, S::real, f, 4),
                              decl("theta", K::deterministic, std::nullopt, {8}, S::real, f, 5),
                              decl("y", K::observed, "Normal", {8}, S::real, f, 6)};
    m.descriptor.edges = {{"mu", "theta", Slot::deterministic_input},
                          {"tau", "theta", Slot::deterministic_input},
                          {"Z", "theta", Slot::deterministic_input},
                          {"theta", "y", Slot::location}};
    m.density = std::make_shared<models::EightSchoolsNonCentered>();
  } else if (name == "neal_funnel") {
    const char* f = "funnel.py";
    m.descriptor.variables = {decl("y", K::latent, "Normal", {}, S::real, f, 2),
                              decl("x_scale", K::deterministic, std::nullopt, {}, S::positive, f, 3),
                              decl("x", K::latent, "Normal", {models::NealFunnel::kWidth}, S::real, f, 4)};
    m.descriptor.edges = {{"y", "x_scale", Slot::deterministic_input}, {"x_scale", "x", Slot::scale}};
    m.density = std::make_shared<models::NealFunnel>();
  } else if (name == "linreg") {
    const char* f = "linreg.py";
    m.descriptor.variables = {decl("alpha", K::latent, "Normal", {}, S::real, f, 2),
                              decl("beta", K::latent, "Normal", {}, S::real, f, 3),
                              decl("sigma", K::latent, "HalfNormal", {}, S::positive, f, 4),
                              decl("y", K::observed, "Normal", {models::kRegressionY.size()}, S::real, f, 5)};
    m.descriptor.edges = {{"alpha", "y", Slot::location}, {"beta", "y", Slot::location}, {"sigma", "y", Slot::scale}};
    m.density = std::make_shared<models::LinearRegression>();
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown model \"" + std::string(name) + "\"");
  }
  return m;
}

/// max_i |g_i - g^_i| / (|g_i| + 1e-8) with g^ the central difference of step h.
inline double gradient_check(const DensityModel& model, std::span<const double> point, double h = 1e-5) {
  const std::size_t n = model.dimension();
  std::vector<double> g(n), x(point.begin(), point.end());
  model.gradient(x, g);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = model.log_density(x);
    x[i] = orig - h;
    const double down = model.log_density(x);
    x[i] = orig;
    const double fd = (up - down) / (2 * h);
    if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(g[i]))
      throw Error(ErrorCode::invalid_argument, "non-finite value in gradient check at coordinate " + std::to_string(i));
    worst = std::max(worst, std::abs(g[i] - fd) / (std::abs(g[i]) + 1e-8));
  }
  return worst;
}

}  // namespace infdbg
