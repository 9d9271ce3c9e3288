#include "knnproc/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace knnproc {

void BoundInputs::validate() const {
  if (d < 1) throw std::invalid_argument("d must be positive");
  if (n < 1) throw std::invalid_argument("n must be positive");
  if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, n]");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  if (!(vc_v > 0)) throw std::invalid_argument("v must be positive");
  if (!(vc_a >= 1)) throw std::invalid_argument("A must be at least 1");
  if (!(sigma_g2 >= 0)) throw std::invalid_argument("sigma_G^2 must be nonnegative");
  if (!(lipschitz >= 0)) throw std::invalid_argument("L must be nonnegative");
  if (!(density_lower > 0) || !(density_upper >= density_lower))
    throw std::invalid_argument("need 0 < b_X <= U_X");
  if (!(support_c > 0.0 && support_c <= 1.0)) throw std::invalid_argument("c must be in (0,1]");
  if (!(support_horizon > 0)) throw std::invalid_argument("T must be positive");
  if (!(ball_volume > 0)) throw std::invalid_argument("V_d must be positive");
  if (!(big_k >= 1)) throw std::invalid_argument("K must be at least 1");
}

double deterministic_radius(const BoundInputs& in) {
  if (!(in.density_at_x > 0)) throw std::invalid_argument("f_x must be positive");
  const double kd = static_cast<double>(in.k);
  const double nd = static_cast<double>(in.n);
  return std::pow(kd / (nd * in.density_at_x * in.ball_volume), 1.0 / in.d);
}

double uniform_radius_bound(const BoundInputs& in) {
  const double kd = static_cast<double>(in.k);
  const double nd = static_cast<double>(in.n);
  return std::pow(2.0 * kd / (nd * in.density_lower * in.support_c * in.ball_volume),
                  1.0 / in.d);
}

KWindow admissible_k_window(const BoundInputs& in) {
  const double nd = static_cast<double>(in.n);
  KWindow w;
  w.k_min = 24.0 * in.d * std::log(24.0 * nd / in.delta);
  w.k_min_radius = 24.0 * in.d * std::log(12.0 * nd / in.delta);
  const double variance_cap = in.sigma_g2 > 0
                                  ? 8.0 / (in.sigma_g2 * in.kappa())
                                  : std::numeric_limits<double>::infinity();
  const double radius_cap = std::pow(in.support_horizon, in.d) * in.density_lower * in.support_c *
                            in.ball_volume / 2.0;
  w.k_max = nd * std::min(variance_cap, radius_cap);
  return w;
}

bool within_k_window(const BoundInputs& in) {
  const KWindow w = admissible_k_window(in);
  const double kd = static_cast<double>(in.k);
  return !w.empty() && kd >= w.k_min && kd <= w.k_max;
}

double uniform_error_bound(const BoundInputs& in) {
  const double kd = static_cast<double>(in.k);
  const double nd = static_cast<double>(in.n);
  const double log_term = std::log(in.big_k * in.vc_a * nd / in.delta);
  const double rate = in.theta() / kd * log_term;
  const double bias = in.lipschitz *
                      std::pow(kd / (nd * in.support_c * in.density_lower * in.ball_volume),
                               1.0 / in.d);
  return in.big_k * (std::sqrt(in.sigma_g2 * rate) + rate + bias);
}

double chernoff_lower(double mu, double delta) {
  if (!(mu > 0)) throw std::invalid_argument("mu must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  return (1.0 - std::sqrt(2.0 * std::log(1.0 / delta) / mu)) * mu;
}

double chernoff_upper(double mu, double delta) {
  if (!(mu > 0)) throw std::invalid_argument("mu must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  return (1.0 + std::sqrt(3.0 * std::log(1.0 / delta) / mu)) * mu;
}

double uniform_ball_bound(double p_ball, long n, int d, double delta) {
  if (!(p_ball > 0.0 && p_ball <= 1.0)) throw std::invalid_argument("P(B) must be in (0,1]");
  if (n < 1) throw std::invalid_argument("n must be positive");
  if (d < 1) throw std::invalid_argument("d must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  const double nd = static_cast<double>(n);
  return p_ball * (1.0 - std::sqrt(12.0 * d * std::log(12.0 * nd / delta) / (nd * p_ball)));
}

double vc_concentration_bound(long n, double v, double a, double u, double sigma, double delta,
                              double k_prime) {
  if (n < 1) throw std::invalid_argument("n must be positive");
  if (!(v > 0) || !(a >= 1)) throw std::invalid_argument("need v > 0 and A >= 1");
  if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
  if (sigma > 2.0 * u) throw std::invalid_argument("requires sigma <= 2U");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  if (!(k_prime >= 1)) throw std::invalid_argument("K' must be at least 1");
  const double theta = a * u / sigma;
  const double log_term = std::log(k_prime * theta / delta);
  const double nd = static_cast<double>(n);
  return k_prime * (sigma * std::sqrt(v * nd * log_term) + u * v * log_term);
}

}  // namespace knnproc
