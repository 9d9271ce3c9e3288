#pragma once

namespace knnproc {

// Constants feeding the finite-sample bounds. kappa() and theta() are the
// derived quantities U_X/(c b_X) and d + 1 + v.
struct BoundInputs {
  int d = 1;
  long n = 1;
  long k = 1;
  double delta = 0.05;

  double vc_v = 2.0;  // VC exponent v
  double vc_a = 2.0;  // VC constant A >= 1
  double sigma_g2 = 0.25;  // sup conditional variance over the class
  double lipschitz = 0.0;  // uniform Lipschitz constant L

  double density_lower = 1.0;    // b_X
  double density_upper = 1.0;    // U_X
  double support_c = 0.5;        // c
  double support_horizon = 0.5;  // T
  double ball_volume = 2.0;      // V_d
  double big_k = 1.0;            // universal-constant stand-in K
  double density_at_x = 1.0;     // f_X(x) for the pointwise radius

  double theta() const { return d + 1 + vc_v; }
  double kappa() const { return density_upper / (support_c * density_lower); }
  void validate() const;  // throws std::invalid_argument
};

// Population-equivalent k-NN radius (k / (n f_x V_d))^{1/d}.
double deterministic_radius(const BoundInputs& in);

// High-probability uniform cap (2k / (n b_X c V_d))^{1/d}.
double uniform_radius_bound(const BoundInputs& in);

struct KWindow {
  double k_min = 0;         // 24 d log(24 n / delta)
  double k_max = 0;         // n min{ 8/(sigma_G^2 kappa), T^d b_X c V_d / 2 }
  double k_min_radius = 0;  // 24 d log(12 n / delta): from here up the radius cap holds
  bool empty() const { return k_min > k_max; }
};

KWindow admissible_k_window(const BoundInputs& in);
bool within_k_window(const BoundInputs& in);

// Uniform error bound: K ( sqrt(sigma_G^2 (theta/k) log(K A n / delta))
//   + (theta/k) log(K A n / delta) + L (k / (n c b_X V_d))^{1/d} ).
double uniform_error_bound(const BoundInputs& in);

// Binomial concentration: with probability >= 1 - delta the count stays
// above/below these. The lower bracket may be negative and is returned
// as-is.
double chernoff_lower(double mu, double delta);
double chernoff_upper(double mu, double delta);

// Guaranteed lower bound on the empirical mass of every ball:
// P(B) (1 - sqrt(12 d log(12 n / delta) / (n P(B)))).
double uniform_ball_bound(double p_ball, long n, int d, double delta);

// K' (sigma sqrt(v n log(K' theta / delta)) + U v log(K' theta / delta))
// with theta = A U / sigma. Requires sigma <= 2U.
double vc_concentration_bound(long n, double v, double a, double u, double sigma, double delta,
                              double k_prime);

}  // namespace knnproc
