#include <cmath>
#include <limits>
#include <vector>

#include "diffest/common.hpp"
#include "diffest/learn.hpp"
#include "diffest/parallel.hpp"

namespace diffest::learn {

namespace {

constexpr double kTau = 1e-12;

// Dual variables are indexed 0..2n-1: t < n is alpha_t (sign +1), t >= n is
// alpha*_{t-n} (sign -1). Q(t,u) = sign_t * sign_u * K(t%n, u%n).
struct SmoProblem {
  std::size_t n = 0;
  double C = 0.0;
  const linalg::Matrix* kernel = nullptr;

  double sign(std::size_t t) const { return t < n ? 1.0 : -1.0; }
  std::size_t point(std::size_t t) const { return t < n ? t : t - n; }
  double q(std::size_t t, std::size_t u) const {
    return sign(t) * sign(u) * kernel->at(point(t), point(u));
  }
};

}  // namespace

TrainedModel train_svr(const linalg::Matrix& X, const std::vector<double>& y,
                       const SvrConfig& config) {
  if (X.rows != y.size()) throw Error("train_svr: row/target mismatch");
  if (X.rows == 0 || X.cols == 0) throw Error("train_svr: empty design matrix");
  if (config.C <= 0.0) throw Error("train_svr: C must be positive");
  if (config.epsilon < 0.0) throw Error("train_svr: negative epsilon");
  if (config.gamma <= 0.0) throw Error("train_svr: gamma must be positive");

  TrainedModel model;
  model.family = Family::svr;
  model.hyperparameters = {{"C", config.C}, {"epsilon", config.epsilon}, {"gamma", config.gamma}};
  model.scaler.fit(X);
  const linalg::Matrix Xs = model.scaler.apply(X);
  const std::size_t n = Xs.rows;

  // RBF kernel matrix; rows are independent slots, safe to fill in parallel.
  linalg::Matrix K(n, n);
  parallel_for(n, [&](std::size_t i) {
    K.at(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) {
      const double k =
          std::exp(-config.gamma * linalg::squared_distance(Xs.row(i), Xs.row(j), Xs.cols));
      K.at(i, j) = k;
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) K.at(j, i) = K.at(i, j);
  }

  SmoProblem prob{n, config.C, &K};
  const std::size_t m = 2 * n;
  std::vector<double> alpha(m, 0.0);
  std::vector<double> grad(m);  // gradient of the dual objective
  for (std::size_t t = 0; t < n; ++t) grad[t] = config.epsilon - y[t];
  for (std::size_t t = n; t < m; ++t) grad[t] = config.epsilon + y[t - n];

  long iterations = 0;
  double violation = 0.0;
  for (;;) {
    // Maximal violating pair.
    double g_max = -std::numeric_limits<double>::infinity();
    double g_min = std::numeric_limits<double>::infinity();
    std::size_t i = m, j = m;
    for (std::size_t t = 0; t < m; ++t) {
      const double s = prob.sign(t);
      const bool in_up = (s > 0 && alpha[t] < config.C) || (s < 0 && alpha[t] > 0.0);
      const bool in_low = (s > 0 && alpha[t] > 0.0) || (s < 0 && alpha[t] < config.C);
      const double v = -s * grad[t];
      if (in_up && v > g_max) {
        g_max = v;
        i = t;
      }
      if (in_low && v < g_min) {
        g_min = v;
        j = t;
      }
    }
    violation = g_max - g_min;
    if (violation <= config.kkt_tol || i == m || j == m) break;
    if (++iterations > config.max_iterations) {
      throw Error("train_svr: no convergence after " + std::to_string(config.max_iterations) +
                  " iterations, KKT violation " + format_double(violation));
    }

    const double old_i = alpha[i];
    const double old_j = alpha[j];
    if (prob.sign(i) != prob.sign(j)) {
      double quad = 2.0 + 2.0 * prob.q(i, j);  // Q_ii + Q_jj + 2 Q_ij, diag = 1
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else {
        if (alpha[i] < 0.0) {
          alpha[i] = 0.0;
          alpha[j] = -diff;
        }
      }
      if (diff > 0.0) {
        if (alpha[i] > config.C) {
          alpha[i] = config.C;
          alpha[j] = config.C - diff;
        }
      } else {
        if (alpha[j] > config.C) {
          alpha[j] = config.C;
          alpha[i] = config.C + diff;
        }
      }
    } else {
      double quad = 2.0 - 2.0 * prob.q(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > config.C) {
        if (alpha[i] > config.C) {
          alpha[i] = config.C;
          alpha[j] = sum - config.C;
        }
      } else {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = sum;
        }
      }
      if (sum > config.C) {
        if (alpha[j] > config.C) {
          alpha[j] = config.C;
          alpha[i] = sum - config.C;
        }
      } else {
        if (alpha[i] < 0.0) {
          alpha[i] = 0.0;
          alpha[j] = sum;
        }
      }
    }

    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    if (di != 0.0 || dj != 0.0) {
      for (std::size_t t = 0; t < m; ++t) {
        grad[t] += prob.q(t, i) * di + prob.q(t, j) * dj;
      }
    }
  }

  // Offset from the free variables, midpoint of the bounds otherwise.
  double upper = std::numeric_limits<double>::infinity();
  double lower = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < m; ++t) {
    const double s = prob.sign(t);
    const double sg = s * grad[t];
    if (alpha[t] >= config.C) {
      if (s < 0) upper = std::min(upper, sg);
      else lower = std::max(lower, sg);
    } else if (alpha[t] <= 0.0) {
      if (s > 0) upper = std::min(upper, sg);
      else lower = std::max(lower, sg);
    } else {
      ++n_free;
      sum_free += sg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (upper + lower) / 2.0;

  model.svr.bias = -rho;
  model.svr.support_vectors = Xs;
  model.svr.dual_coef.resize(n);
  for (std::size_t t = 0; t < n; ++t) model.svr.dual_coef[t] = alpha[t] - alpha[t + n];
  model.svr.iterations = static_cast<int>(iterations);
  return model;
}

}  // namespace diffest::learn
