#include "pomega/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace pomega::numerics {

double bessel_j0(double x) { return std::cyl_bessel_j(0.0, std::abs(x)); }

double bessel_j1(double x) {
  const double v = std::cyl_bessel_j(1.0, std::abs(x));
  return x < 0.0 ? -v : v;
}

GaussLegendreRule gauss_legendre(int order) {
  if (order < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
  GaussLegendreRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= order; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = order * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // recompute derivative at the converged node
    double p0 = 1.0, p1 = 0.0;
    for (int k = 1; k <= order; ++k) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
    }
    dp = order * (z * p0 - p1) / (z * z - 1.0);
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.nodes[i] = -z;
    rule.nodes[order - 1 - i] = z;
    rule.weights[i] = w;
    rule.weights[order - 1 - i] = w;
  }
  return rule;
}

namespace {

const GaussLegendreRule& rule15() {
  static const GaussLegendreRule r = gauss_legendre(15);
  return r;
}

double panel(const std::function<double(double)>& f, double a, double b) {
  const auto& r = rule15();
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double s = 0.0;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * f(mid + half * r.nodes[i]);
  return s * half;
}

double adapt(const std::function<double(double)>& f, double a, double b, double whole, double tol,
             double floor, int depth, bool& ok) {
  const double mid = 0.5 * (a + b);
  const double left = panel(f, a, mid);
  const double right = panel(f, mid, b);
  const double both = left + right;
  if (std::abs(both - whole) <= std::max(tol, floor)) return both;
  if (depth <= 0) {
    ok = false;
    return both;
  }
  return adapt(f, a, mid, left, 0.5 * tol, floor, depth - 1, ok) +
         adapt(f, mid, b, right, 0.5 * tol, floor, depth - 1, ok);
}

}  // namespace

double integrate(const std::function<double(double)>& f, double a, double b, double rel_tol,
                 double abs_tol, int max_depth) {
  if (a == b) return 0.0;
  // coarse pass fixes the absolute target from the integral magnitude
  constexpr int kCoarse = 8;
  double coarse = 0.0;
  double coarse_abs = 0.0;
  std::vector<double> pieces(kCoarse);
  for (int i = 0; i < kCoarse; ++i) {
    const double lo = a + (b - a) * i / kCoarse;
    const double hi = a + (b - a) * (i + 1) / kCoarse;
    pieces[i] = panel(f, lo, hi);
    coarse += pieces[i];
    coarse_abs += std::abs(pieces[i]);
  }
  const double tol = std::max(abs_tol, rel_tol * std::max(std::abs(coarse), 1e-3 * coarse_abs));
  // panels cannot resolve differences below rounding of the summed magnitude
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * coarse_abs;
  bool ok = true;
  double total = 0.0;
  for (int i = 0; i < kCoarse; ++i) {
    const double lo = a + (b - a) * i / kCoarse;
    const double hi = a + (b - a) * (i + 1) / kCoarse;
    total += adapt(f, lo, hi, pieces[i], tol / kCoarse, floor, max_depth, ok);
  }
  if (!ok) throw ConvergenceError("integrate: maximum subdivision depth reached");
  return total;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int default_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
  if (jobs <= 0) jobs = default_jobs();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace pomega::numerics
