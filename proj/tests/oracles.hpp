#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

// Reference arithmetic used by the unit tests, written without the library.
namespace oracle {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline std::vector<double> softmax(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) s += (p[k] = std::exp(z[k] - mx));
  for (auto& v : p) v /= s;
  return p;
}

// y = W x + b with W stored row-major (out x in).
inline std::vector<double> dense(const std::vector<double>& w, const std::vector<double>& b,
                                 const std::vector<double>& x) {
  std::vector<double> y(b);
  for (std::size_t o = 0; o < b.size(); ++o) {
    for (std::size_t i = 0; i < x.size(); ++i) y[o] += w[o * x.size() + i] * x[i];
  }
  return y;
}

inline std::vector<double> relu(std::vector<double> v) {
  for (auto& x : v) x = std::max(x, 0.0);
  return v;
}

// Valid cross-correlation; x is CHW, w is (out, in, k, k).
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t c, std::size_t h, std::size_t wd,
                                  const std::vector<double>& w, const std::vector<double>& b, std::size_t k) {
  const std::size_t oc = b.size(), oh = h - k + 1, ow = wd - k + 1;
  std::vector<double> y(oc * oh * ow);
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        double s = b[o];
        for (std::size_t i = 0; i < c; ++i)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
              s += w[((o * c + i) * k + u) * k + v] * x[(i * h + r + u) * wd + q + v];
        y[(o * oh + r) * ow + q] = s;
      }
  return y;
}

inline double bce_sum(const std::vector<double>& z, std::size_t label) {
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double p = sigmoid(z[k]);
    s -= k == label ? std::log(p) : std::log(1.0 - p);
  }
  return s;
}

inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace oracle
