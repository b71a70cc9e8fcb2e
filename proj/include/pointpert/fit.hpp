#pragma once

// Least-squares line through (log x, log y).

#include <algorithm>
#include <cmath>
#include <vector>

#include "pointpert/errors.hpp"

namespace pointpert {

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;  ///< standard error of the slope (0 for two points)
  double r_squared = 1.0;
  std::size_t points = 0;
};

inline LogLogFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("log-log fit needs two or more (x, y) pairs");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw PreconditionError("log-log fit needs positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw PreconditionError("log-log fit needs distinct x values");
  LogLogFit f;
  f.points = lx.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  const double sse = std::max(0.0, syy - f.slope * sxy);
  f.r_squared = syy == 0.0 ? 1.0 : 1.0 - sse / syy;
  if (lx.size() > 2) f.slope_stderr = std::sqrt(sse / (n - 2.0) / sxx);
  return f;
}

}  // namespace pointpert
