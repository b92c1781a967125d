#pragma once

#include "gslu/tensor.hpp"

#include <functional>
#include <vector>

namespace gslu::testing {

// Central-difference gradient oracle. `f` rebuilds the scalar loss from
// scratch on a fresh tape each call; `param` is the persistent value buffer
// being perturbed. Returns the worst relative error over all entries of the
// analytic gradient against (f(x+h) - f(x-h)) / 2h.
struct FdResult {
  double max_rel_err = 0.0;
  double at_row = -1, at_col = -1;
};

inline double rel_err(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline FdResult fd_check(const std::function<double()>& f, Mat<double>& param,
                         const Mat<double>& analytic_grad, double h = 1e-5) {
  FdResult res;
  for (Eigen::Index r = 0; r < param.rows(); ++r) {
    for (Eigen::Index c = 0; c < param.cols(); ++c) {
      const double keep = param(r, c);
      param(r, c) = keep + h;
      const double up = f();
      param(r, c) = keep - h;
      const double dn = f();
      param(r, c) = keep;
      const double numeric = (up - dn) / (2.0 * h);
      const double e = rel_err(analytic_grad(r, c), numeric);
      if (e > res.max_rel_err) {
        res.max_rel_err = e;
        res.at_row = static_cast<double>(r);
        res.at_col = static_cast<double>(c);
      }
    }
  }
  return res;
}

}  // namespace gslu::testing
