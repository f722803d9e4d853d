#pragma once

// Element-wise monotone 1-D transforms whose parameters come from a
// conditioner network, one row per sample.
//
// Rational-quadratic spline: K bins on [-B, B], identity outside, boundary
// derivatives 1. Raw parameter row layout: [widths(K), heights(K),
// interior derivatives(K-1)]; an all-zero row is the identity map.
//
// Affine: raw row [shift, log_scale], y = x * exp(log_scale) + shift.

#include "mmcrl/autodiff.hpp"

#include <utility>

namespace mmcrl::flow {

struct SplineConfig {
  int bins = 8;
  double bound = 5.0;
  double min_width = 1e-3;
  double min_height = 1e-3;
  double min_derivative = 1e-3;

  int raw_size() const { return 3 * bins - 1; }
};

struct FlowOut {
  ad::Var y;       // n x 1
  ad::Var logdet;  // n x 1, log dy/dx
};

FlowOut rq_spline(ad::Var x, ad::Var raw, const SplineConfig& config);
FlowOut affine(ad::Var x, ad::Var raw);

/// Scalar reference versions (one sample, raw is a pointer to its row).
std::pair<double, double> rq_spline_forward(double x, const double* raw, const SplineConfig& config);
double rq_spline_inverse(double y, const double* raw, const SplineConfig& config);
std::pair<double, double> affine_forward(double x, const double* raw);
double affine_inverse(double y, const double* raw);

}  // namespace mmcrl::flow
