#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtrans/tensor.hpp"

namespace mtrans {

/// Builds the scalar loss for one gradient-check evaluation. The function
/// must watch whatever parameters it uses on the given tape (typically via
/// ParamStore::watched) and be deterministic in everything but `params`.
using LossFn = std::function<Tensor(const ParamStore& params, Tape& tape)>;

struct GradCheckParam {
  std::string name;
  double max_rel_err = 0.0;
  size_t coords_checked = 0;
  size_t kinks_excluded = 0;
};

struct GradCheckReport {
  std::vector<GradCheckParam> params;
  double max_rel_err = 0.0;      // worst over all parameters
  size_t kinks_excluded = 0;     // total coordinates dropped at kinks
  double eps = 0.0;
  uint64_t seed = 0;
};

/// Compares analytic gradients against central finite differences,
/// f(x+eps) - f(x-eps) over 2*eps, on a random sample of coordinates per
/// parameter (all coordinates when a parameter has at most `min_coords`).
/// Relative error per coordinate is |a - n| / max(|a|, |n|, floor) where
/// floor = max(1e-3 * max|analytic| over all checked parameters, 1e-12),
/// so coordinates far below the gradient's own scale are held to an
/// absolute tolerance instead of an unreachable relative one.
///
/// The loss is piecewise smooth (L1 terms, ReLU): a coordinate whose base
/// point sits within eps of a kink has no valid central difference, so any
/// coordinate with a suspect error is re-probed one-sidedly at +-2*eps. When
/// the two one-sided slopes disagree the coordinate is at a kink and is
/// excluded (counted); when they agree the discrepancy is a genuine gradient
/// error and stands. Parameters must be f64; f32 rounding would swamp the
/// comparison.
GradCheckReport grad_check(const LossFn& fn, const ParamStore& params,
                           double eps, uint64_t seed, size_t min_coords = 64);

}  // namespace mtrans
