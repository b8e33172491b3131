#include "mtrans/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mtrans/rng.hpp"

namespace mtrans {

namespace {

double eval_loss(const LossFn& fn, const ParamStore& params) {
  Tape tape;
  Tensor loss = fn(params, tape);
  if (loss.size() != 1) {
    throw std::invalid_argument("grad_check loss must be scalar, got " +
                                loss.shape_str());
  }
  return loss.value();
}

ParamStore nudged(const ParamStore& params, size_t pi, size_t coord,
                  double delta) {
  ParamStore out = params;
  const Tensor& t = params.get(pi);
  std::vector<double> vals(t.data(), t.data() + t.size());
  vals[coord] += delta;
  out.set(pi, Tensor::from_data(t.shape(), std::move(vals), t.dtype()));
  return out;
}

}  // namespace

GradCheckReport grad_check(const LossFn& fn, const ParamStore& params,
                           double eps, uint64_t seed, size_t min_coords) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check eps must be positive");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params.get(i).dtype() != DType::f64) {
      throw std::invalid_argument("grad_check needs f64 parameters; " +
                                  params.name(i) + " is not");
    }
  }

  // one analytic sweep at the base point
  Tape tape;
  ParamStore watched = params.watched(tape);
  Tensor loss = fn(watched, tape);
  if (loss.size() != 1) {
    throw std::invalid_argument("grad_check loss must be scalar, got " +
                                loss.shape_str());
  }
  std::vector<Tensor> grads = tape.backward(loss);

  // Relative errors are measured against the gradient's own scale. A fixed
  // tiny floor would flag coordinates whose true gradient sits below the
  // finite-difference noise floor (|loss|*ulp/eps), so the floor adapts to
  // the largest analytic component seen at the base point.
  double grad_scale = 0.0;
  for (const Tensor& g : grads)
    for (size_t i = 0; i < g.size(); ++i)
      grad_scale = std::max(grad_scale, std::abs(g.at(i)));
  const double floor = std::max(1e-3 * grad_scale, 1e-12);

  GradCheckReport report;
  report.eps = eps;
  report.seed = seed;
  Rng rng(seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& t = params.get(pi);
    std::vector<size_t> coords;
    if (t.size() <= min_coords) {
      coords.resize(t.size());
      for (size_t i = 0; i < t.size(); ++i) coords[i] = i;
    } else {
      // sample without replacement via partial Fisher-Yates
      std::vector<size_t> all(t.size());
      for (size_t i = 0; i < all.size(); ++i) all[i] = i;
      for (size_t i = 0; i < min_coords; ++i) {
        const size_t j = i + static_cast<size_t>(rng.below(all.size() - i));
        std::swap(all[i], all[j]);
      }
      coords.assign(all.begin(), all.begin() + static_cast<long>(min_coords));
    }

    GradCheckParam entry;
    entry.name = params.name(pi);
    entry.coords_checked = coords.size();
    for (size_t coord : coords) {
      const double fp = eval_loss(fn, nudged(params, pi, coord, eps));
      const double fm = eval_loss(fn, nudged(params, pi, coord, -eps));
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = grads[pi].at(coord);
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;

      // suspect errors sit well above the central-difference noise floor;
      // probe each side separately and drop the coordinate when the slopes
      // disagree (a kink inside the stencil, not a gradient bug)
      if (rel > 1e-5) {
        const double f2p = eval_loss(fn, nudged(params, pi, coord, 2.0 * eps));
        const double f2m = eval_loss(fn, nudged(params, pi, coord, -2.0 * eps));
        const double slope_right = (f2p - fp) / eps;
        const double slope_left = (fm - f2m) / eps;
        const double slope_scale =
            std::max({std::abs(slope_right), std::abs(slope_left), floor});
        if (std::abs(slope_right - slope_left) > 1e-3 * slope_scale) {
          ++entry.kinks_excluded;
          continue;
        }
      }
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.kinks_excluded += entry.kinks_excluded;
    report.params.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mtrans
