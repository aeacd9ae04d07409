#include "fvi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fvi {

Vec Chart::wrap(ConstSpan q) const {
  Vec out(q.begin(), q.end());
  if (periodic.empty()) return out;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int i = 0; i < dim; ++i) {
    if (!is_periodic(i)) continue;
    double v = std::remainder(out[static_cast<std::size_t>(i)], two_pi);
    if (v <= -std::numbers::pi) v += two_pi;
    out[static_cast<std::size_t>(i)] = v;
  }
  return out;
}

Retraction euclidean_retraction(const Chart& chart) {
  const int n = chart.dim;
  auto tau = [](auto q, auto Q) {
    using T = std::remove_cvref_t<decltype(q[0])>;
    std::vector<T> out;
    out.reserve(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out.push_back(Q[i] - q[i]);
    return out;
  };
  auto minus_id = [n](ConstSpan, ConstSpan) {
    Mat m = Mat::identity(static_cast<std::size_t>(n));
    m.scale(-1.0);
    return m;
  };
  auto plus_id = [n](ConstSpan, ConstSpan) {
    return Mat::identity(static_cast<std::size_t>(n));
  };
  return make_retraction(n, "euclidean", tau, minus_id, plus_id);
}

RetractionReport check_retraction_axioms(const Retraction& r,
                                         const std::vector<Vec>& samples,
                                         double tol) {
  const std::size_t n = static_cast<std::size_t>(r.dim);
  RetractionReport rep;
  const Mat eye = Mat::identity(n);
  for (const Vec& q : samples) {
    rep.tau_defect = std::max(rep.tau_defect, norm_inf(r.tau(q, q)));
    Mat d1 = r.d1_tau(q, q);
    Mat d2 = r.d2_tau(q, q);
    rep.d1_defect = std::max(rep.d1_defect, (d1 + eye).max_abs());
    rep.d2_defect = std::max(rep.d2_defect, (d2 - eye).max_abs());
    rep.cancel_defect = std::max(rep.cancel_defect, (d1 + d2).max_abs());

    // Closed-form partials must agree with AD through tau itself.
    Vec z = concat(q, q);
    Mat jac = jacobian(
        [&](DualSpan x) { return r.tau_ad(x.subspan(0, n), x.subspan(n, n)); },
        z);
    rep.ad_mismatch =
        std::max(rep.ad_mismatch, (jac.block(0, 0, n, n) - d1).max_abs());
    rep.ad_mismatch =
        std::max(rep.ad_mismatch, (jac.block(0, n, n, n) - d2).max_abs());
  }

  // d2_tau carries the defining axiom T_0 R_q = id, so it is reported first.
  const std::pair<const char*, double> checks[] = {
      {"tau", rep.tau_defect},
      {"d2_tau", rep.d2_defect},
      {"d1_tau", rep.d1_defect},
      {"d1_plus_d2", rep.cancel_defect},
      {"d_tau_ad", rep.ad_mismatch},
  };
  for (const auto& [sym, mag] : checks)
    if (!(mag <= tol)) throw ViolationFound(sym, mag);
  return rep;
}

}  // namespace fvi
