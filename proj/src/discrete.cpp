#include "fvi/discrete.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fvi {

namespace {

// Newton residuals assembled from O(1/h)-sized terms have a roundoff floor
// that can sit above an absolute tolerance at very small steps. The guard
// accepts at the tolerance as usual, and otherwise accepts the best iterate
// seen once two consecutive updates have stopped improving on it, provided
// the best is within a bounded factor of the tolerance. A seed is never
// accepted untested.
enum class NewtonVerdict { kAccept, kAcceptBest, kContinue };

class StallGuard {
 public:
  explicit StallGuard(double tol) : tol_(tol) {}

  NewtonVerdict check(double res) {
    improved_ = res < best_ * (1.0 - 1e-3);
    if (res <= tol_) return NewtonVerdict::kAccept;
    if (improved_) {
      best_ = res;
      stall_ = 0;
      return NewtonVerdict::kContinue;
    }
    if (++stall_ >= 2 && best_ <= 1e4 * tol_) return NewtonVerdict::kAcceptBest;
    return NewtonVerdict::kContinue;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }

 private:
  double tol_;
  double best_ = std::numeric_limits<double>::infinity();
  int stall_ = 0;
  bool improved_ = false;
};

}  // namespace

QuadratureScheme lobatto_scheme(int s) {
  QuadratureScheme q;
  q.stages = s;
  q.poly_degree = s - 1;
  switch (s) {
    case 2:
      q.nodes = {0.0, 1.0};
      q.weights = {0.5, 0.5};
      break;
    case 3:
      q.nodes = {0.0, 0.5, 1.0};
      q.weights = {1.0 / 6, 2.0 / 3, 1.0 / 6};
      break;
    case 4: {
      const double r = std::sqrt(5.0);
      q.nodes = {0.0, (5.0 - r) / 10.0, (5.0 + r) / 10.0, 1.0};
      q.weights = {1.0 / 12, 5.0 / 12, 5.0 / 12, 1.0 / 12};
      break;
    }
    case 5: {
      const double r = std::sqrt(21.0);
      q.nodes = {0.0, (7.0 - r) / 14.0, 0.5, (7.0 + r) / 14.0, 1.0};
      q.weights = {1.0 / 20, 49.0 / 180, 16.0 / 45, 49.0 / 180, 1.0 / 20};
      break;
    }
    default:
      throw Error("Lobatto stages must be in 2..5");
  }
  double sum = 0.0;
  for (double b : q.weights) sum += b;
  if (std::abs(sum - 1.0) > 1e-14) throw Error("quadrature weights defect");
  return q;
}

namespace {

// Nodal differentiation matrix via barycentric weights: D(i,j) = l_j'(c_i).
Mat diff_matrix(const Vec& c) {
  const std::size_t s = c.size();
  Vec lam(s, 1.0);
  for (std::size_t j = 0; j < s; ++j)
    for (std::size_t k = 0; k < s; ++k)
      if (k != j) lam[j] /= (c[j] - c[k]);
  Mat d(s, s);
  for (std::size_t i = 0; i < s; ++i) {
    double diag = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      if (i == j) continue;
      d(i, j) = (lam[j] / lam[i]) / (c[i] - c[j]);
      diag -= d(i, j);
    }
    d(i, i) = diag;
  }
  return d;
}

Vec stage_seed(const QuadratureScheme& sch, ConstSpan q0, ConstSpan q1) {
  const std::size_t d = q0.size();
  const std::size_t ni = static_cast<std::size_t>(sch.stages - 2);
  Vec theta(ni * d);
  for (std::size_t j = 0; j < ni; ++j) {
    const double c = sch.nodes[j + 1];
    for (std::size_t k = 0; k < d; ++k)
      theta[j * d + k] = q0[k] + c * (q1[k] - q0[k]);
  }
  return theta;
}

}  // namespace

// ---- alpha rule ----

AlphaRuleLagrangian::AlphaRuleLagrangian(LagrangianFn lag, int dim,
                                         double alpha)
    : DiscreteLagrangian(std::move(lag), dim,
                         std::abs(alpha - 0.5) < 1e-15 ? 2 : 1),
      alpha_(alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw Error("alpha must lie in [0, 1]");
}

namespace {

template <class T>
T alpha_eval(const LagrangianFn& lag, double alpha, std::span<const T> q0,
             std::span<const T> q1, double h) {
  const std::size_t d = q0.size();
  std::vector<T> qa(d), vh(d);
  for (std::size_t i = 0; i < d; ++i) {
    qa[i] = (1.0 - alpha) * q0[i] + alpha * q1[i];
    vh[i] = (q1[i] - q0[i]) * (1.0 / h);
  }
  return h * lag(std::span<const T>(qa), std::span<const T>(vh));
}

}  // namespace

double AlphaRuleLagrangian::eval(ConstSpan q0, ConstSpan q1, double h,
                                 Vec*) const {
  return alpha_eval<double>(lag_, alpha_, q0, q1, h);
}

DiscreteLagrangian::Derivs AlphaRuleLagrangian::derivs(ConstSpan q0,
                                                       ConstSpan q1, double h,
                                                       Vec*) const {
  const std::size_t d = q0.size();
  Vec z = concat(q0, q1);
  SecondOrder so = second_order(
      [&](DualSpan zd) {
        return alpha_eval<Dual>(lag_, alpha_, zd.subspan(0, d),
                                zd.subspan(d, d), h);
      },
      z);
  Derivs out;
  out.value = so.value;
  out.d1.assign(so.grad.begin(), so.grad.begin() + static_cast<long>(d));
  out.d2.assign(so.grad.begin() + static_cast<long>(d), so.grad.end());
  out.d11 = so.hess.block(0, 0, d, d);
  out.d12 = so.hess.block(0, d, d, d);
  out.d22 = so.hess.block(d, d, d, d);
  return out;
}

// ---- Lobatto-Galerkin ----

LobattoGalerkinLagrangian::LobattoGalerkinLagrangian(LagrangianFn lag, int dim,
                                                     int stages,
                                                     SolverConfig inner)
    : DiscreteLagrangian(std::move(lag), dim, 2 * stages - 2),
      scheme_(lobatto_scheme(stages)),
      dmat_(diff_matrix(scheme_.nodes)),
      inner_(inner) {}

SecondOrder LobattoGalerkinLagrangian::action_over(ConstSpan q0, ConstSpan q1,
                                                   double h, const Vec& theta,
                                                   bool full) const {
  const std::size_t d = static_cast<std::size_t>(dim_);
  const std::size_t s = static_cast<std::size_t>(scheme_.stages);

  auto action = [&](DualSpan vars) {
    // Node views: full mode seeds all s nodes contiguously; theta mode seeds
    // the interior only and treats the endpoints as constants.
    DVec bound;
    if (!full) {
      bound.reserve(2 * d);
      for (double x : q0) bound.emplace_back(x);
      for (double x : q1) bound.emplace_back(x);
    }
    auto node = [&](std::size_t i) -> DualSpan {
      if (full) return vars.subspan(i * d, d);
      if (i == 0) return DualSpan(bound).subspan(0, d);
      if (i == s - 1) return DualSpan(bound).subspan(d, d);
      return vars.subspan((i - 1) * d, d);
    };
    Dual acc(0.0);
    DVec xdot(d);
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        Dual sum(0.0);
        for (std::size_t j = 0; j < s; ++j)
          sum += (dmat_(i, j) / h) * node(j)[k];
        xdot[k] = sum;
      }
      acc += scheme_.weights[i] * lag_(node(i), DualSpan(xdot));
    }
    return h * acc;
  };

  Vec vars = full ? concat(concat(q0, theta), q1) : theta;
  return second_order(action, vars);
}

Vec LobattoGalerkinLagrangian::solve_stages(ConstSpan q0, ConstSpan q1,
                                            double h, Vec seed) const {
  const std::size_t d = static_cast<std::size_t>(dim_);
  const std::size_t ni = static_cast<std::size_t>(scheme_.stages - 2);
  if (ni == 0) return {};
  const bool warm = seed.size() == ni * d;
  Vec theta = warm ? std::move(seed) : stage_seed(scheme_, q0, q1);
  for (int attempt = 0; attempt < 2; ++attempt) {
    StallGuard guard(inner_.newton_tol);
    Vec best = theta;
    double res = 0.0;
    for (int it = 0; it <= inner_.max_iters; ++it) {
      SecondOrder so = action_over(q0, q1, h, theta, false);
      res = norm_inf(so.grad);
      const NewtonVerdict v = guard.check(res);
      if (v == NewtonVerdict::kAccept) return theta;
      if (v == NewtonVerdict::kAcceptBest) return best;
      if (guard.improved()) best = theta;
      auto delta = try_solve(so.hess, so.grad);
      if (!delta || !all_finite(*delta)) break;
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= (*delta)[i];
    }
    if (attempt == 0 && warm) {
      theta = stage_seed(scheme_, q0, q1);  // retry from the cold seed
      continue;
    }
    throw InnerSolveFailed(res);
  }
  return theta;  // unreachable
}

double LobattoGalerkinLagrangian::eval(ConstSpan q0, ConstSpan q1, double h,
                                       Vec* stages) const {
  const std::size_t d = static_cast<std::size_t>(dim_);
  const std::size_t s = static_cast<std::size_t>(scheme_.stages);
  Vec theta = solve_stages(q0, q1, h, stages ? *stages : Vec{});
  if (stages) *stages = theta;
  // Plain arithmetic once the interior is known.
  auto node = [&](std::size_t i) -> ConstSpan {
    if (i == 0) return q0;
    if (i == s - 1) return q1;
    return ConstSpan(theta).subspan((i - 1) * d, d);
  };
  double acc = 0.0;
  Vec xdot(d);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      double sum = 0.0;
      for (std::size_t j = 0; j < s; ++j) sum += dmat_(i, j) / h * node(j)[k];
      xdot[k] = sum;
    }
    acc += scheme_.weights[i] * lag_(node(i), xdot);
  }
  return h * acc;
}

DiscreteLagrangian::Derivs LobattoGalerkinLagrangian::derivs(
    ConstSpan q0, ConstSpan q1, double h, Vec* stages) const {
  const std::size_t d = static_cast<std::size_t>(dim_);
  const std::size_t s = static_cast<std::size_t>(scheme_.stages);
  const std::size_t ni = s - 2;
  Vec theta = solve_stages(q0, q1, h, stages ? *stages : Vec{});
  if (stages) *stages = theta;
  SecondOrder so = action_over(q0, q1, h, theta, true);

  Derivs out;
  out.value = so.value;
  const std::size_t i1 = (s - 1) * d;
  out.d1.assign(so.grad.begin(), so.grad.begin() + static_cast<long>(d));
  out.d2.assign(so.grad.begin() + static_cast<long>(i1), so.grad.end());
  out.d11 = so.hess.block(0, 0, d, d);
  out.d12 = so.hess.block(0, i1, d, d);
  out.d22 = so.hess.block(i1, i1, d, d);
  if (ni == 0) return out;

  // Stage sensitivities: d theta / d q = -Htt^{-1} Ht q, folded into the
  // second derivatives (first derivatives are exact by stationarity).
  const std::size_t nt = ni * d;
  Mat htt = so.hess.block(d, d, nt, nt);
  Mat ht0 = so.hess.block(d, 0, nt, d);
  Mat ht1 = so.hess.block(d, i1, nt, d);
  LuFactor lu = lu_factor(htt);
  if (!lu.ok) throw SingularD12();
  Mat s0(nt, d), s1(nt, d);
  Vec col(nt);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < nt; ++i) col[i] = ht0(i, j);
    Vec x = lu_solve(lu, col);
    for (std::size_t i = 0; i < nt; ++i) s0(i, j) = -x[i];
    for (std::size_t i = 0; i < nt; ++i) col[i] = ht1(i, j);
    x = lu_solve(lu, col);
    for (std::size_t i = 0; i < nt; ++i) s1(i, j) = -x[i];
  }
  Mat h0t = ht0.transposed(), h1t = ht1.transposed();
  out.d11 += h0t.mul(s0);
  out.d12 += h0t.mul(s1);
  out.d22 += h1t.mul(s1);
  return out;
}

// ---- doubled variants ----

namespace {

class DoubledAlphaRule final : public DoubledDiscreteLagrangian {
 public:
  DoubledAlphaRule(const DoubledSystem& dsys, double alpha)
      : DoubledDiscreteLagrangian(
            std::make_unique<AlphaRuleLagrangian>(dsys.lagrangian, dsys.dim,
                                                  alpha),
            dsys.base),
        alpha_(alpha) {}

  std::pair<Vec, Vec> discrete_forces(ConstSpan q0, ConstSpan q1,
                                      double h) const override {
    const std::size_t n = q0.size();
    Vec z;  // (q0, Q0, q1, Q1) seeded on the identities
    z.reserve(4 * n);
    for (ConstSpan part : {q0, q0, q1, q1})
      z.insert(z.end(), part.begin(), part.end());
    const double a = alpha_;
    Vec g = gradient(
        [&](DualSpan zd) {
          auto mk = [&](std::size_t o0, std::size_t o1) {
            DVec qa(n), vh(n);
            for (std::size_t i = 0; i < n; ++i) {
              qa[i] = (1.0 - a) * zd[o0 + i] + a * zd[o1 + i];
              vh[i] = (zd[o1 + i] - zd[o0 + i]) * (1.0 / h);
            }
            return std::make_pair(std::move(qa), std::move(vh));
          };
          auto [qa, vh] = mk(0, 2 * n);
          auto [Qa, Vh] = mk(n, 3 * n);
          return h * kf_value<Dual>(base_, qa, vh, Qa, Vh);
        },
        z);
    Vec fm(g.begin(), g.begin() + static_cast<long>(n));
    Vec fp(g.begin() + static_cast<long>(2 * n),
           g.begin() + static_cast<long>(3 * n));
    return {std::move(fm), std::move(fp)};
  }

 private:
  double alpha_;
};

// Forced interior stages of the single-system Lobatto-Galerkin method:
// stationarity of the action quadrature plus the quadrature virtual work of
// the force. At the identities these coincide with the doubled stages.
Vec solve_forced_stages(const ForcedSystem& sys, const QuadratureScheme& sch,
                        const Mat& dmat, ConstSpan q0, ConstSpan q1, double h,
                        const SolverConfig& cfg, Vec seed = {}) {
  const std::size_t n = q0.size();
  const std::size_t s = static_cast<std::size_t>(sch.stages);
  const std::size_t ni = s - 2;
  if (ni == 0) return {};
  const bool warm = seed.size() == ni * n;
  Vec theta = warm ? std::move(seed) : stage_seed(sch, q0, q1);

  auto node = [&](const Vec& th, std::size_t i) -> ConstSpan {
    if (i == 0) return q0;
    if (i == s - 1) return q1;
    return ConstSpan(th).subspan((i - 1) * n, n);
  };
  auto velocity = [&](const Vec& th, std::size_t i) {
    Vec xd(n, 0.0);
    for (std::size_t j = 0; j < s; ++j) {
      const double c = dmat(i, j) / h;
      ConstSpan xj = node(th, j);
      for (std::size_t k = 0; k < n; ++k) xd[k] += c * xj[k];
    }
    return xd;
  };

  for (int attempt = 0; attempt < 2; ++attempt) {
    StallGuard guard(cfg.newton_tol);
    Vec best = theta;
    double res = 0.0;
    bool done = false;
    for (int it = 0; it <= cfg.max_iters; ++it) {
      // Free-action gradient/Hessian over the interior nodes.
      SecondOrder so = second_order(
          [&](DualSpan th) {
            DVec bound;
            bound.reserve(2 * n);
            for (double x : q0) bound.emplace_back(x);
            for (double x : q1) bound.emplace_back(x);
            auto nd = [&](std::size_t i) -> DualSpan {
              if (i == 0) return DualSpan(bound).subspan(0, n);
              if (i == s - 1) return DualSpan(bound).subspan(n, n);
              return th.subspan((i - 1) * n, n);
            };
            Dual acc(0.0);
            DVec xdot(n);
            for (std::size_t i = 0; i < s; ++i) {
              for (std::size_t k = 0; k < n; ++k) {
                Dual sum(0.0);
                for (std::size_t j = 0; j < s; ++j)
                  sum += (dmat(i, j) / h) * nd(j)[k];
                xdot[k] = sum;
              }
              acc += sch.weights[i] * sys.lagrangian(nd(i), DualSpan(xdot));
            }
            return h * acc;
          },
          theta);
      Vec r = so.grad;
      Mat jac = so.hess;
      for (std::size_t j = 1; j + 1 < s; ++j) {
        Vec xj(node(theta, j).begin(), node(theta, j).end());
        Vec vj = velocity(theta, j);
        Vec f = sys.force(xj, vj);
        Vec z = concat(xj, vj);
        Mat jf = jacobian(
            [&](DualSpan zd) {
              return sys.force(zd.subspan(0, n), zd.subspan(n, n));
            },
            z);
        const double hb = h * sch.weights[j];
        for (std::size_t i = 0; i < n; ++i) r[(j - 1) * n + i] += hb * f[i];
        for (std::size_t k = 1; k + 1 < s; ++k)
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t l = 0; l < n; ++l) {
              double term = sch.weights[j] * jf(i, n + l) * dmat(j, k);
              if (k == j) term += hb * jf(i, l);
              jac((j - 1) * n + i, (k - 1) * n + l) += term;
            }
      }
      res = norm_inf(r);
      const NewtonVerdict v = guard.check(res);
      if (v == NewtonVerdict::kAccept) {
        done = true;
        break;
      }
      if (v == NewtonVerdict::kAcceptBest) {
        theta = best;
        done = true;
        break;
      }
      if (guard.improved()) best = theta;
      auto delta = try_solve(jac, r);
      if (!delta || !all_finite(*delta)) break;
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= (*delta)[i];
    }
    if (done) return theta;
    if (attempt == 0 && warm) {
      theta = stage_seed(sch, q0, q1);
      continue;
    }
    throw InnerSolveFailed(res);
  }
  return theta;
}

class DoubledLobattoGalerkin final : public DoubledDiscreteLagrangian {
 public:
  DoubledLobattoGalerkin(const DoubledSystem& dsys, int stages,
                         SolverConfig inner)
      : DoubledDiscreteLagrangian(
            std::make_unique<LobattoGalerkinLagrangian>(dsys.lagrangian,
                                                        dsys.dim, stages,
                                                        inner),
            dsys.base),
        scheme_(lobatto_scheme(stages)),
        dmat_(diff_matrix(scheme_.nodes)),
        inner_(inner) {}

  std::pair<Vec, Vec> discrete_forces(ConstSpan q0, ConstSpan q1,
                                      double h) const override {
    const std::size_t n = q0.size();
    const std::size_t s = static_cast<std::size_t>(scheme_.stages);
    Vec theta =
        solve_forced_stages(base_, scheme_, dmat_, q0, q1, h, inner_);
    Vec z;  // (q0, Q0, q1, Q1) on the identities; interior nodes held fixed
    z.reserve(4 * n);
    for (ConstSpan part : {q0, q0, q1, q1})
      z.insert(z.end(), part.begin(), part.end());
    Vec g = gradient(
        [&](DualSpan zd) {
          DVec consts;
          consts.reserve(theta.size());
          for (double x : theta) consts.emplace_back(x);
          auto nd = [&](std::size_t i, std::size_t off0,
                        std::size_t off1) -> DualSpan {
            if (i == 0) return zd.subspan(off0, n);
            if (i == s - 1) return zd.subspan(off1, n);
            return DualSpan(consts).subspan((i - 1) * n, n);
          };
          Dual acc(0.0);
          DVec xd(n), Xd(n);
          for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t k = 0; k < n; ++k) {
              Dual a(0.0), b(0.0);
              for (std::size_t j = 0; j < s; ++j) {
                const double c = dmat_(i, j) / h;
                a += c * nd(j, 0, 2 * n)[k];
                b += c * nd(j, n, 3 * n)[k];
              }
              xd[k] = a;
              Xd[k] = b;
            }
            acc += scheme_.weights[i] *
                   kf_value<Dual>(base_, nd(i, 0, 2 * n), DualSpan(xd),
                                  nd(i, n, 3 * n), DualSpan(Xd));
          }
          return h * acc;
        },
        z);
    Vec fm(g.begin(), g.begin() + static_cast<long>(n));
    Vec fp(g.begin() + static_cast<long>(2 * n),
           g.begin() + static_cast<long>(3 * n));
    return {std::move(fm), std::move(fp)};
  }

 private:
  QuadratureScheme scheme_;
  Mat dmat_;
  SolverConfig inner_;
};

}  // namespace

// ---- factories ----

std::unique_ptr<DiscreteLagrangian> alpha_rule(LagrangianFn lag, int dim,
                                               double alpha) {
  return std::make_unique<AlphaRuleLagrangian>(std::move(lag), dim, alpha);
}

std::unique_ptr<DiscreteLagrangian> alpha_rule(const ForcedSystem& sys,
                                               double alpha) {
  return alpha_rule(sys.lagrangian, sys.dim(), alpha);
}

std::unique_ptr<DoubledDiscreteLagrangian> alpha_rule(const DoubledSystem& dsys,
                                                      double alpha) {
  return std::make_unique<DoubledAlphaRule>(dsys, alpha);
}

std::unique_ptr<DiscreteLagrangian> lobatto_galerkin(LagrangianFn lag, int dim,
                                                     int stages,
                                                     SolverConfig inner) {
  return std::make_unique<LobattoGalerkinLagrangian>(std::move(lag), dim,
                                                     stages, inner);
}

std::unique_ptr<DiscreteLagrangian> lobatto_galerkin(const ForcedSystem& sys,
                                                     int stages,
                                                     SolverConfig inner) {
  return lobatto_galerkin(sys.lagrangian, sys.dim(), stages, inner);
}

std::unique_ptr<DoubledDiscreteLagrangian> lobatto_galerkin(
    const DoubledSystem& dsys, int stages, SolverConfig inner) {
  return std::make_unique<DoubledLobattoGalerkin>(dsys, stages, inner);
}

std::pair<Vec, Vec> discrete_forces_from_K(const DoubledDiscreteLagrangian& ld,
                                           ConstSpan q0, ConstSpan q1,
                                           double h) {
  return ld.discrete_forces(q0, q1, h);
}

// ---- discrete flow ----

namespace {

Vec newton_del(const DiscreteLagrangian& ld, ConstSpan q_curr,
               const Vec& rhs_prev, ConstSpan seed, const SolverConfig& cfg,
               Vec* stages, int* iters_out,
               DiscreteLagrangian::Derivs* final_out, double h) {
  Vec x(seed.begin(), seed.end());
  StallGuard guard(cfg.newton_tol);
  Vec best_x = x;
  DiscreteLagrangian::Derivs best_der;
  for (int it = 0; it <= cfg.max_iters; ++it) {
    DiscreteLagrangian::Derivs der = ld.derivs(q_curr, x, h, stages);
    Vec r = der.d1;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += rhs_prev[i];
    if (!all_finite(r)) throw NewtonDiverged(it, norm_inf(r));
    const NewtonVerdict v = guard.check(norm_inf(r));
    if (v == NewtonVerdict::kAccept) {
      if (iters_out) *iters_out = it;
      if (final_out) *final_out = std::move(der);
      return x;
    }
    if (v == NewtonVerdict::kAcceptBest) {
      if (iters_out) *iters_out = it;
      if (final_out) *final_out = std::move(best_der);
      return best_x;
    }
    if (guard.improved()) {
      best_x = x;
      best_der = der;
    }
    if (it == cfg.max_iters) throw NewtonDiverged(it, norm_inf(r));
    auto delta = try_solve(der.d12, r);
    if (!delta) throw SingularD12();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= (*delta)[i];
  }
  throw NewtonDiverged(cfg.max_iters, 0.0);  // unreachable
}

}  // namespace

Vec del_step(const DiscreteLagrangian& ld, const DiscretePair& pair,
             const SolverConfig& cfg, int* iters, Vec* stages) {
  if (pair.h < 1e-13) throw StepTooSmall(pair.h);
  const std::size_t d = pair.q_curr.size();
  Vec d2_prev = ld.derivs(pair.q_prev, pair.q_curr, pair.h).d2;
  Vec seed(d);
  for (std::size_t i = 0; i < d; ++i)
    seed[i] = 2.0 * pair.q_curr[i] - pair.q_prev[i];
  return newton_del(ld, pair.q_curr, d2_prev, seed, cfg, stages, iters,
                    nullptr, pair.h);
}

StateCotangent discrete_legendre_minus(const DiscreteLagrangian& ld,
                                       ConstSpan q0, ConstSpan q1, double h) {
  DiscreteLagrangian::Derivs der = ld.derivs(q0, q1, h);
  Vec p(der.d1.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = -der.d1[i];
  return {Vec(q0.begin(), q0.end()), std::move(p)};
}

StateCotangent discrete_legendre_plus(const DiscreteLagrangian& ld,
                                      ConstSpan q0, ConstSpan q1, double h) {
  DiscreteLagrangian::Derivs der = ld.derivs(q0, q1, h);
  return {Vec(q1.begin(), q1.end()), std::move(der.d2)};
}

DiscretePair initialize_from_state(const DiscreteLagrangian& ld,
                                   const StateTangent& s0, double h,
                                   const SolverConfig& cfg) {
  if (h < 1e-13) throw StepTooSmall(h);
  const std::size_t d = s0.q.size();
  DVec qc;
  qc.reserve(d);
  for (double x : s0.q) qc.emplace_back(x);
  Vec p0 = gradient(
      [&](DualSpan vd) { return ld.continuous_lagrangian()(DualSpan(qc), vd); },
      s0.v);
  Vec seed(d);
  for (std::size_t i = 0; i < d; ++i) seed[i] = s0.q[i] + h * s0.v[i];
  // Solve d1 Ld(q0, q1) + p0 = 0.
  Vec q1 = newton_del(ld, s0.q, p0, seed, cfg, nullptr, nullptr, nullptr, h);
  return {s0.q, std::move(q1), h};
}

TrajectoryRecord integrate_chain(const DiscreteLagrangian& ld,
                                 const StateTangent& s0, int n_steps, double h,
                                 const SolverConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(ld.dim());
  if (s0.q.size() != d) throw Error("initial state dimension mismatch");
  TrajectoryRecord rec;
  rec.t.push_back(0.0);
  rec.q.push_back(s0.q);
  rec.newton_iters.push_back(0);

  DiscretePair pair;
  try {
    pair = initialize_from_state(ld, s0, h, cfg);
  } catch (const Error& e) {
    throw Error("step 1: " + std::string(e.what()));
  }
  rec.t.push_back(h);
  rec.q.push_back(pair.q_curr);
  rec.newton_iters.push_back(0);

  Vec stages;
  DiscreteLagrangian::Derivs prev =
      ld.derivs(pair.q_prev, pair.q_curr, h, &stages);
  rec.p_minus.push_back([&] {
    Vec p(prev.d1.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = -prev.d1[i];
    return p;
  }());

  for (int k = 1; k < n_steps; ++k) {
    Vec seed(d);
    for (std::size_t i = 0; i < d; ++i)
      seed[i] = 2.0 * pair.q_curr[i] - pair.q_prev[i];
    int iters = 0;
    DiscreteLagrangian::Derivs cur;
    Vec q_next;
    try {
      q_next = newton_del(ld, pair.q_curr, prev.d2, seed, cfg, &stages,
                          &iters, &cur, h);
    } catch (const Error& e) {
      throw Error("step " + std::to_string(k + 1) + ": " + e.what());
    }
    rec.t.push_back((k + 1) * h);
    rec.q.push_back(q_next);
    rec.newton_iters.push_back(iters);
    rec.total_newton_iters += iters;
    rec.p_plus.push_back(prev.d2);
    rec.p_minus.push_back([&] {
      Vec p(cur.d1.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = -cur.d1[i];
      return p;
    }());
    pair = {pair.q_curr, q_next, h};
    prev = std::move(cur);
  }
  rec.p_plus.push_back(prev.d2);
  return rec;
}

TrajectoryRecord integrate(const DoubledDiscreteLagrangian& ld,
                           const StateTangent& s0, int n_steps, double h,
                           const SolverConfig& cfg) {
  const ForcedSystem& sys = ld.base_system();
  const std::size_t n = static_cast<std::size_t>(sys.dim());
  StateTangent seeded{concat(s0.q, s0.q), concat(s0.v, s0.v)};
  TrajectoryRecord raw = integrate_chain(ld, seeded, n_steps, h, cfg);

  TrajectoryRecord rec;
  rec.t = raw.t;
  rec.newton_iters = raw.newton_iters;
  rec.total_newton_iters = raw.total_newton_iters;
  auto q_half = [&](const Vec& x) {
    return Vec(x.begin(), x.begin() + static_cast<long>(n));
  };
  auto plus_half = [&](const Vec& x) {
    return Vec(x.begin() + static_cast<long>(n), x.end());
  };
  for (std::size_t k = 0; k < raw.q.size(); ++k) {
    Vec q = q_half(raw.q[k]);
    Vec Q = plus_half(raw.q[k]);
    double defect = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      defect = std::max(defect, std::abs(q[i] - Q[i]));
    // Physical momentum lives in the plus-copy block of the doubled
    // discrete Legendre transforms.
    Vec p = k == 0 ? plus_half(raw.p_minus[0]) : plus_half(raw.p_plus[k - 1]);
    Vec v = legendre_inverse(sys, q, p);
    rec.energy.push_back(dot(p, v) - sys.lagrangian(q, v));
    rec.q.push_back(std::move(q));
    rec.v.push_back(std::move(v));
    rec.p.push_back(std::move(p));
    rec.identity_defect.push_back(defect);
  }
  for (const Vec& pm : raw.p_minus) rec.p_minus.push_back(plus_half(pm));
  for (const Vec& pp : raw.p_plus) rec.p_plus.push_back(plus_half(pp));
  return rec;
}

Mat step_map_jacobian(const DiscreteLagrangian& ld, ConstSpan q0, ConstSpan p0,
                      double h, const SolverConfig& cfg) {
  const std::size_t n = q0.size();
  // q1 from the minus Legendre condition d1 Ld(q0, q1) + p0 = 0.
  Vec seed(q0.begin(), q0.end());
  Vec p0v(p0.begin(), p0.end());
  Vec q1 = newton_del(ld, q0, p0v, seed, cfg, nullptr, nullptr, nullptr, h);
  DiscreteLagrangian::Derivs der = ld.derivs(q0, q1, h);

  LuFactor lu = lu_factor(der.d12);
  if (!lu.ok) throw SingularD12();
  Mat dq1_dq0(n, n), dq1_dp0(n, n);
  Vec col(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = der.d11(i, j);
    Vec x = lu_solve(lu, col);
    for (std::size_t i = 0; i < n; ++i) dq1_dq0(i, j) = -x[i];
    col.assign(n, 0.0);
    col[j] = 1.0;
    x = lu_solve(lu, col);
    for (std::size_t i = 0; i < n; ++i) dq1_dp0(i, j) = -x[i];
  }
  Mat d21 = der.d12.transposed();
  Mat dp1_dq0 = d21 + der.d22.mul(dq1_dq0);
  Mat dp1_dp0 = der.d22.mul(dq1_dp0);
  Mat out(2 * n, 2 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = dq1_dq0(i, j);
      out(i, n + j) = dq1_dp0(i, j);
      out(n + i, j) = dp1_dq0(i, j);
      out(n + i, n + j) = dp1_dp0(i, j);
    }
  return out;
}

// ---- forced single-system integrators ----

namespace {

class AlphaForcedIntegrator final : public ForcedIntegrator {
 public:
  AlphaForcedIntegrator(ForcedSystem sys, double alpha)
      : ForcedIntegrator(std::move(sys),
                         std::abs(alpha - 0.5) < 1e-15 ? 2 : 1),
        alpha_(alpha),
        ld_(sys_.lagrangian, sys_.dim(), alpha) {}

  std::pair<Vec, Vec> boundary_forces(ConstSpan q0, ConstSpan q1,
                                      double h) const override {
    const std::size_t n = q0.size();
    Vec qa(n), vh(n);
    for (std::size_t i = 0; i < n; ++i) {
      qa[i] = (1.0 - alpha_) * q0[i] + alpha_ * q1[i];
      vh[i] = (q1[i] - q0[i]) / h;
    }
    Vec f = sys_.force(qa, vh);
    Vec fm(n), fp(n);
    for (std::size_t i = 0; i < n; ++i) {
      fm[i] = h * (1.0 - alpha_) * f[i];
      fp[i] = h * alpha_ * f[i];
    }
    return {std::move(fm), std::move(fp)};
  }

  Vec residual(ConstSpan q_prev, ConstSpan q_curr, ConstSpan q_next,
               double h) const override {
    auto prev = ld_.derivs(q_prev, q_curr, h);
    auto cur = ld_.derivs(q_curr, q_next, h);
    auto [fm, fp_unused] = boundary_forces(q_curr, q_next, h);
    auto [fm_unused, fp] = boundary_forces(q_prev, q_curr, h);
    Vec r(q_curr.size());
    for (std::size_t i = 0; i < r.size(); ++i)
      r[i] = cur.d1[i] + prev.d2[i] + fm[i] + fp[i];
    return r;
  }

  Vec step(ConstSpan q_prev, ConstSpan q_curr, double h,
           const SolverConfig& cfg, int* iters) const override {
    auto prev = ld_.derivs(q_prev, q_curr, h);
    auto [fm_unused, fp] = boundary_forces(q_prev, q_curr, h);
    Vec rhs(prev.d2.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = prev.d2[i] + fp[i];
    Vec seed(q_curr.size());
    for (std::size_t i = 0; i < seed.size(); ++i)
      seed[i] = 2.0 * q_curr[i] - q_prev[i];
    return solve_forward(q_curr, rhs, seed, h, cfg, iters);
  }

  Vec initialize(ConstSpan q0, ConstSpan p0, double h,
                 const SolverConfig& cfg) const override {
    const std::size_t n = q0.size();
    Vec v0 = legendre_inverse(sys_, q0, p0);
    Vec seed(n);
    for (std::size_t i = 0; i < n; ++i) seed[i] = q0[i] + h * v0[i];
    return solve_forward(q0, Vec(p0.begin(), p0.end()), seed, h, cfg, nullptr);
  }

  StateCotangent legendre_minus(ConstSpan q0, ConstSpan q1,
                                double h) const override {
    auto der = ld_.derivs(q0, q1, h);
    auto [fm, fp] = boundary_forces(q0, q1, h);
    Vec p(der.d1.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = -der.d1[i] - fm[i];
    return {Vec(q0.begin(), q0.end()), std::move(p)};
  }

  StateCotangent legendre_plus(ConstSpan q0, ConstSpan q1,
                               double h) const override {
    auto der = ld_.derivs(q0, q1, h);
    auto [fm, fp] = boundary_forces(q0, q1, h);
    Vec p(der.d2.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = der.d2[i] + fp[i];
    return {Vec(q1.begin(), q1.end()), std::move(p)};
  }

 private:
  // Newton on d1 Ld(q_base, x) + f-(q_base, x) + rhs = 0.
  Vec solve_forward(ConstSpan q_base, const Vec& rhs, Vec seed, double h,
                    const SolverConfig& cfg, int* iters) const {
    const std::size_t n = q_base.size();
    Vec x = std::move(seed);
    StallGuard guard(cfg.newton_tol);
    Vec best_x = x;
    for (int it = 0; it <= cfg.max_iters; ++it) {
      auto der = ld_.derivs(q_base, x, h);
      auto [fm, fp] = boundary_forces(q_base, x, h);
      Vec r(n);
      for (std::size_t i = 0; i < n; ++i) r[i] = der.d1[i] + fm[i] + rhs[i];
      if (!all_finite(r)) throw NewtonDiverged(it, norm_inf(r));
      const NewtonVerdict v = guard.check(norm_inf(r));
      if (v == NewtonVerdict::kAccept) {
        if (iters) *iters = it;
        return x;
      }
      if (v == NewtonVerdict::kAcceptBest) {
        if (iters) *iters = it;
        return best_x;
      }
      if (guard.improved()) best_x = x;
      if (it == cfg.max_iters) throw NewtonDiverged(it, norm_inf(r));
      // d f-/dq1 = h (1-a) [a DqF + DvF / h] at (q_alpha, v_h)
      Vec qa(n), vh(n);
      for (std::size_t i = 0; i < n; ++i) {
        qa[i] = (1.0 - alpha_) * q_base[i] + alpha_ * x[i];
        vh[i] = (x[i] - q_base[i]) / h;
      }
      Vec z = concat(qa, vh);
      Mat jf = jacobian(
          [&](DualSpan zd) {
            return sys_.force(zd.subspan(0, n), zd.subspan(n, n));
          },
          z);
      Mat jac = der.d12;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          jac(i, j) += h * (1.0 - alpha_) *
                           (alpha_ * jf(i, j)) +
                       (1.0 - alpha_) * jf(i, n + j);
      auto delta = try_solve(jac, r);
      if (!delta) throw SingularD12();
      for (std::size_t i = 0; i < n; ++i) x[i] -= (*delta)[i];
    }
    throw NewtonDiverged(cfg.max_iters, 0.0);
  }

  double alpha_;
  AlphaRuleLagrangian ld_;
};

class LobattoForcedIntegrator final : public ForcedIntegrator {
 public:
  LobattoForcedIntegrator(ForcedSystem sys, int stages)
      : ForcedIntegrator(std::move(sys), 2 * stages - 2),
        scheme_(lobatto_scheme(stages)),
        dmat_(diff_matrix(scheme_.nodes)) {}

  std::pair<Vec, Vec> boundary_forces(ConstSpan q0, ConstSpan q1,
                                      double h) const override {
    const std::size_t n = q0.size();
    const std::size_t s = static_cast<std::size_t>(scheme_.stages);
    SolverConfig cfg;
    Vec theta = solve_forced_stages(sys_, scheme_, dmat_, q0, q1, h, cfg);
    Vec f0 = sys_.force(q0, velocity(theta, 0, q0, q1, h));
    Vec f1 = sys_.force(q1, velocity(theta, s - 1, q0, q1, h));
    Vec fm(n), fp(n);
    for (std::size_t i = 0; i < n; ++i) {
      fm[i] = h * scheme_.weights[0] * f0[i];
      fp[i] = h * scheme_.weights[s - 1] * f1[i];
    }
    return {std::move(fm), std::move(fp)};
  }

  Vec residual(ConstSpan q_prev, ConstSpan q_curr, ConstSpan q_next,
               double h) const override {
    Vec rhs = momentum_rhs(q_prev, q_curr, h);
    SolverConfig cfg;
    Vec theta = solve_forced_stages(sys_, scheme_, dmat_, q_curr, q_next, h,
                                    cfg);
    auto [gq0, gq1] = boundary_gradients(theta, q_curr, q_next, h);
    Vec f0 = sys_.force(q_curr, velocity(theta, 0, q_curr, q_next, h));
    Vec r(q_curr.size());
    for (std::size_t i = 0; i < r.size(); ++i)
      r[i] = gq0[i] + h * scheme_.weights[0] * f0[i] + rhs[i];
    return r;
  }

  Vec step(ConstSpan q_prev, ConstSpan q_curr, double h,
           const SolverConfig& cfg, int* iters) const override {
    Vec rhs = momentum_rhs(q_prev, q_curr, h);
    Vec seed(q_curr.size());
    for (std::size_t i = 0; i < seed.size(); ++i)
      seed[i] = 2.0 * q_curr[i] - q_prev[i];
    return solve_interval(q_curr, rhs, seed, h, cfg, iters);
  }

  Vec initialize(ConstSpan q0, ConstSpan p0, double h,
                 const SolverConfig& cfg) const override {
    Vec v0 = legendre_inverse(sys_, q0, p0);
    Vec seed(q0.size());
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = q0[i] + h * v0[i];
    return solve_interval(q0, Vec(p0.begin(), p0.end()), seed, h, cfg,
                          nullptr);
  }

  StateCotangent legendre_minus(ConstSpan q0, ConstSpan q1,
                                double h) const override {
    SolverConfig cfg;
    Vec theta = solve_forced_stages(sys_, scheme_, dmat_, q0, q1, h, cfg);
    auto [gq0, gq1] = boundary_gradients(theta, q0, q1, h);
    Vec f0 = sys_.force(q0, velocity(theta, 0, q0, q1, h));
    Vec p(q0.size());
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = -gq0[i] - h * scheme_.weights[0] * f0[i];
    return {Vec(q0.begin(), q0.end()), std::move(p)};
  }

  StateCotangent legendre_plus(ConstSpan q0, ConstSpan q1,
                               double h) const override {
    const std::size_t s = static_cast<std::size_t>(scheme_.stages);
    SolverConfig cfg;
    Vec theta = solve_forced_stages(sys_, scheme_, dmat_, q0, q1, h, cfg);
    auto [gq0, gq1] = boundary_gradients(theta, q0, q1, h);
    Vec f1 = sys_.force(q1, velocity(theta, s - 1, q0, q1, h));
    Vec p(q1.size());
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = gq1[i] + h * scheme_.weights[s - 1] * f1[i];
    return {Vec(q1.begin(), q1.end()), std::move(p)};
  }

 private:
  Vec velocity(const Vec& theta, std::size_t i, ConstSpan q0, ConstSpan q1,
               double h) const {
    const std::size_t n = q0.size();
    const std::size_t s = static_cast<std::size_t>(scheme_.stages);
    Vec xd(n, 0.0);
    for (std::size_t j = 0; j < s; ++j) {
      ConstSpan xj = j == 0 ? q0
                     : j == s - 1
                         ? q1
                         : ConstSpan(theta).subspan((j - 1) * n, n);
      const double c = dmat_(i, j) / h;
      for (std::size_t k = 0; k < n; ++k) xd[k] += c * xj[k];
    }
    return xd;
  }

  // Fixed-stage action gradient blocks in (q0, q1).
  std::pair<Vec, Vec> boundary_gradients(const Vec& theta, ConstSpan q0,
                                         ConstSpan q1, double h) const {
    const std::size_t n = q0.size();
    const std::size_t s = static_cast<std::size_t>(scheme_.stages);
    Vec z = concat(q0, q1);
    Vec g = gradient(
        [&](DualSpan zd) {
          DVec consts;
          consts.reserve(theta.size());
          for (double x : theta) consts.emplace_back(x);
          auto nd = [&](std::size_t i) -> DualSpan {
            if (i == 0) return zd.subspan(0, n);
            if (i == s - 1) return zd.subspan(n, n);
            return DualSpan(consts).subspan((i - 1) * n, n);
          };
          Dual acc(0.0);
          DVec xdot(n);
          for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t k = 0; k < n; ++k) {
              Dual sum(0.0);
              for (std::size_t j = 0; j < s; ++j)
                sum += (dmat_(i, j) / h) * nd(j)[k];
              xdot[k] = sum;
            }
            acc += scheme_.weights[i] * sys_.lagrangian(nd(i), DualSpan(xdot));
          }
          return h * acc;
        },
        z);
    Vec gq0(g.begin(), g.begin() + static_cast<long>(n));
    Vec gq1(g.begin() + static_cast<long>(n), g.end());
    return {std::move(gq0), std::move(gq1)};
  }

  // D2-side constant of the previous interval: grad_q1 A + f+.
  Vec momentum_rhs(ConstSpan q_prev, ConstSpan q_curr, double h) const {
    StateCotangent c = legendre_plus(q_prev, q_curr, h);
    return c.p;
  }

  // Solve the fused system (interior stationarity + boundary equation) for
  // (theta, q_next): grad_q0 A + h b_0 F_0 + rhs = 0.
  Vec solve_interval(ConstSpan q_base, const Vec& rhs, Vec seed, double h,
                     const SolverConfig& cfg, int* iters) const {
    const std::size_t n = q_base.size();
    const std::size_t s = static_cast<std::size_t>(scheme_.stages);
    const std::size_t ni = s - 2;
    const std::size_t m = ni * n + n;  // unknowns: theta then q_next
    Vec u(m);
    {
      Vec th = stage_seed(scheme_, q_base, seed);
      std::copy(th.begin(), th.end(), u.begin());
      std::copy(seed.begin(), seed.end(), u.begin() + static_cast<long>(ni * n));
    }
    StallGuard guard(cfg.newton_tol);
    Vec best_u = u;
    for (int it = 0; it <= cfg.max_iters; ++it) {
      Vec theta(u.begin(), u.begin() + static_cast<long>(ni * n));
      Vec x(u.begin() + static_cast<long>(ni * n), u.end());
      // Full second-order pass of the free action over all nodes.
      Vec z = concat(concat(q_base, theta), x);
      SecondOrder so = second_order(
          [&](DualSpan zd) {
            Dual acc(0.0);
            DVec xdot(n);
            for (std::size_t i = 0; i < s; ++i) {
              for (std::size_t k = 0; k < n; ++k) {
                Dual sum(0.0);
                for (std::size_t j = 0; j < s; ++j)
                  sum += (dmat_(i, j) / h) * zd[j * n + k];
                xdot[k] = sum;
              }
              acc +=
                  scheme_.weights[i] * sys_.lagrangian(zd.subspan(i * n, n),
                                                       DualSpan(xdot));
            }
            return h * acc;
          },
          z);
      // Residual rows: interior stationarity then the boundary equation.
      Vec r(m, 0.0);
      Mat jac(m, m);
      // Action parts. Unknown column blocks are nodes 1..s-1.
      for (std::size_t row = 0; row < m; ++row) {
        const std::size_t zrow = row < ni * n ? n + row : row - ni * n;
        r[row] = so.grad[zrow];
        for (std::size_t col = 0; col < m; ++col)
          jac(row, col) = so.hess(zrow, n + col);
      }
      // Force parts: h b_j <F_j, dX_j/du> contributions on every row that
      // carries a force (interior stages and the boundary row via node 0).
      for (std::size_t jn = 0; jn < s; ++jn) {
        const bool interior = jn >= 1 && jn + 1 < s;
        if (!interior && jn != 0) continue;
        Vec xj = jn == 0 ? Vec(q_base.begin(), q_base.end())
                 : jn + 1 == s
                     ? x
                     : Vec(theta.begin() + static_cast<long>((jn - 1) * n),
                           theta.begin() + static_cast<long>(jn * n));
        Vec vj(n, 0.0);
        for (std::size_t j2 = 0; j2 < s; ++j2) {
          const double c = dmat_(jn, j2) / h;
          for (std::size_t k = 0; k < n; ++k) vj[k] += c * z[j2 * n + k];
        }
        Vec f = sys_.force(xj, vj);
        Vec zf = concat(xj, vj);
        Mat jf = jacobian(
            [&](DualSpan zd) {
              return sys_.force(zd.subspan(0, n), zd.subspan(n, n));
            },
            zf);
        const double hb = h * scheme_.weights[jn];
        const std::size_t row0 = interior ? (jn - 1) * n : ni * n;
        for (std::size_t i = 0; i < n; ++i) r[row0 + i] += hb * f[i];
        for (std::size_t colnode = 1; colnode < s; ++colnode)
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t l = 0; l < n; ++l) {
              double term =
                  scheme_.weights[jn] * jf(i, n + l) * dmat_(jn, colnode);
              if (colnode == jn) term += hb * jf(i, l);
              jac(row0 + i, (colnode - 1) * n + l) += term;
            }
      }
      for (std::size_t i = 0; i < n; ++i) r[ni * n + i] += rhs[i];
      if (!all_finite(r)) throw NewtonDiverged(it, norm_inf(r));
      const NewtonVerdict v = guard.check(norm_inf(r));
      if (v == NewtonVerdict::kAccept) {
        if (iters) *iters = it;
        return x;
      }
      if (v == NewtonVerdict::kAcceptBest) {
        if (iters) *iters = it;
        return Vec(best_u.begin() + static_cast<long>(ni * n), best_u.end());
      }
      if (guard.improved()) best_u = u;
      if (it == cfg.max_iters) throw NewtonDiverged(it, norm_inf(r));
      auto delta = try_solve(jac, r);
      if (!delta) throw SingularD12();
      for (std::size_t i = 0; i < m; ++i) u[i] -= (*delta)[i];
    }
    throw NewtonDiverged(cfg.max_iters, 0.0);
  }

  QuadratureScheme scheme_;
  Mat dmat_;
};

}  // namespace

std::unique_ptr<ForcedIntegrator> forced_alpha_rule(const ForcedSystem& sys,
                                                    double alpha) {
  return std::make_unique<AlphaForcedIntegrator>(sys, alpha);
}

std::unique_ptr<ForcedIntegrator> forced_lobatto(const ForcedSystem& sys,
                                                 int stages) {
  return std::make_unique<LobattoForcedIntegrator>(sys, stages);
}

TrajectoryRecord integrate(const ForcedIntegrator& fi, const StateTangent& s0,
                           int n_steps, double h, const SolverConfig& cfg) {
  if (h < 1e-13) throw StepTooSmall(h);
  const ForcedSystem& sys = fi.system();
  TrajectoryRecord rec;
  Vec p0 = legendre(sys, s0).p;
  std::vector<Vec> chain;
  chain.push_back(s0.q);
  chain.push_back(fi.initialize(s0.q, p0, h, cfg));
  rec.newton_iters = {0, 0};
  for (int k = 1; k < n_steps; ++k) {
    int iters = 0;
    try {
      chain.push_back(fi.step(chain[static_cast<std::size_t>(k) - 1],
                              chain[static_cast<std::size_t>(k)], h, cfg,
                              &iters));
    } catch (const Error& e) {
      throw Error("step " + std::to_string(k + 1) + ": " + e.what());
    }
    rec.newton_iters.push_back(iters);
    rec.total_newton_iters += iters;
  }
  for (std::size_t k = 0; k < chain.size(); ++k) {
    rec.t.push_back(static_cast<double>(k) * h);
    Vec p = k == 0 ? fi.legendre_minus(chain[0], chain[1], h).p
                   : fi.legendre_plus(chain[k - 1], chain[k], h).p;
    Vec v = legendre_inverse(sys, chain[k], p);
    rec.energy.push_back(dot(p, v) - sys.lagrangian(chain[k], v));
    rec.q.push_back(chain[k]);
    rec.v.push_back(std::move(v));
    rec.p.push_back(std::move(p));
    rec.identity_defect.push_back(0.0);
  }
  for (std::size_t k = 0; k + 1 < chain.size(); ++k)
    rec.p_minus.push_back(fi.legendre_minus(chain[k], chain[k + 1], h).p);
  for (std::size_t k = 1; k < chain.size(); ++k)
    rec.p_plus.push_back(fi.legendre_plus(chain[k - 1], chain[k], h).p);
  return rec;
}

}  // namespace fvi
