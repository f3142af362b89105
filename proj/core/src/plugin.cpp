#include "fedcm/plugin.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedcm {

void PluginConfig::validate() const {
  if (const auto* p = std::get_if<PseudoInverseSolve>(&inversion); p && !(p->rel_tol > 0.0))
    throw std::invalid_argument("PluginConfig: pseudoinverse tolerance must be > 0");
  if (const auto* r = std::get_if<RidgedSolve>(&inversion); r && !(r->eps > 0.0))
    throw std::invalid_argument("PluginConfig: ridge eps must be > 0");
  if (constraint_radius && !(*constraint_radius > 0.0))
    throw std::invalid_argument("PluginConfig: constraint radius must be > 0");
}

namespace {

CropResult solve_cropped(const Matrix& a, const Vector& b, const InversionRule& rule) {
  CropResult out;
  if (const auto* r = std::get_if<RidgedSolve>(&rule)) {
    Matrix reg = a;
    reg.diagonal().array() += r->eps;
    Eigen::FullPivLU<Matrix> lu(reg);
    if (lu.isInvertible()) {
      out.theta = lu.solve(b);
      return out;
    }
    out.pinv_fallback = true;
    auto p = linalg::pinv(reg);
    out.theta = p.value * b;
    out.rank_deficient = p.rank_deficient;
    return out;
  }
  auto p = linalg::pinv(a, std::get<PseudoInverseSolve>(rule).rel_tol);
  out.theta = p.value * b;
  out.rank_deficient = p.rank_deficient;
  return out;
}

}  // namespace

CropResult crop_predictor(const MomentPair& moments, const FeaturePattern& pattern, const PluginConfig& cfg) {
  cfg.validate();
  if (pattern.dim() != moments.dim()) throw std::invalid_argument("crop_predictor: pattern dimension mismatch");
  if (pattern.empty()) return {Vector(0), false, false};

  Matrix a = crop_matrix(moments.sigma(), pattern, pattern);
  const Vector b = crop_vector(moments.gamma(), pattern);
  if (cfg.psd_projection) a = linalg::psd_project(a);

  if (cfg.constraint_radius) {
    auto sol = minimize_quadratic_on_ball(a, b, *cfg.constraint_radius, cfg.pgd);
    return {std::move(sol.theta), false, false};
  }
  return solve_cropped(a, b, cfg.inversion);
}

BallSolution minimize_quadratic_on_ball(const Matrix& a, const Vector& b, double radius,
                                        const ProjectedGradientOptions& opt) {
  if (!(radius > 0.0)) throw std::invalid_argument("minimize_quadratic_on_ball: radius must be > 0");
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw std::invalid_argument("minimize_quadratic_on_ball: dimension mismatch");
  const Index p = b.size();
  if (p == 0) return {Vector(0), 0.0, 0, true};

  const Matrix sym = linalg::symmetrize(a);
  const auto eig = linalg::sym_eig(sym);
  const double lip = eig.values.cwiseAbs().maxCoeff();
  const double step = lip > 0.0 ? 1.0 / lip : 1.0;

  auto objective = [&](const Vector& t) { return t.dot(sym * t) - 2.0 * b.dot(t); };
  auto project = [radius](Vector t) {
    const double nrm = t.norm();
    if (nrm > radius) t *= radius / nrm;
    return t;
  };

  std::vector<Vector> starts;
  starts.push_back(Vector::Zero(p));
  if (b.norm() > 0.0) starts.push_back(radius * b / b.norm());
  if (eig.values(0) < 0.0) {
    starts.push_back(radius * eig.vectors.col(0));
    starts.push_back(-radius * eig.vectors.col(0));
  }

  BallSolution best;
  best.objective = std::numeric_limits<double>::infinity();
  for (const Vector& start : starts) {
    Vector t = project(start);
    BallSolution run;
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
      const Vector grad = sym * t - b;  // half the true gradient
      Vector next = project(t - step * grad);
      const double mapping = (t - next).norm() / step;
      t = std::move(next);
      run.iterations = it;
      if (mapping <= opt.tolerance) {
        run.converged = true;
        break;
      }
    }
    run.theta = t;
    run.objective = objective(t);
    if (run.objective < best.objective || (run.converged && !best.converged && run.objective <= best.objective))
      best = std::move(run);
  }
  return best;
}

BallSolution constrained_crop_predictor(const MomentPair& moments, const FeaturePattern& pattern, double radius,
                                        const ProjectedGradientOptions& opt) {
  if (pattern.dim() != moments.dim())
    throw std::invalid_argument("constrained_crop_predictor: pattern dimension mismatch");
  return minimize_quadratic_on_ball(crop_matrix(moments.sigma(), pattern, pattern),
                                    crop_vector(moments.gamma(), pattern), radius, opt);
}

const char* to_string(PluginStatus s) {
  switch (s) {
    case PluginStatus::Ok: return "ok";
    case PluginStatus::PseudoInverseFallback: return "pinv-fallback";
    case PluginStatus::Unidentifiable: return "unidentifiable";
  }
  return "unknown";
}

bool pattern_covered(const MomentPair& moments, const FeaturePattern& pattern) {
  for (Index a : pattern.observed())
    for (Index b : pattern.observed())
      if (!moments.coverage()(a, b)) return false;
  return true;
}

PluginStatus add_plugin_client(PluginFit& fit, const MomentPair& moments, const ClientSpec& client,
                               const PluginConfig& cfg) {
  auto res = crop_predictor(moments, client.pattern, cfg);
  PluginStatus st = PluginStatus::Ok;
  if (!pattern_covered(moments, client.pattern)) {
    st = PluginStatus::Unidentifiable;
  } else if (res.pinv_fallback || res.rank_deficient) {
    st = PluginStatus::PseudoInverseFallback;
  }
  fit.predictor.thetas[client.id] = std::move(res.theta);
  fit.status[client.id] = st;
  return st;
}

PluginFit build_clientwise_plugin(const MomentPair& moments, std::span<const ClientSpec> clients,
                                  const PluginConfig& cfg) {
  PluginFit fit;
  for (const auto& c : clients) add_plugin_client(fit, moments, c, cfg);
  return fit;
}

}  // namespace fedcm
