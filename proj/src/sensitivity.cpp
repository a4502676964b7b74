#include "cop/sensitivity.hpp"

#include <algorithm>
#include <sstream>

#include "cop/csv.hpp"

namespace cop {

EvalueResult evalues(double rr_point, std::optional<double> rr_ul) {
  EvalueResult r;
  r.rr_point = rr_point;
  r.rr_ul = rr_ul;
  r.reciprocal = rr_point > 1.0;
  r.e_point = evalue_point(rr_point);
  r.e_ul = rr_ul ? evalue_ul(*rr_ul) : 1.0;
  return r;
}

SensitivitySpec SensitivitySpec::common(double rr_u_fix, double s1_fix, double s2_fix) {
  SensitivitySpec s;
  s.mode = SensitivityMode::CommonLogLinear;
  s.rr_ud_fix = rr_u_fix;
  s.rr_eu_fix = rr_u_fix;
  s.s1_fix = s1_fix;
  s.s2_fix = s2_fix;
  if (!(s2_fix > s1_fix)) throw Error(ErrorKind::Config, "sensitivity: s1_fix must be below s2_fix");
  if (!(rr_u_fix >= 1.0)) throw Error(ErrorKind::Config, "sensitivity: RR_U must be >= 1");
  s.gamma = std::log(rr_u_fix) / (s2_fix - s1_fix);
  s.validate();
  return s;
}

SensitivitySpec SensitivitySpec::fixed_pair(double rr_ud_fix, double rr_eu_fix, double s1_fix, double s2_fix) {
  SensitivitySpec s;
  s.mode = SensitivityMode::FixedPairOnly;
  s.rr_ud_fix = rr_ud_fix;
  s.rr_eu_fix = rr_eu_fix;
  s.s1_fix = s1_fix;
  s.s2_fix = s2_fix;
  s.gamma = 0.0;
  s.validate();
  return s;
}

void SensitivitySpec::validate() const {
  if (!(rr_ud_fix >= 1.0) || !(rr_eu_fix >= 1.0))
    throw Error(ErrorKind::Config, "sensitivity: RR_UD and RR_EU must be >= 1");
  if (!(s2_fix > s1_fix)) throw Error(ErrorKind::Config, "sensitivity: s1_fix must be below s2_fix");
  if (!(gamma >= 0.0)) throw Error(ErrorKind::Config, "sensitivity: gamma must be >= 0");
  if (mode == SensitivityMode::CommonLogLinear && rr_ud_fix != rr_eu_fix)
    throw Error(ErrorKind::Config, "sensitivity: common mode requires RR_UD = RR_EU");
}

std::string SensitivitySpec::hash() const {
  std::ostringstream s;
  s << (mode == SensitivityMode::CommonLogLinear ? "common" : "fixed") << '|' << csv::format(rr_ud_fix) << '|'
    << csv::format(rr_eu_fix) << '|' << csv::format(s1_fix) << '|' << csv::format(s2_fix);
  return csv::hex(csv::fnv1a(s.str()));
}

double rru_at(const SensitivitySpec& spec, double s1, double s2) {
  if (spec.mode != SensitivityMode::CommonLogLinear)
    throw Error(ErrorKind::Config, "RR_U(s1, s2) is only defined in common log-linear mode");
  if (s1 > s2) throw Error(ErrorKind::Domain, "RR_U(s1, s2) requires s1 <= s2");
  if (s1 == spec.s1_fix && s2 == spec.s2_fix) return spec.rr_ud_fix;
  return std::exp(spec.gamma * (s2 - s1));
}

double bias_at(const SensitivitySpec& spec, double s1, double s2) {
  if (spec.mode == SensitivityMode::FixedPairOnly) {
    if (s1 == spec.s1_fix && s2 == spec.s2_fix) return bias_factor(spec.rr_ud_fix, spec.rr_eu_fix);
    throw Error(ErrorKind::Config, "fixed-pair sensitivity spec defines B only at its fixed pair");
  }
  const double rr = rru_at(spec, s1, s2);
  return bias_factor(rr, rr);
}

Eigen::ArrayXd anchor_multipliers(const Eigen::ArrayXd& grid, double scent, const SensitivitySpec& spec) {
  Eigen::ArrayXd mult(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double s = grid(i);
    mult(i) = s >= scent ? bias_at(spec, scent, s) : 1.0 / bias_at(spec, s, scent);
  }
  return mult;
}

CurveEstimate conservative_risk_curve(const CurveEstimate& curve, double scent, const SensitivitySpec& spec) {
  if (!is_risk_kind(curve.kind)) throw Error(ErrorKind::Data, "conservative bound needs a risk curve");
  bool on_grid = false;
  for (Eigen::Index i = 0; i < curve.size(); ++i) on_grid = on_grid || curve.grid(i) == scent;
  if (!on_grid) throw Error(ErrorKind::Anchoring, "anchor s_cent=" + csv::format(scent) + " is not a grid point");

  const Eigen::ArrayXd mult = anchor_multipliers(curve.grid, scent, spec);
  CurveEstimate out;
  out.grid = curve.grid;
  out.kind = CurveKind::ControlledRiskBound;
  out.meta = curve.meta;
  out.meta.scent = scent;
  out.meta.sensitivity_hash = spec.hash();
  out.meta.warnings.push_back("anchored at s_cent=" + csv::format(scent) +
                              " assuming controlled and marginalized risks coincide there");

  auto transform = [&](const Eigen::ArrayXd& values, const char* label) {
    Eigen::ArrayXd t = values * mult;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      if (t(i) > 1.0 || t(i) < 0.0) {
        out.meta.warnings.push_back(std::string("clamped ") + label + " at s=" + csv::format(out.grid(i)) +
                                    " from " + csv::format(t(i)));
        t(i) = std::clamp(t(i), 0.0, 1.0);
      }
    }
    return t;
  };
  out.point = transform(curve.point, "estimate");
  if (curve.ci_lo) out.ci_lo = transform(*curve.ci_lo, "ci_lo");
  if (curve.ci_hi) out.ci_hi = transform(*curve.ci_hi, "ci_hi");
  return out;
}

std::vector<SurfaceCell> rru_surface(const SensitivitySpec& spec, const Eigen::ArrayXd& grid) {
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    if (!(grid(i) > grid(i - 1))) throw Error(ErrorKind::Data, "surface grid must be increasing");
  std::vector<SurfaceCell> cells;
  cells.reserve(static_cast<std::size_t>(grid.size() * (grid.size() + 1) / 2));
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    for (Eigen::Index j = i; j < grid.size(); ++j) {
      const double rr = rru_at(spec, grid(i), grid(j));
      cells.push_back({grid(i), grid(j), rr, bias_factor(rr, rr)});
    }
  }
  return cells;
}

}  // namespace cop
