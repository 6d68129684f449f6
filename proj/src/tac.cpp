#include "tacnet/tac.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tacnet::tac {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_view(ScoreView s) {
  if (s.c_plus.size() != s.c_minus.size() + 1 || s.c_minus.empty()) {
    throw std::invalid_argument("ScorePair: expected |c_plus| = K+1 and |c_minus| = K >= 1, got " +
                                std::to_string(s.c_plus.size()) + " and " + std::to_string(s.c_minus.size()));
  }
}

}  // namespace

void ScorePair::validate() const {
  check_view(view(*this));
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(c_plus.begin(), c_plus.end(), finite) || !std::all_of(c_minus.begin(), c_minus.end(), finite)) {
    throw std::invalid_argument("ScorePair: non-finite score");
  }
}

double category_logit(ScoreView s, std::size_t j) { return j == 0 ? s.c_plus[0] : s.c_plus[j] + s.c_minus[j - 1]; }

double state_logit(ScoreView s, std::size_t i) { return s.c_plus[i] - s.c_minus[i - 1]; }

std::vector<double> category_probs(ScoreView s) {
  check_view(s);
  const std::size_t n = s.c_plus.size();
  std::vector<double> p(n);
  for (std::size_t j = 0; j < n; ++j) p[j] = category_logit(s, j);
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> state_probs(ScoreView s) {
  check_view(s);
  std::vector<double> t(s.c_minus.size());
  for (std::size_t i = 1; i <= t.size(); ++i) t[i - 1] = sigmoid(state_logit(s, i));
  return t;
}

TacOutput decouple(ScoreView s) { return {category_probs(s), state_probs(s)}; }

Verdict classify(const TacOutput& out, double p_threshold, double t_threshold) {
  if (!(p_threshold > 0.0 && p_threshold < 1.0) || !(t_threshold > 0.0 && t_threshold < 1.0)) {
    throw std::invalid_argument("classify: thresholds must lie in (0, 1)");
  }
  Verdict v;
  v.label = static_cast<std::size_t>(std::distance(out.p.begin(), std::max_element(out.p.begin(), out.p.end())));
  v.p = out.p[v.label];
  if (v.label == 0 || v.p < p_threshold) {
    v.state = State::kBackground;
    return v;
  }
  v.t = out.t[v.label - 1];
  v.state = v.t >= t_threshold ? State::kActive : State::kTransitional;
  return v;
}

Verdict classify(const ScorePair& s, double p_threshold, double t_threshold) {
  return classify(decouple(view(s)), p_threshold, t_threshold);
}

}  // namespace tacnet::tac
