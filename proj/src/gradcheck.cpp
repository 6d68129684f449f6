#include "tacnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tacnet {

GradCheckReport finite_diff_check(const GraphFunction& f, std::vector<Tensor> wrt, double h, double tol) {
  for (auto& t : wrt) {
    if (!t.requires_grad()) throw std::invalid_argument("finite_diff_check: every checked tensor must require grad");
    t.zero_grad();
  }
  double f0 = 0.0;
  {
    Graph g;
    Tensor loss = f(g);
    f0 = loss.item();
    g.backward(loss);
  }
  const double floor = kGradCheckFloor * std::max(1.0, std::abs(f0));
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (auto& t : wrt) analytic.emplace_back(t.grad().begin(), t.grad().end());

  auto evaluate = [&f]() {
    Graph g(false);
    return f(g).item();
  };

  GradCheckReport report;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double up = evaluate();
      values[i] = original - h;
      const double down = evaluate();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[ti][i];
      const double rel = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      ++report.coordinates;
      if (rel > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_tensor = ti;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor(Graph&, const Tensor&)>& f, Tensor at, double h,
                                  double tol) {
  if (!at.requires_grad()) at.set_requires_grad(true);
  return finite_diff_check([&f, at](Graph& g) { return f(g, at); }, {at}, h, tol);
}

std::string describe(const GradCheckReport& report) {
  std::ostringstream os;
  os << (report.pass ? "pass" : "FAIL") << " max_rel_error=" << report.max_rel_error << " over "
     << report.coordinates << " coords (worst tensor " << report.worst_tensor << " index " << report.worst_index
     << ": analytic " << report.worst_analytic << " numeric " << report.worst_numeric << ")";
  return os.str();
}

}  // namespace tacnet
