#pragma once

#include <span>
#include <vector>

namespace tacnet::tac {

/// Raw per-anchor classifier outputs. c_plus[0] is background; c_minus[i-1]
/// belongs to class i (the state scores carry no background slot).
struct ScorePair {
  std::vector<double> c_plus;   // K+1
  std::vector<double> c_minus;  // K

  std::size_t num_classes() const { return c_minus.size(); }
  void validate() const;
};

/// Views over the same data, for callers holding scores in packed buffers.
struct ScoreView {
  std::span<const double> c_plus;
  std::span<const double> c_minus;
};

struct TacOutput {
  std::vector<double> p;  // K+1 category probabilities
  std::vector<double> t;  // K active-state probabilities; 1 - t[i] is transitional
};

/// p_i = softmax_j(c+_j + c-_j) with the background differential slot fixed to 0.
std::vector<double> category_probs(ScoreView s);
/// t_i = sigmoid(c+_i - c-_i) for i in [1, K]; returned 0-based (t[i-1]).
std::vector<double> state_probs(ScoreView s);
TacOutput decouple(ScoreView s);

inline ScoreView view(const ScorePair& s) { return {s.c_plus, s.c_minus}; }
inline std::vector<double> category_probs(const ScorePair& s) { return category_probs(view(s)); }
inline std::vector<double> state_probs(const ScorePair& s) { return state_probs(view(s)); }

/// Category logit for slot j in [0, K] (common mode).
double category_logit(ScoreView s, std::size_t j);
/// State logit for class i in [1, K] (differential mode).
double state_logit(ScoreView s, std::size_t i);

enum class State { kBackground, kTransitional, kActive };

struct Verdict {
  State state = State::kBackground;
  std::size_t label = 0;  // argmax over [0, K]
  double p = 0.0;         // p[label]
  double t = 0.0;         // t for label, 0 when background
};

Verdict classify(const TacOutput& out, double p_threshold = 0.5, double t_threshold = 0.5);
Verdict classify(const ScorePair& s, double p_threshold = 0.5, double t_threshold = 0.5);

}  // namespace tacnet::tac
