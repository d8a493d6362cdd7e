#include "mctsnmt/model.hpp"

#include <algorithm>
#include <cmath>

namespace mctsnmt {

void State::validate() const {
  if (prefix.empty() || prefix.front() != kBos) {
    throw Error("state: prefix must begin with BOS");
  }
  for (std::size_t i = 1; i + 1 < prefix.size(); ++i) {
    if (prefix[i] == kEos) throw Error("state: EOS before the end of prefix");
  }
}

State initial_state(const Sequence& src) { return State{src, {kBos}}; }

void TrainParams::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be > 0");
  if (l2 < 0.0) throw Error("l2 coefficient must be >= 0");
  if (value_loss_weight < 0.0) throw Error("value_loss_weight must be >= 0");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::tabular: return "tabular";
    case ModelKind::oracle: return "oracle";
    case ModelKind::remote: return "remote";
  }
  return "unknown";
}

LossReport Model::apply_update(std::span<const TrainingSample>,
                               const TrainParams&) {
  throw Error(to_string(kind()) + " model: not trainable");
}

LossReport Model::apply_policy_gradient(std::span<const PolicyGradientStep>,
                                        const TrainParams&) {
  throw Error(to_string(kind()) + " model: policy-gradient updates unsupported");
}

Evaluation Model::evaluate(const State& state) const {
  auto out = evaluate_batch(std::span<const State>(&state, 1));
  return std::move(out.front());
}

Sequence greedy_decode(const Model& model, const Sequence& src,
                       std::size_t max_len) {
  if (max_len < 1) throw Error("greedy_decode: max_len < 1");
  State state = initial_state(src);
  while (state.emitted() < max_len) {
    const Evaluation ev = model.evaluate(state);
    // max_element returns the first maximum, i.e. the lowest id.
    const auto best = std::max_element(ev.priors.begin(), ev.priors.end());
    const auto action = static_cast<TokenId>(best - ev.priors.begin());
    state.prefix.push_back(action);
    if (action == kEos) break;
  }
  return Sequence(state.prefix.begin() + 1, state.prefix.end());
}

// ---------------------------------------------------------------------------
// TabularModel

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

TabularModel::TabularModel(std::size_t vocab_size, Reorder reorder)
    : vocab_size_(vocab_size),
      reorder_(reorder),
      theta_((vocab_size + 1) * vocab_size + (vocab_size + 1), 0.0) {
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw Error("tabular model: vocabulary too small");
  }
}

std::size_t TabularModel::feature(const State& state) const {
  const std::size_t t = state.emitted();
  if (t >= state.src.size()) return vocab_size_;
  const std::size_t pos =
      reorder_ == Reorder::reverse ? state.src.size() - 1 - t : t;
  const TokenId tok = state.src[pos];
  if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size_) {
    throw Error("tabular model: source id " + std::to_string(tok) +
                " out of range");
  }
  return static_cast<std::size_t>(tok);
}

std::size_t TabularModel::logit_index(std::size_t feature,
                                      TokenId action) const {
  return feature * vocab_size_ + static_cast<std::size_t>(action);
}

std::size_t TabularModel::value_index(std::size_t feature) const {
  return num_features() * vocab_size_ + feature;
}

std::vector<double> TabularModel::priors(std::size_t feature) const {
  const double* row = theta_.data() + feature * vocab_size_;
  const double mx = *std::max_element(row, row + vocab_size_);
  std::vector<double> p(vocab_size_);
  double sum = 0.0;
  for (std::size_t k = 0; k < vocab_size_; ++k) {
    p[k] = std::exp(row[k] - mx);
    sum += p[k];
  }
  for (double& x : p) x /= sum;
  return p;
}

double TabularModel::value(std::size_t feature) const {
  return sigmoid(theta_[value_index(feature)]);
}

std::vector<Evaluation> TabularModel::evaluate_batch(
    std::span<const State> states) const {
  if (states.empty()) throw Error("evaluate_batch: empty batch");
  std::vector<Evaluation> out;
  out.reserve(states.size());
  for (const State& s : states) {
    const std::size_t f = feature(s);
    out.push_back(Evaluation{priors(f), value(f)});
  }
  return out;
}

void TabularModel::randomize_logits(double scale, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = num_features() * vocab_size_;
  for (std::size_t i = 0; i < n; ++i) {
    // Box-Muller on the portable uniform source.
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    theta_[i] += scale * std::sqrt(-2.0 * std::log(u1)) *
                 std::cos(2.0 * M_PI * u2);
  }
}

double TabularModel::l2_term(const TrainParams& params,
                             std::vector<double>* gradient,
                             bool include_values) const {
  if (params.l2 == 0.0) return 0.0;
  const std::size_t end =
      include_values ? theta_.size() : num_features() * vocab_size_;
  double sq = 0.0;
  for (std::size_t i = 0; i < end; ++i) {
    sq += theta_[i] * theta_[i];
    if (gradient) (*gradient)[i] += 2.0 * params.l2 * theta_[i];
  }
  return params.l2 * sq;
}

LossReport TabularModel::update_objective(std::span<const TrainingSample> batch,
                                          const TrainParams& params,
                                          std::vector<double>* gradient) const {
  if (gradient) gradient->assign(theta_.size(), 0.0);
  const double wv = params.value_loss_weight;
  LossReport r;
  for (const TrainingSample& s : batch) {
    const std::size_t f = feature(s.state);
    const double v = value(f);
    if (wv > 0.0) {
      const double resid = s.bleu - v;
      r.value_term += wv * resid * resid;
      if (gradient) {
        (*gradient)[value_index(f)] += -2.0 * wv * resid * v * (1.0 - v);
      }
    }
    if (s.visit_probs.empty()) continue;
    const std::vector<double> p = priors(f);
    double active_mass = 0.0;
    for (const ActionProb& ap : s.visit_probs) {
      const double pa = p[static_cast<std::size_t>(ap.action)];
      if (pa > kProbFloor) {
        r.policy_term -= ap.prob * std::log(pa);
        active_mass += ap.prob;
        if (gradient) (*gradient)[logit_index(f, ap.action)] -= ap.prob;
      } else {
        r.policy_term -= ap.prob * std::log(kProbFloor);
      }
    }
    if (gradient && active_mass != 0.0) {
      for (std::size_t k = 0; k < vocab_size_; ++k) {
        (*gradient)[f * vocab_size_ + k] += active_mass * p[k];
      }
    }
  }
  r.l2_term = l2_term(params, gradient, wv > 0.0);
  r.total = r.value_term + r.policy_term + r.l2_term;
  return r;
}

LossReport TabularModel::policy_gradient_objective(
    std::span<const PolicyGradientStep> steps, const TrainParams& params,
    std::vector<double>* gradient) const {
  if (gradient) gradient->assign(theta_.size(), 0.0);
  LossReport r;
  bool any_value = false;
  for (const PolicyGradientStep& s : steps) {
    const std::size_t f = feature(s.state);
    if (s.value_weight > 0.0) {
      any_value = true;
      const double v = value(f);
      const double resid = s.value_target - v;
      r.value_term += s.value_weight * resid * resid;
      if (gradient) {
        (*gradient)[value_index(f)] +=
            -2.0 * s.value_weight * resid * v * (1.0 - v);
      }
    }
    if (s.weight == 0.0) continue;
    const std::vector<double> p = priors(f);
    const double pa = p[static_cast<std::size_t>(s.action)];
    if (pa > kProbFloor) {
      r.policy_term -= s.weight * std::log(pa);
      if (gradient) {
        for (std::size_t k = 0; k < vocab_size_; ++k) {
          (*gradient)[f * vocab_size_ + k] += s.weight * p[k];
        }
        (*gradient)[logit_index(f, s.action)] -= s.weight;
      }
    } else {
      r.policy_term -= s.weight * std::log(kProbFloor);
    }
  }
  r.l2_term = l2_term(params, gradient, any_value);
  r.total = r.value_term + r.policy_term + r.l2_term;
  return r;
}

void TabularModel::step(const std::vector<double>& gradient,
                        double learning_rate) {
  for (std::size_t i = 0; i < theta_.size(); ++i) {
    theta_[i] -= learning_rate * gradient[i];
  }
}

LossReport TabularModel::apply_update(std::span<const TrainingSample> batch,
                                      const TrainParams& params) {
  params.validate();
  std::vector<double> grad;
  const LossReport r = update_objective(batch, params, &grad);
  step(grad, params.learning_rate);
  return r;
}

LossReport TabularModel::apply_policy_gradient(
    std::span<const PolicyGradientStep> steps, const TrainParams& params) {
  params.validate();
  std::vector<double> grad;
  const LossReport r = policy_gradient_objective(steps, params, &grad);
  step(grad, params.learning_rate);
  return r;
}

// ---------------------------------------------------------------------------
// OracleModel

OracleModel::OracleModel(SyntheticTaskSpec spec) : task_(spec) {}

std::vector<Evaluation> OracleModel::evaluate_batch(
    std::span<const State> states) const {
  if (states.empty()) throw Error("evaluate_batch: empty batch");
  const std::size_t v = vocab_size();
  const double rest = 0.01 / static_cast<double>(v - 1);
  std::vector<Evaluation> out;
  out.reserve(states.size());
  for (const State& s : states) {
    const TokenId target = task_.target_at(s.src, s.emitted());
    Evaluation ev{std::vector<double>(v, rest), 1.0};
    ev.priors[static_cast<std::size_t>(target)] = 0.99;
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace mctsnmt
