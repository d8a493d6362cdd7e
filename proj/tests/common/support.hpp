#pragma once

// Fixtures shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mctsnmt/bleu.hpp"
#include "mctsnmt/mcts.hpp"
#include "mctsnmt/model.hpp"
#include "mctsnmt/train.hpp"

namespace support {

using namespace mctsnmt;

inline std::uint64_t hash_state(const State& s, std::uint64_t salt) {
  std::uint64_t h = derive_seed(salt, s.src.size());
  for (TokenId t : s.src) h = derive_seed(h, static_cast<std::uint64_t>(t));
  h = derive_seed(h, 0xabcdef);
  for (TokenId t : s.prefix) h = derive_seed(h, static_cast<std::uint64_t>(t));
  return h;
}

/// Deterministic pseudo-random priors: Dirichlet(alpha) seeded by a hash
/// of the state, so repeated evaluations agree.
class RandomPriorModel final : public Model {
 public:
  RandomPriorModel(std::size_t vocab, std::uint64_t salt, double alpha = 1.0)
      : vocab_(vocab), salt_(salt), alpha_(alpha) {}

  ModelKind kind() const override { return ModelKind::oracle; }
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<Evaluation> evaluate_batch(
      std::span<const State> states) const override {
    std::vector<Evaluation> out;
    for (const State& s : states) {
      Rng rng(hash_state(s, salt_));
      std::gamma_distribution<double> gamma(alpha_, 1.0);
      Evaluation ev;
      ev.priors.resize(vocab_);
      double sum = 0.0;
      for (double& p : ev.priors) {
        p = gamma(rng) + 1e-12;
        sum += p;
      }
      for (double& p : ev.priors) p /= sum;
      ev.value = uniform01(rng);
      out.push_back(std::move(ev));
    }
    return out;
  }

 private:
  std::size_t vocab_;
  std::uint64_t salt_;
  double alpha_;
};

inline Sequence random_seq(Rng& rng, std::size_t min_len, std::size_t max_len,
                           TokenId lo, TokenId hi_exclusive) {
  const std::size_t n = min_len + uniform_index(rng, max_len - min_len + 1);
  Sequence s(n);
  for (auto& t : s) {
    t = lo + static_cast<TokenId>(
                 uniform_index(rng, static_cast<std::uint64_t>(hi_exclusive - lo)));
  }
  return s;
}

/// A valid, non-terminal-or-terminal state over vocabulary `vocab`.
inline State random_state(Rng& rng, std::size_t vocab) {
  State s;
  s.src = random_seq(rng, 1, 6, kNumSpecials, static_cast<TokenId>(vocab));
  s.prefix = {kBos};
  const std::size_t n = uniform_index(rng, s.src.size() + 3);
  for (std::size_t i = 0; i < n; ++i) {
    TokenId t = static_cast<TokenId>(uniform_index(rng, vocab));
    if (t == kEos) t = kUnk;
    s.prefix.push_back(t);
  }
  return s;
}

inline std::vector<TrainingSample> random_samples(Rng& rng, std::size_t vocab,
                                                  std::size_t n) {
  std::vector<TrainingSample> batch;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingSample s;
    s.state = random_state(rng, vocab);
    const std::size_t k = uniform_index(rng, vocab + 1);
    std::vector<TokenId> actions(vocab);
    for (std::size_t a = 0; a < vocab; ++a) actions[a] = static_cast<TokenId>(a);
    for (std::size_t a = 0; a < k; ++a) {
      std::swap(actions[a], actions[a + uniform_index(rng, vocab - a)]);
    }
    actions.resize(k);
    std::sort(actions.begin(), actions.end());
    double mass = 0.0;
    std::vector<double> w(k);
    for (auto& x : w) {
      x = uniform01(rng);
      mass += x;
    }
    const double retained = 0.5 + 0.5 * uniform01(rng);
    for (std::size_t a = 0; a < k; ++a) {
      s.visit_probs.push_back({actions[a], w[a] / mass * retained});
    }
    s.bleu = uniform01(rng);
    batch.push_back(std::move(s));
  }
  return batch;
}

inline void randomize_all(TabularModel& m, Rng& rng, double scale) {
  m.randomize_logits(scale, rng());
  auto theta = m.parameters();
  for (std::size_t f = 0; f < m.num_features(); ++f) {
    theta[m.value_index(f)] = scale * (2.0 * uniform01(rng) - 1.0);
  }
}

/// ||analytic - numeric|| / max(||analytic||, ||numeric||), with central
/// differences over every parameter.
inline double gradient_relative_error(
    TabularModel& model,
    const std::function<double(std::vector<double>*)>& objective,
    double h = 1e-5) {
  std::vector<double> analytic;
  objective(&analytic);
  auto theta = model.parameters();
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = objective(nullptr);
    theta[i] = saved - h;
    const double down = objective(nullptr);
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
    a2 += analytic[i] * analytic[i];
    n2 += numeric * numeric;
  }
  const double denom = std::sqrt(std::max(a2, n2));
  return denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
}

/// Enumerates every terminal continuation of the initial state (ends in
/// EOS or reaches `max_len` emitted tokens) and records the first tokens
/// of all BLEU maximizers. PAD and BOS are stripped before scoring, so
/// maximizers are rarely unique; any of their first tokens is optimal.
struct BruteForceResult {
  double best_bleu = -1.0;
  std::vector<TokenId> first_tokens_of_maximizers;  // sorted, unique
};

inline BruteForceResult brute_force_best(const Sequence& ref, std::size_t vocab,
                                         std::size_t max_len) {
  const Sequence stripped_ref = strip_specials(ref);
  BruteForceResult r;
  std::vector<Sequence> maximizers;
  Sequence cur;
  std::function<void()> rec = [&] {
    const bool terminal =
        !cur.empty() && (cur.back() == kEos || cur.size() >= max_len);
    if (terminal) {
      const double b = sentence_bleu(strip_specials(cur), stripped_ref).value;
      if (b > r.best_bleu + 1e-12) {
        r.best_bleu = b;
        maximizers.clear();
      }
      if (std::abs(b - r.best_bleu) <= 1e-12) maximizers.push_back(cur);
      return;
    }
    for (std::size_t a = 0; a < vocab; ++a) {
      cur.push_back(static_cast<TokenId>(a));
      rec();
      cur.pop_back();
    }
  };
  rec();
  for (const auto& m : maximizers) r.first_tokens_of_maximizers.push_back(m.front());
  std::sort(r.first_tokens_of_maximizers.begin(), r.first_tokens_of_maximizers.end());
  r.first_tokens_of_maximizers.erase(
      std::unique(r.first_tokens_of_maximizers.begin(),
                  r.first_tokens_of_maximizers.end()),
      r.first_tokens_of_maximizers.end());
  return r;
}

/// One tiny oracle instance: |V|=8, |src|=2, K=8, tau=0.1, Y=500,
/// no_value, completions capped at 4 emitted tokens.
struct OracleInstance {
  Sequence src;
  Sequence ref;
  TokenId search_argmax = kPad;
  BruteForceResult brute;

  bool agrees() const {
    const auto& f = brute.first_tokens_of_maximizers;
    return std::find(f.begin(), f.end(), search_argmax) != f.end();
  }
};

inline OracleInstance run_oracle_instance(std::uint64_t seed) {
  constexpr std::size_t kVocab = 8;
  constexpr std::size_t kMaxLen = 4;
  Rng rng(seed);
  OracleInstance inst;
  // A reverse-task pair with a fresh mapping, searched under a freshly
  // initialized (uniform) model so the priors carry no hint.
  SyntheticTaskSpec task;
  task.src_vocab_size = static_cast<int>(kVocab - kNumSpecials);
  task.min_len = task.max_len = 2;
  task.mapping_seed = rng();
  inst.src = random_seq(rng, 2, 2, kNumSpecials, kVocab);
  inst.ref = SyntheticTask(task).reference(inst.src);

  const TabularModel model(kVocab);
  SearchParams p;
  p.c_puct = 2.0;  // 0.5 is too greedy under flat priors (about 58%)
  p.top_k = static_cast<int>(kVocab);
  p.temperature = 0.1;
  p.num_simulations = 500;
  p.mode = SearchMode::no_value;
  p.max_len = kMaxLen;
  p.rng_seed = rng();
  auto root = make_root(inst.src, model, p);
  const VisitDist dist = run_simulations(*root, model, p, inst.ref);
  inst.search_argmax = dist.argmax();
  inst.brute = brute_force_best(inst.ref, kVocab, kMaxLen);
  return inst;
}

/// Checks the structural and statistical tree invariants below `node`.
/// Returns an empty string when all hold, else the first violation.
inline std::string check_tree(const SearchNode& node, int top_k, std::size_t max_len) {
  if (node.edges.size() > static_cast<std::size_t>(top_k)) return "too many edges";
  if (node.children.size() != node.edges.size()) return "children/edges size mismatch";
  if (node.terminal != is_terminal(node.state, max_len)) return "terminal flag wrong";
  if (node.terminal && node.expanded()) return "expanded terminal node";
  for (std::size_t i = 0; i < node.edges.size(); ++i) {
    const Edge& e = node.edges[i];
    if (i > 0 && node.edges[i - 1].action >= e.action) return "edges not sorted";
    if (e.visits < 0) return "negative visits";
    if (std::abs(e.mean_value * e.visits - e.value_sum) > 1e-9) return "Q*N != W";
    if (e.visits == 0 && e.mean_value != 0.0) return "Q nonzero at N == 0";
    if (e.mean_value < 0.0 || e.mean_value > 1.0) return "Q outside [0, 1]";
    if (e.prior < 0.0 || e.prior > 1.0) return "P outside [0, 1]";
    if (const SearchNode* c = node.children[i].get()) {
      if (c->parent != &node || c->parent_edge != static_cast<int>(i)) {
        return "child back-pointer wrong";
      }
      if (c->state.prefix.size() != node.state.prefix.size() + 1 ||
          c->state.prefix.back() != e.action) {
        return "child state does not extend parent";
      }
      if (c->expanded() && c->total_visits() > e.visits) {
        return "child visits exceed parent edge visits";
      }
      const std::string sub = check_tree(*c, top_k, max_len);
      if (!sub.empty()) return sub;
    }
  }
  return {};
}

struct FuzzReport {
  int calls = 0;
  int failures = 0;
  std::string first_failure;
};

/// `calls` run_simulations invocations on random models, parameters and
/// sources, half of them on reused roots. After each call: with_value root
/// visits grew by exactly Y, VisitDist sums to the root prior mass, and
/// every node satisfies check_tree.
inline FuzzReport fuzz_tree_invariants(int calls, std::uint64_t seed) {
  FuzzReport report;
  Rng rng(seed);
  auto fail = [&](const std::string& what) {
    if (report.failures++ == 0) {
      report.first_failure = "call " + std::to_string(report.calls) + ": " + what;
    }
  };
  while (report.calls < calls) {
    const std::size_t vocab = 5 + uniform_index(rng, 12);
    const double alpha = 0.1 + 2.0 * uniform01(rng);
    const RandomPriorModel model(vocab, rng(), alpha);
    SearchParams p;
    p.c_puct = 0.05 + 3.0 * uniform01(rng);
    p.temperature = 0.05 + 2.0 * uniform01(rng);
    p.num_simulations = 1 + static_cast<int>(uniform_index(rng, 120));
    p.top_k = 1 + static_cast<int>(uniform_index(rng, vocab + 2));
    p.max_len = uniform_index(rng, 2) == 0 ? 0 : 1 + uniform_index(rng, 6);
    p.mode = uniform_index(rng, 2) == 0 ? SearchMode::with_value : SearchMode::no_value;
    const Sequence src = random_seq(rng, 1, 4, kNumSpecials, static_cast<TokenId>(vocab));
    Sequence ref = random_seq(rng, 1, 5, kNumSpecials, static_cast<TokenId>(vocab));
    ref.push_back(kEos);
    const std::size_t max_len = effective_max_len(p, src.size());

    auto root = make_root(src, model, p);
    // A few consecutive searches with tree reuse on the same sentence.
    for (int step = 0; step < 4 && !root->terminal && report.calls < calls; ++step) {
      const int before = root->total_visits();
      const VisitDist dist = run_simulations(*root, model, p, ref);
      ++report.calls;
      double mass = 0.0;
      for (const Edge& e : root->edges) mass += e.prior;
      if (p.mode == SearchMode::with_value &&
          root->total_visits() - before != p.num_simulations) {
        fail("root visits grew by " + std::to_string(root->total_visits() - before) +
             ", expected " + std::to_string(p.num_simulations));
      }
      if (std::abs(dist.sum() - mass) > 1e-6) fail("VisitDist sum != sumPriors");
      if (std::abs(dist.retained_mass - mass) > 1e-12) fail("retained_mass wrong");
      for (const ActionProb& ap : dist.probs) {
        if (ap.prob < 0.0) fail("negative visit probability");
      }
      const std::string tree = check_tree(*root, p.top_k, max_len);
      if (!tree.empty()) fail(tree);
      root = advance_root(std::move(root), dist.argmax(), model, p);
      if (root->parent != nullptr) fail("advanced root has a parent");
    }
  }
  return report;
}

}  // namespace support
