#include "mctsnmt/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "mctsnmt/bleu.hpp"

namespace mctsnmt {

int SearchNode::edge_index(TokenId action) const {
  auto it = std::lower_bound(
      edges.begin(), edges.end(), action,
      [](const Edge& e, TokenId a) { return e.action < a; });
  if (it == edges.end() || it->action != action) return -1;
  return static_cast<int>(it - edges.begin());
}

int SearchNode::total_visits() const {
  int n = 0;
  for (const Edge& e : edges) n += e.visits;
  return n;
}

SearchMode parse_search_mode(const std::string& name) {
  if (name == "with_value") return SearchMode::with_value;
  if (name == "no_value") return SearchMode::no_value;
  throw Error("unknown search mode '" + name + "'");
}

std::string to_string(SearchMode mode) {
  return mode == SearchMode::with_value ? "with_value" : "no_value";
}

void SearchParams::validate() const {
  if (!(c_puct > 0.0)) throw Error("c_puct must be > 0");
  if (!(temperature > 0.0)) throw Error("temperature must be > 0");
  if (num_simulations < 1) throw Error("num_simulations must be >= 1");
  if (top_k < 1) throw Error("top_k must be >= 1");
}

std::size_t effective_max_len(const SearchParams& params, std::size_t src_len) {
  return params.max_len > 0 ? params.max_len : default_max_len(src_len);
}

double VisitDist::sum() const {
  double s = 0.0;
  for (const ActionProb& ap : probs) s += ap.prob;
  return s;
}

TokenId VisitDist::argmax() const {
  if (probs.empty()) throw Error("argmax of empty visit distribution");
  const ActionProb* best = &probs.front();
  for (const ActionProb& ap : probs) {
    if (ap.prob > best->prob) best = &ap;
  }
  return best->action;
}

int select_edge(const SearchNode& node, double c_puct, int parent_visits,
                bool literal_exploration) {
  if (node.edges.empty()) throw Error("select on unexpanded node");
  const double sqrt_parent = std::sqrt(static_cast<double>(parent_visits));
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < node.edges.size(); ++i) {
    const Edge& e = node.edges[i];
    double u;
    if (literal_exploration) {
      u = e.visits == 0 ? std::numeric_limits<double>::infinity()
                        : c_puct * e.prior * sqrt_parent / e.visits;
    } else {
      u = c_puct * e.prior * sqrt_parent / (1.0 + e.visits);
    }
    const double score = e.mean_value + u;
    // Edges are sorted by action, so strict comparisons keep the lower id.
    if (best < 0 || score > best_score ||
        (score == best_score &&
         e.prior > node.edges[static_cast<std::size_t>(best)].prior)) {
      best = static_cast<int>(i);
      best_score = score;
    }
  }
  return best;
}

TokenId select_child(const SearchNode& node, double c_puct, int parent_visits,
                     bool literal_exploration) {
  return node.edges[static_cast<std::size_t>(
                        select_edge(node, c_puct, parent_visits,
                                    literal_exploration))]
      .action;
}

void expand(SearchNode& node, const Evaluation& eval, int top_k) {
  if (node.expanded()) throw Error("node already expanded");
  if (node.terminal) throw Error("cannot expand a terminal node");
  if (top_k < 1) throw Error("top_k must be >= 1");
  const std::size_t v = eval.priors.size();
  std::vector<TokenId> order(v);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t k = std::min(v, static_cast<std::size_t>(top_k));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](TokenId a, TokenId b) {
                      const double pa = eval.priors[static_cast<std::size_t>(a)];
                      const double pb = eval.priors[static_cast<std::size_t>(b)];
                      return pa > pb || (pa == pb && a < b);
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  node.edges.clear();
  node.edges.reserve(k);
  for (TokenId a : order) {
    Edge e;
    e.action = a;
    e.prior = eval.priors[static_cast<std::size_t>(a)];
    node.edges.push_back(e);
  }
  node.children.clear();
  node.children.resize(k);
}

void backup(SearchNode& leaf, double value) {
  SearchNode* node = &leaf;
  while (node->parent) {
    Edge& e = node->parent->edges[static_cast<std::size_t>(node->parent_edge)];
    e.visits += 1;
    e.value_sum += value;
    e.mean_value = e.value_sum / e.visits;
    node = node->parent;
  }
}

bool is_terminal(const State& state, std::size_t max_len) {
  return state.ends_in_eos() || state.emitted() >= max_len;
}

namespace {

SearchNode* materialize_child(SearchNode& node, int edge, std::size_t max_len) {
  const auto idx = static_cast<std::size_t>(edge);
  auto child = std::make_unique<SearchNode>();
  child->state = node.state;
  child->state.prefix.push_back(node.edges[idx].action);
  child->terminal = is_terminal(child->state, max_len);
  child->parent = &node;
  child->parent_edge = edge;
  node.children[idx] = std::move(child);
  return node.children[idx].get();
}

double terminal_value(SearchNode& node, const Sequence& ref) {
  if (!node.terminal_value) {
    node.terminal_value =
        sentence_bleu(strip_specials(node.state.prefix), strip_specials(ref))
            .value;
  }
  return *node.terminal_value;
}

int parent_visits(const SearchNode& node) {
  if (!node.parent) return std::max(1, node.total_visits());
  return std::max(
      1, node.parent->edges[static_cast<std::size_t>(node.parent_edge)].visits);
}

}  // namespace

std::unique_ptr<SearchNode> make_root(const Sequence& src, const Model& model,
                                      const SearchParams& params) {
  auto root = std::make_unique<SearchNode>();
  root->state = initial_state(src);
  root->terminal = is_terminal(root->state, effective_max_len(params, src.size()));
  if (!root->terminal) expand(*root, model.evaluate(root->state), params.top_k);
  return root;
}

VisitDist run_simulations(SearchNode& root, const Model& model,
                          const SearchParams& params, const Sequence& ref) {
  params.validate();
  if (root.terminal) throw Error("run_simulations on a terminal root");
  if (!root.expanded()) throw Error("run_simulations on an unexpanded root");
  const std::size_t max_len = effective_max_len(params, root.state.src.size());

  for (int sim = 0; sim < params.num_simulations; ++sim) {
    SearchNode* node = &root;
    while (!node->terminal && node->expanded()) {
      const int e = select_edge(*node, params.c_puct, parent_visits(*node),
                                params.literal_exploration);
      SearchNode* child = node->children[static_cast<std::size_t>(e)].get();
      if (!child) {
        node = materialize_child(*node, e, max_len);
        break;
      }
      node = child;
    }

    if (node->terminal) {
      backup(*node, terminal_value(*node, ref));
      continue;
    }
    const Evaluation ev = model.evaluate(node->state);
    expand(*node, ev, params.top_k);
    if (params.mode == SearchMode::with_value) backup(*node, ev.value);
  }
  return visit_distribution(root, params.temperature);
}

VisitDist visit_distribution(const SearchNode& root, double temperature) {
  VisitDist dist;
  for (const Edge& e : root.edges) dist.retained_mass += e.prior;
  int max_visits = 0;
  for (const Edge& e : root.edges) max_visits = std::max(max_visits, e.visits);

  dist.probs.reserve(root.edges.size());
  if (max_visits == 0) {
    for (const Edge& e : root.edges) dist.probs.push_back({e.action, e.prior});
    return dist;
  }
  // Scaled by the largest count so that N^(1/tau) cannot overflow.
  std::vector<double> w(root.edges.size());
  double total = 0.0;
  for (std::size_t i = 0; i < root.edges.size(); ++i) {
    const int n = root.edges[i].visits;
    w[i] = n == 0 ? 0.0
                  : std::pow(static_cast<double>(n) / max_visits, 1.0 / temperature);
    total += w[i];
  }
  for (std::size_t i = 0; i < root.edges.size(); ++i) {
    dist.probs.push_back(
        {root.edges[i].action, w[i] / total * dist.retained_mass});
  }
  return dist;
}

std::unique_ptr<SearchNode> advance_root(std::unique_ptr<SearchNode> root,
                                         TokenId action, const Model& model,
                                         const SearchParams& params) {
  const int e = root->edge_index(action);
  if (e < 0) {
    throw Error("advance_root: no edge for action " + std::to_string(action));
  }
  const auto idx = static_cast<std::size_t>(e);
  if (!root->children[idx]) {
    SearchNode* child = materialize_child(
        *root, e, effective_max_len(params, root->state.src.size()));
    if (!child->terminal) {
      expand(*child, model.evaluate(child->state), params.top_k);
    }
  }
  std::unique_ptr<SearchNode> next = std::move(root->children[idx]);
  next->parent = nullptr;
  next->parent_edge = -1;
  return next;
}

namespace {

TokenId sample_action(const VisitDist& dist, Rng& rng) {
  const double total = dist.sum();
  if (!(total > 0.0)) return dist.argmax();
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (const ActionProb& ap : dist.probs) {
    acc += ap.prob;
    if (u < acc) return ap.action;
  }
  // Rounding left u at the top of the range; take the last positive entry.
  for (auto it = dist.probs.rbegin(); it != dist.probs.rend(); ++it) {
    if (it->prob > 0.0) return it->action;
  }
  return dist.argmax();
}

}  // namespace

DecodeResult translate_mcts(const Sequence& src, const Sequence& ref,
                            const Model& model, const SearchParams& params,
                            bool sample) {
  params.validate();
  Rng rng(params.rng_seed);
  DecodeResult result;
  auto root = make_root(src, model, params);
  while (!root->terminal) {
    VisitDist dist = run_simulations(*root, model, params, ref);
    const TokenId action = sample ? sample_action(dist, rng) : dist.argmax();
    result.trace.push_back({root->state, std::move(dist), action});
    root = advance_root(std::move(root), action, model, params);
  }
  result.translation.assign(root->state.prefix.begin() + 1,
                            root->state.prefix.end());
  return result;
}

std::string format_trace(const DecodeResult& result) {
  std::string out;
  for (std::size_t i = 0; i < result.trace.size(); ++i) {
    const TraceStep& t = result.trace[i];
    nlohmann::json probs = nlohmann::json::array();
    for (const ActionProb& ap : t.dist.probs) probs.push_back({ap.action, ap.prob});
    const nlohmann::json line{{"step", i},
                              {"src", t.state.src},
                              {"prefix", t.state.prefix},
                              {"retained_mass", t.dist.retained_mass},
                              {"probs", probs},
                              {"action", t.action}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace mctsnmt
