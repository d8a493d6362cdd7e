#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mctsnmt/model.hpp"

namespace mctsnmt {

/// Per-action statistics on the edge leaving a node.
struct Edge {
  TokenId action = kPad;
  int visits = 0;           // N
  double value_sum = 0.0;   // W
  double mean_value = 0.0;  // Q = W / N, 0 while unvisited
  double prior = 0.0;       // P, raw (not renormalized after pruning)
};

struct SearchNode {
  State state;
  bool terminal = false;
  std::vector<Edge> edges;  // sorted by action, at most top_k entries
  // Parallel to `edges`; null until the edge is first traversed.
  std::vector<std::unique_ptr<SearchNode>> children;
  SearchNode* parent = nullptr;
  int parent_edge = -1;  // index into parent->edges
  std::optional<double> terminal_value;

  bool expanded() const { return !edges.empty(); }
  int edge_index(TokenId action) const;
  int total_visits() const;
};

enum class SearchMode { with_value, no_value };

SearchMode parse_search_mode(const std::string& name);
std::string to_string(SearchMode mode);

struct SearchParams {
  double c_puct = 0.5;
  double temperature = 1.0;
  int num_simulations = 100;
  int top_k = 50;
  // 0 selects default_max_len(|src|) per sentence.
  std::size_t max_len = 0;
  SearchMode mode = SearchMode::with_value;
  std::uint64_t rng_seed = 0;
  // Use c * P * sqrt(N_parent) / N as written, infinite for unvisited edges,
  // instead of the 1 + N denominator. Study only.
  bool literal_exploration = false;

  void validate() const;
};

std::size_t effective_max_len(const SearchParams& params, std::size_t src_len);

/// Root visit distribution, scaled to the retained prior mass.
struct VisitDist {
  std::vector<ActionProb> probs;  // sorted by action
  double retained_mass = 0.0;

  double sum() const;
  TokenId argmax() const;  // ties to the lowest id
};

/// Index into node.edges of the edge maximizing Q + U.
/// Ties go to the higher prior, then to the lower action id.
int select_edge(const SearchNode& node, double c_puct, int parent_visits,
                bool literal_exploration = false);
TokenId select_child(const SearchNode& node, double c_puct, int parent_visits,
                     bool literal_exploration = false);

/// Creates edges for the `top_k` highest-prior actions (ties to the lower id)
/// with their raw priors.
void expand(SearchNode& node, const Evaluation& eval, int top_k);

/// Adds `value` to every edge on the path from `leaf` back to the root,
/// incrementing visit counts.
void backup(SearchNode& leaf, double value);

/// Terminal when the prefix ends in EOS or has reached the length cap.
bool is_terminal(const State& state, std::size_t max_len);

std::unique_ptr<SearchNode> make_root(const Sequence& src, const Model& model,
                                      const SearchParams& params);

/// Runs `params.num_simulations` simulations from an expanded root.
/// Terminal leaves back up sentence BLEU of their prefix against `ref`.
VisitDist run_simulations(SearchNode& root, const Model& model,
                          const SearchParams& params, const Sequence& ref);

/// Visit distribution N^(1/tau) normalized, times the sum of root priors.
/// Falls back to the priors themselves when no root edge was visited.
VisitDist visit_distribution(const SearchNode& root, double temperature);

/// Detaches the child reached by `action` and makes it the new root,
/// creating and expanding it first if it was never materialized.
std::unique_ptr<SearchNode> advance_root(std::unique_ptr<SearchNode> root,
                                         TokenId action, const Model& model,
                                         const SearchParams& params);

struct TraceStep {
  State state;
  VisitDist dist;
  TokenId action = kPad;
};

struct DecodeResult {
  Sequence translation;  // excludes BOS, includes EOS if emitted
  std::vector<TraceStep> trace;
};

/// Full search-driven translation of one sentence. With `sample` the next
/// token is drawn from the renormalized visit distribution, otherwise the
/// argmax is taken.
DecodeResult translate_mcts(const Sequence& src, const Sequence& ref,
                            const Model& model, const SearchParams& params,
                            bool sample);

/// One JSON object per line: step index, src, prefix, retained mass,
/// visit probabilities and chosen action.
std::string format_trace(const DecodeResult& result);

}  // namespace mctsnmt
