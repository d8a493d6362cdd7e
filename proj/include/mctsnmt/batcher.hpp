#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "mctsnmt/corpus.hpp"
#include "mctsnmt/mcts.hpp"
#include "mctsnmt/model.hpp"

namespace mctsnmt {

struct BatcherConfig {
  int max_batch = 64;
  std::chrono::microseconds max_wait{2000};
  int workers = 64;

  void validate() const;
};

struct BatchStats {
  std::map<int, std::int64_t> batch_sizes;  // size -> dispatch count
  std::int64_t dispatched_batches = 0;
  std::int64_t total_evaluations = 0;
  // Sum of per-worker expansion requests; equals total_evaluations.
  std::int64_t total_requests = 0;
  double mean_wait_us = 0.0;  // submit -> answer, per request

  double mean_batch_size() const;
};

/// Runs one tree search per sentence on a pool of worker threads. Every
/// model evaluation a search needs is routed to a single service thread
/// that owns the model and answers requests in coalesced batches.
///
/// A batch is dispatched as soon as `max_batch` requests are pending, when
/// every running search is blocked on a request, or when the oldest
/// pending request has waited `max_wait`.
///
/// Sentence i is searched with rng seed derive_seed(seed, i), so results
/// equal run_sequential_searches() for any configuration.
class SearchCoordinator {
 public:
  SearchCoordinator(const Model& model, BatcherConfig config);

  std::vector<DecodeResult> run_concurrent_searches(
      std::span<const SentencePair> pairs, const SearchParams& params,
      bool sample, std::uint64_t seed);

  /// Statistics of the most recent run.
  const BatchStats& batch_stats() const { return stats_; }

 private:
  const Model& model_;
  BatcherConfig config_;
  BatchStats stats_;
};

/// Reference path: translate_mcts on each sentence in order, same seeds.
std::vector<DecodeResult> run_sequential_searches(
    std::span<const SentencePair> pairs, const Model& model,
    const SearchParams& params, bool sample, std::uint64_t seed);

}  // namespace mctsnmt
