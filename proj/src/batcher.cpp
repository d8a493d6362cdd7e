#include "mctsnmt/batcher.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <future>
#include <mutex>
#include <set>
#include <thread>

namespace mctsnmt {

void BatcherConfig::validate() const {
  if (max_batch < 1) throw Error("max_batch must be >= 1");
  if (workers < 1) throw Error("workers must be >= 1");
  if (max_wait.count() < 0) throw Error("max_wait must be >= 0");
}

double BatchStats::mean_batch_size() const {
  return dispatched_batches == 0
             ? 0.0
             : static_cast<double>(total_evaluations) /
                   static_cast<double>(dispatched_batches);
}

namespace {

using Clock = std::chrono::steady_clock;

struct PendingRequest {
  int worker_id;
  std::int64_t request_id;
  State state;
  Clock::time_point submitted;
  std::promise<Evaluation> reply;
};

class EvalService {
 public:
  // `workers` threads count as active until each calls worker_exited().
  EvalService(const Model& model, const BatcherConfig& config, int workers)
      : model_(model), config_(config), active_(workers),
        thread_([this] { loop(); }) {}

  ~EvalService() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

  std::future<Evaluation> submit(int worker_id, std::int64_t request_id,
                                 State state) {
    std::future<Evaluation> fut;
    {
      std::lock_guard lock(mutex_);
      if (!in_flight_.emplace(worker_id, request_id).second) {
        throw Error("duplicate in-flight request (" + std::to_string(worker_id) +
                    ", " + std::to_string(request_id) + ")");
      }
      pending_.push_back(PendingRequest{worker_id, request_id, std::move(state),
                                        Clock::now(), {}});
      fut = pending_.back().reply.get_future();
    }
    cv_.notify_all();
    return fut;
  }

  void worker_exited() {
    {
      std::lock_guard lock(mutex_);
      --active_;
    }
    cv_.notify_all();
  }

  void collect(BatchStats& stats) {
    std::lock_guard lock(mutex_);
    stats.batch_sizes = batch_sizes_;
    stats.dispatched_batches = batches_;
    stats.total_evaluations = evaluations_;
    stats.mean_wait_us =
        evaluations_ == 0 ? 0.0 : wait_us_ / static_cast<double>(evaluations_);
  }

 private:
  bool should_dispatch(Clock::time_point now) const {
    const auto n = static_cast<int>(pending_.size());
    if (n == 0) return false;
    return stopping_ || n >= config_.max_batch || n >= active_ ||
           now >= pending_.front().submitted + config_.max_wait;
  }

  void loop() {
    std::unique_lock lock(mutex_);
    for (;;) {
      if (stopping_ && pending_.empty()) return;
      if (pending_.empty()) {
        cv_.wait(lock);
        continue;
      }
      if (!should_dispatch(Clock::now())) {
        cv_.wait_until(lock, pending_.front().submitted + config_.max_wait);
        continue;
      }

      const std::size_t n =
          std::min(pending_.size(), static_cast<std::size_t>(config_.max_batch));
      std::vector<PendingRequest> batch;
      batch.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        batch.push_back(std::move(pending_.front()));
        pending_.pop_front();
      }
      lock.unlock();

      std::vector<State> states;
      states.reserve(n);
      for (auto& r : batch) states.push_back(r.state);
      std::vector<Evaluation> evals(n);
      std::vector<std::exception_ptr> failures(n);
      try {
        evals = model_.evaluate_batch(states);
        if (evals.size() != n) throw Error("model returned wrong batch size");
      } catch (...) {
        // Isolate the culprit so unrelated searches sharing the batch survive.
        evals.assign(n, Evaluation{});
        if (n == 1) {
          failures[0] = std::current_exception();
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            try {
              evals[i] = model_.evaluate(states[i]);
            } catch (...) {
              failures[i] = std::current_exception();
            }
          }
        }
      }
      const auto answered = Clock::now();

      lock.lock();
      ++batches_;
      ++batch_sizes_[static_cast<int>(n)];
      evaluations_ += static_cast<std::int64_t>(n);
      for (auto& r : batch) {
        wait_us_ += std::chrono::duration<double, std::micro>(answered - r.submitted)
                        .count();
        in_flight_.erase({r.worker_id, r.request_id});
      }
      lock.unlock();

      for (std::size_t i = 0; i < n; ++i) {
        if (failures[i]) {
          batch[i].reply.set_exception(failures[i]);
        } else {
          batch[i].reply.set_value(std::move(evals[i]));
        }
      }
      lock.lock();
    }
  }

  const Model& model_;
  BatcherConfig config_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<PendingRequest> pending_;
  std::set<std::pair<int, std::int64_t>> in_flight_;
  int active_ = 0;
  bool stopping_ = false;

  std::map<int, std::int64_t> batch_sizes_;
  std::int64_t batches_ = 0;
  std::int64_t evaluations_ = 0;
  double wait_us_ = 0.0;

  std::thread thread_;  // last: starts after the members above exist
};

/// Model facade handed to one search worker; every evaluation becomes a
/// request to the service.
class RoutedModel final : public Model {
 public:
  RoutedModel(const Model& inner, EvalService& service, int worker_id)
      : inner_(inner), service_(service), worker_id_(worker_id) {}

  ModelKind kind() const override { return inner_.kind(); }
  std::size_t vocab_size() const override { return inner_.vocab_size(); }

  std::vector<Evaluation> evaluate_batch(
      std::span<const State> states) const override {
    if (states.empty()) throw Error("evaluate_batch: empty batch");
    std::vector<std::future<Evaluation>> futures;
    futures.reserve(states.size());
    for (const State& s : states) {
      futures.push_back(service_.submit(worker_id_, next_request_++, s));
    }
    std::vector<Evaluation> out;
    out.reserve(states.size());
    for (auto& f : futures) out.push_back(f.get());
    return out;
  }

  std::int64_t requests() const { return next_request_; }

 private:
  const Model& inner_;
  EvalService& service_;
  int worker_id_;
  mutable std::int64_t next_request_ = 0;
};

SearchParams seeded(const SearchParams& params, std::uint64_t seed,
                    std::size_t index) {
  SearchParams p = params;
  p.rng_seed = derive_seed(seed, index);
  return p;
}

}  // namespace

SearchCoordinator::SearchCoordinator(const Model& model, BatcherConfig config)
    : model_(model), config_(config) {
  config_.validate();
}

std::vector<DecodeResult> SearchCoordinator::run_concurrent_searches(
    std::span<const SentencePair> pairs, const SearchParams& params,
    bool sample, std::uint64_t seed) {
  params.validate();
  stats_ = BatchStats{};
  std::vector<DecodeResult> results(pairs.size());
  if (pairs.empty()) return results;

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::atomic<std::int64_t> requests{0};
  std::mutex failure_mutex;
  std::size_t failed_index = pairs.size();
  std::string failure_message;

  {
    const int n_threads =
        std::min(config_.workers, static_cast<int>(pairs.size()));
    EvalService service(model_, config_, n_threads);
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int w = 0; w < n_threads; ++w) {
      threads.emplace_back([&, w] {
        RoutedModel routed(model_, service, w);
        while (!abort.load()) {
          const std::size_t i = next.fetch_add(1);
          if (i >= pairs.size()) break;
          try {
            results[i] = translate_mcts(pairs[i].src, pairs[i].ref, routed,
                                        seeded(params, seed, i), sample);
          } catch (const std::exception& e) {
            std::lock_guard lock(failure_mutex);
            if (i < failed_index) {
              failed_index = i;
              failure_message = e.what();
            }
            abort = true;
          }
        }
        requests += routed.requests();
        service.worker_exited();
      });
    }
    for (auto& t : threads) t.join();
    service.collect(stats_);
  }
  stats_.total_requests = requests.load();

  if (failed_index < pairs.size()) {
    throw Error("search failed on sentence " + std::to_string(failed_index) +
                ": " + failure_message);
  }
  return results;
}

std::vector<DecodeResult> run_sequential_searches(
    std::span<const SentencePair> pairs, const Model& model,
    const SearchParams& params, bool sample, std::uint64_t seed) {
  std::vector<DecodeResult> results;
  results.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    results.push_back(translate_mcts(pairs[i].src, pairs[i].ref, model,
                                     seeded(params, seed, i), sample));
  }
  return results;
}

}  // namespace mctsnmt
