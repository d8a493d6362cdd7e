#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mctsnmt/batcher.hpp"
#include "mctsnmt/bleu.hpp"
#include "mctsnmt/corpus.hpp"
#include "mctsnmt/mcts.hpp"
#include "mctsnmt/model.hpp"

namespace mctsnmt {

/// Teacher-forced cross-entropy, one update per sentence, data visited in
/// the given order. Returns the mean per-token loss of each epoch,
/// measured before each update.
std::vector<double> pretrain_policy(Model& model,
                                    std::span<const SentencePair> data,
                                    int epochs, double learning_rate);

/// Value regression on one uniformly chosen prefix of each sentence's
/// greedy translation, target = sentence BLEU of that translation.
/// Returns the mean squared error of each pass.
std::vector<double> pretrain_value(Model& model,
                                   std::span<const SentencePair> data,
                                   const Model& policy_model,
                                   double learning_rate, std::uint64_t seed,
                                   int passes = 1,
                                   int samples_per_sentence = 1);

/// Sentence BLEU of a decoded sequence against a reference, both stripped of
/// PAD/BOS/EOS.
double translation_bleu(const Sequence& translation, const Sequence& ref);

struct SimResult {
  std::vector<TrainingSample> samples;
  std::vector<double> sentence_bleu;  // one per input pair
  std::optional<BatchStats> batch_stats;
};

/// Search-driven sampled translation of each pair. Every decode step
/// yields one sample carrying the final sentence BLEU. Pair i uses seed
/// derive_seed(seed, i). With a coordinator the searches run concurrently
/// through it; results are identical either way.
SimResult sim_sentences(std::span<const SentencePair> batch, const Model& model,
                        const SearchParams& params, std::uint64_t seed,
                        SearchCoordinator* coordinator = nullptr);

/// `draws` updates, each on `draw_size` samples drawn uniformly with
/// replacement from the pool.
std::vector<LossReport> update_network(Model& model,
                                       std::span<const TrainingSample> pool,
                                       const TrainParams& params, int draws,
                                       int draw_size, std::uint64_t seed);

/// Corpus BLEU of greedy decodes, EOS/BOS stripped.
BleuScore evaluate_greedy(const Model& model, std::span<const SentencePair> data);

/// One metrics record per round (MCTS) or per batch (policy gradient).
struct MetricsRecord {
  int round = 0;
  std::int64_t sentences = 0;  // cumulative sentences consumed
  double train_bleu = 0.0;     // mean sentence BLEU of this round's decodes
  double valid_bleu = 0.0;
  LossReport loss;             // mean over the round's updates
  std::optional<BatchStats> batch_stats;
};

std::string format_metrics(const MetricsRecord& record, const std::string& method);

struct MctsTrainConfig {
  int rounds = 1;
  int sentences_per_round = 256;
  int sub_batch = 64;
  int draws = 8;
  int draw_size = 256;
  std::uint64_t seed = 0;
  // > 1 routes searches through a SearchCoordinator.
  int workers = 1;
  BatcherConfig batcher;
  // When set, receives the sample pool of the last round.
  std::vector<TrainingSample>* final_pool = nullptr;
};

/// Cycles through `data` in a seeded shuffled order, reshuffling each epoch.
class SentenceStream {
 public:
  SentenceStream(std::span<const SentencePair> data, std::uint64_t seed);
  std::vector<SentencePair> take(std::size_t n);
  std::int64_t consumed() const { return consumed_; }

 private:
  void reshuffle();

  std::span<const SentencePair> data_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::int64_t consumed_ = 0;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

/// Rounds of: search-driven translation of `sentences_per_round` sentences
/// (in sub-batches), update_network on the round's pool, greedy validation
/// BLEU. In no_value mode the value parameters are frozen.
std::vector<MetricsRecord> train_mcts(Model& model,
                                      std::span<const SentencePair> data,
                                      std::span<const SentencePair> valid,
                                      const SearchParams& search,
                                      const TrainParams& train,
                                      const MctsTrainConfig& config,
                                      const MetricsSink& sink = {});

struct PolicyGradientConfig {
  double learning_rate = 0.01;
  double l2 = 0.0;
  int batch_sentences = 64;
  std::int64_t total_sentences = 768;
  std::uint64_t seed = 0;
};

/// A translation sampled from the full policy distribution, plus the
/// states it passed through.
struct SampledTranslation {
  std::vector<State> states;
  Sequence actions;
};

SampledTranslation sample_translation(const Model& model, const Sequence& src,
                                      std::size_t max_len, Rng& rng);

/// REINFORCE steps for one sampled translation with reward b: weight b on
/// every taken action, no value term.
std::vector<PolicyGradientStep> reinforce_steps(const SampledTranslation& t,
                                                double bleu);

/// Actor-critic steps: weight b - v(s_t) on each action, value regressed
/// toward b. `values` are v(s_t) evaluated before the update.
std::vector<PolicyGradientStep> actor_critic_steps(
    const SampledTranslation& t, double bleu, std::span<const double> values);

std::vector<MetricsRecord> train_reinforce(Model& model,
                                           std::span<const SentencePair> data,
                                           std::span<const SentencePair> valid,
                                           const PolicyGradientConfig& config,
                                           const MetricsSink& sink = {});

std::vector<MetricsRecord> train_actor_critic(
    Model& model, std::span<const SentencePair> data,
    std::span<const SentencePair> valid, const PolicyGradientConfig& config,
    const MetricsSink& sink = {});

/// Line-delimited JSON sample pools for offline update_network runs.
void save_samples(const std::filesystem::path& path,
                  std::span<const TrainingSample> samples);
std::vector<TrainingSample> load_samples(const std::filesystem::path& path);

/// Throws unless every evaluation on `states` is a valid distribution with
/// a value in [0, 1].
void check_model_outputs(const Model& model, std::span<const State> states);

}  // namespace mctsnmt
