#include "mctsnmt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace mctsnmt {

using nlohmann::json;

namespace {

void require_trainable(const Model& model) {
  if (!model.trainable()) {
    throw Error(to_string(model.kind()) + " model: not trainable");
  }
}

LossReport mean_loss(const std::vector<LossReport>& reports) {
  LossReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.total += r.total;
    m.value_term += r.value_term;
    m.policy_term += r.policy_term;
    m.l2_term += r.l2_term;
  }
  const auto n = static_cast<double>(reports.size());
  m.total /= n;
  m.value_term /= n;
  m.policy_term /= n;
  m.l2_term /= n;
  return m;
}

TokenId sample_from(const std::vector<double>& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<TokenId>(k);
  }
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0) return static_cast<TokenId>(k);
  }
  return 0;
}

std::vector<State> validation_probe(std::span<const SentencePair> data) {
  std::vector<State> states;
  for (std::size_t i = 0; i < data.size() && i < 8; ++i) {
    states.push_back(initial_state(data[i].src));
  }
  return states;
}

double valid_bleu(const Model& model, std::span<const SentencePair> valid) {
  return valid.empty() ? 0.0 : evaluate_greedy(model, valid).value;
}

}  // namespace

double translation_bleu(const Sequence& translation, const Sequence& ref) {
  return sentence_bleu(strip_specials(translation), strip_specials(ref)).value;
}

std::vector<double> pretrain_policy(Model& model,
                                    std::span<const SentencePair> data,
                                    int epochs, double learning_rate) {
  require_trainable(model);
  const TrainParams params{learning_rate, 0.0, 0.0};
  params.validate();
  std::vector<double> curve;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double loss = 0.0;
    std::size_t tokens = 0;
    for (const SentencePair& pair : data) {
      std::vector<TrainingSample> samples;
      samples.reserve(pair.ref.size());
      State state = initial_state(pair.src);
      for (TokenId target : pair.ref) {
        samples.push_back({state, {{target, 1.0}}, 0.0});
        state.prefix.push_back(target);
      }
      loss += model.apply_update(samples, params).policy_term;
      tokens += samples.size();
    }
    curve.push_back(tokens ? loss / static_cast<double>(tokens) : 0.0);
  }
  return curve;
}

std::vector<double> pretrain_value(Model& model,
                                   std::span<const SentencePair> data,
                                   const Model& policy_model,
                                   double learning_rate, std::uint64_t seed,
                                   int passes, int samples_per_sentence) {
  require_trainable(model);
  const TrainParams params{learning_rate, 0.0, 1.0};
  params.validate();

  // The policy is not modified here, so one decode per sentence suffices.
  std::vector<Sequence> decodes;
  std::vector<double> rewards;
  decodes.reserve(data.size());
  for (const SentencePair& pair : data) {
    decodes.push_back(
        greedy_decode(policy_model, pair.src, default_max_len(pair.src.size())));
    rewards.push_back(translation_bleu(decodes.back(), pair.ref));
  }

  Rng rng(seed);
  std::vector<double> curve;
  for (int pass = 0; pass < passes; ++pass) {
    double sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Sequence& x = decodes[i];
      std::vector<TrainingSample> samples;
      for (int s = 0; s < samples_per_sentence; ++s) {
        const std::size_t j = 1 + uniform_index(rng, x.size());  // 1..T
        State state = initial_state(data[i].src);
        state.prefix.insert(state.prefix.end(), x.begin(),
                            x.begin() + static_cast<std::ptrdiff_t>(j));
        samples.push_back({std::move(state), {}, rewards[i]});
      }
      sq += model.apply_update(samples, params).value_term;
      count += samples.size();
    }
    curve.push_back(count ? sq / static_cast<double>(count) : 0.0);
  }
  return curve;
}

SimResult sim_sentences(std::span<const SentencePair> batch, const Model& model,
                        const SearchParams& params, std::uint64_t seed,
                        SearchCoordinator* coordinator) {
  SimResult out;
  if (batch.empty()) return out;
  std::vector<DecodeResult> decoded;
  if (coordinator) {
    decoded = coordinator->run_concurrent_searches(batch, params, true, seed);
    out.batch_stats = coordinator->batch_stats();
  } else {
    decoded = run_sequential_searches(batch, model, params, true, seed);
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double b = translation_bleu(decoded[i].translation, batch[i].ref);
    out.sentence_bleu.push_back(b);
    for (TraceStep& step : decoded[i].trace) {
      out.samples.push_back(
          {std::move(step.state), std::move(step.dist.probs), b});
    }
  }
  return out;
}

std::vector<LossReport> update_network(Model& model,
                                       std::span<const TrainingSample> pool,
                                       const TrainParams& params, int draws,
                                       int draw_size, std::uint64_t seed) {
  std::vector<LossReport> reports;
  if (draws <= 0) return reports;
  if (pool.empty()) throw Error("update_network: empty sample pool");
  if (draw_size < 1) throw Error("update_network: draw_size < 1");
  Rng rng(seed);
  std::vector<TrainingSample> batch;
  for (int d = 0; d < draws; ++d) {
    batch.clear();
    for (int k = 0; k < draw_size; ++k) {
      batch.push_back(pool[uniform_index(rng, pool.size())]);
    }
    reports.push_back(model.apply_update(batch, params));
  }
  return reports;
}

BleuScore evaluate_greedy(const Model& model,
                          std::span<const SentencePair> data) {
  std::vector<Sequence> hyps;
  std::vector<Sequence> refs;
  hyps.reserve(data.size());
  refs.reserve(data.size());
  for (const SentencePair& pair : data) {
    hyps.push_back(strip_specials(
        greedy_decode(model, pair.src, default_max_len(pair.src.size()))));
    refs.push_back(strip_specials(pair.ref));
  }
  return corpus_bleu(hyps, refs);
}

std::string format_metrics(const MetricsRecord& r, const std::string& method) {
  json j{{"method", method},
         {"round", r.round},
         {"sentences", r.sentences},
         {"train_bleu", r.train_bleu},
         {"valid_bleu", r.valid_bleu},
         {"loss",
          {{"total", r.loss.total},
           {"value_term", r.loss.value_term},
           {"policy_term", r.loss.policy_term},
           {"l2_term", r.loss.l2_term}}}};
  if (r.batch_stats) {
    json hist = json::object();
    for (const auto& [size, count] : r.batch_stats->batch_sizes) {
      hist[std::to_string(size)] = count;
    }
    j["batch_stats"] = {{"histogram", hist},
                        {"batches", r.batch_stats->dispatched_batches},
                        {"evaluations", r.batch_stats->total_evaluations},
                        {"mean_wait_us", r.batch_stats->mean_wait_us}};
  }
  return j.dump();
}

SentenceStream::SentenceStream(std::span<const SentencePair> data,
                               std::uint64_t seed)
    : data_(data), rng_(seed) {
  if (data_.empty()) throw Error("sentence stream: empty dataset");
  order_.resize(data_.size());
  reshuffle();
}

void SentenceStream::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
  }
  pos_ = 0;
}

std::vector<SentencePair> SentenceStream::take(std::size_t n) {
  std::vector<SentencePair> out;
  out.reserve(n);
  while (out.size() < n) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(data_[order_[pos_++]]);
  }
  consumed_ += static_cast<std::int64_t>(n);
  return out;
}

std::vector<MetricsRecord> train_mcts(Model& model,
                                      std::span<const SentencePair> data,
                                      std::span<const SentencePair> valid,
                                      const SearchParams& search,
                                      const TrainParams& train,
                                      const MctsTrainConfig& config,
                                      const MetricsSink& sink) {
  require_trainable(model);
  search.validate();
  train.validate();
  if (config.sub_batch < 1 || config.sentences_per_round < 1) {
    throw Error("train_mcts: batch sizes must be >= 1");
  }
  TrainParams effective = train;
  if (search.mode == SearchMode::no_value) effective.value_loss_weight = 0.0;

  std::optional<SearchCoordinator> coordinator;
  if (config.workers > 1) {
    BatcherConfig bc = config.batcher;
    bc.workers = config.workers;
    coordinator.emplace(model, bc);
  }

  SentenceStream stream(data, config.seed);
  const auto probe = validation_probe(data);
  std::vector<MetricsRecord> history;
  for (int round = 0; round < config.rounds; ++round) {
    const auto sentences =
        stream.take(static_cast<std::size_t>(config.sentences_per_round));
    std::vector<TrainingSample> pool;
    double bleu_sum = 0.0;
    std::optional<BatchStats> stats;
    const std::uint64_t round_seed = derive_seed(config.seed, 1000 + round);
    std::size_t sub = 0;
    for (std::size_t start = 0; start < sentences.size();
         start += static_cast<std::size_t>(config.sub_batch), ++sub) {
      const std::size_t end = std::min(
          sentences.size(), start + static_cast<std::size_t>(config.sub_batch));
      const std::span<const SentencePair> chunk(sentences.data() + start,
                                                end - start);
      SimResult sim = sim_sentences(chunk, model, search,
                                    derive_seed(round_seed, sub),
                                    coordinator ? &*coordinator : nullptr);
      for (double b : sim.sentence_bleu) bleu_sum += b;
      std::move(sim.samples.begin(), sim.samples.end(), std::back_inserter(pool));
      if (sim.batch_stats) {
        if (!stats) stats = BatchStats{};
        for (const auto& [size, count] : sim.batch_stats->batch_sizes) {
          stats->batch_sizes[size] += count;
        }
        const double prior_wait =
            stats->mean_wait_us * static_cast<double>(stats->total_evaluations);
        stats->dispatched_batches += sim.batch_stats->dispatched_batches;
        stats->total_evaluations += sim.batch_stats->total_evaluations;
        stats->total_requests += sim.batch_stats->total_requests;
        stats->mean_wait_us =
            (prior_wait + sim.batch_stats->mean_wait_us *
                              static_cast<double>(sim.batch_stats->total_evaluations)) /
            static_cast<double>(std::max<std::int64_t>(1, stats->total_evaluations));
      }
    }

    const auto reports =
        update_network(model, pool, effective, config.draws, config.draw_size,
                       derive_seed(round_seed, 999'999));
    check_model_outputs(model, probe);
    if (config.final_pool && round + 1 == config.rounds) {
      *config.final_pool = std::move(pool);
    }

    MetricsRecord rec;
    rec.round = round + 1;
    rec.sentences = stream.consumed();
    rec.train_bleu = bleu_sum / static_cast<double>(sentences.size());
    rec.valid_bleu = valid_bleu(model, valid);
    rec.loss = mean_loss(reports);
    rec.batch_stats = stats;
    if (sink) sink(rec);
    history.push_back(std::move(rec));
  }
  return history;
}

SampledTranslation sample_translation(const Model& model, const Sequence& src,
                                      std::size_t max_len, Rng& rng) {
  SampledTranslation t;
  State state = initial_state(src);
  while (state.emitted() < max_len) {
    const Evaluation ev = model.evaluate(state);
    const TokenId a = sample_from(ev.priors, rng);
    t.states.push_back(state);
    t.actions.push_back(a);
    state.prefix.push_back(a);
    if (a == kEos) break;
  }
  return t;
}

std::vector<PolicyGradientStep> reinforce_steps(const SampledTranslation& t,
                                                double bleu) {
  std::vector<PolicyGradientStep> steps;
  steps.reserve(t.actions.size());
  for (std::size_t i = 0; i < t.actions.size(); ++i) {
    steps.push_back({t.states[i], t.actions[i], bleu, 0.0, 0.0});
  }
  return steps;
}

std::vector<PolicyGradientStep> actor_critic_steps(
    const SampledTranslation& t, double bleu, std::span<const double> values) {
  if (values.size() != t.actions.size()) {
    throw Error("actor_critic_steps: one value per step required");
  }
  std::vector<PolicyGradientStep> steps;
  steps.reserve(t.actions.size());
  for (std::size_t i = 0; i < t.actions.size(); ++i) {
    steps.push_back({t.states[i], t.actions[i], bleu - values[i], bleu, 1.0});
  }
  return steps;
}

namespace {

enum class PgKind { reinforce, actor_critic };

std::vector<MetricsRecord> train_policy_gradient(
    Model& model, std::span<const SentencePair> data,
    std::span<const SentencePair> valid, const PolicyGradientConfig& config,
    const MetricsSink& sink, PgKind kind) {
  require_trainable(model);
  if (config.batch_sentences < 1) throw Error("batch_sentences must be >= 1");
  const TrainParams params{config.learning_rate, config.l2, 0.0};
  params.validate();

  SentenceStream stream(data, config.seed);
  Rng rng(derive_seed(config.seed, 77));
  const auto probe = validation_probe(data);
  std::vector<MetricsRecord> history;
  int round = 0;
  while (stream.consumed() < config.total_sentences) {
    const auto n = static_cast<std::size_t>(
        std::min<std::int64_t>(config.batch_sentences,
                               config.total_sentences - stream.consumed()));
    const auto pairs = stream.take(n);
    std::vector<PolicyGradientStep> steps;
    double bleu_sum = 0.0;
    for (const SentencePair& pair : pairs) {
      const SampledTranslation t = sample_translation(
          model, pair.src, default_max_len(pair.src.size()), rng);
      const double b = translation_bleu(t.actions, pair.ref);
      bleu_sum += b;
      std::vector<PolicyGradientStep> s;
      if (kind == PgKind::reinforce) {
        s = reinforce_steps(t, b);
      } else {
        const auto evals = model.evaluate_batch(t.states);
        std::vector<double> values;
        values.reserve(evals.size());
        for (const auto& ev : evals) values.push_back(ev.value);
        s = actor_critic_steps(t, b, values);
      }
      std::move(s.begin(), s.end(), std::back_inserter(steps));
    }
    const LossReport loss = model.apply_policy_gradient(steps, params);
    check_model_outputs(model, probe);

    MetricsRecord rec;
    rec.round = ++round;
    rec.sentences = stream.consumed();
    rec.train_bleu = bleu_sum / static_cast<double>(n);
    rec.valid_bleu = valid_bleu(model, valid);
    rec.loss = loss;
    if (sink) sink(rec);
    history.push_back(std::move(rec));
  }
  return history;
}

}  // namespace

std::vector<MetricsRecord> train_reinforce(Model& model,
                                           std::span<const SentencePair> data,
                                           std::span<const SentencePair> valid,
                                           const PolicyGradientConfig& config,
                                           const MetricsSink& sink) {
  return train_policy_gradient(model, data, valid, config, sink,
                               PgKind::reinforce);
}

std::vector<MetricsRecord> train_actor_critic(
    Model& model, std::span<const SentencePair> data,
    std::span<const SentencePair> valid, const PolicyGradientConfig& config,
    const MetricsSink& sink) {
  return train_policy_gradient(model, data, valid, config, sink,
                               PgKind::actor_critic);
}

void save_samples(const std::filesystem::path& path,
                  std::span<const TrainingSample> samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const TrainingSample& s : samples) {
    json probs = json::array();
    for (const ActionProb& ap : s.visit_probs) probs.push_back({ap.action, ap.prob});
    out << json{{"src", s.state.src},
                {"prefix", s.state.prefix},
                {"probs", probs},
                {"bleu", s.bleu}}
               .dump()
        << '\n';
  }
}

std::vector<TrainingSample> load_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<TrainingSample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      TrainingSample s;
      s.state.src = j.at("src").get<Sequence>();
      s.state.prefix = j.at("prefix").get<Sequence>();
      for (const auto& p : j.at("probs")) {
        s.visit_probs.push_back({p.at(0).get<TokenId>(), p.at(1).get<double>()});
      }
      s.bleu = j.at("bleu").get<double>();
      s.state.validate();
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

void check_model_outputs(const Model& model, std::span<const State> states) {
  if (states.empty()) return;
  for (const Evaluation& ev : model.evaluate_batch(states)) {
    double sum = 0.0;
    for (double p : ev.priors) {
      if (!(p >= 0.0)) throw Error("model output: negative or NaN prior");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw Error("model output: priors sum to " + std::to_string(sum));
    }
    if (!(ev.value >= 0.0 && ev.value <= 1.0)) {
      throw Error("model output: value outside [0, 1]");
    }
  }
}

}  // namespace mctsnmt
