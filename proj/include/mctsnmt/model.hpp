#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mctsnmt/common.hpp"
#include "mctsnmt/corpus.hpp"

namespace mctsnmt {

/// Source sentence plus the translation emitted so far. `prefix` starts
/// with BOS; EOS may only appear as its last element.
struct State {
  Sequence src;
  Sequence prefix;

  std::size_t emitted() const { return prefix.empty() ? 0 : prefix.size() - 1; }
  bool ends_in_eos() const { return !prefix.empty() && prefix.back() == kEos; }
  void validate() const;

  bool operator==(const State&) const = default;
};

State initial_state(const Sequence& src);

/// Model output for one state: a distribution over the whole vocabulary
/// and a value in [0, 1].
struct Evaluation {
  std::vector<double> priors;
  double value = 0.0;
};

struct ActionProb {
  TokenId action;
  double prob;

  bool operator==(const ActionProb&) const = default;
};

struct TrainingSample {
  State state;
  std::vector<ActionProb> visit_probs;  // sorted by action
  double bleu = 0.0;
};

struct TrainParams {
  double learning_rate = 0.1;
  double l2 = 0.0;
  // 0 freezes the value parameters entirely (including the L2 pull).
  double value_loss_weight = 1.0;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double value_term = 0.0;
  double policy_term = 0.0;
  double l2_term = 0.0;
};

/// One decoded step of a sampled translation, used by the policy-gradient
/// baselines. The surrogate minimized is
///   -weight * log p(action | state) + value_weight * (value_target - v)^2
/// and `value_weight == 0` leaves the value parameters untouched.
struct PolicyGradientStep {
  State state;
  TokenId action = kPad;
  double weight = 0.0;
  double value_target = 0.0;
  double value_weight = 0.0;
};

enum class ModelKind { tabular, oracle, remote };

std::string to_string(ModelKind kind);

inline constexpr double kProbFloor = 1e-12;

class Model {
 public:
  virtual ~Model() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t vocab_size() const = 0;

  /// One Evaluation per state, in order. Must be safe to call
  /// concurrently.
  virtual std::vector<Evaluation> evaluate_batch(
      std::span<const State> states) const = 0;

  virtual bool trainable() const { return false; }

  /// One gradient step on
  ///   sum_samples [ w_v (b - v)^2 - sum_{a in visit_probs} pi(a) log p(a) ]
  ///   + c ||theta||^2
  /// where p is the model's raw probability at exactly the listed actions.
  virtual LossReport apply_update(std::span<const TrainingSample> batch,
                                  const TrainParams& params);

  /// One gradient step on the summed PolicyGradientStep surrogate.
  virtual LossReport apply_policy_gradient(
      std::span<const PolicyGradientStep> steps, const TrainParams& params);

  Evaluation evaluate(const State& state) const;

  /// Identifies the vocabulary the model was built for; empty if unknown.
  const std::string& vocab_fingerprint() const { return vocab_fingerprint_; }
  void set_vocab_fingerprint(std::string fp) { vocab_fingerprint_ = std::move(fp); }

 private:
  std::string vocab_fingerprint_;
};

/// Argmax decoding (ties to the lowest id). Returns the emitted tokens,
/// without BOS, including EOS if produced.
Sequence greedy_decode(const Model& model, const Sequence& src,
                       std::size_t max_len);

/// Length cap used wherever no explicit cap is configured.
inline std::size_t default_max_len(std::size_t src_len) {
  return 2 * src_len + 5;
}

/// Softmax policy and sigmoid value, both tables indexed by a single
/// feature of the state: the source token aligned with the next output
/// position under the model's reorder rule, or a dedicated end feature
/// once the source is exhausted.
///
/// Parameter layout: logits[feature][action] row-major, then one value
/// parameter per feature.
class TabularModel final : public Model {
 public:
  explicit TabularModel(std::size_t vocab_size,
                        Reorder reorder = Reorder::reverse);

  ModelKind kind() const override { return ModelKind::tabular; }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<Evaluation> evaluate_batch(
      std::span<const State> states) const override;
  bool trainable() const override { return true; }
  LossReport apply_update(std::span<const TrainingSample> batch,
                          const TrainParams& params) override;
  LossReport apply_policy_gradient(std::span<const PolicyGradientStep> steps,
                                   const TrainParams& params) override;

  /// Adds N(0, scale^2) noise to every logit.
  void randomize_logits(double scale, std::uint64_t seed);

  Reorder reorder() const { return reorder_; }
  std::size_t num_features() const { return vocab_size_ + 1; }
  std::size_t feature(const State& state) const;

  std::span<double> parameters() { return theta_; }
  std::span<const double> parameters() const { return theta_; }
  std::size_t logit_index(std::size_t feature, TokenId action) const;
  std::size_t value_index(std::size_t feature) const;

  std::vector<double> priors(std::size_t feature) const;
  double value(std::size_t feature) const;

  /// Loss and gradient of the apply_update objective at the current
  /// parameters, without stepping.
  LossReport update_objective(std::span<const TrainingSample> batch,
                              const TrainParams& params,
                              std::vector<double>* gradient) const;
  LossReport policy_gradient_objective(
      std::span<const PolicyGradientStep> steps, const TrainParams& params,
      std::vector<double>* gradient) const;

 private:
  double l2_term(const TrainParams& params, std::vector<double>* gradient,
                 bool include_values) const;
  void step(const std::vector<double>& gradient, double learning_rate);

  std::size_t vocab_size_;
  Reorder reorder_;
  std::vector<double> theta_;
};

/// Knows the synthetic task: 0.99 on the correct next token, the rest
/// spread uniformly, value 1.
class OracleModel final : public Model {
 public:
  explicit OracleModel(SyntheticTaskSpec spec);

  ModelKind kind() const override { return ModelKind::oracle; }
  std::size_t vocab_size() const override { return task_.vocab_size(); }
  std::vector<Evaluation> evaluate_batch(
      std::span<const State> states) const override;

  const SyntheticTaskSpec& spec() const { return task_.spec(); }

 private:
  SyntheticTask task_;
};

/// Client for an out-of-process model speaking length-prefixed JSON over a
/// stream socket. Endpoints: "unix:/path/to/socket" or "tcp:host:port".
class RemoteModel final : public Model {
 public:
  RemoteModel(std::string endpoint, std::size_t vocab_size,
              std::string vocab_fingerprint);
  ~RemoteModel() override;

  RemoteModel(const RemoteModel&) = delete;
  RemoteModel& operator=(const RemoteModel&) = delete;

  ModelKind kind() const override { return ModelKind::remote; }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<Evaluation> evaluate_batch(
      std::span<const State> states) const override;
  bool trainable() const override { return true; }
  LossReport apply_update(std::span<const TrainingSample> batch,
                          const TrainParams& params) override;

  const std::string& endpoint() const { return endpoint_; }

  /// Ask the server to persist / restore its parameters.
  void remote_save(const std::string& path);
  void remote_load(const std::string& path);
  void shutdown();

 private:
  struct Connection;

  std::string request(const std::string& payload) const;
  [[noreturn]] void fail(const std::string& what) const;

  std::string endpoint_;
  std::size_t vocab_size_;
  mutable std::mutex mutex_;
  mutable std::int64_t next_id_ = 1;
  std::unique_ptr<Connection> conn_;
};

inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint. Tabular parameters are stored with 17 significant
/// digits so load/save is byte-identical.
void save_model(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

}  // namespace mctsnmt
