#include "mctsnmt/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "mctsnmt/train.hpp"

namespace mctsnmt {

namespace {

const char* method_label(Method m) {
  switch (m) {
    case Method::supervised: return "Supervised Policy";
    case Method::mcts: return "MCTS";
    case Method::actor_critic: return "Actor-Critic";
    case Method::policy_rl: return "Policy+RL";
    case Method::no_value: return "No Value";
  }
  return "?";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string format_bleu_line(const BleuScore& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "BLEU = %.2f %.1f/%.1f/%.1f/%.1f (BP = %.3f)",
                s.value * 100.0, s.precisions[0] * 100.0,
                s.precisions[1] * 100.0, s.precisions[2] * 100.0,
                s.precisions[3] * 100.0, s.brevity_penalty);
  return buf;
}

std::unique_ptr<Model> load_trainable(const std::string& path) {
  auto model = load_model(path);
  if (!model->trainable()) {
    throw Error(path + ": " + to_string(model->kind()) +
                " model is not trainable");
  }
  return model;
}

std::string synthetic_fingerprint(int src_vocab_size) {
  SyntheticTaskSpec spec;
  spec.src_vocab_size = src_vocab_size;
  return SyntheticTask(spec).vocab().fingerprint();
}

struct GenOptions {
  int vocab = 40;
  int n = 2000;
  std::uint64_t seed = 0;
  int min_len = 5;
  int max_len = 10;
  std::uint64_t mapping_seed = 1;
  std::string reorder = "reverse";
  std::string out;
  std::string oracle_out;
};

struct PretrainOptions {
  bool policy = false;
  bool value = false;
  std::string model;
  std::string data;
  std::string out;
  int vocab = 40;
  double init_noise = 1.0;
  std::uint64_t init_seed = 0;
  int epochs = 1;
  // Deliberately weak one-epoch policy, the starting point for comparisons.
  double lr = 0.005;
  double value_lr = 0.1;
  int value_passes = 1;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string method;
  std::string model;
  std::string data;
  std::string valid;
  std::string out;
  std::string metrics;
  std::string dump_samples;
  int rounds = 3;
  int sentences_per_round = 256;
  int sub_batch = 64;
  int draws = 8;
  int draw_size = 256;
  double c_puct = 0.5;
  double tau = 1.0;
  int simulations = 100;
  int top_k = 50;
  double lr = 0.3;
  double l2 = 0.0;
  std::int64_t budget = 0;  // policy-gradient sentences; 0 = rounds * per-round
  int batch_sentences = 64;
  double pg_lr = 0.2;
  std::uint64_t seed = 0;
  int workers = 1;
  int max_batch = 64;
  int max_wait_us = 2000;
};

struct EvalOptions {
  std::string model;
  std::string data;
};

struct DecodeOptions {
  std::string model;
  std::string data;
  std::string trace;
  double c_puct = 0.5;
  double tau = 1.0;
  int simulations = 100;
  int top_k = 50;
  std::string mode = "with_value";
  bool sample = false;
  std::uint64_t seed = 0;
};

struct UpdateOptions {
  std::string model;
  std::string samples;
  std::string out;
  int draws = 8;
  int draw_size = 256;
  double lr = 0.3;
  double l2 = 0.0;
  std::uint64_t seed = 0;
};

struct CompareOptions {
  TrainOptions train;
  std::string test;
  bool with_novalue = false;
};

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--model", o.model, "Input checkpoint");
  cmd->add_option("--data", o.data, "Training dataset (TSV)");
  cmd->add_option("--valid", o.valid, "Validation dataset (TSV)");
  cmd->add_option("--metrics", o.metrics, "Append metrics records (JSON lines)");
  cmd->add_option("--rounds", o.rounds, "MCTS rounds")->check(CLI::PositiveNumber);
  cmd->add_option("--sentences-per-round", o.sentences_per_round)
      ->check(CLI::PositiveNumber);
  cmd->add_option("--sub-batch", o.sub_batch)->check(CLI::PositiveNumber);
  cmd->add_option("--draws", o.draws)->check(CLI::NonNegativeNumber);
  cmd->add_option("--draw-size", o.draw_size)->check(CLI::PositiveNumber);
  cmd->add_option("--c-puct", o.c_puct)->check(CLI::PositiveNumber);
  cmd->add_option("--tau", o.tau)->check(CLI::PositiveNumber);
  cmd->add_option("--simulations", o.simulations)->check(CLI::PositiveNumber);
  cmd->add_option("--top-k", o.top_k)->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.lr, "MCTS update learning rate")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--l2", o.l2)->check(CLI::NonNegativeNumber);
  cmd->add_option("--budget", o.budget,
                  "Policy-gradient sentence budget (default rounds x per-round)");
  cmd->add_option("--batch-sentences", o.batch_sentences)
      ->check(CLI::PositiveNumber);
  cmd->add_option("--pg-lr", o.pg_lr, "Policy-gradient learning rate")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--workers", o.workers)->check(CLI::PositiveNumber);
  cmd->add_option("--max-batch", o.max_batch)->check(CLI::PositiveNumber);
  cmd->add_option("--max-wait-us", o.max_wait_us)->check(CLI::NonNegativeNumber);
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

std::vector<SentencePair> load_optional(const std::string& path) {
  return path.empty() ? std::vector<SentencePair>{} : load_dataset(path);
}

// Runs one training method on `model` in place and returns its history.
std::vector<MetricsRecord> run_method(Model& model, const std::string& method,
                                      const TrainOptions& o,
                                      std::span<const SentencePair> data,
                                      std::span<const SentencePair> valid,
                                      std::vector<TrainingSample>* last_pool,
                                      const MetricsSink& sink) {
  if (method == "mcts" || method == "mcts-novalue") {
    SearchParams sp;
    sp.c_puct = o.c_puct;
    sp.temperature = o.tau;
    sp.num_simulations = o.simulations;
    sp.top_k = o.top_k;
    sp.mode = method == "mcts" ? SearchMode::with_value : SearchMode::no_value;
    TrainParams tp{o.lr, o.l2, 1.0};
    MctsTrainConfig mc;
    mc.rounds = o.rounds;
    mc.sentences_per_round = o.sentences_per_round;
    mc.sub_batch = o.sub_batch;
    mc.draws = o.draws;
    mc.draw_size = o.draw_size;
    mc.seed = o.seed;
    mc.workers = o.workers;
    mc.batcher.max_batch = o.max_batch;
    mc.batcher.max_wait = std::chrono::microseconds(o.max_wait_us);
    mc.final_pool = last_pool;
    return train_mcts(model, data, valid, sp, tp, mc, sink);
  }
  if (method == "reinforce" || method == "actor-critic") {
    PolicyGradientConfig pc;
    pc.learning_rate = o.pg_lr;
    pc.l2 = o.l2;
    pc.batch_sentences = o.batch_sentences;
    pc.total_sentences =
        o.budget > 0 ? o.budget
                     : static_cast<std::int64_t>(o.rounds) * o.sentences_per_round;
    pc.seed = o.seed;
    return method == "reinforce" ? train_reinforce(model, data, valid, pc, sink)
                                 : train_actor_critic(model, data, valid, pc, sink);
  }
  throw UsageError("unknown method '" + method + "'");
}

void apply_config(CLI::App& cmd, const std::map<std::string, std::string>& cfg) {
  for (const auto& [key, value] : cfg) {
    CLI::Option* opt = nullptr;
    try {
      opt = cmd.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError("config: unknown key '" + key + "' for " + cmd.get_name());
    }
    if (opt->count() > 0) continue;  // explicit flag wins
    opt->add_result(value);
    opt->run_callback();
  }
}

}  // namespace

std::string compare_report(const std::map<Method, BleuScore>& results) {
  static const Method kOrder[] = {Method::supervised, Method::mcts,
                                  Method::actor_critic, Method::policy_rl,
                                  Method::no_value};
  std::string out = "Methodology         BLEU\n";
  for (Method m : kOrder) {
    auto it = results.find(m);
    if (it == results.end()) continue;
    char line[64];
    std::snprintf(line, sizeof line, "%-18s %6.2f\n", method_label(m),
                  it->second.value * 100.0);
    out += line;
  }
  return out;
}

std::map<std::string, std::string> read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::map<std::string, std::string> cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(line_no) +
                       ": expected key=value");
    }
    std::string key = trim(t.substr(0, eq));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    cfg[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Tree-search training and decoding for sequence translation",
               "mctsnmt"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Flat key=value config file");

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--vocab", gen.vocab, "Source vocabulary size")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--n", gen.n, "Number of pairs")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--min-len", gen.min_len)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--max-len", gen.max_len)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--mapping-seed", gen.mapping_seed);
  gen_cmd->add_option("--reorder", gen.reorder)
      ->check(CLI::IsMember({"reverse", "identity"}));
  gen_cmd->add_option("--out", gen.out, "Output TSV");
  gen_cmd->add_option("--oracle-out", gen.oracle_out,
                      "Also write an oracle checkpoint for this task");

  PretrainOptions pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Supervised policy / value pretraining");
  pre_cmd->add_flag("--policy", pre.policy, "Teacher-forced policy pretraining");
  pre_cmd->add_flag("--value", pre.value, "Value pretraining on greedy decodes");
  pre_cmd->add_option("--model", pre.model, "Start from this checkpoint");
  pre_cmd->add_option("--data", pre.data, "Training dataset (TSV)");
  pre_cmd->add_option("--out", pre.out, "Output checkpoint");
  pre_cmd->add_option("--vocab", pre.vocab, "Source vocabulary size of a fresh model")
      ->check(CLI::PositiveNumber);
  pre_cmd->add_option("--init-noise", pre.init_noise, "Logit noise of a fresh model")
      ->check(CLI::NonNegativeNumber);
  pre_cmd->add_option("--init-seed", pre.init_seed);
  pre_cmd->add_option("--epochs", pre.epochs)->check(CLI::NonNegativeNumber);
  pre_cmd->add_option("--lr", pre.lr)->check(CLI::PositiveNumber);
  pre_cmd->add_option("--value-lr", pre.value_lr)->check(CLI::PositiveNumber);
  pre_cmd->add_option("--value-passes", pre.value_passes)->check(CLI::PositiveNumber);
  pre_cmd->add_option("--seed", pre.seed);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Improve a pretrained model");
  train_cmd->add_option("--method", train.method)
      ->check(CLI::IsMember({"mcts", "mcts-novalue", "reinforce", "actor-critic"}));
  train_cmd->add_option("--out", train.out, "Output checkpoint");
  train_cmd->add_option("--dump-samples", train.dump_samples,
                        "Write a training-sample pool from the trained model");
  add_train_options(train_cmd, train);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy-decode corpus BLEU");
  eval_cmd->add_option("--model", ev.model);
  eval_cmd->add_option("--data", ev.data);

  DecodeOptions dec;
  auto* decode_cmd = app.add_subcommand("decode", "Tree-search decoding with trace dump");
  decode_cmd->add_option("--model", dec.model);
  decode_cmd->add_option("--data", dec.data);
  decode_cmd->add_option("--trace", dec.trace, "Write per-step trace (JSON lines)");
  decode_cmd->add_option("--c-puct", dec.c_puct)->check(CLI::PositiveNumber);
  decode_cmd->add_option("--tau", dec.tau)->check(CLI::PositiveNumber);
  decode_cmd->add_option("--simulations", dec.simulations)->check(CLI::PositiveNumber);
  decode_cmd->add_option("--top-k", dec.top_k)->check(CLI::PositiveNumber);
  decode_cmd->add_option("--mode", dec.mode)
      ->check(CLI::IsMember({"with_value", "no_value"}));
  decode_cmd->add_flag("--sample", dec.sample);
  decode_cmd->add_option("--seed", dec.seed);

  UpdateOptions upd;
  auto* update_cmd =
      app.add_subcommand("update", "Offline update_network on a dumped sample pool");
  update_cmd->add_option("--model", upd.model);
  update_cmd->add_option("--samples", upd.samples);
  update_cmd->add_option("--out", upd.out);
  update_cmd->add_option("--draws", upd.draws)->check(CLI::NonNegativeNumber);
  update_cmd->add_option("--draw-size", upd.draw_size)->check(CLI::PositiveNumber);
  update_cmd->add_option("--lr", upd.lr)->check(CLI::PositiveNumber);
  update_cmd->add_option("--l2", upd.l2)->check(CLI::NonNegativeNumber);
  update_cmd->add_option("--seed", upd.seed);

  CompareOptions cmp;
  auto* compare_cmd = app.add_subcommand(
      "compare", "Train every method from one pretrained model and tabulate");
  add_train_options(compare_cmd, cmp.train);
  compare_cmd->add_option("--test", cmp.test, "Test dataset (TSV)");
  compare_cmd->add_flag("--with-novalue", cmp.with_novalue,
                        "Also train the no-value search variant");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out, err);
      return 2;
    }
    CLI::App* cmd = app.get_subcommands().front();
    if (!config_path.empty()) {
      try {
        apply_config(*cmd, read_config(config_path));
      } catch (const CLI::ParseError& e) {
        throw UsageError(std::string("config: ") + e.what());
      }
    }

    if (cmd == gen_cmd) {
      require(gen.out, "--out");
      SyntheticTaskSpec spec{gen.vocab, gen.min_len, gen.max_len, gen.mapping_seed,
                             parse_reorder(gen.reorder)};
      try {
        spec.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      save_dataset(gen.out, gen_synthetic(spec, gen.n, gen.seed));
      if (!gen.oracle_out.empty()) {
        OracleModel oracle(spec);
        oracle.set_vocab_fingerprint(synthetic_fingerprint(gen.vocab));
        save_model(oracle, gen.oracle_out);
      }
      return 0;
    }

    if (cmd == pre_cmd) {
      require(pre.data, "--data");
      require(pre.out, "--out");
      if (!pre.policy && !pre.value) throw UsageError("pass --policy and/or --value");
      const auto data = load_dataset(pre.data);
      std::unique_ptr<Model> model;
      if (!pre.model.empty()) {
        model = load_trainable(pre.model);
      } else {
        auto t = std::make_unique<TabularModel>(
            static_cast<std::size_t>(pre.vocab) + kNumSpecials);
        if (pre.init_noise > 0) t->randomize_logits(pre.init_noise, pre.init_seed);
        t->set_vocab_fingerprint(synthetic_fingerprint(pre.vocab));
        model = std::move(t);
      }
      if (pre.policy) {
        const auto curve = pretrain_policy(*model, data, pre.epochs, pre.lr);
        for (std::size_t i = 0; i < curve.size(); ++i) {
          out << "policy epoch " << (i + 1) << " loss " << curve[i] << '\n';
        }
      }
      if (pre.value) {
        const auto curve = pretrain_value(*model, data, *model, pre.value_lr,
                                          pre.seed, pre.value_passes);
        for (std::size_t i = 0; i < curve.size(); ++i) {
          out << "value pass " << (i + 1) << " mse " << curve[i] << '\n';
        }
      }
      save_model(*model, pre.out);
      return 0;
    }

    if (cmd == train_cmd) {
      require(train.method, "--method");
      require(train.model, "--model");
      require(train.data, "--data");
      require(train.out, "--out");
      auto model = load_trainable(train.model);
      const auto data = load_dataset(train.data);
      const auto valid = load_optional(train.valid);
      std::ofstream metrics;
      if (!train.metrics.empty()) {
        metrics.open(train.metrics, std::ios::app);
        if (!metrics) throw Error("cannot write " + train.metrics);
      }
      const MetricsSink sink = [&](const MetricsRecord& r) {
        const std::string line = format_metrics(r, train.method);
        if (metrics.is_open()) metrics << line << '\n' << std::flush;
        out << line << '\n';
      };
      std::vector<TrainingSample> pool;
      const bool dump = !train.dump_samples.empty() &&
                        (train.method == "mcts" || train.method == "mcts-novalue");
      run_method(*model, train.method, train, data, valid, dump ? &pool : nullptr,
                 sink);
      if (dump) save_samples(train.dump_samples, pool);
      save_model(*model, train.out);
      return 0;
    }

    if (cmd == eval_cmd) {
      require(ev.model, "--model");
      require(ev.data, "--data");
      const auto model = load_model(ev.model);
      const auto data = load_dataset(ev.data);
      out << format_bleu_line(evaluate_greedy(*model, data)) << '\n';
      return 0;
    }

    if (cmd == decode_cmd) {
      require(dec.model, "--model");
      require(dec.data, "--data");
      const auto model = load_model(dec.model);
      const auto data = load_dataset(dec.data);
      SearchParams sp;
      sp.c_puct = dec.c_puct;
      sp.temperature = dec.tau;
      sp.num_simulations = dec.simulations;
      sp.top_k = dec.top_k;
      sp.mode = parse_search_mode(dec.mode);
      const auto results =
          run_sequential_searches(data, *model, sp, dec.sample, dec.seed);
      std::ofstream trace;
      if (!dec.trace.empty()) {
        trace.open(dec.trace);
        if (!trace) throw Error("cannot write " + dec.trace);
      }
      std::vector<Sequence> hyps;
      std::vector<Sequence> refs;
      for (std::size_t i = 0; i < results.size(); ++i) {
        for (std::size_t k = 0; k < results[i].translation.size(); ++k) {
          out << (k ? " " : "") << results[i].translation[k];
        }
        out << '\n';
        if (trace.is_open()) trace << format_trace(results[i]);
        hyps.push_back(strip_specials(results[i].translation));
        refs.push_back(strip_specials(data[i].ref));
      }
      if (!results.empty()) out << format_bleu_line(corpus_bleu(hyps, refs)) << '\n';
      return 0;
    }

    if (cmd == update_cmd) {
      require(upd.model, "--model");
      require(upd.samples, "--samples");
      require(upd.out, "--out");
      auto model = load_trainable(upd.model);
      const auto pool = load_samples(upd.samples);
      const auto reports = update_network(*model, pool, TrainParams{upd.lr, upd.l2, 1.0},
                                          upd.draws, upd.draw_size, upd.seed);
      for (std::size_t i = 0; i < reports.size(); ++i) {
        out << "draw " << (i + 1) << " loss " << reports[i].total << '\n';
      }
      save_model(*model, upd.out);
      return 0;
    }

    if (cmd == compare_cmd) {
      const TrainOptions& o = cmp.train;
      require(o.model, "--model");
      require(o.data, "--data");
      require(cmp.test, "--test");
      const auto data = load_dataset(o.data);
      const auto valid = load_optional(o.valid);
      const auto test = load_dataset(cmp.test);
      std::map<Method, BleuScore> results;
      results[Method::supervised] = evaluate_greedy(*load_model(o.model), test);
      std::vector<std::pair<Method, std::string>> runs = {
          {Method::mcts, "mcts"},
          {Method::actor_critic, "actor-critic"},
          {Method::policy_rl, "reinforce"}};
      if (cmp.with_novalue) runs.emplace_back(Method::no_value, "mcts-novalue");
      std::ofstream metrics;
      if (!o.metrics.empty()) {
        metrics.open(o.metrics, std::ios::app);
        if (!metrics) throw Error("cannot write " + o.metrics);
      }
      for (const auto& [method, name] : runs) {
        auto model = load_trainable(o.model);
        const std::string label = name;
        run_method(*model, name, o, data, valid, nullptr,
                   [&](const MetricsRecord& r) {
                     if (metrics.is_open()) {
                       metrics << format_metrics(r, label) << '\n';
                     }
                   });
        results[method] = evaluate_greedy(*model, test);
      }
      out << compare_report(results);
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace mctsnmt
