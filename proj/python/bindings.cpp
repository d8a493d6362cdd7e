#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <chrono>
#include <sstream>

#include "mctsnmt/batcher.hpp"
#include "mctsnmt/bleu.hpp"
#include "mctsnmt/cli.hpp"
#include "mctsnmt/corpus.hpp"
#include "mctsnmt/mcts.hpp"
#include "mctsnmt/model.hpp"
#include "mctsnmt/train.hpp"

namespace py = pybind11;
using namespace mctsnmt;

namespace {

// Spans are not pybind-convertible; the wrappers below take vectors.
using Pairs = std::vector<SentencePair>;

py::dict metrics_dict(const MetricsRecord& r) {
  py::dict d;
  d["round"] = r.round;
  d["sentences"] = r.sentences;
  d["train_bleu"] = r.train_bleu;
  d["valid_bleu"] = r.valid_bleu;
  d["loss"] = r.loss.total;
  return d;
}

py::list metrics_list(const std::vector<MetricsRecord>& records) {
  py::list out;
  for (const auto& r : records) out.append(metrics_dict(r));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tree-search translation: corpus, BLEU, models, search, training";
  m.attr("__version__") = "0.1.0";
  m.attr("PAD") = kPad;
  m.attr("BOS") = kBos;
  m.attr("EOS") = kEos;
  m.attr("UNK") = kUnk;

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("index"));
  m.def("strip_specials", &strip_specials);

  // corpus
  py::class_<Vocab>(m, "Vocab")
      .def(py::init<const std::vector<std::string>&>(), py::arg("words"))
      .def("__len__", &Vocab::size)
      .def_property_readonly("tokens", &Vocab::tokens)
      .def("token", &Vocab::token)
      .def("id_of", &Vocab::id_of)
      .def("fingerprint", &Vocab::fingerprint);
  m.def("build_vocab", &build_vocab, py::arg("sentences"), py::arg("max_size"));
  m.def("encode", &encode);
  m.def("decode", &decode);

  py::enum_<Reorder>(m, "Reorder")
      .value("reverse", Reorder::reverse)
      .value("identity", Reorder::identity);

  py::class_<SentencePair>(m, "SentencePair")
      .def(py::init<>())
      .def(py::init([](Sequence src, Sequence ref) {
             return SentencePair{std::move(src), std::move(ref)};
           }),
           py::arg("src"), py::arg("ref"))
      .def_readwrite("src", &SentencePair::src)
      .def_readwrite("ref", &SentencePair::ref)
      .def(py::self == py::self)
      .def("__repr__", [](const SentencePair& p) {
        return "SentencePair(src=" + py::repr(py::cast(p.src)).cast<std::string>() +
               ", ref=" + py::repr(py::cast(p.ref)).cast<std::string>() + ")";
      });

  py::class_<SyntheticTaskSpec>(m, "SyntheticTaskSpec")
      .def(py::init<>())
      .def_readwrite("src_vocab_size", &SyntheticTaskSpec::src_vocab_size)
      .def_readwrite("min_len", &SyntheticTaskSpec::min_len)
      .def_readwrite("max_len", &SyntheticTaskSpec::max_len)
      .def_readwrite("mapping_seed", &SyntheticTaskSpec::mapping_seed)
      .def_readwrite("reorder", &SyntheticTaskSpec::reorder);

  py::class_<SyntheticTask>(m, "SyntheticTask")
      .def(py::init<SyntheticTaskSpec>())
      .def("vocab_size", &SyntheticTask::vocab_size)
      .def("vocab", &SyntheticTask::vocab)
      .def("map", &SyntheticTask::map)
      .def("reference", &SyntheticTask::reference)
      .def("target_at", &SyntheticTask::target_at);

  m.def("gen_synthetic", &gen_synthetic, py::arg("spec"), py::arg("n"),
        py::arg("seed"));
  m.def("save_dataset", &save_dataset);
  m.def("load_dataset", &load_dataset);

  // bleu
  py::class_<BleuScore>(m, "BleuScore")
      .def_readonly("value", &BleuScore::value)
      .def_readonly("precisions", &BleuScore::precisions)
      .def_readonly("brevity_penalty", &BleuScore::brevity_penalty);
  m.def("sentence_bleu", &sentence_bleu, py::arg("hyp"), py::arg("ref"));
  m.def("corpus_bleu", &corpus_bleu, py::arg("hyps"), py::arg("refs"));

  // model
  py::class_<State>(m, "State")
      .def(py::init([](Sequence src, Sequence prefix) {
             State s{std::move(src), std::move(prefix)};
             s.validate();
             return s;
           }),
           py::arg("src"), py::arg("prefix"))
      .def_readonly("src", &State::src)
      .def_readonly("prefix", &State::prefix)
      .def(py::self == py::self);
  m.def("initial_state", &initial_state);

  py::class_<Evaluation>(m, "Evaluation")
      .def_readonly("priors", &Evaluation::priors)
      .def_readonly("value", &Evaluation::value);

  py::class_<TrainParams>(m, "TrainParams")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainParams::learning_rate)
      .def_readwrite("l2", &TrainParams::l2)
      .def_readwrite("value_loss_weight", &TrainParams::value_loss_weight);

  py::class_<LossReport>(m, "LossReport")
      .def_readonly("total", &LossReport::total)
      .def_readonly("value_term", &LossReport::value_term)
      .def_readonly("policy_term", &LossReport::policy_term)
      .def_readonly("l2_term", &LossReport::l2_term);

  py::class_<TrainingSample>(m, "TrainingSample")
      .def(py::init([](State state, std::vector<std::pair<TokenId, double>> probs,
                       double bleu) {
             TrainingSample s{std::move(state), {}, bleu};
             for (auto [a, p] : probs) s.visit_probs.push_back({a, p});
             return s;
           }),
           py::arg("state"), py::arg("visit_probs"), py::arg("bleu"))
      .def_readonly("state", &TrainingSample::state)
      .def_property_readonly("visit_probs",
                             [](const TrainingSample& s) {
                               std::vector<std::pair<TokenId, double>> out;
                               for (auto& ap : s.visit_probs)
                                 out.emplace_back(ap.action, ap.prob);
                               return out;
                             })
      .def_readonly("bleu", &TrainingSample::bleu);

  py::class_<Model>(m, "Model")
      .def("vocab_size", &Model::vocab_size)
      .def("trainable", &Model::trainable)
      .def("evaluate", &Model::evaluate)
      .def("evaluate_batch",
           [](const Model& model, const std::vector<State>& states) {
             py::gil_scoped_release release;
             return model.evaluate_batch(states);
           })
      .def("apply_update",
           [](Model& model, const std::vector<TrainingSample>& batch,
              const TrainParams& params) { return model.apply_update(batch, params); },
           py::arg("batch"), py::arg("params"));

  py::class_<TabularModel, Model>(m, "TabularModel")
      .def(py::init<std::size_t, Reorder>(), py::arg("vocab_size"),
           py::arg("reorder") = Reorder::reverse)
      .def("randomize_logits", &TabularModel::randomize_logits,
           py::arg("scale"), py::arg("seed"))
      .def("feature", &TabularModel::feature)
      .def("priors", &TabularModel::priors)
      .def("value", &TabularModel::value)
      .def("parameters",
           [](const TabularModel& model) {
             auto p = model.parameters();
             return std::vector<double>(p.begin(), p.end());
           })
      .def("set_parameters", [](TabularModel& model, const std::vector<double>& v) {
        auto p = model.parameters();
        if (v.size() != p.size()) throw Error("parameter count mismatch");
        std::copy(v.begin(), v.end(), p.begin());
      });

  py::class_<OracleModel, Model>(m, "OracleModel")
      .def(py::init<SyntheticTaskSpec>(), py::arg("spec"));

  py::class_<RemoteModel, Model>(m, "RemoteModel")
      .def(py::init<std::string, std::size_t, std::string>(), py::arg("endpoint"),
           py::arg("vocab_size"), py::arg("vocab_fingerprint") = "")
      .def("remote_save", &RemoteModel::remote_save)
      .def("remote_load", &RemoteModel::remote_load)
      .def("shutdown", &RemoteModel::shutdown);

  m.def("greedy_decode", &greedy_decode, py::arg("model"), py::arg("src"),
        py::arg("max_len"));
  m.def("default_max_len", &default_max_len);
  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));

  // search
  py::enum_<SearchMode>(m, "SearchMode")
      .value("with_value", SearchMode::with_value)
      .value("no_value", SearchMode::no_value);

  py::class_<SearchParams>(m, "SearchParams")
      .def(py::init<>())
      .def_readwrite("c_puct", &SearchParams::c_puct)
      .def_readwrite("temperature", &SearchParams::temperature)
      .def_readwrite("num_simulations", &SearchParams::num_simulations)
      .def_readwrite("top_k", &SearchParams::top_k)
      .def_readwrite("max_len", &SearchParams::max_len)
      .def_readwrite("mode", &SearchParams::mode)
      .def_readwrite("rng_seed", &SearchParams::rng_seed);

  py::class_<TraceStep>(m, "TraceStep")
      .def_readonly("state", &TraceStep::state)
      .def_property_readonly("probs",
                             [](const TraceStep& t) {
                               std::vector<std::pair<TokenId, double>> out;
                               for (auto& ap : t.dist.probs)
                                 out.emplace_back(ap.action, ap.prob);
                               return out;
                             })
      .def_property_readonly("retained_mass",
                             [](const TraceStep& t) { return t.dist.retained_mass; })
      .def_readonly("action", &TraceStep::action);

  py::class_<DecodeResult>(m, "DecodeResult")
      .def_readonly("translation", &DecodeResult::translation)
      .def_readonly("trace", &DecodeResult::trace)
      .def("format_trace", &format_trace);

  m.def(
      "translate_mcts",
      [](const Sequence& src, const Sequence& ref, const Model& model,
         const SearchParams& params, bool sample) {
        py::gil_scoped_release release;
        return translate_mcts(src, ref, model, params, sample);
      },
      py::arg("src"), py::arg("ref"), py::arg("model"), py::arg("params"),
      py::arg("sample") = false);

  m.def(
      "run_concurrent_searches",
      [](const Model& model, const Pairs& pairs, const SearchParams& params,
         bool sample, std::uint64_t seed, int workers, int max_batch,
         int max_wait_us) {
        py::gil_scoped_release release;
        BatcherConfig cfg;
        cfg.workers = workers;
        cfg.max_batch = max_batch;
        cfg.max_wait = std::chrono::microseconds(max_wait_us);
        SearchCoordinator coord(model, cfg);
        return coord.run_concurrent_searches(pairs, params, sample, seed);
      },
      py::arg("model"), py::arg("pairs"), py::arg("params"),
      py::arg("sample") = false, py::arg("seed") = 0, py::arg("workers") = 8,
      py::arg("max_batch") = 64, py::arg("max_wait_us") = 2000);

  // training
  m.def(
      "pretrain_policy",
      [](Model& model, const Pairs& data, int epochs, double lr) {
        py::gil_scoped_release release;
        return pretrain_policy(model, data, epochs, lr);
      },
      py::arg("model"), py::arg("data"), py::arg("epochs"),
      py::arg("learning_rate"));
  m.def(
      "pretrain_value",
      [](Model& model, const Pairs& data, const Model& policy, double lr,
         std::uint64_t seed, int passes) {
        py::gil_scoped_release release;
        return pretrain_value(model, data, policy, lr, seed, passes);
      },
      py::arg("model"), py::arg("data"), py::arg("policy_model"),
      py::arg("learning_rate"), py::arg("seed"), py::arg("passes") = 1);
  m.def(
      "evaluate_greedy",
      [](const Model& model, const Pairs& data) {
        py::gil_scoped_release release;
        return evaluate_greedy(model, data);
      },
      py::arg("model"), py::arg("data"));

  m.def(
      "train_mcts",
      [](Model& model, const Pairs& data, const Pairs& valid,
         const SearchParams& search, const TrainParams& train, int rounds,
         int sentences_per_round, int sub_batch, int draws, int draw_size,
         std::uint64_t seed) {
        MctsTrainConfig cfg;
        cfg.rounds = rounds;
        cfg.sentences_per_round = sentences_per_round;
        cfg.sub_batch = sub_batch;
        cfg.draws = draws;
        cfg.draw_size = draw_size;
        cfg.seed = seed;
        std::vector<MetricsRecord> records;
        {
          py::gil_scoped_release release;
          records = train_mcts(model, data, valid, search, train, cfg);
        }
        return metrics_list(records);
      },
      py::arg("model"), py::arg("data"), py::arg("valid"), py::arg("search"),
      py::arg("train"), py::arg("rounds") = 1, py::arg("sentences_per_round") = 256,
      py::arg("sub_batch") = 64, py::arg("draws") = 8, py::arg("draw_size") = 256,
      py::arg("seed") = 0);

  auto pg = [](bool actor_critic) {
    return [actor_critic](Model& model, const Pairs& data, const Pairs& valid,
                          double lr, int batch_sentences,
                          std::int64_t total_sentences, std::uint64_t seed) {
      PolicyGradientConfig cfg;
      cfg.learning_rate = lr;
      cfg.batch_sentences = batch_sentences;
      cfg.total_sentences = total_sentences;
      cfg.seed = seed;
      std::vector<MetricsRecord> records;
      {
        py::gil_scoped_release release;
        records = actor_critic ? train_actor_critic(model, data, valid, cfg)
                               : train_reinforce(model, data, valid, cfg);
      }
      return metrics_list(records);
    };
  };
  m.def("train_reinforce", pg(false), py::arg("model"), py::arg("data"),
        py::arg("valid"), py::arg("learning_rate") = 0.05,
        py::arg("batch_sentences") = 64, py::arg("total_sentences") = 768,
        py::arg("seed") = 0);
  m.def("train_actor_critic", pg(true), py::arg("model"), py::arg("data"),
        py::arg("valid"), py::arg("learning_rate") = 0.05,
        py::arg("batch_sentences") = 64, py::arg("total_sentences") = 768,
        py::arg("seed") = 0);

  // cli
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"mctsnmt"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });
}
