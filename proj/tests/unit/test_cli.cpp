#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "mctsnmt/cli.hpp"
#include "mctsnmt/corpus.hpp"
#include "mctsnmt/model.hpp"

using namespace mctsnmt;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::vector<const char*> argv{"mctsnmt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("compare_report") {
  BleuScore b;
  b.value = 0.27294;
  SUBCASE("rounding") {
    const std::string r = compare_report({{Method::mcts, b}});
    CHECK(r == "Methodology         BLEU\nMCTS                27.29\n");
  }
  SUBCASE("fixed row order") {
    std::map<Method, BleuScore> all;
    for (Method m : {Method::policy_rl, Method::mcts, Method::supervised,
                     Method::actor_critic}) {
      all[m] = b;
    }
    const std::string r = compare_report(all);
    CHECK(count_lines(r) == 5);
    const auto sup = r.find("Supervised Policy");
    const auto mcts = r.find("MCTS");
    const auto ac = r.find("Actor-Critic");
    const auto rl = r.find("Policy+RL");
    CHECK(sup < mcts);
    CHECK(mcts < ac);
    CHECK(ac < rl);
    all[Method::no_value] = b;
    CHECK(compare_report(all).rfind("No Value") > rl);
  }
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"gen-data", "--bogus"}).code == 2);
  CHECK(run({"train", "--method", "nonsense"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"eval", "--model", "/nonexistent.ckpt", "--data", "/nonexistent.tsv"}).code == 1);
}

TEST_CASE("gen-data, pretrain, eval, decode, train, update") {
  testutil::TempDir dir;
  const auto p = [&](const char* n) { return (dir / n).string(); };
  REQUIRE(run({"gen-data", "--vocab", "40", "--n", "2000", "--seed", "7", "--out",
               p("train.tsv"), "--oracle-out", p("oracle.ckpt")})
              .code == 0);
  CHECK(count_lines(testutil::slurp(p("train.tsv"))) == 2000);
  REQUIRE(run({"gen-data", "--n", "40", "--seed", "8", "--out", p("test.tsv")}).code == 0);

  const Run pre = run({"pretrain", "--policy", "--value", "--data", p("train.tsv"),
                       "--out", p("pre.ckpt")});
  REQUIRE(pre.code == 0);
  CHECK(pre.out.find("policy epoch 1") != std::string::npos);

  const Run e1 = run({"eval", "--model", p("pre.ckpt"), "--data", p("test.tsv")});
  const Run e2 = run({"eval", "--model", p("pre.ckpt"), "--data", p("test.tsv")});
  REQUIRE(e1.code == 0);
  CHECK(e1.out == e2.out);
  CHECK(count_lines(e1.out) == 1);
  CHECK(e1.out.rfind("BLEU = ", 0) == 0);

  const Run eo = run({"eval", "--model", p("oracle.ckpt"), "--data", p("test.tsv")});
  CHECK(eo.out.rfind("BLEU = 100.00", 0) == 0);

  const Run dec = run({"decode", "--model", p("oracle.ckpt"), "--data", p("test.tsv"),
                       "--simulations", "10", "--trace", p("trace.jsonl")});
  REQUIRE(dec.code == 0);
  CHECK(count_lines(testutil::slurp(p("trace.jsonl"))) > 40);

  for (const char* method : {"mcts", "mcts-novalue", "reinforce", "actor-critic"}) {
    const Run t = run({"train", "--method", method, "--model", p("pre.ckpt"), "--data",
                       p("train.tsv"), "--valid", p("test.tsv"), "--rounds", "1",
                       "--sentences-per-round", "16", "--simulations", "10",
                       "--draws", "2", "--draw-size", "32", "--out", p("t.ckpt"),
                       "--metrics", p("metrics.jsonl"), "--dump-samples",
                       p("pool.jsonl")});
    INFO(method, " ", t.err);
    CHECK(t.code == 0);
  }
  CHECK(count_lines(testutil::slurp(p("metrics.jsonl"))) >= 4);

  const Run up = run({"update", "--model", p("pre.ckpt"), "--samples", p("pool.jsonl"),
                      "--draws", "2", "--out", p("u.ckpt")});
  INFO(up.err);
  CHECK(up.code == 0);

  SUBCASE("same seed, same files") {
    REQUIRE(run({"gen-data", "--n", "50", "--seed", "3", "--out", p("a.tsv")}).code == 0);
    REQUIRE(run({"gen-data", "--n", "50", "--seed", "3", "--out", p("b.tsv")}).code == 0);
    CHECK(testutil::slurp(p("a.tsv")) == testutil::slurp(p("b.tsv")));
    for (const char* out : {"x.ckpt", "y.ckpt"}) {
      REQUIRE(run({"train", "--method", "mcts", "--model", p("pre.ckpt"), "--data",
                   p("train.tsv"), "--rounds", "1", "--sentences-per-round", "8",
                   "--simulations", "10", "--draws", "1", "--out", p(out)})
                  .code == 0);
    }
    CHECK(testutil::slurp(p("x.ckpt")) == testutil::slurp(p("y.ckpt")));
  }
  SUBCASE("compare") {
    const Run c = run({"compare", "--model", p("pre.ckpt"), "--data", p("train.tsv"),
                       "--test", p("test.tsv"), "--rounds", "1",
                       "--sentences-per-round", "16", "--simulations", "10",
                       "--draws", "2", "--with-novalue"});
    INFO(c.err);
    REQUIRE(c.code == 0);
    CHECK(count_lines(c.out) == 6);
    CHECK(c.out.find("Policy+RL") != std::string::npos);
  }
  SUBCASE("config file, overridden by flags") {
    testutil::write_file(p("gen.cfg"), "# dataset\nn = 12\nseed=5\n--min-len=3\n");
    REQUIRE(run({"--config", p("gen.cfg"), "gen-data", "--out", p("c.tsv")}).code == 0);
    CHECK(count_lines(testutil::slurp(p("c.tsv"))) == 12);
    REQUIRE(run({"--config", p("gen.cfg"), "gen-data", "--n", "7", "--out", p("d.tsv")})
                .code == 0);
    CHECK(count_lines(testutil::slurp(p("d.tsv"))) == 7);
    // Config values and flags agree when equal.
    REQUIRE(run({"gen-data", "--n", "12", "--seed", "5", "--min-len", "3", "--out",
                 p("e.tsv")})
                .code == 0);
    CHECK(testutil::slurp(p("c.tsv")) == testutil::slurp(p("e.tsv")));

    testutil::write_file(p("bad.cfg"), "no_such_key=1\n");
    CHECK(run({"--config", p("bad.cfg"), "gen-data", "--out", p("f.tsv")}).code == 2);
    testutil::write_file(p("bad2.cfg"), "just words\n");
    CHECK(run({"--config", p("bad2.cfg"), "gen-data", "--out", p("f.tsv")}).code == 2);
    CHECK(run({"--config", p("missing.cfg"), "gen-data", "--out", p("f.tsv")}).code == 2);
  }
}

TEST_CASE("read_config") {
  testutil::TempDir dir;
  testutil::write_file(dir / "c.cfg", "  a = 1 \n\n# x=2\n--b=two words\n");
  const auto cfg = read_config(dir / "c.cfg");
  CHECK(cfg.size() == 2);
  CHECK(cfg.at("a") == "1");
  CHECK(cfg.at("b") == "two words");
}

}  // TEST_SUITE
