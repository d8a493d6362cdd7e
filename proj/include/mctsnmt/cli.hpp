#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "mctsnmt/bleu.hpp"

namespace mctsnmt {

enum class Method { supervised, mcts, actor_critic, policy_rl, no_value };

/// Two-column results table (Methodology, BLEU x 100 to two decimals).
/// Rows appear in the order Supervised Policy, MCTS, Actor-Critic,
/// Policy+RL, No Value; absent methods are skipped.
std::string compare_report(const std::map<Method, BleuScore>& results);

/// Flat `key=value` lines; blank lines and lines starting with '#' are
/// ignored.
std::map<std::string, std::string> read_config(const std::filesystem::path& path);

/// Entry point for the command-line tool. Exit codes: 0 success, 1 runtime
/// error, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

}  // namespace mctsnmt
