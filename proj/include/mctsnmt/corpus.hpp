#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "mctsnmt/common.hpp"

namespace mctsnmt {

/// Token inventory. Ids are dense; ids 0-3 are PAD, BOS, EOS, UNK.
class Vocab {
 public:
  /// `words` excludes the specials, which are always prepended.
  explicit Vocab(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const;
  TokenId id_of(const std::string& word) const;

  /// 64-bit FNV-1a over the token list, hex encoded.
  std::string fingerprint() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

Vocab build_vocab(const std::vector<std::vector<std::string>>& sentences,
                  std::size_t max_size);

Sequence encode(const Vocab& vocab, const std::vector<std::string>& words);
std::vector<std::string> decode(const Vocab& vocab, const Sequence& ids);

struct SentencePair {
  Sequence src;
  Sequence ref;  // ends in EOS

  bool operator==(const SentencePair&) const = default;
};

enum class Reorder { reverse, identity };

Reorder parse_reorder(const std::string& name);
std::string to_string(Reorder reorder);

struct SyntheticTaskSpec {
  int src_vocab_size = 40;
  int min_len = 5;
  int max_len = 10;
  std::uint64_t mapping_seed = 1;
  Reorder reorder = Reorder::reverse;

  void validate() const;
};

/// The seeded bijection over source-token ids plus the reordering rule.
/// Source and target share one id space: specials, then
/// src_vocab_size content tokens.
class SyntheticTask {
 public:
  explicit SyntheticTask(SyntheticTaskSpec spec);

  const SyntheticTaskSpec& spec() const { return spec_; }
  std::size_t vocab_size() const {
    return static_cast<std::size_t>(spec_.src_vocab_size) + kNumSpecials;
  }
  Vocab vocab() const;

  TokenId map(TokenId src_token) const;
  Sequence reference(const Sequence& src) const;

  /// Correct next token after `emitted` output tokens (EOS once the
  /// source is exhausted).
  TokenId target_at(const Sequence& src, std::size_t emitted) const;

 private:
  SyntheticTaskSpec spec_;
  std::vector<TokenId> mapping_;
};

std::vector<SentencePair> gen_synthetic(const SyntheticTaskSpec& spec, int n,
                                        std::uint64_t seed);

/// Lines "src-ids TAB ref-ids", space-separated decimal ids.
void save_dataset(const std::filesystem::path& path,
                  const std::vector<SentencePair>& pairs);
std::vector<SentencePair> load_dataset(const std::filesystem::path& path);

/// One whitespace-tokenized sentence per line in each file.
std::vector<SentencePair> load_parallel(const std::filesystem::path& src_path,
                                        const std::filesystem::path& tgt_path,
                                        const Vocab& vocab);

std::vector<std::vector<std::string>> read_tokenized(
    const std::filesystem::path& path);

}  // namespace mctsnmt
