#include "mctsnmt/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace mctsnmt {

namespace {

const std::vector<std::string> kSpecialTokens = {"<pad>", "<bos>", "<eos>",
                                                 "<unk>"};

bool is_special_token(const std::string& word) {
  return std::find(kSpecialTokens.begin(), kSpecialTokens.end(), word) !=
         kSpecialTokens.end();
}

Sequence parse_ids(const std::string& field, std::size_t line_no) {
  Sequence ids;
  std::istringstream in(field);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    long value = 0;
    try {
      value = std::stol(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || value < 0) {
      throw Error("dataset line " + std::to_string(line_no) +
                  ": bad token id '" + tok + "'");
    }
    ids.push_back(static_cast<TokenId>(value));
  }
  return ids;
}

void write_ids(std::ostream& out, const Sequence& ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out << ' ';
    out << ids[i];
  }
}

}  // namespace

Vocab::Vocab(const std::vector<std::string>& words) : tokens_(kSpecialTokens) {
  for (const auto& w : words) {
    if (is_special_token(w)) throw Error("vocab: reserved token '" + w + "'");
    tokens_.push_back(w);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error("vocab: duplicate token '" + tokens_[i] + "'");
    }
  }
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::id_of(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

std::string Vocab::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // separator
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& sentences,
                  std::size_t max_size) {
  if (max_size < kNumSpecials + 1) throw Error("build_vocab: max_size < 5");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& w : s) {
      if (!is_special_token(w)) ++counts[w];
    }
  }
  if (counts.empty()) throw Error("empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                          counts.end());
  // std::map iteration is lexicographic, so stable_sort keeps ties in
  // lexicographic order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - kNumSpecials);
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) words.push_back(ranked[i].first);
  return Vocab(words);
}

Sequence encode(const Vocab& vocab, const std::vector<std::string>& words) {
  Sequence ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id_of(w));
  return ids;
}

std::vector<std::string> decode(const Vocab& vocab, const Sequence& ids) {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (TokenId id : ids) words.push_back(vocab.token(id));
  return words;
}

Reorder parse_reorder(const std::string& name) {
  if (name == "reverse") return Reorder::reverse;
  if (name == "identity") return Reorder::identity;
  throw Error("unknown reorder '" + name + "'");
}

std::string to_string(Reorder reorder) {
  return reorder == Reorder::reverse ? "reverse" : "identity";
}

void SyntheticTaskSpec::validate() const {
  if (src_vocab_size < 1) throw Error("synthetic task: src_vocab_size < 1");
  if (min_len < 1 || min_len > max_len) {
    throw Error("synthetic task: need 1 <= min_len <= max_len");
  }
}

SyntheticTask::SyntheticTask(SyntheticTaskSpec spec) : spec_(spec) {
  spec_.validate();
  const auto n = static_cast<std::size_t>(spec_.src_vocab_size);
  std::vector<TokenId> perm(n);
  for (std::size_t i = 0; i < n; ++i) {
    perm[i] = static_cast<TokenId>(i) + kNumSpecials;
  }
  Rng rng(spec_.mapping_seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  }
  mapping_ = std::move(perm);
}

Vocab SyntheticTask::vocab() const {
  std::vector<std::string> words;
  for (int i = 0; i < spec_.src_vocab_size; ++i) {
    words.push_back("w" + std::to_string(i));
  }
  return Vocab(words);
}

TokenId SyntheticTask::map(TokenId src_token) const {
  const auto idx = src_token - kNumSpecials;
  if (idx < 0 || idx >= spec_.src_vocab_size) {
    throw Error("synthetic task: token " + std::to_string(src_token) +
                " outside the source sub-vocabulary");
  }
  return mapping_[static_cast<std::size_t>(idx)];
}

TokenId SyntheticTask::target_at(const Sequence& src,
                                 std::size_t emitted) const {
  if (emitted >= src.size()) return kEos;
  const std::size_t pos = spec_.reorder == Reorder::reverse
                              ? src.size() - 1 - emitted
                              : emitted;
  return map(src[pos]);
}

Sequence SyntheticTask::reference(const Sequence& src) const {
  Sequence ref;
  ref.reserve(src.size() + 1);
  for (std::size_t t = 0; t <= src.size(); ++t) ref.push_back(target_at(src, t));
  return ref;
}

std::vector<SentencePair> gen_synthetic(const SyntheticTaskSpec& spec, int n,
                                        std::uint64_t seed) {
  if (n < 1) throw Error("gen_synthetic: n < 1");
  const SyntheticTask task(spec);
  Rng rng(seed);
  std::vector<SentencePair> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  const auto span = static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1);
  for (int i = 0; i < n; ++i) {
    const auto len = static_cast<std::size_t>(spec.min_len) +
                     uniform_index(rng, span);
    Sequence src(len);
    for (auto& tok : src) {
      tok = kNumSpecials + static_cast<TokenId>(uniform_index(
                               rng, static_cast<std::uint64_t>(spec.src_vocab_size)));
    }
    pairs.push_back({src, task.reference(src)});
  }
  return pairs;
}

void save_dataset(const std::filesystem::path& path,
                  const std::vector<SentencePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : pairs) {
    write_ids(out, p.src);
    out << '\t';
    write_ids(out, p.ref);
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<SentencePair> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<SentencePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(path.string() + ":" + std::to_string(line_no) +
                  ": missing TAB separator");
    }
    SentencePair p{parse_ids(line.substr(0, tab), line_no),
                   parse_ids(line.substr(tab + 1), line_no)};
    if (p.ref.empty() || p.ref.back() != kEos) {
      throw Error(path.string() + ":" + std::to_string(line_no) +
                  ": reference must end in EOS");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<std::vector<std::string>> read_tokenized(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::vector<std::string>> sentences;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::vector<std::string> s;
    std::string w;
    while (words >> w) s.push_back(w);
    sentences.push_back(std::move(s));
  }
  return sentences;
}

std::vector<SentencePair> load_parallel(const std::filesystem::path& src_path,
                                        const std::filesystem::path& tgt_path,
                                        const Vocab& vocab) {
  const auto src = read_tokenized(src_path);
  const auto tgt = read_tokenized(tgt_path);
  if (src.size() != tgt.size()) {
    throw Error("parallel corpus length mismatch: " +
                std::to_string(src.size()) + " vs " +
                std::to_string(tgt.size()) + " lines");
  }
  std::vector<SentencePair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair p{encode(vocab, src[i]), encode(vocab, tgt[i])};
    p.ref.push_back(kEos);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace mctsnmt
