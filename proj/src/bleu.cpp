#include "mctsnmt/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mctsnmt {

namespace {

constexpr int kMaxOrder = 4;

struct NgramStats {
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

void check_stripped(const Sequence& ids) {
  for (TokenId id : ids) {
    if (id == kPad || id == kBos || id == kEos) {
      throw Error("unstripped special token");
    }
  }
}

std::map<Sequence, std::size_t> count_ngrams(const Sequence& ids, int n) {
  std::map<Sequence, std::size_t> counts;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= ids.size(); ++i) {
    ++counts[Sequence(ids.begin() + static_cast<std::ptrdiff_t>(i),
                      ids.begin() + static_cast<std::ptrdiff_t>(i + len))];
  }
  return counts;
}

NgramStats collect(const Sequence& hyp, const Sequence& ref) {
  check_stripped(hyp);
  check_stripped(ref);
  NgramStats stats;
  stats.hyp_len = hyp.size();
  stats.ref_len = ref.size();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto hyp_counts = count_ngrams(hyp, n);
    const auto ref_counts = count_ngrams(ref, n);
    std::size_t matched = 0;
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    const auto idx = static_cast<std::size_t>(n - 1);
    stats.matches[idx] = matched;
    stats.totals[idx] =
        hyp.size() >= static_cast<std::size_t>(n) ? hyp.size() - n + 1 : 0;
  }
  return stats;
}

double brevity(std::size_t hyp_len, std::size_t ref_len) {
  if (hyp_len == 0) return 0.0;
  if (hyp_len >= ref_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_len) /
                            static_cast<double>(hyp_len));
}

BleuScore combine(const std::array<double, kMaxOrder>& precisions, double bp) {
  BleuScore score;
  score.precisions = precisions;
  score.brevity_penalty = bp;
  double log_sum = 0.0;
  for (double p : precisions) {
    if (p <= 0.0) return score;  // value stays 0
    log_sum += std::log(p);
  }
  score.value = std::clamp(bp * std::exp(log_sum / kMaxOrder), 0.0, 1.0);
  return score;
}

}  // namespace

BleuScore sentence_bleu(const Sequence& hyp, const Sequence& ref) {
  const NgramStats s = collect(hyp, ref);
  if (hyp.empty()) return BleuScore{};
  std::array<double, kMaxOrder> p{};
  for (std::size_t i = 0; i < kMaxOrder; ++i) {
    const auto m = static_cast<double>(s.matches[i]);
    const auto t = static_cast<double>(s.totals[i]);
    if (i > 0 && (s.matches[i] == 0 || s.totals[i] == 0)) {
      p[i] = (m + 1.0) / (t + 1.0);
    } else {
      p[i] = m / t;
    }
  }
  return combine(p, brevity(s.hyp_len, s.ref_len));
}

BleuScore corpus_bleu(const std::vector<Sequence>& hyps,
                      const std::vector<Sequence>& refs) {
  if (hyps.size() != refs.size()) {
    throw Error("corpus_bleu: " + std::to_string(hyps.size()) +
                " hypotheses vs " + std::to_string(refs.size()) +
                " references");
  }
  if (hyps.empty()) throw Error("corpus_bleu: empty corpus");
  NgramStats pooled;
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    const NgramStats s = collect(hyps[k], refs[k]);
    for (std::size_t i = 0; i < kMaxOrder; ++i) {
      pooled.matches[i] += s.matches[i];
      pooled.totals[i] += s.totals[i];
    }
    pooled.hyp_len += s.hyp_len;
    pooled.ref_len += s.ref_len;
  }
  std::array<double, kMaxOrder> p{};
  for (std::size_t i = 0; i < kMaxOrder; ++i) {
    p[i] = pooled.totals[i] == 0
               ? 0.0
               : static_cast<double>(pooled.matches[i]) /
                     static_cast<double>(pooled.totals[i]);
  }
  return combine(p, brevity(pooled.hyp_len, pooled.ref_len));
}

}  // namespace mctsnmt
