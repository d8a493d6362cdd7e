#pragma once

#include <array>
#include <vector>

#include "mctsnmt/common.hpp"

namespace mctsnmt {

struct BleuScore {
  double value = 0.0;
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
};

/// Smoothed BLEU-4 between two id sequences that carry no PAD/BOS/EOS.
///
/// Unigram precision is unsmoothed. For n >= 2 a precision whose match
/// count is zero, or whose hypothesis has fewer than n tokens, becomes
/// (m + 1) / (t + 1). An empty hypothesis scores 0.
BleuScore sentence_bleu(const Sequence& hyp, const Sequence& ref);

/// Pooled-count BLEU-4 with no smoothing; brevity penalty from summed
/// lengths.
BleuScore corpus_bleu(const std::vector<Sequence>& hyps,
                      const std::vector<Sequence>& refs);

}  // namespace mctsnmt
