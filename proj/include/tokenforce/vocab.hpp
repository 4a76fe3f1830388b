#pragma once

#include "tokenforce/common.hpp"

#include <algorithm>

namespace tokenforce {

/// Vocabulary description shared by models, templates and targets.
struct VocabSpec {
  int size = 0;               // |V|
  TokenSeq control_ids;       // sorted, unique, strict subset of [0, size)
  int embedding_dim = 0;      // D

  VocabSpec() = default;
  VocabSpec(int size_, TokenSeq control, int embed_dim);

  bool is_control(Token t) const {
    return std::binary_search(control_ids.begin(), control_ids.end(), t);
  }
  bool in_range(Token t) const { return t >= 0 && t < size; }
  int non_control_count() const {
    return size - static_cast<int>(control_ids.size());
  }
};

/// The token ids an attack may place in the suffix.
struct SearchSpace {
  TokenSeq allowed;  // sorted, unique, nonempty

  static SearchSpace full_vocab(const VocabSpec& vocab);
  /// Restricted mode: every id except the vocab's control ids.
  static SearchSpace excluding_controls(const VocabSpec& vocab);

  bool contains(Token t) const {
    return std::binary_search(allowed.begin(), allowed.end(), t);
  }
  int size() const { return static_cast<int>(allowed.size()); }
};

}  // namespace tokenforce
