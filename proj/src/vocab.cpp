#include "tokenforce/vocab.hpp"

namespace tokenforce {

VocabSpec::VocabSpec(int size_, TokenSeq control, int embed_dim)
    : size(size_), control_ids(std::move(control)), embedding_dim(embed_dim) {
  require(size >= 1, "vocab size must be >= 1");
  require(embedding_dim >= 1, "embedding_dim must be >= 1");
  std::sort(control_ids.begin(), control_ids.end());
  control_ids.erase(std::unique(control_ids.begin(), control_ids.end()),
                    control_ids.end());
  for (Token t : control_ids) {
    require(t >= 0 && t < size, "control id out of vocab range");
  }
  require(static_cast<int>(control_ids.size()) < size,
          "control ids must leave at least one free token");
}

SearchSpace SearchSpace::full_vocab(const VocabSpec& vocab) {
  SearchSpace s;
  s.allowed.resize(vocab.size);
  for (int i = 0; i < vocab.size; ++i) s.allowed[i] = i;
  return s;
}

SearchSpace SearchSpace::excluding_controls(const VocabSpec& vocab) {
  SearchSpace s;
  s.allowed.reserve(vocab.size - vocab.control_ids.size());
  for (int i = 0; i < vocab.size; ++i) {
    if (!vocab.is_control(i)) s.allowed.push_back(i);
  }
  require(!s.allowed.empty(), "search space is empty");
  return s;
}

}  // namespace tokenforce
