#pragma once

#include <string>
#include <vector>

#include "afford3d/nn.hpp"
#include "afford3d/tensor.hpp"

namespace afford3d {

struct AffordanceQuery {
    std::string text;
    std::vector<std::string> words;  // lowercase, split on non-alphanumeric
};

// Lowercases and splits on anything that is not a letter or digit. Throws
// InputError when no words remain.
AffordanceQuery parse_query(const std::string& text);

// K scale-tagged semantic token embeddings; t_j is paired with scale_tags[j].
struct AffordanceTokenSet {
    Tensor tokens;  // [K, d]
    std::vector<int> scale_tags;
};

// Deterministic query-to-token stand-in for an autoregressive language path:
// seeded hash embeddings per word, bag-of-words average, one learned linear
// head per scale. Unknown words get hash embeddings too, so arbitrary
// queries stay representable.
class SemanticTokenizer {
  public:
    SemanticTokenizer() = default;
    SemanticTokenizer(const std::vector<int>& scales, std::int64_t d, std::uint64_t hash_seed,
                      Rng& rng);

    AffordanceTokenSet embed(const AffordanceQuery& query) const;
    AffordanceTokenSet embed(const std::string& text) const { return embed(parse_query(text)); }

    // The fixed pseudo-random embedding of a single word; exposed for tests.
    std::vector<double> word_embedding(const std::string& word) const;
    std::vector<double> bag_embedding(const AffordanceQuery& query) const;

    std::int64_t width() const { return d_; }
    const std::vector<int>& scales() const { return scales_; }
    void collect(std::vector<Parameter*>& out);

  private:
    std::vector<int> scales_;
    std::int64_t d_ = 0;
    std::uint64_t hash_seed_ = 0;
    std::vector<Linear> heads_;
};

}  // namespace afford3d
