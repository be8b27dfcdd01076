#include "afford3d/semantic_tokens.hpp"

#include <cctype>

#include "afford3d/errors.hpp"

namespace afford3d {

AffordanceQuery parse_query(const std::string& text) {
    AffordanceQuery q;
    q.text = text;
    std::string word;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!word.empty()) {
            q.words.push_back(word);
            word.clear();
        }
    }
    if (!word.empty()) q.words.push_back(word);
    if (q.words.empty()) throw InputError("query contains no words: '" + text + "'");
    return q;
}

SemanticTokenizer::SemanticTokenizer(const std::vector<int>& scales, std::int64_t d,
                                     std::uint64_t hash_seed, Rng& rng)
    : scales_(scales), d_(d), hash_seed_(hash_seed) {
    if (scales.empty()) throw ConfigError("semantic tokens: empty scale list");
    heads_.reserve(scales.size());
    for (int s : scales_)
        heads_.emplace_back("semantic_tokens.head_s" + std::to_string(s), d, d, rng);
}

std::vector<double> SemanticTokenizer::word_embedding(const std::string& word) const {
    Rng stream(mix64(hash_seed_ ^ hash_string(word)));
    std::vector<double> v(static_cast<std::size_t>(d_));
    for (auto& x : v) x = stream.uniform(-1.0, 1.0);
    return v;
}

std::vector<double> SemanticTokenizer::bag_embedding(const AffordanceQuery& query) const {
    std::vector<double> acc(static_cast<std::size_t>(d_), 0.0);
    for (const auto& w : query.words) {
        const auto e = word_embedding(w);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
    }
    const double inv = 1.0 / static_cast<double>(query.words.size());
    for (auto& x : acc) x *= inv;
    return acc;
}

AffordanceTokenSet SemanticTokenizer::embed(const AffordanceQuery& query) const {
    const Tensor bag = Tensor::from({1, d_}, bag_embedding(query));
    std::vector<Tensor> rows;
    rows.reserve(heads_.size());
    for (const auto& head : heads_) rows.push_back(head(bag));
    AffordanceTokenSet out;
    out.tokens = concat_rows(rows);
    out.scale_tags = scales_;
    return out;
}

void SemanticTokenizer::collect(std::vector<Parameter*>& out) {
    for (auto& h : heads_) h.collect(out);
}

}  // namespace afford3d
