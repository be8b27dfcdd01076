#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "afford3d/errors.hpp"
#include "afford3d/semantic_tokens.hpp"

using namespace afford3d;

TEST_CASE("parse_query: lowercase, punctuation, empty") {
    const AffordanceQuery q = parse_query("Grasp the MUG's handle!");
    CHECK(q.words == std::vector<std::string>{"grasp", "the", "mug", "s", "handle"});
    CHECK_THROWS_AS(parse_query("  ... "), InputError);
}

TEST_CASE("embed: deterministic and order-invariant") {
    Rng rng(19);
    SemanticTokenizer tok({16, 32, 64}, 32, 99, rng);
    const auto a = tok.embed("grasp handle");
    const auto b = tok.embed("grasp handle");
    CHECK(a.tokens.same_values(b.tokens));
    CHECK(a.scale_tags == std::vector<int>{16, 32, 64});

    const auto c = tok.embed("handle grasp");
    CHECK(a.tokens.same_values(c.tokens));  // bag of words
}

TEST_CASE("embed: toy vocabulary matches scripted hash mean") {
    Rng rng(23);
    SemanticTokenizer tok({16}, 8, 7, rng);
    const auto ea = tok.word_embedding("alpha");
    const auto eb = tok.word_embedding("beta");
    const auto bag = tok.bag_embedding(parse_query("alpha beta"));
    for (int i = 0; i < 8; ++i) CHECK(bag[size_t(i)] == doctest::Approx(0.5 * (ea[size_t(i)] + eb[size_t(i)])).epsilon(1e-15));

    // head projection of the bag equals the token row
    const auto tokens = tok.embed("alpha beta");
    Tensor bag_t = Tensor::from({1, 8}, bag);
    std::vector<Parameter*> params;
    tok.collect(params);
    REQUIRE(params.size() == 2);  // weight + bias of the single head
    Tensor expected = linear(bag_t, params[0]->tensor, params[1]->tensor);
    for (int i = 0; i < 8; ++i) CHECK(tokens.tokens.at(i) == doctest::Approx(expected.at(i)).epsilon(1e-15));
}

TEST_CASE("unknown words still embed deterministically") {
    Rng rng(29);
    SemanticTokenizer tok({16, 32, 64}, 16, 5, rng);
    const auto a = tok.embed("zzyzx frobnicate");
    const auto b = tok.embed("zzyzx frobnicate");
    CHECK(a.tokens.same_values(b.tokens));
    CHECK(a.tokens.dim(0) == 3);
}

TEST_CASE("disjoint-word queries have near-zero mean cosine") {
    Rng rng(31);
    SemanticTokenizer tok({16}, 64, 12345, rng);
    double mean_cos = 0.0;
    const int pairs = 1000;
    for (int i = 0; i < pairs; ++i) {
        const auto a = tok.word_embedding("wa" + std::to_string(i));
        const auto b = tok.word_embedding("wb" + std::to_string(i));
        double dot = 0, na = 0, nb = 0;
        for (int c = 0; c < 64; ++c) {
            dot += a[size_t(c)] * b[size_t(c)];
            na += a[size_t(c)] * a[size_t(c)];
            nb += b[size_t(c)] * b[size_t(c)];
        }
        mean_cos += dot / std::sqrt(na * nb);
    }
    mean_cos /= pairs;
    CHECK(std::abs(mean_cos) < 0.1);
}
