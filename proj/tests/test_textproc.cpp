#include <random>

#include <gtest/gtest.h>

#include "lpr/textproc.hpp"

using namespace lpr;

TEST(Tokenize, LowercasesAndSplits) {
    EXPECT_EQ(tokenize("Trademark Infringement."), (TokenSeq{"trademark", "infringement"}));
}

TEST(Tokenize, EmptyText) {
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_TRUE(tokenize("  ,.;  ").empty());
}

TEST(Tokenize, Citation) {
    EXPECT_EQ(tokenize("57 F.3d 300, 302 n."), (TokenSeq{"57", "f", "3d", "300", "302", "n"}));
}

TEST(Tokenize, NfkcFoldsCompatibilityForms) {
    // full-width letters and the "fi" ligature
    EXPECT_EQ(tokenize("\xEF\xBC\xA1\xEF\xBC\xA2\xEF\xBC\xA3 \xEF\xAC\x81le"), (TokenSeq{"abc", "file"}));
    EXPECT_EQ(tokenize("Stra\xC3\x9F" "e \xC3\x89t\xC3\xA9"), (TokenSeq{"stra\xC3\x9F" "e", "\xC3\xA9t\xC3\xA9"}));
}

TEST(Tokenize, Idempotent) {
    std::mt19937 rng(5);
    const std::vector<std::string> pieces = {"Court", "HELD", "§", "1983", "n.", "F.3d", "-", "Co.'s", "\xC3\x89t\xC3\xA9",
                                             "\xEF\xAC\x81", "  ", "\t", "(a)(1)"};
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        for (int i = 0; i < 12; ++i) text += pieces[rng() % pieces.size()] + (rng() % 2 ? " " : "");
        const auto once = tokenize(text);
        EXPECT_EQ(tokenize(join_tokens(once)), once) << text;
        for (const auto& t : once) EXPECT_FALSE(t.empty());
    }
}

TEST(Tokenize, OptionalStemmingAndStopwords) {
    TokenizerOptions opts;
    opts.stem = true;
    opts.remove_stopwords = true;
    EXPECT_EQ(tokenize("The courts are hopping to the relational filings", opts),
              (TokenSeq{"court", "hop", "relat", "file"}));
}

TEST(Porter, KnownPairs) {
    const std::vector<std::pair<std::string, std::string>> pairs = {
        {"caresses", "caress"}, {"ponies", "poni"},   {"ties", "ti"},          {"caress", "caress"},
        {"cats", "cat"},        {"feed", "feed"},     {"agreed", "agre"},      {"plastered", "plaster"},
        {"motoring", "motor"},  {"sing", "sing"},     {"conflated", "conflat"}, {"troubled", "troubl"},
        {"sized", "size"},      {"hopping", "hop"},   {"falling", "fall"},     {"filing", "file"},
        {"happy", "happi"},     {"relational", "relat"}, {"conditional", "condit"}, {"generalizations", "gener"},
        {"oscillators", "oscil"}, {"hopeful", "hope"}, {"goodness", "good"},   {"adjustment", "adjust"},
        {"controlling", "control"}, {"rolling", "roll"}, {"a", "a"},           {"is", "is"},
    };
    for (const auto& [word, stem] : pairs) EXPECT_EQ(porter_stem(word), stem) << word;
}

TEST(Stopwords, Membership) {
    EXPECT_TRUE(is_stopword("the"));
    EXPECT_TRUE(is_stopword("and"));
    EXPECT_FALSE(is_stopword("court"));
}

TEST(Ngrams, Bigrams) {
    EXPECT_EQ(ngrams({"a", "b", "c"}, 2), (std::vector<TokenSeq>{{"a", "b"}, {"b", "c"}}));
}

TEST(Ngrams, ShortInput) { EXPECT_TRUE(ngrams({"a"}, 2).empty()); }

TEST(Ngrams, ZeroOrderRejected) { EXPECT_THROW(ngrams({"a"}, 0), std::exception); }

TEST(Ngrams, SliceOracle) {
    std::mt19937 rng(11);
    TokenSeq tokens;
    for (int i = 0; i < 50; ++i) tokens.push_back("t" + std::to_string(rng() % 7));
    const auto grams = ngrams(tokens, 4);
    ASSERT_EQ(grams.size(), 47u);
    for (std::size_t i = 0; i < grams.size(); ++i) {
        EXPECT_EQ(grams[i], TokenSeq(tokens.begin() + i, tokens.begin() + i + 4));
    }
    for (std::size_t n = 1; n <= 60; ++n) {
        EXPECT_EQ(ngrams(tokens, n).size(), n <= 50 ? 51 - n : 0);
    }
}

TEST(Utf8, Validation) {
    std::size_t bad = 0;
    EXPECT_TRUE(valid_utf8("plain \xC3\xA9"));
    EXPECT_FALSE(valid_utf8("ab\xC3", &bad));
    EXPECT_EQ(bad, 2u);
    EXPECT_FALSE(valid_utf8("\xFF"));
}
