#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace lpr {

using TokenSeq = std::vector<std::string>;

struct TokenizerOptions {
    bool stem = false;
    bool remove_stopwords = false;
};

/// NFKC-normalize, lowercase, split on anything that is not a letter or digit.
/// Optional stopword removal runs before Porter stemming.
TokenSeq tokenize(std::string_view text, const TokenizerOptions& options = {});

/// Contiguous windows of length n, in order. Throws Error when n < 1.
std::vector<TokenSeq> ngrams(const TokenSeq& tokens, std::size_t n);

std::string join_tokens(const TokenSeq& tokens, std::string_view sep = " ");

/// Classic Porter (1980) stemmer. Input is expected lowercase; words of
/// length <= 2 and words with non-ASCII bytes are returned unchanged.
std::string porter_stem(std::string_view word);

bool is_stopword(std::string_view token);

/// True when `text` is well-formed UTF-8. On failure `bad_offset` (if given)
/// receives the byte offset of the first invalid sequence.
bool valid_utf8(std::string_view text, std::size_t* bad_offset = nullptr);

}  // namespace lpr
