#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lpr/corpus.hpp"
#include "lpr/textproc.hpp"

namespace lpr {

struct BM25Params {
    double k1 = 1.5;
    double b = 0.75;

    /// Throws ConfigError when k1 < 0 or b is outside [0, 1].
    void validate() const;
};

struct ScoredPassage {
    Handle handle = 0;
    double score = 0.0;

    friend bool operator==(const ScoredPassage&, const ScoredPassage&) = default;
};

/// Descending by score, ties by ascending handle.
inline bool ranks_before(const ScoredPassage& a, const ScoredPassage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.handle < b.handle;
}

struct RankedList {
    std::string qid;
    std::vector<ScoredPassage> entries;
};

/// Top-k of `scored` under ranks_before; consumes the input.
std::vector<ScoredPassage> select_top_k(std::vector<ScoredPassage> scored, std::size_t k);

struct Posting {
    Handle handle = 0;
    std::uint32_t tf = 0;

    friend bool operator==(const Posting&, const Posting&) = default;
};

/// BM25 inverted index. Immutable after construction, so concurrent searches
/// are safe.
class SparseIndex {
public:
    SparseIndex(std::unordered_map<std::string, std::vector<Posting>> postings,
                std::vector<std::uint32_t> doc_lengths, BM25Params params);

    std::size_t n_docs() const noexcept { return doc_lengths_.size(); }
    std::size_t n_terms() const noexcept { return postings_.size(); }
    double avg_doc_length() const noexcept { return avg_doc_length_; }
    const BM25Params& params() const noexcept { return params_; }
    const std::vector<std::uint32_t>& doc_lengths() const noexcept { return doc_lengths_; }
    const std::unordered_map<std::string, std::vector<Posting>>& postings() const noexcept {
        return postings_;
    }

    /// Postings for `term`, sorted by handle; empty when the term is unknown.
    const std::vector<Posting>& postings_for(const std::string& term) const;
    std::size_t document_frequency(const std::string& term) const;
    /// ln(1 + (N - df + 0.5) / (df + 0.5)); always positive.
    double idf(const std::string& term) const;

    /// BM25 score of one passage. Throws Error for an out-of-range handle.
    double score(const TokenSeq& query, Handle handle) const;

    /// Term-at-a-time top-k. Passages sharing no term with the query are omitted.
    RankedList search(const TokenSeq& query, std::size_t k, std::string qid = {}) const;

    /// SPIX1 binary layout, little-endian regardless of host.
    void save(const std::filesystem::path& path) const;
    static SparseIndex load(const std::filesystem::path& path);
    std::string serialize() const;
    static SparseIndex deserialize(const std::string& bytes);

private:
    double term_weight(double idf, std::uint32_t tf, std::uint32_t doc_len) const;

    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::uint32_t> doc_lengths_;
    double avg_doc_length_ = 0.0;
    BM25Params params_;
};

SparseIndex build_index(const PassageCollection& collection, const BM25Params& params = {},
                        const TokenizerOptions& tokenizer = {});
SparseIndex build_index(const std::vector<TokenSeq>& documents, const BM25Params& params = {});

}  // namespace lpr
