#include "lpr/sparse.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lpr/error.hpp"

namespace lpr {

namespace {

constexpr std::string_view kMagic = "SPIX1";

const std::vector<Posting> kNoPostings;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint64_t u64() { return read_le(8); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::uint64_t len) {
        need(len);
        std::string s = bytes_.substr(pos_, static_cast<std::size_t>(len));
        pos_ += static_cast<std::size_t>(len);
        return s;
    }

    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > bytes_.size() - pos_) {
            throw FormatError("SPIX1: truncated at byte offset " + std::to_string(pos_), pos_);
        }
    }

    std::uint64_t read_le(int width) {
        need(static_cast<std::uint64_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void BM25Params::validate() const {
    if (!(k1 >= 0.0) || !std::isfinite(k1)) throw ConfigError("BM25 k1 must be >= 0");
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("BM25 b must lie in [0, 1]");
}

std::vector<ScoredPassage> select_top_k(std::vector<ScoredPassage> scored, std::size_t k) {
    if (k < scored.size()) {
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                          ranks_before);
        scored.resize(k);
    } else {
        std::sort(scored.begin(), scored.end(), ranks_before);
    }
    return scored;
}

SparseIndex::SparseIndex(std::unordered_map<std::string, std::vector<Posting>> postings,
                         std::vector<std::uint32_t> doc_lengths, BM25Params params)
    : postings_(std::move(postings)), doc_lengths_(std::move(doc_lengths)), params_(params) {
    params_.validate();
    if (doc_lengths_.empty()) throw Error("sparse index: empty collection");
    double sum = 0.0;
    for (auto len : doc_lengths_) sum += len;
    avg_doc_length_ = sum / static_cast<double>(doc_lengths_.size());
    for (const auto& [term, list] : postings_) {
        for (const auto& p : list) {
            if (p.handle >= doc_lengths_.size()) {
                throw FormatError("sparse index: posting handle out of range for term '" + term + "'");
            }
        }
    }
}

const std::vector<Posting>& SparseIndex::postings_for(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? kNoPostings : it->second;
}

std::size_t SparseIndex::document_frequency(const std::string& term) const {
    return postings_for(term).size();
}

double SparseIndex::idf(const std::string& term) const {
    const auto df = static_cast<double>(document_frequency(term));
    const auto n = static_cast<double>(n_docs());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double SparseIndex::term_weight(double idf, std::uint32_t tf, std::uint32_t doc_len) const {
    const double f = static_cast<double>(tf);
    const double norm = avg_doc_length_ > 0.0
                            ? 1.0 - params_.b + params_.b * static_cast<double>(doc_len) / avg_doc_length_
                            : 1.0;
    return idf * f * (params_.k1 + 1.0) / (f + params_.k1 * norm);
}

double SparseIndex::score(const TokenSeq& query, Handle handle) const {
    if (handle >= n_docs()) throw Error("score: passage handle " + std::to_string(handle) + " out of range");
    double total = 0.0;
    for (const auto& term : query) {
        const auto& list = postings_for(term);
        auto it = std::lower_bound(list.begin(), list.end(), handle,
                                   [](const Posting& p, Handle h) { return p.handle < h; });
        if (it == list.end() || it->handle != handle) continue;
        total += term_weight(idf(term), it->tf, doc_lengths_[handle]);
    }
    return total;
}

RankedList SparseIndex::search(const TokenSeq& query, std::size_t k, std::string qid) const {
    if (k < 1) throw Error("search: k must be >= 1");
    RankedList result;
    result.qid = std::move(qid);

    std::vector<double> acc(n_docs(), 0.0);
    std::vector<Handle> touched;
    std::vector<bool> seen(n_docs(), false);
    for (const auto& term : query) {
        const auto& list = postings_for(term);
        if (list.empty()) continue;
        const double w = idf(term);
        for (const auto& p : list) {
            acc[p.handle] += term_weight(w, p.tf, doc_lengths_[p.handle]);
            if (!seen[p.handle]) {
                seen[p.handle] = true;
                touched.push_back(p.handle);
            }
        }
    }

    std::vector<ScoredPassage> scored;
    scored.reserve(touched.size());
    for (Handle h : touched) scored.push_back({h, acc[h]});
    result.entries = select_top_k(std::move(scored), k);
    return result;
}

std::string SparseIndex::serialize() const {
    std::vector<const std::string*> terms;
    terms.reserve(postings_.size());
    for (const auto& [term, _] : postings_) terms.push_back(&term);
    std::sort(terms.begin(), terms.end(), [](const auto* a, const auto* b) { return *a < *b; });

    std::string out(kMagic);
    put_u64(out, doc_lengths_.size());
    put_u64(out, terms.size());
    put_f64(out, params_.k1);
    put_f64(out, params_.b);
    for (auto len : doc_lengths_) put_u32(out, len);
    for (const auto* term : terms) {
        put_u64(out, term->size());
        out += *term;
        const auto& list = postings_.at(*term);
        put_u64(out, list.size());
        for (const auto& p : list) {
            put_u32(out, p.handle);
            put_u32(out, p.tf);
        }
    }
    return out;
}

SparseIndex SparseIndex::deserialize(const std::string& bytes) {
    if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw FormatError("SPIX1: bad magic", 0);
    Reader r(bytes);
    r.str(kMagic.size());
    const auto n_docs = r.u64();
    const auto n_terms = r.u64();
    BM25Params params;
    params.k1 = r.f64();
    params.b = r.f64();
    if (n_docs > bytes.size() / 4) throw FormatError("SPIX1: document count exceeds file size", 5);

    std::vector<std::uint32_t> lengths(static_cast<std::size_t>(n_docs));
    for (auto& len : lengths) len = r.u32();

    std::unordered_map<std::string, std::vector<Posting>> postings;
    postings.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n_terms, bytes.size())));
    for (std::uint64_t t = 0; t < n_terms; ++t) {
        const auto term_offset = r.offset();
        std::string term = r.str(r.u64());
        const auto count = r.u64();
        if (count > (bytes.size() - r.offset()) / 8) {
            throw FormatError("SPIX1: truncated postings at byte offset " + std::to_string(r.offset()),
                              r.offset());
        }
        std::vector<Posting> list(static_cast<std::size_t>(count));
        for (auto& p : list) {
            p.handle = r.u32();
            p.tf = r.u32();
            if (p.handle >= n_docs) {
                throw FormatError("SPIX1: posting handle out of range at byte offset " +
                                      std::to_string(r.offset() - 8),
                                  r.offset() - 8);
            }
        }
        if (!postings.emplace(std::move(term), std::move(list)).second) {
            throw FormatError("SPIX1: duplicate term at byte offset " + std::to_string(term_offset), term_offset);
        }
    }
    if (!r.done()) throw FormatError("SPIX1: trailing bytes at offset " + std::to_string(r.offset()), r.offset());
    return SparseIndex(std::move(postings), std::move(lengths), params);
}

void SparseIndex::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

SparseIndex SparseIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

SparseIndex build_index(const std::vector<TokenSeq>& documents, const BM25Params& params) {
    if (documents.empty()) throw Error("build_index: empty collection");
    params.validate();
    std::unordered_map<std::string, std::vector<Posting>> postings;
    std::vector<std::uint32_t> lengths;
    lengths.reserve(documents.size());

    std::unordered_map<std::string_view, std::uint32_t> tf;
    std::vector<std::string_view> order;
    for (std::size_t h = 0; h < documents.size(); ++h) {
        tf.clear();
        order.clear();
        for (const auto& term : documents[h]) {
            auto [it, inserted] = tf.emplace(term, 0);
            if (inserted) order.push_back(term);
            ++it->second;
        }
        for (auto term : order) {
            postings[std::string(term)].push_back({static_cast<Handle>(h), tf[term]});
        }
        lengths.push_back(static_cast<std::uint32_t>(documents[h].size()));
    }
    return SparseIndex(std::move(postings), std::move(lengths), params);
}

SparseIndex build_index(const PassageCollection& collection, const BM25Params& params,
                        const TokenizerOptions& tokenizer) {
    if (collection.empty()) throw Error("build_index: empty collection");
    std::vector<TokenSeq> docs;
    docs.reserve(collection.size());
    for (const auto& p : collection.passages()) docs.push_back(tokenize(p.text, tokenizer));
    return build_index(docs, params);
}

}  // namespace lpr
