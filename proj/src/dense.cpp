#include "lpr/dense.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lpr/error.hpp"

namespace lpr {

namespace {

constexpr std::string_view kMagic = "EMB1";
constexpr std::size_t kHeaderSize = 4 + 4 + 4 + 1;
constexpr double kUnitTolerance = 1e-4;

std::uint32_t get_u32(const std::string& bytes, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    return v;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

double row_norm(std::span<const float> row) {
    double sq = 0.0;
    for (float x : row) sq += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sq);
}

}  // namespace

EmbeddingStore::EmbeddingStore(std::uint32_t n, std::uint32_t dim, std::vector<float> values,
                               bool already_normalized)
    : n_(n), dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) throw FormatError("embeddings: dim must be > 0");
    if (values_.size() != static_cast<std::size_t>(n_) * dim_) {
        throw FormatError("embeddings: expected " + std::to_string(static_cast<std::size_t>(n_) * dim_) +
                          " values, got " + std::to_string(values_.size()));
    }
    for (std::uint32_t r = 0; r < n_; ++r) {
        std::span<float> row(values_.data() + static_cast<std::size_t>(r) * dim_, dim_);
        for (float x : row) {
            if (!std::isfinite(x)) {
                throw FormatError("embeddings: non-finite value in row " + std::to_string(r),
                                  kHeaderSize + static_cast<std::size_t>(r) * dim_ * 4);
            }
        }
        const double norm = row_norm(row);
        if (already_normalized) {
            if (std::abs(norm - 1.0) > kUnitTolerance) {
                throw FormatError("embeddings: row " + std::to_string(r) + " flagged normalized but has norm " +
                                  std::to_string(norm));
            }
            continue;
        }
        if (norm == 0.0) throw FormatError("embeddings: row " + std::to_string(r) + " is the zero vector");
        for (float& x : row) x = static_cast<float>(static_cast<double>(x) / norm);
    }
}

std::span<const float> EmbeddingStore::row(Handle h) const {
    if (h >= n_) throw Error("embeddings: row " + std::to_string(h) + " out of range");
    return {values_.data() + static_cast<std::size_t>(h) * dim_, dim_};
}

RankedList EmbeddingStore::top_k(std::span<const float> query, std::size_t k, std::string qid) const {
    if (k < 1) throw Error("top_k: k must be >= 1");
    if (query.size() != dim_) {
        throw Error("top_k: query has dim " + std::to_string(query.size()) + ", store has " + std::to_string(dim_));
    }
    const double norm = row_norm(query);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw Error("top_k: query vector is zero or non-finite");

    std::vector<double> q(dim_);
    for (std::uint32_t i = 0; i < dim_; ++i) q[i] = static_cast<double>(query[i]) / norm;

    std::vector<ScoredPassage> scored(n_);
    for (std::uint32_t r = 0; r < n_; ++r) {
        const float* row = values_.data() + static_cast<std::size_t>(r) * dim_;
        double dot = 0.0;
        for (std::uint32_t i = 0; i < dim_; ++i) dot += q[i] * static_cast<double>(row[i]);
        scored[r] = {r, dot};
    }
    RankedList result;
    result.qid = std::move(qid);
    result.entries = select_top_k(std::move(scored), k);
    return result;
}

EmbeddingFile parse_embedding_bytes(const std::string& bytes) {
    if (bytes.size() < kHeaderSize) throw FormatError("EMB1: truncated header", bytes.size());
    if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw FormatError("EMB1: bad magic", 0);
    EmbeddingFile file;
    file.n = get_u32(bytes, 4);
    file.dim = get_u32(bytes, 8);
    const auto flag = static_cast<unsigned char>(bytes[12]);
    if (flag > 1) throw FormatError("EMB1: normalized flag must be 0 or 1", 12);
    file.normalized = flag == 1;
    if (file.dim == 0) throw FormatError("EMB1: dim must be > 0", 8);

    const std::size_t expected = static_cast<std::size_t>(file.n) * file.dim * 4;
    const std::size_t payload = bytes.size() - kHeaderSize;
    if (payload < expected) {
        throw FormatError("EMB1: truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                              std::to_string(kHeaderSize + expected) + " bytes)",
                          bytes.size());
    }
    if (payload > expected) {
        throw FormatError("EMB1: payload of " + std::to_string(payload) + " bytes does not match header n=" +
                              std::to_string(file.n) + " dim=" + std::to_string(file.dim),
                          kHeaderSize + expected);
    }
    file.values.resize(static_cast<std::size_t>(file.n) * file.dim);
    for (std::size_t i = 0; i < file.values.size(); ++i) {
        const std::size_t off = kHeaderSize + i * 4;
        const float v = std::bit_cast<float>(get_u32(bytes, off));
        if (!std::isfinite(v)) {
            throw FormatError("EMB1: non-finite value in row " + std::to_string(i / file.dim) + " at byte offset " +
                                  std::to_string(off),
                              off);
        }
        file.values[i] = v;
    }
    return file;
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_embedding_bytes(ss.str());
}

std::string embedding_bytes(const EmbeddingFile& file) {
    if (file.values.size() != static_cast<std::size_t>(file.n) * file.dim) {
        throw Error("EMB1: value count does not match n * dim");
    }
    std::string out(kMagic);
    put_u32(out, file.n);
    put_u32(out, file.dim);
    out.push_back(file.normalized ? 1 : 0);
    out.reserve(out.size() + file.values.size() * 4);
    for (float v : file.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingFile& file) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const auto bytes = embedding_bytes(file);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EmbeddingStore load_embeddings(const std::filesystem::path& path) {
    auto file = read_embedding_file(path);
    return EmbeddingStore(file.n, file.dim, std::move(file.values), file.normalized);
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingStore& store) {
    write_embedding_file(path, EmbeddingFile{store.size(), store.dim(), true, store.values()});
}

}  // namespace lpr
