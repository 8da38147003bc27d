#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lpr/sparse.hpp"

namespace lpr {

/// Row-major n x dim float matrix, one row per passage handle. Rows are unit
/// length after construction, so cosine similarity is a dot product.
class EmbeddingStore {
public:
    /// Normalizes rows unless `already_normalized`, in which case rows are
    /// checked to be unit length within 1e-4. Throws FormatError on zero,
    /// non-finite or mis-normalized rows.
    EmbeddingStore(std::uint32_t n, std::uint32_t dim, std::vector<float> values,
                   bool already_normalized = false);

    std::uint32_t size() const noexcept { return n_; }
    std::uint32_t dim() const noexcept { return dim_; }
    std::span<const float> row(Handle h) const;
    const std::vector<float>& values() const noexcept { return values_; }

    /// Exact cosine top-k; ties by ascending handle.
    RankedList top_k(std::span<const float> query, std::size_t k, std::string qid = {}) const;

private:
    std::uint32_t n_;
    std::uint32_t dim_;
    std::vector<float> values_;
};

/// Raw contents of an EMB1 file.
struct EmbeddingFile {
    std::uint32_t n = 0;
    std::uint32_t dim = 0;
    bool normalized = false;
    std::vector<float> values;
};

EmbeddingFile read_embedding_file(const std::filesystem::path& path);
EmbeddingFile parse_embedding_bytes(const std::string& bytes);
std::string embedding_bytes(const EmbeddingFile& file);
void write_embedding_file(const std::filesystem::path& path, const EmbeddingFile& file);

EmbeddingStore load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const EmbeddingStore& store);

}  // namespace lpr
