#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lpr {

/// Dense integer handle of a passage; equals its position in the collection.
using Handle = std::uint32_t;

struct Passage {
    std::string id;
    std::string text;
    /// Remaining fields of the source record as a compact JSON object
    /// ("" when there were none). Carried through, never interpreted.
    std::string meta;
};

/// The candidate pool. Immutable once constructed; handles never change.
class PassageCollection {
public:
    PassageCollection() = default;

    /// Throws FormatError on duplicate ids or blank text.
    explicit PassageCollection(std::vector<Passage> passages);

    std::size_t size() const noexcept { return passages_.size(); }
    bool empty() const noexcept { return passages_.empty(); }

    const Passage& operator[](Handle h) const { return passages_[h]; }
    const Passage& at(Handle h) const;
    const std::vector<Passage>& passages() const noexcept { return passages_; }

    std::optional<Handle> find(std::string_view id) const;
    /// Throws Error when the id is unknown.
    Handle handle_of(std::string_view id) const;

private:
    std::vector<Passage> passages_;
    std::unordered_map<std::string, Handle> id_index_;
};

struct QueryRecord {
    std::string qid;
    std::string context;
    std::string target_id;
    /// Resolved against the companion collection at load time.
    Handle target = 0;
    std::string meta;
};

enum class InputFormat { jsonl, csv };

/// Field (JSONL) or column (CSV) names. Defaults are the canonical JSONL names.
struct FieldNames {
    std::string id = "id";
    std::string text = "text";
    std::string qid = "qid";
    std::string context = "context";
    std::string target_id = "target_id";
};

struct LoadOptions {
    InputFormat format = InputFormat::jsonl;
    FieldNames fields;
    char csv_delimiter = ',';
};

InputFormat parse_input_format(std::string_view name);
/// Picks csv for *.csv / *.tsv, jsonl otherwise.
InputFormat infer_input_format(const std::filesystem::path& path);

PassageCollection load_passages(const std::filesystem::path& path, const LoadOptions& options = {});
PassageCollection parse_passages_jsonl(std::string_view content, const FieldNames& fields = {});
PassageCollection parse_passages_csv(std::string_view content, const LoadOptions& options = {});

/// Canonical JSONL serialization (id, text, then pass-through fields).
std::string passages_to_jsonl(const PassageCollection& collection);
void save_passages(const std::filesystem::path& path, const PassageCollection& collection);

enum class TargetPolicy { strict, lenient };

struct SkippedQuery {
    std::string qid;
    std::string target_id;
    std::size_t line = 0;
};

struct QueryLoadResult {
    std::vector<QueryRecord> queries;
    std::vector<SkippedQuery> skipped;
};

/// Strict mode throws listing every unresolvable qid; lenient mode skips them
/// and reports each in `skipped`.
QueryLoadResult load_queries(const std::filesystem::path& path, const PassageCollection& collection,
                             TargetPolicy policy = TargetPolicy::strict,
                             const LoadOptions& options = {});
QueryLoadResult parse_queries_jsonl(std::string_view content, const PassageCollection& collection,
                                    TargetPolicy policy = TargetPolicy::strict,
                                    const FieldNames& fields = {});
QueryLoadResult parse_queries_csv(std::string_view content, const PassageCollection& collection,
                                  TargetPolicy policy = TargetPolicy::strict,
                                  const LoadOptions& options = {});

std::string queries_to_jsonl(const std::vector<QueryRecord>& queries);

struct QuerySplit {
    std::vector<QueryRecord> train;
    std::vector<QueryRecord> test;
};

/// Seeded shuffle then cut: |train| = floor(n * train_fraction).
QuerySplit split_queries(const std::vector<QueryRecord>& queries, double train_fraction = 0.9,
                         std::uint64_t seed = 0);

/// Citation counts per target passage.
struct FrequencyTable {
    std::map<Handle, std::uint64_t> counts;
    std::uint64_t total = 0;

    std::uint64_t count(Handle h) const;
    std::size_t distinct() const noexcept { return counts.size(); }
};

FrequencyTable citation_frequency(const std::vector<QueryRecord>& queries);

/// Count mass held by the ceil(fraction * distinct) most cited passages,
/// ties broken by ascending handle. `fraction` must lie in (0, 1].
double top_share(const FrequencyTable& table, double fraction);

struct CorpusStats {
    std::size_t n_passages = 0;
    std::size_t n_queries = 0;
    /// Unset when there are no queries.
    std::optional<double> top_1pct_share;
};

CorpusStats corpus_stats(const PassageCollection& collection, const std::vector<QueryRecord>& queries);
/// {"n_passages":…, "n_queries":…, "top_1pct_share":…}
std::string corpus_stats_json(const CorpusStats& stats);

}  // namespace lpr
