#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lpr/corpus.hpp"
#include "lpr/dense.hpp"
#include "lpr/eval.hpp"
#include "lpr/rewrite.hpp"
#include "lpr/sparse.hpp"

namespace lpr {

enum class RetrieverKind { bm25, dense };

RetrieverKind parse_retriever(std::string_view name);
std::string_view retriever_name(RetrieverKind kind);

enum class ExampleMode { fixed, nearest };

/// Everything one experiment needs. Keys accepted by set() use the dotted
/// names written by to_key_values(), e.g. "bm25.k1" or "sampling.trials".
struct ExperimentConfig {
    std::filesystem::path passages;
    std::filesystem::path queries;
    std::string format = "auto";  // auto | jsonl | csv
    FieldNames fields;
    std::filesystem::path embeddings;
    std::filesystem::path query_embeddings;
    /// One qid per line, in query_embeddings row order.
    std::filesystem::path query_ids;
    std::filesystem::path cache;
    std::filesystem::path out_dir = "out";

    RetrieverKind retriever = RetrieverKind::bm25;
    Strategy strategy = Strategy::identity;
    EndpointConfig endpoint;
    DecodingParams decoding;
    ExampleMode example_mode = ExampleMode::fixed;

    double train_fraction = 0.9;
    std::uint64_t seed = 42;
    /// 0 means the whole test pool.
    std::size_t sample_size = 10000;
    std::size_t trials = 3;
    SamplingMode sampling_mode = SamplingMode::without_replacement;

    BM25Params bm25;
    TokenizerOptions tokenizer;
    std::vector<double> thresholds{10, 30, 50, 70, 90, 100};

    std::size_t top_k = 10;
    std::size_t in_flight = 4;
    bool lenient = false;
    bool text_match = false;
    /// Also score BLEU / ROUGE-L / word counts of rewrites against gold text.
    bool generation_metrics = false;

    void set(std::string_view key, std::string_view value);
    std::map<std::string, std::string> to_key_values() const;
    /// SHA-256 over every setting except output and cache locations.
    std::string hash() const;
    /// Throws ConfigError when a referenced input is missing or a value is out of range.
    void validate() const;
};

/// `key = value` lines, `#` comments, `[section]` headers prefixing keys with
/// "section.". Values may be double-quoted.
ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base = {});
void apply_config_text(ExperimentConfig& config, std::string_view text);

/// Error raised by a pipeline stage; `stage()` names it.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

struct ExperimentResult {
    MetricReport report;
    std::vector<std::filesystem::path> run_files;
    std::filesystem::path report_json;
    std::filesystem::path report_text;
    std::filesystem::path manifest;
    std::size_t rewrites = 0;
    std::size_t cache_hits = 0;
    std::size_t endpoint_calls = 0;
    std::vector<RewriteFailure> failures;
};

/// Loaded inputs shared by the stages.
struct Workspace {
    PassageCollection collection;
    std::vector<QueryRecord> queries;
    QuerySplit split;
    FrequencyTable train_freq;
};

Workspace load_workspace(const ExperimentConfig& config);

std::string run_name(const ExperimentConfig& config);
std::filesystem::path trial_run_path(const ExperimentConfig& config, std::size_t trial);

/// Sample, rewrite, retrieve, score. `generator` overrides the endpoint
/// client (tests pass mocks); when null one is built from config.endpoint.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                std::shared_ptr<Generator> generator = nullptr);

/// The configured first-stage retriever, built once and shared by all trials.
class Retriever {
public:
    /// bm25 builds an index over the collection; dense loads the passage and
    /// query embedding files named in the config.
    static Retriever from_config(const ExperimentConfig& config, const PassageCollection& collection);
    static Retriever bm25(SparseIndex index, TokenizerOptions tokenizer = {});

    /// Ranks every rewrite; per-query work is spread over worker threads and
    /// merged by qid, so the result does not depend on scheduling.
    RetrievalRun run(const std::vector<RewrittenQuery>& rewrites, const std::string& name, std::size_t k) const;

    const SparseIndex* sparse() const noexcept { return sparse_.get(); }

private:
    RankedList rank(const RewrittenQuery& q, std::size_t k) const;

    std::shared_ptr<const SparseIndex> sparse_;
    TokenizerOptions tokenizer_;
    std::shared_ptr<const EmbeddingStore> dense_;
    std::shared_ptr<const std::unordered_map<std::string, std::vector<float>>> query_vectors_;
};

/// Rank lists for already rewritten queries with the configured retriever.
RetrievalRun retrieve(const ExperimentConfig& config, const PassageCollection& collection,
                      const std::vector<RewrittenQuery>& rewrites, const std::string& name);

/// Per-threshold rows from the trial run files written by run_experiment.
/// Writes `<out_dir>/frequency.csv` and returns the rows.
std::vector<FrequencyRow> analyze_frequency(const ExperimentConfig& config,
                                            const std::vector<std::filesystem::path>& run_files);

struct HardNegative {
    std::string qid;
    std::string positive_id;
    std::string negative_id;
};

/// Highest-ranked BM25 passage that is not the gold target, per query.
std::vector<HardNegative> mine_hard_negatives(const SparseIndex& index,
                                              const PassageCollection& collection,
                                              const std::vector<QueryRecord>& queries,
                                              const TokenizerOptions& tokenizer = {},
                                              std::size_t depth = 10);

/// Writes {qid, strategy, final_text} JSONL, one line per rewrite.
std::string rewrites_jsonl(const std::vector<RewrittenQuery>& rewrites);
std::vector<RewrittenQuery> parse_rewrites_jsonl(std::string_view content);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace lpr
