#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lpr/corpus.hpp"
#include "lpr/sparse.hpp"
#include "lpr/textproc.hpp"

namespace lpr {

struct RetrievalRun {
    std::string name;
    std::map<std::string, RankedList> lists;  // keyed by qid
};

/// Acceptable handles per qid. Strict id matching gives exactly the gold
/// handle; text matching adds every passage whose text equals the gold text.
using Qrels = std::map<std::string, std::vector<Handle>>;

Qrels make_qrels(const std::vector<QueryRecord>& queries, const PassageCollection& collection,
                 bool text_match = false);

/// 1-based rank of the first acceptable handle, if present.
std::optional<std::size_t> gold_rank(const RankedList& list, const std::vector<Handle>& acceptable);

/// Per-query values in qid order. Throws Error naming the first qid without gold.
std::vector<double> per_query_recall(const RetrievalRun& run, const Qrels& qrels, std::size_t k);
std::vector<double> per_query_ndcg(const RetrievalRun& run, const Qrels& qrels, std::size_t k);

double recall_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t k);
/// Binary gain, log2(rank + 1) discount, ideal DCG = 1 (one relevant passage).
double ndcg_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t k);

struct TrialMetrics {
    double recall_at_1 = 0.0;
    double recall_at_10 = 0.0;
    double ndcg_at_10 = 0.0;
    std::size_t n_queries = 0;
};

TrialMetrics evaluate_trial(const RetrievalRun& run, const Qrels& qrels);

struct GenerationMetrics {
    double bleu = 0.0;
    double rouge_l_f = 0.0;
    double mean_words = 0.0;
};

struct MetricSummary {
    double recall_at_1 = 0.0;
    double recall_at_10 = 0.0;
    double ndcg_at_10 = 0.0;
};

struct MetricReport {
    std::string run_name;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<TrialMetrics> per_trial;
    MetricSummary mean;
    /// Sample standard deviation across trials (0 for a single trial).
    MetricSummary stdev;
    std::optional<GenerationMetrics> generation;

    std::string to_json() const;
    /// Table-style text: one row, metrics as percentages.
    std::string to_text() const;
};

/// Fills mean/stdev from per_trial in trial order.
MetricReport aggregate(std::string run_name, std::vector<TrialMetrics> per_trial);

// ---------------------------------------------------------------------------
// Sampling and stratification
// ---------------------------------------------------------------------------

enum class SamplingMode { without_replacement, with_replacement };

/// `trials` subsets of size n. Each trial draws from its own seed stream.
/// Without replacement, n must not exceed the pool.
std::vector<std::vector<QueryRecord>> sample_trials(const std::vector<QueryRecord>& pool,
                                                    std::size_t n, std::size_t trials,
                                                    std::uint64_t seed,
                                                    SamplingMode mode = SamplingMode::without_replacement);

/// Distinct pool targets ranked by train frequency (descending, unseen = 0,
/// ties by handle); keeps the queries whose target falls in the top
/// ceil(x_percent / 100 * distinct). Input order is preserved.
std::vector<QueryRecord> stratify_by_frequency(const std::vector<QueryRecord>& pool,
                                               const FrequencyTable& train_freq, double x_percent);

// ---------------------------------------------------------------------------
// Significance
// ---------------------------------------------------------------------------

struct TTestResult {
    double t_statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    bool significant_at_01 = false;
    /// Zero variance of differences: t is 0 (all equal) or infinite.
    bool degenerate = false;
};

/// Two-tailed paired t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Generation similarity
// ---------------------------------------------------------------------------

inline constexpr double kBleuEpsilon = 1e-9;

struct BleuBreakdown {
    std::array<std::uint64_t, 4> matches{};
    std::array<std::uint64_t, 4> totals{};
    std::array<double, 4> precisions{};
    std::uint64_t candidate_length = 0;
    std::uint64_t reference_length = 0;
    double brevity_penalty = 1.0;
    double score = 0.0;
};

/// Corpus BLEU-4 with clipped counts and uniform weights. A zero precision is
/// replaced by epsilon / total; an order with no n-grams on either side counts
/// as precision 1.
BleuBreakdown bleu_breakdown(const std::vector<std::string>& candidates,
                             const std::vector<std::string>& references);
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);
RougeScore rouge_l(std::string_view candidate, std::string_view reference);

/// Mean whitespace-separated word count. Throws on an empty list.
double mean_words(const std::vector<std::string>& texts);

GenerationMetrics generation_metrics(const std::vector<std::string>& candidates,
                                     const std::vector<std::string>& references);

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

/// `qid Q0 passage_id rank score run_name`, qids in map order.
void write_trec_run(std::ostream& out, const RetrievalRun& run, const PassageCollection& collection);
std::string trec_run_text(const RetrievalRun& run, const PassageCollection& collection);
RetrievalRun read_trec_run(const std::filesystem::path& path, const PassageCollection& collection);
RetrievalRun parse_trec_run(std::string_view content, const PassageCollection& collection);

// ---------------------------------------------------------------------------
// Frequency analysis
// ---------------------------------------------------------------------------

struct FrequencyRow {
    double x_percent = 0.0;
    double recall_at_1 = 0.0;
    double recall_at_10 = 0.0;
    double ndcg_at_10 = 0.0;
    std::size_t n_unique_targets = 0;
};

/// For each threshold, restricts every trial run to the stratified subset of
/// that trial's queries and averages over trials exactly like aggregate().
/// n_unique_targets counts distinct targets across all trials' subsets.
std::vector<FrequencyRow> frequency_analysis(const std::vector<RetrievalRun>& trial_runs,
                                             const std::vector<QueryRecord>& queries,
                                             const FrequencyTable& train_freq, const Qrels& qrels,
                                             const std::vector<double>& thresholds);

std::string frequency_rows_csv(const std::vector<FrequencyRow>& rows, std::string_view config_hash);

}  // namespace lpr
