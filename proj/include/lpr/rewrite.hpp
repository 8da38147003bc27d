#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lpr/corpus.hpp"
#include "lpr/error.hpp"
#include "lpr/sparse.hpp"

namespace lpr {

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

enum class TemplateKind { gure, q2d, q2d_cot };

/// One in-context demonstration. The step fields are only used by q2d_cot
/// and are omitted from the prompt when empty.
struct PromptExample {
    std::string context;
    std::string passage;
    std::string step1;
    std::string step2;
};

/// A prompt body with `{Context}`, `{Passage}` and `{Example ... N}` slots.
/// Build through make_template() so the body always matches the examples.
struct PromptTemplate {
    TemplateKind kind = TemplateKind::gure;
    std::string body;
    std::vector<PromptExample> examples;

    /// SHA-256 over kind, body and examples; part of the rewrite cache key.
    std::string hash() const;
};

inline constexpr std::size_t kFewShotExamples = 3;

/// gure takes no examples; q2d and q2d_cot take exactly three.
PromptTemplate make_template(TemplateKind kind, std::vector<PromptExample> examples = {});

/// Substitutes every slot in one pass, so values that themselves contain
/// `{Context}` are not re-expanded. Without a passage the gure prompt stops
/// at "### Legal Passage :". Throws Error when a slot has no value.
std::string render_prompt(const PromptTemplate& tmpl, std::string_view context,
                          const std::optional<std::string>& passage = std::nullopt);

std::string_view template_kind_name(TemplateKind kind);

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct DecodingParams {
    double temperature = 0.0;
    double top_p = 0.9;
    int max_tokens = 256;

    void validate() const;
    std::string canonical() const;
};

struct GenerationResult {
    std::string text;
    int attempts = 1;
    double latency_ms = 0.0;
};

enum class GenerationFailure { transport, http_status, empty_completion, malformed_response };

class GenerationError : public Error {
public:
    GenerationError(GenerationFailure kind, const std::string& what, int status = 0, int attempts = 0)
        : Error(what), kind_(kind), status_(status), attempts_(attempts) {}

    GenerationFailure kind() const noexcept { return kind_; }
    /// HTTP status of the last attempt, 0 for transport failures.
    int status() const noexcept { return status_; }
    int attempts() const noexcept { return attempts_; }

private:
    GenerationFailure kind_;
    int status_;
    int attempts_;
};

/// Anything that turns a prompt into a completion.
class Generator {
public:
    virtual ~Generator() = default;
    virtual GenerationResult generate(const std::string& prompt, const DecodingParams& params) = 0;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{8000};

    std::chrono::milliseconds backoff_before(int attempt) const;
};

struct EndpointConfig {
    /// e.g. "https://api.openai.com/v1"; "/chat/completions" is appended.
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model = "gure";
    /// Environment variable holding the bearer token; unset means no auth header.
    std::string api_key_env = "OPENAI_API_KEY";
    std::chrono::seconds timeout{120};
    RetryPolicy retry;
};

/// OpenAI-compatible chat-completions client. Retries transport errors, 429
/// and 5xx responses with exponential backoff. Safe to share across threads.
class ChatCompletionsClient : public Generator {
public:
    using Logger = std::function<void(const std::string&)>;

    explicit ChatCompletionsClient(EndpointConfig config, Logger logger = {});

    GenerationResult generate(const std::string& prompt, const DecodingParams& params) override;

    /// Request body for one prompt; exposed for tests.
    std::string request_body(const std::string& prompt, const DecodingParams& params) const;

private:
    EndpointConfig config_;
    Logger logger_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

/// Whether a status code is worth retrying.
bool is_transient_status(int status);

// ---------------------------------------------------------------------------
// Output parsing
// ---------------------------------------------------------------------------

struct CotParse {
    std::string passage;
    bool tag_found = false;
};

/// Text after the last "<output>" tag, trimmed. Falls back to the whole
/// (trimmed) text with tag_found = false.
CotParse parse_cot_output(std::string_view raw);

/// Cuts a generation at the first "### " marker, where models tend to start
/// echoing the next prompt block, then trims.
std::string strip_scaffolding(std::string_view text);

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

struct CacheEntry {
    std::string key;
    std::string strategy;
    std::string context_hash;
    std::string raw;
    std::string final_text;
    std::int64_t timestamp = 0;
};

/// Append-only JSONL ledger of generations. Later lines win on duplicate keys.
/// A truncated last line (interrupted write) is ignored on load.
class RewriteCache {
public:
    /// In-memory only.
    RewriteCache() = default;
    explicit RewriteCache(std::filesystem::path path);

    std::optional<CacheEntry> lookup(const std::string& key) const;
    void insert(CacheEntry entry);
    std::size_t size() const;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    mutable std::mutex mutex_;
    std::filesystem::path path_;
    std::unordered_map<std::string, CacheEntry> entries_;
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

enum class Strategy { identity, q2d, q2d_cot, gure };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s);

struct RewrittenQuery {
    std::string qid;
    Strategy strategy = Strategy::identity;
    std::string raw_generation;
    std::string final_text;
    bool cache_hit = false;
    /// q2d_cot only: the generation carried no <output> tag.
    bool parse_warning = false;
};

/// Where few-shot demonstrations come from.
class ExampleSelector {
public:
    /// The same demonstrations for every query.
    static ExampleSelector fixed(std::vector<PromptExample> examples);
    /// Per query, the three training records whose contexts score highest
    /// under BM25 against the query context.
    static ExampleSelector nearest(std::vector<PromptExample> pool, const BM25Params& params = {});

    std::vector<PromptExample> select(std::string_view context) const;

private:
    std::vector<PromptExample> fixed_;
    std::vector<PromptExample> pool_;
    std::shared_ptr<const SparseIndex> index_;
};

/// Three training records drawn without replacement under `seed`, paired with
/// their gold passage text.
std::vector<PromptExample> sample_fixed_examples(const std::vector<QueryRecord>& train,
                                                 const PassageCollection& collection,
                                                 std::uint64_t seed);

std::string rewrite_cache_key(Strategy strategy, const std::string& template_hash,
                              const std::string& context_hash, const DecodingParams& params);

class Rewriter {
public:
    /// `generator` may be null when only the identity strategy is used.
    /// `cache` may be null to disable caching.
    Rewriter(std::shared_ptr<Generator> generator, std::shared_ptr<RewriteCache> cache,
             ExampleSelector examples, DecodingParams params = {});

    RewrittenQuery rewrite(Strategy strategy, const std::string& qid, const std::string& context);

    std::size_t endpoint_calls() const noexcept { return endpoint_calls_.load(); }

private:
    std::shared_ptr<Generator> generator_;
    std::shared_ptr<RewriteCache> cache_;
    ExampleSelector examples_;
    DecodingParams params_;
    std::atomic<std::size_t> endpoint_calls_{0};
    std::mutex inflight_mutex_;
    std::unordered_map<std::string, std::shared_future<std::string>> inflight_;
};

struct RewriteFailure {
    std::string qid;
    std::string message;
};

struct BatchRewrite {
    std::vector<RewrittenQuery> rewrites;  // input order; failed queries absent
    std::vector<RewriteFailure> failures;
    std::size_t cache_hits = 0;
};

/// Rewrites every query with up to `in_flight` concurrent workers. In lenient
/// mode a failed query is recorded and dropped; otherwise the first failure
/// is rethrown after the workers drain.
BatchRewrite rewrite_all(Rewriter& rewriter, Strategy strategy,
                         const std::vector<QueryRecord>& queries, std::size_t in_flight = 4,
                         bool lenient = false);

}  // namespace lpr
