#include "lpr/rewrite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <future>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "lpr/hashing.hpp"
#include "lpr/random.hpp"
#include "lpr/textproc.hpp"

namespace lpr {

using json = nlohmann::json;

namespace {

constexpr std::string_view kGureBody =
    "You are a helpful assistant specializing in generating legal passages that naturally align with "
    "the preceding context.\n"
    "\n"
    "Based on the given preceding context, please generate a legal passage that is coherent, relevant, "
    "and contextually appropriate.\n"
    "\n"
    "### Preceding Context : {Context}\n"
    "\n"
    "### Legal Passage : {Passage}";

constexpr std::string_view kFewShotInstruction =
    "Write a following legal passage that is coherent, relevant, and contextually appropriate based on "
    "preceding context.\n\n";

constexpr std::string_view kCotSteps =
    "### Note: Examples provided below do not include intermediate steps due to sampling constraints.\n"
    "\n"
    "### Step 1: Understand the preceding context.\n"
    "\n"
    "### Step 2: Identify the key legal elements and principles required for coherence.\n"
    "\n"
    "### Step 3: Generate a legal passage that logically follows and aligns with the context.\n"
    "\n"
    "### Note: You can generate any intermediate step but, please mark final output with '<output>' "
    "tag.\n\n";

constexpr std::string_view kQueryBlock =
    "Query:\n"
    "\n"
    "### Preceding Context : {Context}\n"
    "\n"
    "### Legal Passage :";

constexpr std::string_view kPassageSlot = " {Passage}";

std::string_view trim(std::string_view s) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string example_block(TemplateKind kind, const PromptExample& ex, std::size_t i) {
    const std::string n = std::to_string(i + 1);
    std::string block = "### Preceding Context : {Example Context " + n + "}\n\n";
    if (kind == TemplateKind::q2d) {
        block += "### Legal Passage : {Example Passage " + n + "}\n\n";
        return block;
    }
    if (!ex.step1.empty()) block += "### Step1: {Example Step1 " + n + "}\n\n";
    if (!ex.step2.empty()) block += "### Step2: {Example Step2 " + n + "}\n\n";
    block += "### Step3: <output> {Example Passage " + n + "}\n\n";
    return block;
}

/// Value for an `{Example <Field> <N>}` slot, or nullptr when `name` is not one.
const std::string* example_value(const PromptTemplate& tmpl, std::string_view name) {
    constexpr std::string_view prefix = "Example ";
    if (name.substr(0, prefix.size()) != prefix) return nullptr;
    name.remove_prefix(prefix.size());
    const auto space = name.rfind(' ');
    if (space == std::string_view::npos) return nullptr;
    const auto field = name.substr(0, space);
    const auto index_text = name.substr(space + 1);
    if (index_text.empty() || !std::all_of(index_text.begin(), index_text.end(), ::isdigit)) return nullptr;
    const std::size_t index = std::stoul(std::string(index_text));
    if (index < 1) return nullptr;
    if (index > tmpl.examples.size()) {
        throw Error("render_prompt: no value for {Example " + std::string(field) + " " + std::string(index_text) + "}");
    }
    const auto& ex = tmpl.examples[index - 1];
    if (field == "Context") return &ex.context;
    if (field == "Passage") return &ex.passage;
    if (field == "Step1") return &ex.step1;
    if (field == "Step2") return &ex.step2;
    return nullptr;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

std::string_view template_kind_name(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::gure: return "gure";
        case TemplateKind::q2d: return "q2d";
        case TemplateKind::q2d_cot: return "q2d_cot";
    }
    return "unknown";
}

std::string PromptTemplate::hash() const {
    std::string material(template_kind_name(kind));
    material += '\0';
    material += body;
    for (const auto& ex : examples) {
        for (const auto* field : {&ex.context, &ex.passage, &ex.step1, &ex.step2}) {
            material += '\0';
            material += *field;
        }
    }
    return sha256_hex(material);
}

PromptTemplate make_template(TemplateKind kind, std::vector<PromptExample> examples) {
    PromptTemplate tmpl;
    tmpl.kind = kind;
    if (kind == TemplateKind::gure) {
        if (!examples.empty()) throw Error("make_template: the gure prompt takes no examples");
        tmpl.body = std::string(kGureBody);
        return tmpl;
    }
    if (examples.size() != kFewShotExamples) {
        throw Error("make_template: " + std::string(template_kind_name(kind)) + " needs exactly 3 examples, got " +
                    std::to_string(examples.size()));
    }
    for (const auto& ex : examples) {
        if (trim(ex.context).empty() || trim(ex.passage).empty()) {
            throw Error("make_template: example context and passage must be non-empty");
        }
    }
    tmpl.body = std::string(kFewShotInstruction);
    if (kind == TemplateKind::q2d_cot) tmpl.body += kCotSteps;
    tmpl.body += "Examples:\n\n";
    for (std::size_t i = 0; i < examples.size(); ++i) tmpl.body += example_block(kind, examples[i], i);
    tmpl.body += kQueryBlock;
    tmpl.examples = std::move(examples);
    return tmpl;
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view context,
                          const std::optional<std::string>& passage) {
    if (trim(context).empty()) throw Error("render_prompt: no value for {Context}");

    std::string_view body = tmpl.body;
    const bool has_passage_slot = body.find("{Passage}") != std::string_view::npos;
    if (passage && !has_passage_slot) {
        throw Error("render_prompt: template '" + std::string(template_kind_name(tmpl.kind)) +
                    "' has no {Passage} slot");
    }
    // Inference rendering stops right after the "### Legal Passage :" header.
    if (!passage && body.ends_with(kPassageSlot)) body.remove_suffix(kPassageSlot.size());

    std::string out;
    out.reserve(body.size() + context.size() + (passage ? passage->size() : 0));
    std::size_t pos = 0;
    while (pos < body.size()) {
        const auto open = body.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(body.substr(pos));
            break;
        }
        out.append(body.substr(pos, open - pos));
        const auto close = body.find('}', open);
        if (close == std::string_view::npos) {
            out.append(body.substr(open));
            break;
        }
        const auto name = body.substr(open + 1, close - open - 1);
        if (name == "Context") {
            out.append(context);
        } else if (name == "Passage") {
            if (!passage || trim(*passage).empty()) throw Error("render_prompt: no value for {Passage}");
            out.append(*passage);
        } else if (const auto* value = example_value(tmpl, name)) {
            if (value->empty()) throw Error("render_prompt: no value for {" + std::string(name) + "}");
            out.append(*value);
        } else {
            out.append(body.substr(open, close - open + 1));
        }
        pos = close + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decoding and retry
// ---------------------------------------------------------------------------

void DecodingParams::validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

std::string DecodingParams::canonical() const {
    return "temperature=" + format_double(temperature) + ";top_p=" + format_double(top_p) +
           ";max_tokens=" + std::to_string(max_tokens);
}

std::chrono::milliseconds RetryPolicy::backoff_before(int attempt) const {
    if (attempt <= 1) return std::chrono::milliseconds{0};
    const double scaled = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, attempt - 2);
    const double capped = std::min(scaled, static_cast<double>(max_backoff.count()));
    return std::chrono::milliseconds{static_cast<std::int64_t>(capped)};
}

bool is_transient_status(int status) {
    return status == 408 || status == 409 || status == 425 || status == 429 || status >= 500;
}

// ---------------------------------------------------------------------------
// Output parsing
// ---------------------------------------------------------------------------

CotParse parse_cot_output(std::string_view raw) {
    constexpr std::string_view tag = "<output>";
    const auto at = raw.rfind(tag);
    if (at == std::string_view::npos) return {std::string(trim(raw)), false};
    auto rest = raw.substr(at + tag.size());
    if (const auto close = rest.find("</output>"); close != std::string_view::npos) rest = rest.substr(0, close);
    return {std::string(trim(rest)), true};
}

std::string strip_scaffolding(std::string_view text) {
    const auto at = text.find("###");
    if (at != std::string_view::npos) text = text.substr(0, at);
    return std::string(trim(text));
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

RewriteCache::RewriteCache(std::filesystem::path path) : path_(std::move(path)) {
    bool needs_newline = false;
    std::optional<std::size_t> partial_at;
    if (std::filesystem::exists(path_)) {
        std::ifstream in(path_, std::ios::binary);
        if (!in) throw IoError("cannot open cache " + path_.string());
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        needs_newline = !content.empty() && content.back() != '\n';
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos < content.size()) {
            auto end = content.find('\n', pos);
            const bool last = end == std::string::npos;
            if (last) end = content.size();
            ++line_no;
            std::string_view line(content.data() + pos, end - pos);
            const std::size_t line_start = pos;
            pos = end + 1;
            if (trim(line).empty()) continue;
            try {
                const auto obj = json::parse(line);
                CacheEntry e;
                e.key = obj.at("key").get<std::string>();
                e.strategy = obj.at("strategy").get<std::string>();
                e.context_hash = obj.at("context_hash").get<std::string>();
                e.raw = obj.at("raw").get<std::string>();
                e.final_text = obj.at("final").get<std::string>();
                e.timestamp = obj.value("timestamp", std::int64_t{0});
                entries_[e.key] = std::move(e);
            } catch (const json::exception& ex) {
                // An interrupted append leaves at most one partial trailing line.
                if (last) {
                    partial_at = line_start;
                    break;
                }
                throw FormatError("cache " + path_.string() + " line " + std::to_string(line_no) + ": " + ex.what(),
                                  line_no);
            }
        }
    } else if (path_.has_parent_path()) {
        std::filesystem::create_directories(path_.parent_path());
    }
    if (partial_at) {
        std::error_code ec;
        std::filesystem::resize_file(path_, *partial_at, ec);
        if (ec) throw IoError("cannot truncate cache " + path_.string() + ": " + ec.message());
        needs_newline = false;
    }
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot append to cache " + path_.string());
    if (needs_newline) out_ << '\n';
}

std::optional<CacheEntry> RewriteCache::lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void RewriteCache::insert(CacheEntry entry) {
    std::lock_guard lock(mutex_);
    if (out_.is_open()) {
        json obj = {{"key", entry.key},   {"strategy", entry.strategy}, {"context_hash", entry.context_hash},
                    {"raw", entry.raw},   {"final", entry.final_text},  {"timestamp", entry.timestamp}};
        out_ << obj.dump() << '\n';
        out_.flush();
        if (!out_) throw IoError("cache write failed: " + path_.string());
    }
    entries_[entry.key] = std::move(entry);
}

std::size_t RewriteCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

Strategy parse_strategy(std::string_view name) {
    if (name == "identity") return Strategy::identity;
    if (name == "q2d") return Strategy::q2d;
    if (name == "q2d_cot" || name == "q2d-cot") return Strategy::q2d_cot;
    if (name == "gure") return Strategy::gure;
    throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::string_view strategy_name(Strategy s) {
    switch (s) {
        case Strategy::identity: return "identity";
        case Strategy::q2d: return "q2d";
        case Strategy::q2d_cot: return "q2d_cot";
        case Strategy::gure: return "gure";
    }
    return "unknown";
}

ExampleSelector ExampleSelector::fixed(std::vector<PromptExample> examples) {
    ExampleSelector s;
    s.fixed_ = std::move(examples);
    return s;
}

ExampleSelector ExampleSelector::nearest(std::vector<PromptExample> pool, const BM25Params& params) {
    if (pool.size() < kFewShotExamples) throw Error("example pool needs at least 3 records");
    ExampleSelector s;
    std::vector<TokenSeq> docs;
    docs.reserve(pool.size());
    for (const auto& ex : pool) docs.push_back(tokenize(ex.context));
    s.index_ = std::make_shared<const SparseIndex>(build_index(docs, params));
    s.pool_ = std::move(pool);
    return s;
}

std::vector<PromptExample> ExampleSelector::select(std::string_view context) const {
    if (!index_) return fixed_;
    const auto hits = index_->search(tokenize(context), kFewShotExamples);
    std::vector<PromptExample> out;
    std::vector<bool> used(pool_.size(), false);
    for (const auto& e : hits.entries) {
        out.push_back(pool_[e.handle]);
        used[e.handle] = true;
    }
    for (std::size_t i = 0; out.size() < kFewShotExamples && i < pool_.size(); ++i) {
        if (!used[i]) out.push_back(pool_[i]);
    }
    return out;
}

std::vector<PromptExample> sample_fixed_examples(const std::vector<QueryRecord>& train,
                                                 const PassageCollection& collection, std::uint64_t seed) {
    if (train.size() < kFewShotExamples) throw Error("need at least 3 training records for few-shot examples");
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(stream_seed(seed, 101));
    fisher_yates(order, rng);
    std::vector<PromptExample> out;
    for (std::size_t i = 0; i < kFewShotExamples; ++i) {
        const auto& q = train[order[i]];
        out.push_back({q.context, collection.at(q.target).text, {}, {}});
    }
    return out;
}

std::string rewrite_cache_key(Strategy strategy, const std::string& template_hash, const std::string& context_hash,
                              const DecodingParams& params) {
    return sha256_hex(std::string(strategy_name(strategy)) + "\n" + template_hash + "\n" + context_hash + "\n" +
                      params.canonical());
}

Rewriter::Rewriter(std::shared_ptr<Generator> generator, std::shared_ptr<RewriteCache> cache,
                   ExampleSelector examples, DecodingParams params)
    : generator_(std::move(generator)), cache_(std::move(cache)), examples_(std::move(examples)), params_(params) {
    params_.validate();
}

RewrittenQuery Rewriter::rewrite(Strategy strategy, const std::string& qid, const std::string& context) {
    RewrittenQuery out;
    out.qid = qid;
    out.strategy = strategy;
    if (strategy == Strategy::identity) {
        out.final_text = context;
        return out;
    }

    const TemplateKind kind = strategy == Strategy::gure  ? TemplateKind::gure
                              : strategy == Strategy::q2d ? TemplateKind::q2d
                                                          : TemplateKind::q2d_cot;
    auto tmpl = make_template(kind, kind == TemplateKind::gure ? std::vector<PromptExample>{}
                                                               : examples_.select(context));
    const std::string context_hash = sha256_hex(context);
    const std::string key = rewrite_cache_key(strategy, tmpl.hash(), context_hash, params_);

    auto finish = [&](std::string raw) {
        out.raw_generation = std::move(raw);
        if (strategy == Strategy::gure) {
            out.final_text = strip_scaffolding(out.raw_generation);
            return;
        }
        std::string passage;
        if (strategy == Strategy::q2d_cot) {
            auto parsed = parse_cot_output(out.raw_generation);
            out.parse_warning = !parsed.tag_found;
            passage = strip_scaffolding(parsed.passage);
        } else {
            passage = strip_scaffolding(out.raw_generation);
        }
        out.final_text = context + " " + passage;
    };

    if (cache_) {
        if (auto hit = cache_->lookup(key)) {
            finish(hit->raw);
            out.cache_hit = true;
            return out;
        }
    }

    // Concurrent callers with the same key share one endpoint call.
    std::shared_future<std::string> pending;
    std::optional<std::promise<std::string>> promise;
    {
        std::lock_guard lock(inflight_mutex_);
        if (auto it = inflight_.find(key); it != inflight_.end()) {
            pending = it->second;
        } else {
            promise.emplace();
            inflight_.emplace(key, promise->get_future().share());
        }
    }
    if (!promise) {
        finish(pending.get());
        out.cache_hit = true;
        return out;
    }
    auto release = [&] {
        std::lock_guard lock(inflight_mutex_);
        inflight_.erase(key);
    };
    // Another caller may have finished between our lookup and taking ownership.
    if (cache_) {
        if (auto hit = cache_->lookup(key)) {
            promise->set_value(hit->raw);
            release();
            finish(hit->raw);
            out.cache_hit = true;
            return out;
        }
    }

    try {
        if (!generator_) throw Error("rewrite: strategy '" + std::string(strategy_name(strategy)) + "' needs a generation endpoint");
        auto prompt = render_prompt(tmpl, context);
        auto result = generator_->generate(prompt, params_);
        ++endpoint_calls_;
        finish(result.text);
        if (cache_) {
            const auto now = std::chrono::system_clock::now().time_since_epoch();
            cache_->insert({key, std::string(strategy_name(strategy)), context_hash, out.raw_generation, out.final_text,
                            std::chrono::duration_cast<std::chrono::seconds>(now).count()});
        }
        promise->set_value(out.raw_generation);
    } catch (...) {
        promise->set_exception(std::current_exception());
        release();
        throw;
    }
    release();
    return out;
}

BatchRewrite rewrite_all(Rewriter& rewriter, Strategy strategy, const std::vector<QueryRecord>& queries,
                         std::size_t in_flight, bool lenient) {
    const std::size_t n = queries.size();
    std::vector<std::optional<RewrittenQuery>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                results[i] = rewriter.rewrite(strategy, queries[i].qid, queries[i].context);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(in_flight, n));
    if (workers == 1 || strategy == Strategy::identity) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    BatchRewrite batch;
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) {
            if (!lenient) std::rethrow_exception(errors[i]);
            std::string message;
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                message = e.what();
            }
            batch.failures.push_back({queries[i].qid, message});
            continue;
        }
        if (results[i]->cache_hit) ++batch.cache_hits;
        batch.rewrites.push_back(std::move(*results[i]));
    }
    return batch;
}

}  // namespace lpr
