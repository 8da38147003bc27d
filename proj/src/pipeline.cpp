#include "lpr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <exception>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "lpr/error.hpp"
#include "lpr/hashing.hpp"
#include "lpr/random.hpp"

namespace lpr {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string trim_copy(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

double parse_double(std::string_view key, std::string_view value) {
    try {
        std::size_t used = 0;
        const std::string text(value);
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config '" + std::string(key) + "': expected a number, got '" + std::string(value) + "'");
    }
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
    std::uint64_t v = 0;
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("config '" + std::string(key) + "': expected a non-negative integer, got '" +
                          std::string(value) + "'");
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("config '" + std::string(key) + "': expected true/false, got '" + std::string(value) + "'");
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

LoadOptions load_options(const ExperimentConfig& config, const std::filesystem::path& path) {
    LoadOptions options;
    options.fields = config.fields;
    options.format = config.format == "auto" ? infer_input_format(path) : parse_input_format(config.format);
    auto ext = path.extension().string();
    if (ext == ".tsv") options.csv_delimiter = '\t';
    return options;
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        std::throw_with_nested(StageError(name, e.what()));
    }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::vector<std::string> lines;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim_copy(line);
        if (!t.empty()) lines.push_back(std::move(t));
    }
    return lines;
}

/// Generated text used for the generation-similarity block.
std::string generated_part(const RewrittenQuery& r, const std::string& context) {
    switch (r.strategy) {
        case Strategy::identity: return context;
        case Strategy::gure: return r.final_text;
        case Strategy::q2d:
        case Strategy::q2d_cot:
            return r.final_text.size() > context.size() ? r.final_text.substr(context.size() + 1) : std::string{};
    }
    return r.final_text;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

RetrieverKind parse_retriever(std::string_view name) {
    if (name == "bm25") return RetrieverKind::bm25;
    if (name == "dense") return RetrieverKind::dense;
    throw ConfigError("unknown retriever '" + std::string(name) + "'");
}

std::string_view retriever_name(RetrieverKind kind) { return kind == RetrieverKind::bm25 ? "bm25" : "dense"; }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::set(std::string_view key, std::string_view raw) {
    const std::string value = trim_copy(raw);
    const std::string k(key);
    if (k == "passages") passages = value;
    else if (k == "queries") queries = value;
    else if (k == "format") {
        if (value != "auto") parse_input_format(value);
        format = value;
    }
    else if (k == "fields.id") fields.id = value;
    else if (k == "fields.text") fields.text = value;
    else if (k == "fields.qid") fields.qid = value;
    else if (k == "fields.context") fields.context = value;
    else if (k == "fields.target_id") fields.target_id = value;
    else if (k == "embeddings") embeddings = value;
    else if (k == "query_embeddings") query_embeddings = value;
    else if (k == "query_ids") query_ids = value;
    else if (k == "cache") cache = value;
    else if (k == "out_dir") out_dir = value;
    else if (k == "retriever") retriever = parse_retriever(value);
    else if (k == "strategy") strategy = parse_strategy(value);
    else if (k == "endpoint.base_url") endpoint.base_url = value;
    else if (k == "endpoint.model") endpoint.model = value;
    else if (k == "endpoint.api_key_env") endpoint.api_key_env = value;
    else if (k == "endpoint.timeout_s") endpoint.timeout = std::chrono::seconds(parse_uint(k, value));
    else if (k == "endpoint.max_attempts") endpoint.retry.max_attempts = static_cast<int>(parse_uint(k, value));
    else if (k == "endpoint.backoff_ms") endpoint.retry.initial_backoff = std::chrono::milliseconds(parse_uint(k, value));
    else if (k == "endpoint.max_backoff_ms") endpoint.retry.max_backoff = std::chrono::milliseconds(parse_uint(k, value));
    else if (k == "decoding.temperature") decoding.temperature = parse_double(k, value);
    else if (k == "decoding.top_p") decoding.top_p = parse_double(k, value);
    else if (k == "decoding.max_tokens") decoding.max_tokens = static_cast<int>(parse_uint(k, value));
    else if (k == "examples.mode") {
        if (value == "fixed") example_mode = ExampleMode::fixed;
        else if (value == "nearest" || value == "topk") example_mode = ExampleMode::nearest;
        else throw ConfigError("examples.mode must be fixed or nearest");
    }
    else if (k == "train_fraction") train_fraction = parse_double(k, value);
    else if (k == "seed") seed = parse_uint(k, value);
    else if (k == "sampling.n") sample_size = parse_uint(k, value);
    else if (k == "sampling.trials") trials = parse_uint(k, value);
    else if (k == "sampling.mode") {
        if (value == "without_replacement") sampling_mode = SamplingMode::without_replacement;
        else if (value == "with_replacement") sampling_mode = SamplingMode::with_replacement;
        else throw ConfigError("sampling.mode must be without_replacement or with_replacement");
    }
    else if (k == "bm25.k1") bm25.k1 = parse_double(k, value);
    else if (k == "bm25.b") bm25.b = parse_double(k, value);
    else if (k == "tokenizer.stem") tokenizer.stem = parse_bool(k, value);
    else if (k == "tokenizer.stopwords") tokenizer.remove_stopwords = parse_bool(k, value);
    else if (k == "stratify.thresholds") {
        std::vector<double> parsed;
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto t = trim_copy(item);
            if (!t.empty()) parsed.push_back(parse_double(k, t));
        }
        if (parsed.empty()) throw ConfigError("stratify.thresholds is empty");
        thresholds = std::move(parsed);
    }
    else if (k == "top_k") top_k = parse_uint(k, value);
    else if (k == "in_flight") in_flight = parse_uint(k, value);
    else if (k == "lenient") lenient = parse_bool(k, value);
    else if (k == "text_match") text_match = parse_bool(k, value);
    else if (k == "generation_metrics") generation_metrics = parse_bool(k, value);
    else throw ConfigError("unknown config key '" + k + "'");
}

std::map<std::string, std::string> ExperimentConfig::to_key_values() const {
    std::string thresholds_text;
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (i) thresholds_text += ",";
        thresholds_text += format_double(thresholds[i]);
    }
    return {
        {"passages", passages.string()},
        {"queries", queries.string()},
        {"format", format},
        {"fields.id", fields.id},
        {"fields.text", fields.text},
        {"fields.qid", fields.qid},
        {"fields.context", fields.context},
        {"fields.target_id", fields.target_id},
        {"embeddings", embeddings.string()},
        {"query_embeddings", query_embeddings.string()},
        {"query_ids", query_ids.string()},
        {"cache", cache.string()},
        {"out_dir", out_dir.string()},
        {"retriever", std::string(retriever_name(retriever))},
        {"strategy", std::string(strategy_name(strategy))},
        {"endpoint.base_url", endpoint.base_url},
        {"endpoint.model", endpoint.model},
        {"endpoint.api_key_env", endpoint.api_key_env},
        {"endpoint.timeout_s", std::to_string(endpoint.timeout.count())},
        {"endpoint.max_attempts", std::to_string(endpoint.retry.max_attempts)},
        {"endpoint.backoff_ms", std::to_string(endpoint.retry.initial_backoff.count())},
        {"endpoint.max_backoff_ms", std::to_string(endpoint.retry.max_backoff.count())},
        {"decoding.temperature", format_double(decoding.temperature)},
        {"decoding.top_p", format_double(decoding.top_p)},
        {"decoding.max_tokens", std::to_string(decoding.max_tokens)},
        {"examples.mode", example_mode == ExampleMode::fixed ? "fixed" : "nearest"},
        {"train_fraction", format_double(train_fraction)},
        {"seed", std::to_string(seed)},
        {"sampling.n", std::to_string(sample_size)},
        {"sampling.trials", std::to_string(trials)},
        {"sampling.mode", sampling_mode == SamplingMode::without_replacement ? "without_replacement" : "with_replacement"},
        {"bm25.k1", format_double(bm25.k1)},
        {"bm25.b", format_double(bm25.b)},
        {"tokenizer.stem", tokenizer.stem ? "true" : "false"},
        {"tokenizer.stopwords", tokenizer.remove_stopwords ? "true" : "false"},
        {"stratify.thresholds", thresholds_text},
        {"top_k", std::to_string(top_k)},
        {"in_flight", std::to_string(in_flight)},
        {"lenient", lenient ? "true" : "false"},
        {"text_match", text_match ? "true" : "false"},
        {"generation_metrics", generation_metrics ? "true" : "false"},
    };
}

std::string ExperimentConfig::hash() const {
    static const std::set<std::string> kExcluded = {"out_dir", "cache", "in_flight", "endpoint.timeout_s",
                                                    "endpoint.max_attempts", "endpoint.backoff_ms",
                                                    "endpoint.max_backoff_ms", "endpoint.api_key_env"};
    std::string material;
    for (const auto& [k, v] : to_key_values()) {
        if (kExcluded.count(k)) continue;
        material += k + "=" + v + "\n";
    }
    return sha256_hex(material);
}

void ExperimentConfig::validate() const {
    auto require = [](const std::filesystem::path& p, const char* what) {
        if (p.empty()) throw ConfigError(std::string(what) + " path is not set");
        if (!std::filesystem::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
    };
    require(passages, "passages");
    require(queries, "queries");
    if (retriever == RetrieverKind::dense) {
        require(embeddings, "embeddings");
        require(query_embeddings, "query_embeddings");
        require(query_ids, "query_ids");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (trials < 1) throw ConfigError("sampling.trials must be >= 1");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    bm25.validate();
    decoding.validate();
    for (double x : thresholds) {
        if (!(x > 0.0 && x <= 100.0)) throw ConfigError("stratify thresholds must lie in (0, 100]");
    }
}

void apply_config_text(ExperimentConfig& config, std::string_view text) {
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        // Strip comments outside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        const auto t = trim_copy(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
            section = trim_copy(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        auto key = trim_copy(std::string_view(t).substr(0, eq));
        auto value = trim_copy(std::string_view(t).substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (!section.empty()) key = section + "." + key;
        try {
            config.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base) {
    apply_config_text(base, read_file(path));
    return base;
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

Retriever Retriever::bm25(SparseIndex index, TokenizerOptions tokenizer) {
    Retriever r;
    r.sparse_ = std::make_shared<const SparseIndex>(std::move(index));
    r.tokenizer_ = tokenizer;
    return r;
}

Retriever Retriever::from_config(const ExperimentConfig& config, const PassageCollection& collection) {
    if (config.retriever == RetrieverKind::bm25) {
        return bm25(build_index(collection, config.bm25, config.tokenizer), config.tokenizer);
    }
    Retriever r;
    auto store = load_embeddings(config.embeddings);
    if (store.size() != collection.size()) {
        throw FormatError("embedding file has " + std::to_string(store.size()) + " rows but the collection has " +
                          std::to_string(collection.size()) + " passages");
    }
    auto queries = read_embedding_file(config.query_embeddings);
    if (queries.dim != store.dim()) {
        throw FormatError("query embeddings have dim " + std::to_string(queries.dim) + ", passages have " +
                          std::to_string(store.dim()));
    }
    const auto ids = read_lines(config.query_ids);
    if (ids.size() != queries.n) {
        throw FormatError("query_ids lists " + std::to_string(ids.size()) + " qids for " + std::to_string(queries.n) +
                          " query vectors");
    }
    auto vectors = std::make_shared<std::unordered_map<std::string, std::vector<float>>>();
    for (std::uint32_t i = 0; i < queries.n; ++i) {
        const auto* row = queries.values.data() + static_cast<std::size_t>(i) * queries.dim;
        vectors->emplace(ids[i], std::vector<float>(row, row + queries.dim));
    }
    r.dense_ = std::make_shared<const EmbeddingStore>(std::move(store));
    r.query_vectors_ = std::move(vectors);
    return r;
}

RankedList Retriever::rank(const RewrittenQuery& q, std::size_t k) const {
    if (sparse_) return sparse_->search(tokenize(q.final_text, tokenizer_), k, q.qid);
    auto it = query_vectors_->find(q.qid);
    if (it == query_vectors_->end()) throw Error("no query embedding for qid '" + q.qid + "'");
    return dense_->top_k(it->second, k, q.qid);
}

RetrievalRun Retriever::run(const std::vector<RewrittenQuery>& rewrites, const std::string& name,
                            std::size_t k) const {
    std::vector<RankedList> lists(rewrites.size());
    std::vector<std::exception_ptr> errors(rewrites.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < rewrites.size(); i = next++) {
            try {
                lists[i] = rank(rewrites[i], k);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers =
        std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(1, rewrites.size() / 64));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    RetrievalRun run;
    run.name = name;
    for (std::size_t i = 0; i < rewrites.size(); ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
        if (!run.lists.emplace(rewrites[i].qid, std::move(lists[i])).second) {
            throw Error("duplicate qid '" + rewrites[i].qid + "' in retrieval input");
        }
    }
    return run;
}

RetrievalRun retrieve(const ExperimentConfig& config, const PassageCollection& collection,
                      const std::vector<RewrittenQuery>& rewrites, const std::string& name) {
    return Retriever::from_config(config, collection).run(rewrites, name, config.top_k);
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

Workspace load_workspace(const ExperimentConfig& config) {
    Workspace ws;
    ws.collection = load_passages(config.passages, load_options(config, config.passages));
    auto loaded = load_queries(config.queries, ws.collection,
                               config.lenient ? TargetPolicy::lenient : TargetPolicy::strict,
                               load_options(config, config.queries));
    for (const auto& s : loaded.skipped) {
        std::cerr << "warning: skipping query " << s.qid << " (line " << s.line << "): unknown target '" << s.target_id
                  << "'\n";
    }
    ws.queries = std::move(loaded.queries);
    ws.split = split_queries(ws.queries, config.train_fraction, config.seed);
    ws.train_freq = citation_frequency(ws.split.train);
    return ws;
}

std::string run_name(const ExperimentConfig& config) {
    return std::string(strategy_name(config.strategy)) + "-" + std::string(retriever_name(config.retriever)) + "-" +
           config.hash().substr(0, 12);
}

std::filesystem::path trial_run_path(const ExperimentConfig& config, std::size_t trial) {
    return config.out_dir / "runs" /
           (std::string(strategy_name(config.strategy)) + "-" + std::string(retriever_name(config.retriever)) +
            ".trial" + std::to_string(trial + 1) + ".trec");
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::shared_ptr<Generator> generator) {
    stage("config", [&] {
        config.validate();
        return 0;
    });
    const std::string hash = config.hash();
    const std::string name = run_name(config);

    Workspace ws = stage("ingest", [&] { return load_workspace(config); });

    const auto trials = stage("sample", [&] {
        const std::size_t n = config.sample_size == 0 ? ws.split.test.size() : config.sample_size;
        if (config.sampling_mode == SamplingMode::without_replacement && n > ws.split.test.size()) {
            throw ConfigError("sampling.n = " + std::to_string(n) + " exceeds the " +
                              std::to_string(ws.split.test.size()) + " test queries; lower it or set it to 0");
        }
        return sample_trials(ws.split.test, n, config.trials, config.seed, config.sampling_mode);
    });

    auto rewriter = stage("rewrite", [&] {
        std::shared_ptr<RewriteCache> cache =
            config.cache.empty() ? std::make_shared<RewriteCache>() : std::make_shared<RewriteCache>(config.cache);
        ExampleSelector examples = ExampleSelector::fixed({});
        if (config.strategy == Strategy::q2d || config.strategy == Strategy::q2d_cot) {
            if (config.example_mode == ExampleMode::fixed) {
                examples = ExampleSelector::fixed(sample_fixed_examples(ws.split.train, ws.collection, config.seed));
            } else {
                std::vector<PromptExample> pool;
                for (const auto& q : ws.split.train) pool.push_back({q.context, ws.collection[q.target].text, {}, {}});
                examples = ExampleSelector::nearest(std::move(pool), config.bm25);
            }
        }
        if (!generator && config.strategy != Strategy::identity) {
            generator = std::make_shared<ChatCompletionsClient>(
                config.endpoint, [](const std::string& msg) {
                    if (!msg.starts_with("attempt 1: HTTP 2")) std::cerr << "generate: " << msg << '\n';
                });
        }
        return std::make_shared<Rewriter>(generator, cache, std::move(examples), config.decoding);
    });

    const Retriever retriever = stage("index", [&] { return Retriever::from_config(config, ws.collection); });
    const Qrels qrels = make_qrels(ws.queries, ws.collection, config.text_match);

    ExperimentResult result;
    std::vector<TrialMetrics> per_trial;
    std::map<std::string, RewrittenQuery> all_rewrites;
    for (std::size_t t = 0; t < trials.size(); ++t) {
        const auto batch = stage("rewrite", [&] {
            return rewrite_all(*rewriter, config.strategy, trials[t], config.in_flight, config.lenient);
        });
        for (const auto& f : batch.failures) {
            std::cerr << "warning: trial " << (t + 1) << ": rewrite failed for " << f.qid << ": " << f.message << '\n';
        }
        result.rewrites += batch.rewrites.size() + batch.failures.size();
        result.cache_hits += batch.cache_hits;
        result.failures.insert(result.failures.end(), batch.failures.begin(), batch.failures.end());
        for (const auto& r : batch.rewrites) all_rewrites.emplace(r.qid, r);

        const auto run = stage("retrieve", [&] { return retriever.run(batch.rewrites, name, config.top_k); });
        const auto path = trial_run_path(config, t);
        stage("write", [&] {
            write_file(path, trec_run_text(run, ws.collection));
            return 0;
        });
        result.run_files.push_back(path);
        per_trial.push_back(stage("eval", [&] { return evaluate_trial(run, qrels); }));
    }
    result.endpoint_calls = rewriter->endpoint_calls();

    result.report = aggregate(name, std::move(per_trial));
    result.report.config_hash = hash;
    result.report.seed = config.seed;

    if (config.generation_metrics) {
        stage("eval", [&] {
            std::unordered_map<std::string, const QueryRecord*> by_qid;
            for (const auto& q : ws.queries) by_qid.emplace(q.qid, &q);
            std::vector<std::string> candidates, references;
            for (const auto& [qid, r] : all_rewrites) {
                const auto* q = by_qid.at(qid);
                candidates.push_back(generated_part(r, q->context));
                references.push_back(ws.collection[q->target].text);
            }
            result.report.generation = generation_metrics(candidates, references);
            return 0;
        });
    }

    stage("write", [&] {
        result.report_json = config.out_dir / "report.json";
        result.report_text = config.out_dir / "report.txt";
        write_file(result.report_json, result.report.to_json());
        write_file(result.report_text, result.report.to_text());

        std::vector<RewrittenQuery> ordered;
        for (auto& [_, r] : all_rewrites) ordered.push_back(r);
        write_file(config.out_dir / "rewrites.jsonl", rewrites_jsonl(ordered));

        ordered_json manifest = ordered_json::object();
        manifest["config_hash"] = hash;
        manifest["run_name"] = name;
        manifest["seed"] = config.seed;
        manifest["trial_seeds"] = ordered_json::array();
        for (std::size_t t = 0; t < config.trials; ++t) manifest["trial_seeds"].push_back(stream_seed(config.seed, 1000 + t));
        manifest["config"] = ordered_json::object();
        for (const auto& [k, v] : config.to_key_values()) manifest["config"][k] = v;
        manifest["run_files"] = ordered_json::array();
        for (const auto& p : result.run_files) manifest["run_files"].push_back(p.string());
        manifest["report_json"] = result.report_json.string();
        manifest["report_text"] = result.report_text.string();
        manifest["rewrites"] = result.rewrites;
        manifest["cache_hits"] = result.cache_hits;
        manifest["cache_hit_rate"] =
            result.rewrites == 0 ? 0.0 : static_cast<double>(result.cache_hits) / static_cast<double>(result.rewrites);
        manifest["endpoint_calls"] = result.endpoint_calls;
        manifest["failures"] = ordered_json::array();
        for (const auto& f : result.failures) manifest["failures"].push_back({{"qid", f.qid}, {"message", f.message}});
        result.manifest = config.out_dir / "manifest.json";
        write_file(result.manifest, manifest.dump(2) + "\n");
        return 0;
    });
    return result;
}

std::vector<FrequencyRow> analyze_frequency(const ExperimentConfig& config,
                                            const std::vector<std::filesystem::path>& run_files) {
    if (run_files.empty()) throw StageError("stratify", "no run files given");
    Workspace ws = stage("ingest", [&] { return load_workspace(config); });
    std::vector<RetrievalRun> runs;
    for (const auto& p : run_files) {
        if (!std::filesystem::exists(p)) throw StageError("stratify", "missing run file " + p.string());
        runs.push_back(stage("stratify", [&] { return read_trec_run(p, ws.collection); }));
    }
    const Qrels qrels = make_qrels(ws.queries, ws.collection, config.text_match);
    auto rows = stage("stratify", [&] {
        return frequency_analysis(runs, ws.queries, ws.train_freq, qrels, config.thresholds);
    });
    stage("write", [&] {
        write_file(config.out_dir / "frequency.csv", frequency_rows_csv(rows, config.hash()));
        return 0;
    });
    return rows;
}

std::vector<HardNegative> mine_hard_negatives(const SparseIndex& index, const PassageCollection& collection,
                                              const std::vector<QueryRecord>& queries,
                                              const TokenizerOptions& tokenizer, std::size_t depth) {
    std::vector<HardNegative> out;
    for (const auto& q : queries) {
        const auto hits = index.search(tokenize(q.context, tokenizer), depth);
        for (const auto& e : hits.entries) {
            if (e.handle != q.target) {
                out.push_back({q.qid, collection.at(q.target).id, collection.at(e.handle).id});
                break;
            }
        }
    }
    return out;
}

std::string rewrites_jsonl(const std::vector<RewrittenQuery>& rewrites) {
    std::string out;
    for (const auto& r : rewrites) {
        ordered_json obj = ordered_json::object();
        obj["qid"] = r.qid;
        obj["strategy"] = strategy_name(r.strategy);
        obj["final_text"] = r.final_text;
        out += obj.dump() + "\n";
    }
    return out;
}

std::vector<RewrittenQuery> parse_rewrites_jsonl(std::string_view content) {
    std::vector<RewrittenQuery> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto end = content.find('\n', pos);
        if (end == std::string_view::npos) end = content.size();
        const auto line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (trim_copy(line).empty()) continue;
        try {
            const auto obj = ordered_json::parse(line);
            RewrittenQuery r;
            r.qid = obj.at("qid").get<std::string>();
            r.strategy = parse_strategy(obj.value("strategy", std::string("identity")));
            r.final_text = obj.at("final_text").get<std::string>();
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw FormatError("rewrites line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    return out;
}

}  // namespace lpr
