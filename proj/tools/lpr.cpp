#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lpr/corpus.hpp"
#include "lpr/dense.hpp"
#include "lpr/error.hpp"
#include "lpr/eval.hpp"
#include "lpr/pipeline.hpp"
#include "lpr/rewrite.hpp"
#include "lpr/sparse.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int {
    exit_ok = 0,
    exit_other = 1,
    exit_usage = 2,
    exit_format = 3,
    exit_generation = 4,
    exit_io = 5,
};

/// Options shared by every subcommand; folded into an ExperimentConfig.
struct CommonOptions {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::string> passages, queries, out_dir, cache, embeddings, query_embeddings, query_ids;
    std::optional<std::string> retriever, strategy, format, base_url, model;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> sample_size, trials, top_k, in_flight;
    bool topk_examples = false;
    bool text_match = false;
    bool lenient = false;
    bool json = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", config_file, "key = value config file")->check(CLI::ExistingFile);
        cmd->add_option("--set", sets, "override one config key, e.g. --set bm25.k1=1.2");
        cmd->add_option("--passages", passages, "passage file (JSONL or CSV)");
        cmd->add_option("--queries", queries, "query file (JSONL or CSV)");
        cmd->add_option("--format", format, "auto, jsonl or csv");
        cmd->add_option("-o,--out-dir", out_dir, "output directory");
        cmd->add_option("--cache", cache, "rewrite cache (JSONL)");
        cmd->add_option("--embeddings", embeddings, "passage EMB1 file");
        cmd->add_option("--query-embeddings", query_embeddings, "query EMB1 file");
        cmd->add_option("--query-ids", query_ids, "qids, one per line, in query embedding order");
        cmd->add_option("--retriever", retriever, "bm25 or dense");
        cmd->add_option("--strategy", strategy, "identity, q2d, q2d_cot or gure");
        cmd->add_option("--endpoint", base_url, "chat-completions base URL");
        cmd->add_option("--model", model, "model name sent to the endpoint");
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("-n,--sample-size", sample_size, "test queries per trial (0 = all)");
        cmd->add_option("--trials", trials, "number of trials");
        cmd->add_option("-k,--top-k", top_k, "rank list depth");
        cmd->add_option("--in-flight", in_flight, "concurrent generation requests");
        cmd->add_flag("--topk-examples", topk_examples, "q2d: pick the 3 nearest training examples per query");
        cmd->add_flag("--text-match", text_match, "count identical-text passages as correct");
        cmd->add_flag("--lenient", lenient, "skip queries with unknown targets or failed rewrites");
        cmd->add_flag("--json", json, "print reports as JSON");
    }

    lpr::ExperimentConfig config() const {
        lpr::ExperimentConfig cfg;
        if (!config_file.empty()) cfg = lpr::load_config_file(config_file);
        auto put = [&](const char* key, const auto& opt) {
            if (opt) {
                if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, std::string>) {
                    cfg.set(key, *opt);
                } else {
                    cfg.set(key, std::to_string(*opt));
                }
            }
        };
        put("passages", passages);
        put("queries", queries);
        put("format", format);
        put("out_dir", out_dir);
        put("cache", cache);
        put("embeddings", embeddings);
        put("query_embeddings", query_embeddings);
        put("query_ids", query_ids);
        put("retriever", retriever);
        put("strategy", strategy);
        put("endpoint.base_url", base_url);
        put("endpoint.model", model);
        put("seed", seed);
        put("sampling.n", sample_size);
        put("sampling.trials", trials);
        put("top_k", top_k);
        put("in_flight", in_flight);
        if (topk_examples) cfg.set("examples.mode", "nearest");
        if (text_match) cfg.set("text_match", "true");
        if (lenient) cfg.set("lenient", "true");
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw lpr::ConfigError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        return cfg;
    }
};

void require_inputs(const lpr::ExperimentConfig& cfg, bool need_queries) {
    if (cfg.passages.empty()) throw lpr::ConfigError("--passages is required");
    if (!fs::exists(cfg.passages)) throw lpr::ConfigError("passages not found: " + cfg.passages.string());
    if (need_queries) {
        if (cfg.queries.empty()) throw lpr::ConfigError("--queries is required");
        if (!fs::exists(cfg.queries)) throw lpr::ConfigError("queries not found: " + cfg.queries.string());
    }
}

void print_report(const lpr::MetricReport& report, bool json) {
    std::cout << (json ? report.to_json() : report.to_text());
    if (json) std::cout << '\n';
}

std::vector<lpr::RewrittenQuery> identity_rewrites(const std::vector<lpr::QueryRecord>& queries) {
    std::vector<lpr::RewrittenQuery> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        lpr::RewrittenQuery r;
        r.qid = q.qid;
        r.final_text = q.context;
        out.push_back(std::move(r));
    }
    return out;
}

int exit_code_for(const std::exception& e) {
    try {
        std::rethrow_if_nested(e);
    } catch (const std::exception& inner) {
        return exit_code_for(inner);
    }
    if (dynamic_cast<const lpr::ConfigError*>(&e)) return exit_usage;
    if (dynamic_cast<const lpr::FormatError*>(&e)) return exit_format;
    if (dynamic_cast<const lpr::GenerationError*>(&e)) return exit_generation;
    if (dynamic_cast<const lpr::IoError*>(&e)) return exit_io;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return exit_io;
    return exit_other;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Legal passage retrieval experiments"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::string output;
    std::string index_path;
    std::string rewrites_path;
    std::vector<std::string> run_paths;
    std::size_t depth = 10;
    bool all_queries = false;

    auto* ingest = app.add_subcommand("ingest", "validate inputs and write canonical JSONL plus the train/test split");
    auto* index = app.add_subcommand("index", "build and save a BM25 index");
    auto* embed_import = app.add_subcommand("embed-import", "validate an EMB1 file against the passages");
    auto* rewrite = app.add_subcommand("rewrite", "rewrite test queries with the configured strategy");
    auto* retrieve = app.add_subcommand("retrieve", "rank passages for rewritten queries");
    auto* eval = app.add_subcommand("eval", "score run files against the gold targets");
    auto* stratify = app.add_subcommand("stratify", "metrics by train-citation frequency threshold");
    auto* stats = app.add_subcommand("stats", "corpus statistics as JSON");
    auto* run = app.add_subcommand("run", "sample, rewrite, retrieve and score every trial");
    auto* hard_neg = app.add_subcommand("hard-negatives", "top non-gold BM25 passage per training query");

    for (auto* cmd : {ingest, index, embed_import, rewrite, retrieve, eval, stratify, stats, run, hard_neg}) {
        opts.attach(cmd);
    }
    index->add_option("--output", output, "index file (default <out_dir>/index.spix)");
    embed_import->add_option("input", index_path, "EMB1 file to check")->required()->check(CLI::ExistingFile);
    embed_import->add_option("--output", output, "normalized copy (default <out_dir>/passages.emb)");
    rewrite->add_option("--output", output, "rewrites JSONL (default <out_dir>/rewrites.jsonl)");
    rewrite->add_flag("--all", all_queries, "rewrite every query, not just the test split");
    retrieve->add_option("--rewrites", rewrites_path, "rewrites JSONL; default is the raw test contexts");
    retrieve->add_option("--index", index_path, "saved BM25 index to use instead of building one");
    retrieve->add_option("--output", output, "run file (default <out_dir>/run.trec)");
    eval->add_option("runs", run_paths, "TREC run files, one per trial")->required();
    stratify->add_option("runs", run_paths, "TREC run files, one per trial")->required();
    hard_neg->add_option("--depth", depth, "BM25 depth searched for a non-gold passage");
    hard_neg->add_option("--output", output, "JSONL (default <out_dir>/hard_negatives.jsonl)");
    hard_neg->add_flag("--all", all_queries, "mine every query, not just the train split");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_usage;
    }

    try {
        auto cfg = opts.config();
        auto out_or = [&](const std::string& name) { return output.empty() ? cfg.out_dir / name : fs::path(output); };

        if (ingest->parsed()) {
            require_inputs(cfg, true);
            auto ws = lpr::load_workspace(cfg);
            lpr::save_passages(cfg.out_dir / "passages.jsonl", ws.collection);
            lpr::write_file(cfg.out_dir / "queries.jsonl", lpr::queries_to_jsonl(ws.queries));
            lpr::write_file(cfg.out_dir / "train.jsonl", lpr::queries_to_jsonl(ws.split.train));
            lpr::write_file(cfg.out_dir / "test.jsonl", lpr::queries_to_jsonl(ws.split.test));
            std::cerr << "ingested " << ws.collection.size() << " passages, " << ws.queries.size() << " queries ("
                      << ws.split.train.size() << " train / " << ws.split.test.size() << " test)\n";
        } else if (index->parsed()) {
            require_inputs(cfg, false);
            auto collection = lpr::load_passages(cfg.passages);
            auto idx = lpr::build_index(collection, cfg.bm25, cfg.tokenizer);
            const auto path = out_or("index.spix");
            idx.save(path);
            std::cerr << "indexed " << idx.n_docs() << " passages, " << idx.n_terms() << " terms -> " << path << '\n';
        } else if (embed_import->parsed()) {
            require_inputs(cfg, false);
            auto collection = lpr::load_passages(cfg.passages);
            auto store = lpr::load_embeddings(index_path);
            if (store.size() != collection.size()) {
                throw lpr::FormatError("embedding file has " + std::to_string(store.size()) +
                                       " rows but the collection has " + std::to_string(collection.size()));
            }
            const auto path = out_or("passages.emb");
            lpr::save_embeddings(path, store);
            std::cerr << "imported " << store.size() << " x " << store.dim() << " embeddings -> " << path << '\n';
        } else if (rewrite->parsed()) {
            require_inputs(cfg, true);
            auto ws = lpr::load_workspace(cfg);
            const auto& targets = all_queries ? ws.queries : ws.split.test;
            auto cache = cfg.cache.empty() ? std::make_shared<lpr::RewriteCache>()
                                           : std::make_shared<lpr::RewriteCache>(cfg.cache);
            lpr::ExampleSelector examples = lpr::ExampleSelector::fixed({});
            if (cfg.strategy == lpr::Strategy::q2d || cfg.strategy == lpr::Strategy::q2d_cot) {
                if (cfg.example_mode == lpr::ExampleMode::fixed) {
                    examples = lpr::ExampleSelector::fixed(
                        lpr::sample_fixed_examples(ws.split.train, ws.collection, cfg.seed));
                } else {
                    std::vector<lpr::PromptExample> pool;
                    for (const auto& q : ws.split.train) pool.push_back({q.context, ws.collection[q.target].text, {}, {}});
                    examples = lpr::ExampleSelector::nearest(std::move(pool), cfg.bm25);
                }
            }
            std::shared_ptr<lpr::Generator> generator;
            if (cfg.strategy != lpr::Strategy::identity) {
                generator = std::make_shared<lpr::ChatCompletionsClient>(
                    cfg.endpoint, [](const std::string& msg) { std::cerr << "generate: " << msg << '\n'; });
            }
            lpr::Rewriter rewriter(generator, cache, std::move(examples), cfg.decoding);
            auto batch = lpr::rewrite_all(rewriter, cfg.strategy, targets, cfg.in_flight, cfg.lenient);
            for (const auto& f : batch.failures) std::cerr << "warning: rewrite failed for " << f.qid << ": " << f.message << '\n';
            const auto path = out_or("rewrites.jsonl");
            lpr::write_file(path, lpr::rewrites_jsonl(batch.rewrites));
            std::cerr << "rewrote " << batch.rewrites.size() << " queries (" << batch.cache_hits << " cache hits, "
                      << rewriter.endpoint_calls() << " endpoint calls) -> " << path << '\n';
        } else if (retrieve->parsed()) {
            require_inputs(cfg, rewrites_path.empty());
            std::vector<lpr::RewrittenQuery> rewrites;
            lpr::PassageCollection collection;
            if (rewrites_path.empty()) {
                auto ws = lpr::load_workspace(cfg);
                collection = std::move(ws.collection);
                rewrites = identity_rewrites(ws.split.test);
            } else {
                collection = lpr::load_passages(cfg.passages);
                rewrites = lpr::parse_rewrites_jsonl(lpr::read_file(rewrites_path));
            }
            const auto name = lpr::run_name(cfg);
            lpr::RetrievalRun result;
            if (!index_path.empty() && cfg.retriever == lpr::RetrieverKind::bm25) {
                auto idx = lpr::SparseIndex::load(index_path);
                if (idx.n_docs() != collection.size()) {
                    throw lpr::FormatError("index covers " + std::to_string(idx.n_docs()) +
                                           " passages but the collection has " + std::to_string(collection.size()));
                }
                result = lpr::Retriever::bm25(std::move(idx), cfg.tokenizer).run(rewrites, name, cfg.top_k);
            } else {
                result = lpr::retrieve(cfg, collection, rewrites, name);
            }
            const auto path = out_or("run.trec");
            lpr::write_file(path, lpr::trec_run_text(result, collection));
            std::cerr << "ranked " << result.lists.size() << " queries -> " << path << '\n';
        } else if (eval->parsed()) {
            require_inputs(cfg, true);
            auto ws = lpr::load_workspace(cfg);
            const auto qrels = lpr::make_qrels(ws.queries, ws.collection, cfg.text_match);
            std::vector<lpr::TrialMetrics> per_trial;
            std::string name;
            for (const auto& p : run_paths) {
                auto r = lpr::read_trec_run(p, ws.collection);
                if (name.empty()) name = r.name;
                per_trial.push_back(lpr::evaluate_trial(r, qrels));
            }
            auto report = lpr::aggregate(name, std::move(per_trial));
            report.config_hash = cfg.hash();
            report.seed = cfg.seed;
            print_report(report, opts.json);
        } else if (stratify->parsed()) {
            require_inputs(cfg, true);
            std::vector<fs::path> paths(run_paths.begin(), run_paths.end());
            auto rows = lpr::analyze_frequency(cfg, paths);
            if (opts.json) {
                nlohmann::ordered_json arr = nlohmann::ordered_json::array();
                for (const auto& r : rows) {
                    arr.push_back({{"x", r.x_percent},
                                   {"recall_at_1", r.recall_at_1},
                                   {"recall_at_10", r.recall_at_10},
                                   {"ndcg_at_10", r.ndcg_at_10},
                                   {"n_unique_targets", r.n_unique_targets}});
                }
                std::cout << arr.dump(2) << '\n';
            } else {
                std::cout << lpr::frequency_rows_csv(rows, cfg.hash());
            }
        } else if (stats->parsed()) {
            require_inputs(cfg, false);
            auto collection = lpr::load_passages(cfg.passages);
            std::vector<lpr::QueryRecord> queries;
            if (!cfg.queries.empty()) {
                queries = lpr::load_queries(cfg.queries, collection,
                                            cfg.lenient ? lpr::TargetPolicy::lenient : lpr::TargetPolicy::strict)
                              .queries;
            }
            std::cout << lpr::corpus_stats_json(lpr::corpus_stats(collection, queries)) << '\n';
        } else if (run->parsed()) {
            auto result = lpr::run_experiment(cfg);
            print_report(result.report, opts.json);
            std::cerr << "wrote " << result.run_files.size() << " run file(s), manifest " << result.manifest << '\n';
        } else if (hard_neg->parsed()) {
            require_inputs(cfg, true);
            auto ws = lpr::load_workspace(cfg);
            auto idx = lpr::build_index(ws.collection, cfg.bm25, cfg.tokenizer);
            auto mined = lpr::mine_hard_negatives(idx, ws.collection, all_queries ? ws.queries : ws.split.train,
                                                  cfg.tokenizer, depth);
            std::string text;
            for (const auto& h : mined) {
                nlohmann::ordered_json obj = {{"qid", h.qid}, {"positive_id", h.positive_id}, {"negative_id", h.negative_id}};
                text += obj.dump() + "\n";
            }
            const auto path = out_or("hard_negatives.jsonl");
            lpr::write_file(path, text);
            std::cerr << "mined " << mined.size() << " hard negatives -> " << path << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return exit_ok;
}
