#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "lpr/dense.hpp"
#include "lpr/pipeline.hpp"
#include "synthetic.hpp"

using namespace lpr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "lpr_pipeline_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// 20 passages; every query copies its target verbatim.
ExperimentConfig self_retrieval_fixture(const fs::path& dir) {
    synth::Corpus c = synth::vocabulary_shift(20, 3, 0.0, 4);
    write_jsonl(c, dir / "passages.jsonl", dir / "queries.jsonl");
    ExperimentConfig cfg;
    cfg.passages = dir / "passages.jsonl";
    cfg.queries = dir / "queries.jsonl";
    cfg.out_dir = dir / "out";
    cfg.sample_size = 0;
    cfg.trials = 2;
    cfg.train_fraction = 0.5;
    return cfg;
}

class OracleGenerator : public Generator {
public:
    explicit OracleGenerator(std::map<std::string, std::string> gold) : gold_(std::move(gold)) {}
    GenerationResult generate(const std::string& prompt, const DecodingParams&) override {
        ++calls;
        return {gold_.at(synth::context_from_prompt(prompt)), 1, 0.0};
    }
    std::atomic<int> calls{0};

private:
    std::map<std::string, std::string> gold_;
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(LPR_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesSectionsCommentsAndQuotes) {
    ExperimentConfig cfg;
    apply_config_text(cfg, R"(
# experiment
strategy = gure
retriever = "bm25"
[bm25]
k1 = 1.2   # lower saturation
b = 0.6
[sampling]
n = 100
trials = 5
[stratify]
thresholds = 10, 50, 100
)");
    EXPECT_EQ(cfg.strategy, Strategy::gure);
    EXPECT_EQ(cfg.bm25.k1, 1.2);
    EXPECT_EQ(cfg.bm25.b, 0.6);
    EXPECT_EQ(cfg.sample_size, 100u);
    EXPECT_EQ(cfg.trials, 5u);
    EXPECT_EQ(cfg.thresholds, (std::vector<double>{10, 50, 100}));
}

TEST(Config, Errors) {
    ExperimentConfig cfg;
    EXPECT_THROW(apply_config_text(cfg, "nonsense = 1\n"), ConfigError);
    EXPECT_THROW(apply_config_text(cfg, "seed = -3\n"), ConfigError);
    EXPECT_THROW(apply_config_text(cfg, "just words\n"), ConfigError);
    EXPECT_THROW(cfg.set("retriever", "splade"), ConfigError);
    try {
        apply_config_text(cfg, "\n\nbm25.k1 = x\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(Config, RoundTripsThroughKeyValues) {
    ExperimentConfig a;
    a.set("strategy", "q2d_cot");
    a.set("decoding.top_p", "0.95");
    a.set("examples.mode", "nearest");
    ExperimentConfig b;
    for (const auto& [k, v] : a.to_key_values()) b.set(k, v);
    EXPECT_EQ(a.to_key_values(), b.to_key_values());
    EXPECT_EQ(a.hash(), b.hash());
}

TEST(Config, HashIgnoresOutputLocations) {
    ExperimentConfig a, b;
    b.out_dir = "elsewhere";
    b.cache = "c.jsonl";
    b.in_flight = 16;
    EXPECT_EQ(a.hash(), b.hash());
    b.seed = 7;
    EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, ValidateChecksPaths) {
    ExperimentConfig cfg;
    cfg.passages = "/nonexistent/p.jsonl";
    cfg.queries = "/nonexistent/q.jsonl";
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Run, IdentitySelfRetrieval) {
    const auto dir = fresh_dir("identity");
    const auto cfg = self_retrieval_fixture(dir);
    const auto result = run_experiment(cfg);
    EXPECT_EQ(result.report.mean.recall_at_1, 1.0);
    EXPECT_EQ(result.report.per_trial.size(), 2u);
    EXPECT_EQ(result.endpoint_calls, 0u);
    ASSERT_EQ(result.run_files.size(), 2u);
    for (const auto& p : result.run_files) EXPECT_TRUE(fs::exists(p));
    EXPECT_TRUE(fs::exists(cfg.out_dir / "report.json"));
    EXPECT_TRUE(fs::exists(cfg.out_dir / "report.txt"));
    const auto manifest = nlohmann::json::parse(read_file(result.manifest));
    EXPECT_EQ(manifest["config_hash"], cfg.hash());
    EXPECT_EQ(manifest["seed"], cfg.seed);
    EXPECT_EQ(manifest["trial_seeds"].size(), 2u);
    const auto report = nlohmann::json::parse(read_file(result.report_json));
    EXPECT_EQ(report["config_hash"], cfg.hash());
}

TEST(Run, GureWithOracleGenerator) {
    const auto dir = fresh_dir("gure");
    synth::Corpus c = synth::vocabulary_shift(60, 2, 0.9, 6);
    write_jsonl(c, dir / "passages.jsonl", dir / "queries.jsonl");
    ExperimentConfig cfg;
    cfg.passages = dir / "passages.jsonl";
    cfg.queries = dir / "queries.jsonl";
    cfg.out_dir = dir / "out";
    cfg.cache = dir / "cache.jsonl";
    cfg.sample_size = 0;
    cfg.trials = 3;
    cfg.train_fraction = 0.5;
    cfg.strategy = Strategy::gure;
    cfg.generation_metrics = true;

    auto gen = std::make_shared<OracleGenerator>(c.gold_text);
    const auto first = run_experiment(cfg, gen);
    EXPECT_EQ(first.report.mean.recall_at_1, 1.0);
    ASSERT_TRUE(first.report.generation.has_value());
    EXPECT_EQ(first.report.generation->bleu, 1.0);
    EXPECT_EQ(gen->calls.load(), 60);

    std::vector<std::string> before;
    for (const auto& p : first.run_files) before.push_back(read_file(p));
    const auto report_before = read_file(first.report_json);

    auto again = std::make_shared<OracleGenerator>(c.gold_text);
    const auto second = run_experiment(cfg, again);
    EXPECT_EQ(again->calls.load(), 0);
    EXPECT_EQ(second.cache_hits, second.rewrites);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(read_file(second.run_files[i]), before[i]);
    EXPECT_EQ(read_file(second.report_json), report_before);
}

TEST(Run, StageErrorsAreTagged) {
    const auto dir = fresh_dir("stage");
    auto cfg = self_retrieval_fixture(dir);
    cfg.sample_size = 100000;
    try {
        run_experiment(cfg);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "sample");
        EXPECT_THROW(std::rethrow_if_nested(e), ConfigError);
    }
    cfg = self_retrieval_fixture(dir);
    cfg.strategy = Strategy::gure;
    cfg.endpoint.base_url = "http://127.0.0.1:1/v1";
    cfg.endpoint.retry.max_attempts = 1;
    try {
        run_experiment(cfg);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "rewrite");
    }
}

TEST(Run, DenseRetrieverFromFiles) {
    const auto dir = fresh_dir("dense");
    auto cfg = self_retrieval_fixture(dir);
    const auto ws = load_workspace(cfg);
    // one-hot passage vectors; each query points at its own target
    const auto n = static_cast<std::uint32_t>(ws.collection.size());
    std::vector<float> pv(static_cast<std::size_t>(n) * n, 0.0f), qv;
    for (std::uint32_t i = 0; i < n; ++i) pv[static_cast<std::size_t>(i) * n + i] = 1.0f;
    std::string ids;
    for (const auto& q : ws.queries) {
        std::vector<float> row(n, 0.01f);
        row[q.target] = 1.0f;
        qv.insert(qv.end(), row.begin(), row.end());
        ids += q.qid + "\n";
    }
    write_embedding_file(dir / "p.emb", {n, n, true, pv});
    write_embedding_file(dir / "q.emb", {static_cast<std::uint32_t>(ws.queries.size()), n, false, qv});
    write_file(dir / "q.ids", ids);
    cfg.retriever = RetrieverKind::dense;
    cfg.embeddings = dir / "p.emb";
    cfg.query_embeddings = dir / "q.emb";
    cfg.query_ids = dir / "q.ids";
    EXPECT_EQ(run_experiment(cfg).report.mean.recall_at_1, 1.0);

    write_embedding_file(dir / "p.emb", {1, n, true, std::vector<float>(pv.begin(), pv.begin() + n)});
    EXPECT_THROW(run_experiment(cfg), StageError);
}

TEST(Frequency, HundredRowEqualsReport) {
    const auto dir = fresh_dir("freq");
    synth::Corpus c = synth::zipf(80, 600, 12);
    write_jsonl(c, dir / "passages.jsonl", dir / "queries.jsonl");
    ExperimentConfig cfg;
    cfg.passages = dir / "passages.jsonl";
    cfg.queries = dir / "queries.jsonl";
    cfg.out_dir = dir / "out";
    cfg.sample_size = 40;
    cfg.trials = 3;
    const auto result = run_experiment(cfg);
    const auto rows = analyze_frequency(cfg, result.run_files);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows.back().x_percent, 100.0);
    EXPECT_EQ(rows.back().recall_at_1, result.report.mean.recall_at_1);
    EXPECT_EQ(rows.back().recall_at_10, result.report.mean.recall_at_10);
    EXPECT_EQ(rows.back().ndcg_at_10, result.report.mean.ndcg_at_10);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i].n_unique_targets, rows[i - 1].n_unique_targets);
    EXPECT_TRUE(read_file(cfg.out_dir / "frequency.csv").starts_with("# config_hash=" + cfg.hash()));
    EXPECT_THROW(analyze_frequency(cfg, {dir / "missing.trec"}), StageError);
}

TEST(HardNegatives, SkipGold) {
    const auto c = parse_passages_jsonl(
        "{\"id\":\"a\",\"text\":\"contract breach damages\"}\n{\"id\":\"b\",\"text\":\"contract breach\"}\n"
        "{\"id\":\"c\",\"text\":\"zoning\"}\n");
    const std::vector<QueryRecord> qs = {{"q1", "contract breach", "b", 1, {}}, {"q2", "zoning law", "c", 2, {}}};
    const auto idx = build_index(c);
    const auto mined = mine_hard_negatives(idx, c, qs);
    ASSERT_EQ(mined.size(), 1u);
    EXPECT_EQ(mined[0].qid, "q1");
    EXPECT_EQ(mined[0].positive_id, "b");
    EXPECT_EQ(mined[0].negative_id, "a");
}

TEST(Rewrites, JsonlRoundTrip) {
    std::vector<RewrittenQuery> rs(2);
    rs[0].qid = "a";
    rs[0].strategy = Strategy::gure;
    rs[0].final_text = "text \"quoted\"\nline";
    rs[1].qid = "b";
    rs[1].final_text = "ctx";
    const auto back = parse_rewrites_jsonl(rewrites_jsonl(rs));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].final_text, rs[0].final_text);
    EXPECT_EQ(back[0].strategy, Strategy::gure);
    EXPECT_THROW(parse_rewrites_jsonl("{\"qid\":1}\n"), FormatError);
}

TEST(Cli, ExitCodesAndSubcommands) {
    const auto dir = fresh_dir("cli");
    const auto cfg = self_retrieval_fixture(dir);
    const std::string io = " --passages " + cfg.passages.string() + " --queries " + cfg.queries.string() + " -o " +
                           (dir / "cli").string();
    EXPECT_EQ(run_cli("stats" + io), 0);
    EXPECT_EQ(run_cli("ingest" + io), 0);
    EXPECT_TRUE(fs::exists(dir / "cli" / "test.jsonl"));
    EXPECT_EQ(run_cli("index" + io), 0);
    EXPECT_TRUE(fs::exists(dir / "cli" / "index.spix"));
    EXPECT_EQ(run_cli("rewrite" + io), 0);
    EXPECT_EQ(run_cli("retrieve" + io + " --rewrites " + (dir / "cli" / "rewrites.jsonl").string() + " --index " +
                      (dir / "cli" / "index.spix").string()),
              0);
    EXPECT_EQ(run_cli("eval" + io + " " + (dir / "cli" / "run.trec").string()), 0);
    EXPECT_EQ(run_cli("run" + io + " -n 0 --trials 1 --json"), 0);
    EXPECT_EQ(run_cli("stratify" + io + " " + (dir / "cli" / "runs" / "identity-bm25.trial1.trec").string()), 0);
    EXPECT_EQ(run_cli("hard-negatives" + io), 0);

    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("run --passages /nonexistent --queries /nonexistent"), 2);
    EXPECT_EQ(run_cli("run" + io + " --set bogus.key=1"), 2);
    write_file(dir / "broken.jsonl", "{\"id\":\"a\"\n");
    EXPECT_EQ(run_cli("stats --passages " + (dir / "broken.jsonl").string()), 3);
    EXPECT_EQ(run_cli("run" + io + " -n 100000"), 2);
    EXPECT_EQ(run_cli("run" + io + " -n 0 --strategy gure --endpoint http://127.0.0.1:1/v1 --set endpoint.max_attempts=1"), 4);
}
