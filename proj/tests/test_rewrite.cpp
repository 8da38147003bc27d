#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "lpr/rewrite.hpp"

using namespace lpr;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
    return n;
}

std::vector<PromptExample> three_examples() {
    return {{"ctx one", "passage one", "", ""}, {"ctx two", "passage two", "", ""}, {"ctx three", "passage three", "", ""}};
}

/// Returns a fixed reply and counts calls.
class FixedGenerator : public Generator {
public:
    explicit FixedGenerator(std::string reply) : reply_(std::move(reply)) {}
    GenerationResult generate(const std::string& prompt, const DecodingParams&) override {
        ++calls;
        last_prompt = prompt;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return {reply_, 1, 0.0};
    }
    std::atomic<int> calls{0};
    std::string last_prompt;

private:
    std::string reply_;
};

class FailingGenerator : public Generator {
public:
    GenerationResult generate(const std::string&, const DecodingParams&) override {
        throw GenerationError(GenerationFailure::transport, "down");
    }
};

std::filesystem::path temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "lpr_rewrite_test";
    std::filesystem::create_directories(dir);
    std::filesystem::remove(dir / name);
    return dir / name;
}

}  // namespace

TEST(Prompt, GureInferenceEndsAtPassageHeader) {
    const auto p = render_prompt(make_template(TemplateKind::gure), "X");
    EXPECT_TRUE(p.ends_with("### Legal Passage :")) << p;
    EXPECT_NE(p.find("### Preceding Context : X\n"), std::string::npos);
    EXPECT_TRUE(p.starts_with("You are a helpful assistant specializing in generating legal passages that naturally "
                              "align with the preceding context."));
    EXPECT_EQ(p.find('{'), std::string::npos);
}

TEST(Prompt, GureTrainingRecordHasBoth) {
    const auto p = render_prompt(make_template(TemplateKind::gure), "X", std::string("Y"));
    EXPECT_NE(p.find("### Preceding Context : X"), std::string::npos);
    EXPECT_TRUE(p.ends_with("### Legal Passage : Y"));
}

TEST(Prompt, Q2dHasFourContextBlocks) {
    const auto p = render_prompt(make_template(TemplateKind::q2d, three_examples()), "the query");
    EXPECT_EQ(count_of(p, "Preceding Context"), 4u);
    EXPECT_EQ(count_of(p, "### Legal Passage :"), 4u);
    EXPECT_TRUE(p.ends_with("### Preceding Context : the query\n\n### Legal Passage :"));
    EXPECT_NE(p.find("passage two"), std::string::npos);
}

TEST(Prompt, CotLayout) {
    auto ex = three_examples();
    ex[0].step1 = "understand";
    const auto p = render_prompt(make_template(TemplateKind::q2d_cot, ex), "q");
    EXPECT_EQ(count_of(p, "Preceding Context"), 4u);
    EXPECT_EQ(count_of(p, "<output> passage"), 3u);
    EXPECT_EQ(count_of(p, "### Step1: understand"), 1u);
    EXPECT_EQ(count_of(p, "### Step2:"), 0u);
    EXPECT_NE(p.find("please mark final output with '<output>' tag"), std::string::npos);
}

TEST(Prompt, ValuesAreNotReExpanded) {
    const auto p = render_prompt(make_template(TemplateKind::gure), "{Passage} and {Context}");
    EXPECT_NE(p.find("{Passage} and {Context}"), std::string::npos);
}

TEST(Prompt, Errors) {
    EXPECT_THROW(make_template(TemplateKind::q2d, {}), Error);
    EXPECT_THROW(make_template(TemplateKind::gure, three_examples()), Error);
    EXPECT_THROW(render_prompt(make_template(TemplateKind::gure), "  "), Error);
    EXPECT_THROW(render_prompt(make_template(TemplateKind::q2d, three_examples()), "x", std::string("y")), Error);
}

TEST(Prompt, HashTracksExamples) {
    auto a = make_template(TemplateKind::q2d, three_examples());
    auto ex = three_examples();
    ex[2].passage = "other";
    auto b = make_template(TemplateKind::q2d, ex);
    EXPECT_NE(a.hash(), b.hash());
    EXPECT_EQ(a.hash(), make_template(TemplateKind::q2d, three_examples()).hash());
}

TEST(CotParse, Fixtures) {
    auto one = parse_cot_output("Step1 reasoning... <output> the rule is X");
    EXPECT_EQ(one.passage, "the rule is X");
    EXPECT_TRUE(one.tag_found);

    auto none = parse_cot_output("  just text  ");
    EXPECT_EQ(none.passage, "just text");
    EXPECT_FALSE(none.tag_found);

    auto two = parse_cot_output("<output> draft <output> final answer");
    EXPECT_EQ(two.passage, "final answer");

    EXPECT_EQ(parse_cot_output("<output> wrapped </output>").passage, "wrapped");
}

TEST(Scaffolding, CutAtMarker) {
    EXPECT_EQ(strip_scaffolding("  passage text \n\n### Preceding Context : more"), "passage text");
    EXPECT_EQ(strip_scaffolding("clean"), "clean");
}

TEST(Rewriter, IdentityNeverCallsEndpoint) {
    Rewriter r(nullptr, nullptr, ExampleSelector::fixed({}));
    const auto out = r.rewrite(Strategy::identity, "q1", "abc");
    EXPECT_EQ(out.final_text, "abc");
    EXPECT_TRUE(out.raw_generation.empty());
    EXPECT_EQ(r.endpoint_calls(), 0u);
}

TEST(Rewriter, GureReplacesQuery) {
    auto gen = std::make_shared<FixedGenerator>("P");
    Rewriter r(gen, nullptr, ExampleSelector::fixed({}));
    const auto out = r.rewrite(Strategy::gure, "q1", "abc");
    EXPECT_EQ(out.final_text, "P");
    EXPECT_EQ(out.raw_generation, "P");
    EXPECT_TRUE(gen->last_prompt.ends_with("### Legal Passage :"));
}

TEST(Rewriter, GureStripsEchoedScaffolding) {
    auto gen = std::make_shared<FixedGenerator>("P text\n### Preceding Context : abc");
    Rewriter r(gen, nullptr, ExampleSelector::fixed({}));
    const auto out = r.rewrite(Strategy::gure, "q1", "abc");
    EXPECT_EQ(out.final_text, "P text");
    EXPECT_EQ(out.final_text.find("### Preceding Context"), std::string::npos);
}

TEST(Rewriter, Q2dConcatenates) {
    auto gen = std::make_shared<FixedGenerator>("P");
    Rewriter r(gen, nullptr, ExampleSelector::fixed(three_examples()));
    EXPECT_EQ(r.rewrite(Strategy::q2d, "q1", "abc").final_text, "abc P");
}

TEST(Rewriter, CotUsesOutputTag) {
    auto gen = std::make_shared<FixedGenerator>("### Step1: think\n<output> the rule");
    Rewriter r(gen, nullptr, ExampleSelector::fixed(three_examples()));
    auto out = r.rewrite(Strategy::q2d_cot, "q1", "abc");
    EXPECT_EQ(out.final_text, "abc the rule");
    EXPECT_FALSE(out.parse_warning);

    auto untagged = std::make_shared<FixedGenerator>("plain guess");
    Rewriter r2(untagged, nullptr, ExampleSelector::fixed(three_examples()));
    out = r2.rewrite(Strategy::q2d_cot, "q1", "abc");
    EXPECT_EQ(out.final_text, "abc plain guess");
    EXPECT_TRUE(out.parse_warning);
}

TEST(Rewriter, MissingGeneratorIsAnError) {
    Rewriter r(nullptr, nullptr, ExampleSelector::fixed({}));
    EXPECT_THROW(r.rewrite(Strategy::gure, "q", "abc"), Error);
}

TEST(Rewriter, IdenticalKeysCallOnce) {
    auto gen = std::make_shared<FixedGenerator>("P");
    Rewriter r(gen, std::make_shared<RewriteCache>(), ExampleSelector::fixed({}));
    std::vector<QueryRecord> qs;
    for (int i = 0; i < 16; ++i) qs.push_back({"q" + std::to_string(i), "same context", "t", 0, {}});
    const auto batch = rewrite_all(r, Strategy::gure, qs, 8);
    EXPECT_EQ(gen->calls.load(), 1);
    EXPECT_EQ(r.endpoint_calls(), 1u);
    EXPECT_EQ(batch.rewrites.size(), 16u);
    EXPECT_EQ(batch.cache_hits, 15u);
    for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_EQ(batch.rewrites[i].qid, qs[i].qid);
}

TEST(Rewriter, DecodingParamsChangeKey) {
    const auto t = make_template(TemplateKind::gure).hash();
    DecodingParams a, b;
    b.temperature = 0.7;
    EXPECT_NE(rewrite_cache_key(Strategy::gure, t, "h", a), rewrite_cache_key(Strategy::gure, t, "h", b));
    EXPECT_NE(rewrite_cache_key(Strategy::gure, t, "h", a), rewrite_cache_key(Strategy::q2d, t, "h", a));
}

TEST(Cache, PersistsAndResumes) {
    const auto path = temp_path("cache.jsonl");
    {
        auto gen = std::make_shared<FixedGenerator>("P1");
        Rewriter r(gen, std::make_shared<RewriteCache>(path), ExampleSelector::fixed({}));
        r.rewrite(Strategy::gure, "a", "context a");
        r.rewrite(Strategy::gure, "b", "context b");
        EXPECT_EQ(gen->calls.load(), 2);
    }
    // simulate an interrupted append
    {
        std::ofstream out(path, std::ios::app | std::ios::binary);
        out << "{\"key\":\"half";
    }
    auto gen = std::make_shared<FixedGenerator>("P2");
    auto cache = std::make_shared<RewriteCache>(path);
    EXPECT_EQ(cache->size(), 2u);
    Rewriter r(gen, cache, ExampleSelector::fixed({}));
    auto out = r.rewrite(Strategy::gure, "a", "context a");
    EXPECT_TRUE(out.cache_hit);
    EXPECT_EQ(out.final_text, "P1");
    r.rewrite(Strategy::gure, "c", "context c");
    EXPECT_EQ(gen->calls.load(), 1);
    EXPECT_EQ(RewriteCache(path).size(), 3u);
}

TEST(Cache, CorruptMiddleLineIsAnError) {
    const auto path = temp_path("bad.jsonl");
    {
        std::ofstream out(path);
        out << "not json\n{\"key\":\"k\",\"strategy\":\"gure\",\"context_hash\":\"h\",\"raw\":\"r\",\"final\":\"f\"}\n";
    }
    EXPECT_THROW(RewriteCache{path}, FormatError);
}

TEST(Batch, LenientRecordsFailures) {
    Rewriter r(std::make_shared<FailingGenerator>(), nullptr, ExampleSelector::fixed({}));
    std::vector<QueryRecord> qs = {{"q1", "a", "t", 0, {}}, {"q2", "b", "t", 0, {}}};
    const auto batch = rewrite_all(r, Strategy::gure, qs, 2, true);
    EXPECT_TRUE(batch.rewrites.empty());
    ASSERT_EQ(batch.failures.size(), 2u);
    EXPECT_EQ(batch.failures[0].qid, "q1");
    EXPECT_THROW(rewrite_all(r, Strategy::gure, qs, 2, false), GenerationError);
}

TEST(Examples, FixedSampleIsSeeded) {
    const auto c = parse_passages_jsonl("{\"id\":\"a\",\"text\":\"A\"}\n{\"id\":\"b\",\"text\":\"B\"}\n");
    std::vector<QueryRecord> train;
    for (int i = 0; i < 10; ++i) train.push_back({"q" + std::to_string(i), "ctx " + std::to_string(i), "a", Handle(i % 2), {}});
    const auto a = sample_fixed_examples(train, c, 5);
    const auto b = sample_fixed_examples(train, c, 5);
    ASSERT_EQ(a.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(a[i].context, b[i].context);
    EXPECT_THROW(sample_fixed_examples({train[0]}, c, 5), Error);
}

TEST(Examples, NearestPicksLexicalNeighbours) {
    std::vector<PromptExample> pool = {{"apple orchard", "p0", "", ""},
                                       {"river bank loan", "p1", "", ""},
                                       {"bank loan default", "p2", "", ""},
                                       {"zebra", "p3", "", ""},
                                       {"loan", "p4", "", ""}};
    const auto sel = ExampleSelector::nearest(pool);
    const auto picked = sel.select("bank loan");
    ASSERT_EQ(picked.size(), 3u);
    std::set<std::string> got = {picked[0].passage, picked[1].passage, picked[2].passage};
    EXPECT_EQ(got, (std::set<std::string>{"p1", "p2", "p4"}));
    EXPECT_EQ(sel.select("nothing matches").size(), 3u);
}

TEST(Strategy, Names) {
    EXPECT_EQ(parse_strategy("q2d-cot"), Strategy::q2d_cot);
    EXPECT_EQ(strategy_name(Strategy::gure), "gure");
    EXPECT_THROW(parse_strategy("hyde"), ConfigError);
}

TEST(Retry, BackoffSchedule) {
    RetryPolicy p;
    EXPECT_EQ(p.backoff_before(1).count(), 0);
    EXPECT_EQ(p.backoff_before(2).count(), 500);
    EXPECT_EQ(p.backoff_before(3).count(), 1000);
    EXPECT_EQ(p.backoff_before(10).count(), 8000);
    EXPECT_TRUE(is_transient_status(429));
    EXPECT_TRUE(is_transient_status(503));
    EXPECT_FALSE(is_transient_status(400));
    EXPECT_FALSE(is_transient_status(401));
}

TEST(Decoding, DefaultsAndValidation) {
    DecodingParams d;
    EXPECT_EQ(d.temperature, 0.0);
    EXPECT_EQ(d.top_p, 0.9);
    d.top_p = 0.0;
    EXPECT_THROW(d.validate(), ConfigError);
}
