#pragma once

// Synthetic corpora for end-to-end tests.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace synth {

struct Corpus {
    std::vector<std::pair<std::string, std::string>> passages;  // id, text
    struct Query {
        std::string qid, context, target_id;
    };
    std::vector<Query> queries;
    /// context -> gold passage text, for oracle rewriters.
    std::map<std::string, std::string> gold_text;
};

inline std::string word(const char* prefix, std::size_t i) {
    static const char* syllables[] = {"ka", "lo", "mi", "ra", "tu", "ve", "so", "ne", "di", "pa", "gu", "ze"};
    std::string w = prefix;
    for (std::size_t x = i + 1; x > 0; x /= 12) w += syllables[x % 12];
    return w;
}

/// Passages are bags of canonical terms; every query paraphrases its target
/// by swapping each term for a synonym with probability `shift`.
inline Corpus vocabulary_shift(std::size_t n_passages, std::size_t queries_per_passage, double shift,
                               std::uint64_t seed, std::size_t vocab = 600, std::size_t length = 14) {
    std::mt19937_64 rng(seed);
    Corpus c;
    std::set<std::string> seen;
    std::vector<std::vector<std::size_t>> bags;
    while (c.passages.size() < n_passages) {
        std::vector<std::size_t> bag;
        std::string text;
        for (std::size_t i = 0; i < length; ++i) {
            bag.push_back(rng() % vocab);
            text += (i ? " " : "") + word("", bag.back());
        }
        if (!seen.insert(text).second) continue;
        c.passages.emplace_back("p" + std::to_string(c.passages.size()), text);
        bags.push_back(std::move(bag));
    }
    std::bernoulli_distribution swap(shift);
    for (std::size_t p = 0; p < n_passages; ++p) {
        for (std::size_t r = 0; r < queries_per_passage; ++r) {
            std::string ctx;
            for (std::size_t i = 0; i < bags[p].size(); ++i) {
                ctx += (i ? " " : "") + (swap(rng) ? word("syn", bags[p][i]) : word("", bags[p][i]));
            }
            ctx += " q" + std::to_string(c.queries.size());
            c.gold_text[ctx] = c.passages[p].second;
            c.queries.push_back({"q" + std::to_string(c.queries.size()), ctx, c.passages[p].first});
        }
    }
    return c;
}

/// Targets drawn from a Zipf(1) law over `n_passages` passages.
inline Corpus zipf(std::size_t n_passages, std::size_t n_queries, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Corpus c;
    for (std::size_t p = 0; p < n_passages; ++p) {
        std::string text;
        for (std::size_t i = 0; i < 10; ++i) text += (i ? " " : "") + word("", rng() % 300);
        c.passages.emplace_back("p" + std::to_string(p), text + " " + word("id", p));
    }
    std::vector<double> w;
    for (std::size_t i = 1; i <= n_passages; ++i) w.push_back(1.0 / static_cast<double>(i));
    std::discrete_distribution<std::size_t> target(w.begin(), w.end());
    std::bernoulli_distribution keep(0.6);
    for (std::size_t q = 0; q < n_queries; ++q) {
        const std::size_t t = target(rng);
        std::string ctx;
        std::size_t pos = 0;
        std::string token;
        const std::string& text = c.passages[t].second;
        for (std::size_t i = 0; i <= text.size(); ++i) {
            if (i == text.size() || text[i] == ' ') {
                if (keep(rng)) ctx += (pos++ ? " " : "") + token;
                token.clear();
            } else {
                token += text[i];
            }
        }
        ctx += (pos ? " " : "") + std::string("ctx") + std::to_string(q);
        c.gold_text[ctx] = text;
        c.queries.push_back({"q" + std::to_string(q), ctx, c.passages[t].first});
    }
    return c;
}

inline void write_jsonl(const Corpus& c, const std::filesystem::path& passages, const std::filesystem::path& queries) {
    std::filesystem::create_directories(passages.parent_path());
    std::ofstream p(passages, std::ios::binary);
    for (const auto& [id, text] : c.passages) p << nlohmann::json{{"id", id}, {"text", text}}.dump() << '\n';
    std::ofstream q(queries, std::ios::binary);
    for (const auto& r : c.queries) {
        q << nlohmann::json{{"qid", r.qid}, {"context", r.context}, {"target_id", r.target_id}}.dump() << '\n';
    }
}

/// Pulls the query context back out of a rendered prompt.
inline std::string context_from_prompt(const std::string& prompt) {
    const std::string open = "### Preceding Context : ";
    const std::string close = "\n\n### Legal Passage :";
    const auto end = prompt.rfind(close);
    const auto start = prompt.rfind(open, end);
    if (start == std::string::npos || end == std::string::npos) return {};
    return prompt.substr(start + open.size(), end - start - open.size());
}

}  // namespace synth
