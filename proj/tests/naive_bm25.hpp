#pragma once

// Straight-from-the-formula BM25 over raw token lists. Shares no code with
// the index so the two can be compared.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace naive {

inline double bm25(const std::vector<std::vector<std::string>>& docs, const std::vector<std::string>& query,
                   std::size_t doc, double k1 = 1.5, double b = 0.75) {
    const double n = static_cast<double>(docs.size());
    double total_len = 0.0;
    for (const auto& d : docs) total_len += static_cast<double>(d.size());
    const double avgdl = total_len / n;
    double score = 0.0;
    for (const auto& term : query) {
        double df = 0.0;
        for (const auto& d : docs) df += std::find(d.begin(), d.end(), term) != d.end() ? 1.0 : 0.0;
        if (df == 0.0) continue;
        const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), term));
        if (tf == 0.0) continue;
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const double len = static_cast<double>(docs[doc].size());
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
    }
    return score;
}

struct Hit {
    std::uint32_t handle;
    double score;
};

/// Scores every document, sorts them all, keeps the positive top k.
inline std::vector<Hit> exhaustive_top_k(const std::vector<double>& scores, std::size_t k) {
    std::vector<Hit> all;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > 0.0) all.push_back({static_cast<std::uint32_t>(i), scores[i]});
    }
    std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
        return a.score != b.score ? a.score > b.score : a.handle < b.handle;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

}  // namespace naive
