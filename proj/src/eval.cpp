#include "lpr/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "lpr/error.hpp"
#include "lpr/random.hpp"

namespace lpr {

using ordered_json = nlohmann::ordered_json;

namespace {

const std::vector<Handle>& acceptable_for(const Qrels& qrels, const std::string& qid) {
    auto it = qrels.find(qid);
    if (it == qrels.end()) throw Error("no gold passage for qid '" + qid + "'");
    return it->second;
}

double mean_of(const std::vector<double>& values) {
    if (values.empty()) throw Error("metric over an empty run");
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

double sample_stdev(const std::vector<double>& values, double mean) {
    if (values.size() < 2) return 0.0;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::string format_g(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

bool has_space(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

using NgramCounts = std::unordered_map<std::string, std::uint64_t>;

NgramCounts count_ngrams(const TokenSeq& tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (std::size_t j = 1; j < n; ++j) {
            key += '\x1f';
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

Qrels make_qrels(const std::vector<QueryRecord>& queries, const PassageCollection& collection, bool text_match) {
    std::unordered_map<std::string_view, std::vector<Handle>> by_text;
    if (text_match) {
        for (Handle h = 0; h < collection.size(); ++h) by_text[collection[h].text].push_back(h);
    }
    Qrels qrels;
    for (const auto& q : queries) {
        if (text_match) {
            qrels[q.qid] = by_text.at(collection.at(q.target).text);
        } else {
            qrels[q.qid] = {q.target};
        }
    }
    return qrels;
}

std::optional<std::size_t> gold_rank(const RankedList& list, const std::vector<Handle>& acceptable) {
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
        if (std::find(acceptable.begin(), acceptable.end(), list.entries[i].handle) != acceptable.end()) return i + 1;
    }
    return std::nullopt;
}

std::vector<double> per_query_recall(const RetrievalRun& run, const Qrels& qrels, std::size_t k) {
    std::vector<double> out;
    out.reserve(run.lists.size());
    for (const auto& [qid, list] : run.lists) {
        auto rank = gold_rank(list, acceptable_for(qrels, qid));
        out.push_back(rank && *rank <= k ? 1.0 : 0.0);
    }
    return out;
}

std::vector<double> per_query_ndcg(const RetrievalRun& run, const Qrels& qrels, std::size_t k) {
    std::vector<double> out;
    out.reserve(run.lists.size());
    for (const auto& [qid, list] : run.lists) {
        auto rank = gold_rank(list, acceptable_for(qrels, qid));
        out.push_back(rank && *rank <= k ? 1.0 / std::log2(static_cast<double>(*rank) + 1.0) : 0.0);
    }
    return out;
}

double recall_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t k) {
    return mean_of(per_query_recall(run, qrels, k));
}

double ndcg_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t k) {
    return mean_of(per_query_ndcg(run, qrels, k));
}

TrialMetrics evaluate_trial(const RetrievalRun& run, const Qrels& qrels) {
    TrialMetrics m;
    m.recall_at_1 = recall_at_k(run, qrels, 1);
    m.recall_at_10 = recall_at_k(run, qrels, 10);
    m.ndcg_at_10 = ndcg_at_k(run, qrels, 10);
    m.n_queries = run.lists.size();
    return m;
}

MetricReport aggregate(std::string run_name, std::vector<TrialMetrics> per_trial) {
    if (per_trial.empty()) throw Error("aggregate: no trials");
    MetricReport report;
    report.run_name = std::move(run_name);
    report.per_trial = std::move(per_trial);

    auto column = [&](double TrialMetrics::*field) {
        std::vector<double> v;
        for (const auto& t : report.per_trial) v.push_back(t.*field);
        return v;
    };
    const auto r1 = column(&TrialMetrics::recall_at_1);
    const auto r10 = column(&TrialMetrics::recall_at_10);
    const auto nd = column(&TrialMetrics::ndcg_at_10);
    report.mean = {mean_of(r1), mean_of(r10), mean_of(nd)};
    report.stdev = {sample_stdev(r1, report.mean.recall_at_1), sample_stdev(r10, report.mean.recall_at_10),
                    sample_stdev(nd, report.mean.ndcg_at_10)};
    return report;
}

std::string MetricReport::to_json() const {
    auto summary = [](const MetricSummary& s) {
        ordered_json o = ordered_json::object();
        o["recall_at_1"] = s.recall_at_1;
        o["recall_at_10"] = s.recall_at_10;
        o["ndcg_at_10"] = s.ndcg_at_10;
        return o;
    };
    ordered_json obj = ordered_json::object();
    obj["run_name"] = run_name;
    obj["config_hash"] = config_hash;
    obj["seed"] = seed;
    obj["per_trial"] = ordered_json::array();
    for (const auto& t : per_trial) {
        ordered_json o = ordered_json::object();
        o["recall_at_1"] = t.recall_at_1;
        o["recall_at_10"] = t.recall_at_10;
        o["ndcg_at_10"] = t.ndcg_at_10;
        o["n_queries"] = t.n_queries;
        obj["per_trial"].push_back(std::move(o));
    }
    obj["mean"] = summary(mean);
    obj["stdev"] = summary(stdev);
    if (generation) {
        ordered_json g = ordered_json::object();
        g["bleu"] = generation->bleu;
        g["rouge_l_f"] = generation->rouge_l_f;
        g["mean_words"] = generation->mean_words;
        obj["generation"] = std::move(g);
    }
    return obj.dump(2) + "\n";
}

std::string MetricReport::to_text() const {
    char line[256];
    std::string out = "# config_hash " + config_hash + "  seed " + std::to_string(seed) + "  trials " +
                      std::to_string(per_trial.size()) + "\n";
    std::snprintf(line, sizeof(line), "%-28s %14s %14s %14s\n", "Method", "R@1", "R@10", "nDCG@10");
    out += line;
    auto cell = [](double m, double s) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", 100.0 * m, 100.0 * s);
        return std::string(buf);
    };
    std::snprintf(line, sizeof(line), "%-28s %14s %14s %14s\n", run_name.c_str(),
                  cell(mean.recall_at_1, stdev.recall_at_1).c_str(), cell(mean.recall_at_10, stdev.recall_at_10).c_str(),
                  cell(mean.ndcg_at_10, stdev.ndcg_at_10).c_str());
    out += line;
    if (generation) {
        std::snprintf(line, sizeof(line), "%-28s BLEU %.4f  ROUGE-L %.4f  Words %.2f\n", "", generation->bleu,
                      generation->rouge_l_f, generation->mean_words);
        out += line;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling and stratification
// ---------------------------------------------------------------------------

std::vector<std::vector<QueryRecord>> sample_trials(const std::vector<QueryRecord>& pool, std::size_t n,
                                                    std::size_t trials, std::uint64_t seed, SamplingMode mode) {
    if (pool.empty()) throw Error("sample_trials: empty test pool");
    if (mode == SamplingMode::without_replacement && n > pool.size()) {
        throw Error("sample_trials: cannot draw " + std::to_string(n) + " queries without replacement from a pool of " +
                    std::to_string(pool.size()));
    }
    std::vector<std::vector<QueryRecord>> out;
    out.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        std::mt19937_64 rng(stream_seed(seed, 1000 + t));
        std::vector<QueryRecord> subset;
        subset.reserve(n);
        if (mode == SamplingMode::without_replacement) {
            std::vector<std::size_t> idx(pool.size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            // Partial Fisher-Yates: the first n slots are a uniform n-permutation.
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = i + uniform_below(rng, pool.size() - i);
                std::swap(idx[i], idx[j]);
                subset.push_back(pool[idx[i]]);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) subset.push_back(pool[uniform_below(rng, pool.size())]);
        }
        out.push_back(std::move(subset));
    }
    return out;
}

std::vector<QueryRecord> stratify_by_frequency(const std::vector<QueryRecord>& pool, const FrequencyTable& train_freq,
                                               double x_percent) {
    if (pool.empty()) throw Error("stratify_by_frequency: empty pool");
    if (!(x_percent > 0.0 && x_percent <= 100.0)) throw ConfigError("frequency threshold must lie in (0, 100]");

    std::set<Handle> distinct;
    for (const auto& q : pool) distinct.insert(q.target);
    std::vector<std::pair<Handle, std::uint64_t>> ranked;
    ranked.reserve(distinct.size());
    for (Handle h : distinct) ranked.emplace_back(h, train_freq.count(h));
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    auto take = static_cast<std::size_t>(std::ceil(x_percent / 100.0 * static_cast<double>(ranked.size()) - 1e-9));
    take = std::clamp<std::size_t>(take, 1, ranked.size());
    std::set<Handle> keep;
    for (std::size_t i = 0; i < take; ++i) keep.insert(ranked[i].first);

    std::vector<QueryRecord> out;
    for (const auto& q : pool) {
        if (keep.count(q.target)) out.push_back(q);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Significance
// ---------------------------------------------------------------------------

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("paired_t_test: samples differ in length");
    if (a.size() < 2) throw Error("paired_t_test: need at least two pairs");

    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double var = ss / static_cast<double>(n - 1);

    TTestResult r;
    r.n = n;
    if (var == 0.0) {
        r.degenerate = true;
        if (mean == 0.0) {
            r.t_statistic = 0.0;
            r.p_value = 1.0;
        } else {
            r.t_statistic = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            r.p_value = 0.0;
        }
    } else {
        r.t_statistic = mean / std::sqrt(var / static_cast<double>(n));
        const boost::math::students_t_distribution<double> dist(static_cast<double>(n - 1));
        r.p_value = std::clamp(2.0 * boost::math::cdf(dist, -std::abs(r.t_statistic)), 0.0, 1.0);
    }
    r.significant_at_01 = r.p_value < 0.01;
    return r;
}

// ---------------------------------------------------------------------------
// Generation similarity
// ---------------------------------------------------------------------------

BleuBreakdown bleu_breakdown(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    if (candidates.size() != references.size()) throw Error("bleu: candidate and reference counts differ");
    if (candidates.empty()) throw Error("bleu: empty corpus");

    BleuBreakdown out;
    std::array<std::uint64_t, 4> ref_totals{};
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto cand = tokenize(candidates[i]);
        const auto ref = tokenize(references[i]);
        out.candidate_length += cand.size();
        out.reference_length += ref.size();
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto c = count_ngrams(cand, n);
            const auto r = count_ngrams(ref, n);
            for (const auto& [gram, count] : c) {
                auto it = r.find(gram);
                if (it != r.end()) out.matches[n - 1] += std::min(count, it->second);
            }
            out.totals[n - 1] += cand.size() >= n ? cand.size() - n + 1 : 0;
            ref_totals[n - 1] += ref.size() >= n ? ref.size() - n + 1 : 0;
        }
    }

    if (out.candidate_length == 0) {
        out.brevity_penalty = out.reference_length == 0 ? 1.0 : 0.0;
        out.score = out.brevity_penalty;
        return out;
    }

    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        double p;
        if (out.totals[n] == 0) {
            p = ref_totals[n] == 0 ? 1.0 : kBleuEpsilon;
        } else if (out.matches[n] == 0) {
            p = kBleuEpsilon / static_cast<double>(out.totals[n]);
        } else {
            p = static_cast<double>(out.matches[n]) / static_cast<double>(out.totals[n]);
        }
        out.precisions[n] = p;
        log_sum += 0.25 * std::log(p);
    }
    const auto c = static_cast<double>(out.candidate_length);
    const auto r = static_cast<double>(out.reference_length);
    out.brevity_penalty = c < r ? std::exp(1.0 - r / c) : 1.0;
    out.score = out.brevity_penalty * std::exp(log_sum);
    return out;
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    return bleu_breakdown(candidates, references).score;
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    RougeScore s;
    if (cand.empty() || ref.empty()) return s;
    const auto lcs = static_cast<double>(lcs_length(cand, ref));
    s.precision = lcs / static_cast<double>(cand.size());
    s.recall = lcs / static_cast<double>(ref.size());
    if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

double mean_words(const std::vector<std::string>& texts) {
    if (texts.empty()) throw Error("mean_words: empty list");
    std::size_t total = 0;
    for (const auto& t : texts) total += split_ws(t).size();
    return static_cast<double>(total) / static_cast<double>(texts.size());
}

GenerationMetrics generation_metrics(const std::vector<std::string>& candidates,
                                     const std::vector<std::string>& references) {
    GenerationMetrics g;
    g.bleu = bleu(candidates, references);
    double f = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) f += rouge_l(candidates[i], references[i]).f1;
    g.rouge_l_f = f / static_cast<double>(candidates.size());
    g.mean_words = mean_words(candidates);
    return g;
}

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

void write_trec_run(std::ostream& out, const RetrievalRun& run, const PassageCollection& collection) {
    const std::string name = run.name.empty() ? "run" : run.name;
    if (has_space(name)) throw Error("run name must not contain whitespace: '" + name + "'");
    for (const auto& [qid, list] : run.lists) {
        if (has_space(qid)) throw Error("qid must not contain whitespace for TREC output: '" + qid + "'");
        for (std::size_t i = 0; i < list.entries.size(); ++i) {
            const auto& id = collection.at(list.entries[i].handle).id;
            if (has_space(id)) throw Error("passage id must not contain whitespace for TREC output: '" + id + "'");
            out << qid << " Q0 " << id << ' ' << (i + 1) << ' ' << format_g(list.entries[i].score, 10) << ' ' << name
                << '\n';
        }
    }
}

std::string trec_run_text(const RetrievalRun& run, const PassageCollection& collection) {
    std::ostringstream ss;
    write_trec_run(ss, run, collection);
    return ss.str();
}

RetrievalRun parse_trec_run(std::string_view content, const PassageCollection& collection) {
    RetrievalRun run;
    std::map<std::string, std::vector<std::pair<std::size_t, ScoredPassage>>> ranked;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto end = content.find('\n', pos);
        if (end == std::string_view::npos) end = content.size();
        const auto line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        const auto f = split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 6) {
            throw FormatError("run file line " + std::to_string(line_no) + ": expected 6 columns", line_no);
        }
        auto handle = collection.find(f[2]);
        if (!handle) {
            throw FormatError("run file line " + std::to_string(line_no) + ": unknown passage id '" + std::string(f[2]) + "'",
                              line_no);
        }
        std::size_t rank = 0;
        double score = 0.0;
        try {
            rank = std::stoul(std::string(f[3]));
            score = std::stod(std::string(f[4]));
        } catch (const std::exception&) {
            throw FormatError("run file line " + std::to_string(line_no) + ": bad rank or score", line_no);
        }
        if (run.name.empty()) run.name = std::string(f[5]);
        ranked[std::string(f[0])].push_back({rank, {*handle, score}});
    }
    for (auto& [qid, entries] : ranked) {
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        RankedList list;
        list.qid = qid;
        for (auto& e : entries) list.entries.push_back(e.second);
        run.lists.emplace(qid, std::move(list));
    }
    return run;
}

RetrievalRun read_trec_run(const std::filesystem::path& path, const PassageCollection& collection) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open run file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_trec_run(ss.str(), collection);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.location());
    }
}

// ---------------------------------------------------------------------------
// Frequency analysis
// ---------------------------------------------------------------------------

std::vector<FrequencyRow> frequency_analysis(const std::vector<RetrievalRun>& trial_runs,
                                             const std::vector<QueryRecord>& queries, const FrequencyTable& train_freq,
                                             const Qrels& qrels, const std::vector<double>& thresholds) {
    if (trial_runs.empty()) throw Error("frequency_analysis: no runs");
    std::unordered_map<std::string, const QueryRecord*> by_qid;
    for (const auto& q : queries) by_qid.emplace(q.qid, &q);

    std::vector<std::vector<QueryRecord>> pools;
    for (const auto& run : trial_runs) {
        std::vector<QueryRecord> pool;
        for (const auto& [qid, _] : run.lists) {
            auto it = by_qid.find(qid);
            if (it == by_qid.end()) throw Error("frequency_analysis: run mentions unknown qid '" + qid + "'");
            pool.push_back(*it->second);
        }
        pools.push_back(std::move(pool));
    }

    std::vector<FrequencyRow> rows;
    for (double x : thresholds) {
        std::vector<TrialMetrics> per_trial;
        std::set<Handle> unique_targets;
        for (std::size_t t = 0; t < trial_runs.size(); ++t) {
            const auto subset = stratify_by_frequency(pools[t], train_freq, x);
            RetrievalRun restricted;
            restricted.name = trial_runs[t].name;
            for (const auto& q : subset) {
                restricted.lists.emplace(q.qid, trial_runs[t].lists.at(q.qid));
                unique_targets.insert(q.target);
            }
            per_trial.push_back(evaluate_trial(restricted, qrels));
        }
        const auto summary = aggregate(trial_runs.front().name, std::move(per_trial));
        rows.push_back({x, summary.mean.recall_at_1, summary.mean.recall_at_10, summary.mean.ndcg_at_10,
                        unique_targets.size()});
    }
    return rows;
}

std::string frequency_rows_csv(const std::vector<FrequencyRow>& rows, std::string_view config_hash) {
    std::string out = "# config_hash=" + std::string(config_hash) + "\n";
    out += "x_percent,recall_at_1,recall_at_10,ndcg_at_10,n_unique_targets\n";
    for (const auto& r : rows) {
        out += format_g(r.x_percent, 10) + "," + format_g(r.recall_at_1, 17) + "," + format_g(r.recall_at_10, 17) + "," +
               format_g(r.ndcg_at_10, 17) + "," + std::to_string(r.n_unique_targets) + "\n";
    }
    return out;
}

}  // namespace lpr
