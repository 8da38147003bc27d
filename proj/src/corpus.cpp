#include "lpr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "lpr/error.hpp"
#include "lpr/random.hpp"
#include "lpr/textproc.hpp"

namespace lpr {

using ordered_json = nlohmann::ordered_json;

namespace {

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Calls fn(line, line_number) for each '\n'-separated line.
template <typename Fn>
void for_each_line(std::string_view content, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        std::size_t end = content.find('\n', pos);
        if (end == std::string_view::npos) end = content.size();
        ++line_no;
        fn(content.substr(pos, end - pos), line_no);
        pos = end + 1;
    }
}

void require_utf8(std::string_view text, std::size_t line) {
    std::size_t bad = 0;
    if (!valid_utf8(text, &bad)) {
        throw FormatError("line " + std::to_string(line) + ": malformed UTF-8 at byte " +
                              std::to_string(bad),
                          line);
    }
}

/// Scalar JSON value as text; numeric ids are kept in their JSON spelling.
std::string scalar_text(const ordered_json& v, std::string_view field, std::size_t line) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer() || v.is_number_unsigned() || v.is_number_float()) return v.dump();
    throw FormatError("line " + std::to_string(line) + ": field '" + std::string(field) +
                          "' must be a string or number",
                      line);
}

/// One parsed record: named fields plus pass-through metadata.
struct RawRecord {
    std::size_t line = 0;
    std::unordered_map<std::string, std::string> fields;
    std::string meta;
};

std::vector<RawRecord> read_jsonl_records(std::string_view content,
                                          const std::vector<std::string>& wanted) {
    std::vector<RawRecord> records;
    for_each_line(content, [&](std::string_view line, std::size_t line_no) {
        if (is_blank(line)) return;
        require_utf8(line, line_no);
        ordered_json obj;
        try {
            obj = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what(),
                              line_no);
        }
        if (!obj.is_object()) {
            throw FormatError("line " + std::to_string(line_no) + ": expected a JSON object", line_no);
        }
        RawRecord rec;
        rec.line = line_no;
        for (const auto& name : wanted) {
            auto it = obj.find(name);
            if (it == obj.end() || it->is_null()) {
                throw FormatError("line " + std::to_string(line_no) + ": missing field '" + name + "'",
                                  line_no);
            }
            rec.fields[name] = scalar_text(*it, name, line_no);
        }
        ordered_json meta = ordered_json::object();
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (std::find(wanted.begin(), wanted.end(), it.key()) == wanted.end()) {
                meta[it.key()] = it.value();
            }
        }
        if (!meta.empty()) rec.meta = meta.dump();
        records.push_back(std::move(rec));
    });
    return records;
}

// RFC 4180 reader: quoted fields may contain delimiters, doubled quotes and
// newlines. Returns rows with the 1-based line each row starts on.
std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv_rows(std::string_view content,
                                                                           char delim) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t line = 1;
    std::size_t row_line = 1;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        bool all_empty = row.size() == 1 && row[0].empty();
        if (!all_empty) rows.emplace_back(row_line, std::move(row));
        row.clear();
    };

    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == delim) {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_row();
            ++line;
            row_line = line;
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) throw FormatError("line " + std::to_string(row_line) + ": unterminated quoted field", row_line);
    if (field_started || !field.empty() || !row.empty()) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        end_row();
    }
    return rows;
}

std::vector<RawRecord> read_csv_records(std::string_view content, char delim,
                                        const std::vector<std::string>& wanted) {
    std::size_t bad = 0;
    if (!valid_utf8(content, &bad)) {
        throw FormatError("malformed UTF-8 at byte " + std::to_string(bad));
    }
    auto rows = parse_csv_rows(content, delim);
    if (rows.empty()) return {};
    const auto& header = rows.front().second;
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
    for (const auto& name : wanted) {
        if (!column.count(name)) throw FormatError("line 1: missing column '" + name + "'", 1);
    }

    std::vector<RawRecord> records;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& [line_no, cells] = rows[r];
        RawRecord rec;
        rec.line = line_no;
        for (const auto& name : wanted) {
            std::size_t idx = column[name];
            if (idx >= cells.size()) {
                throw FormatError("line " + std::to_string(line_no) + ": missing field '" + name + "'",
                                  line_no);
            }
            rec.fields[name] = cells[idx];
        }
        ordered_json meta = ordered_json::object();
        for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) {
            if (std::find(wanted.begin(), wanted.end(), header[i]) == wanted.end()) {
                meta[header[i]] = cells[i];
            }
        }
        if (!meta.empty()) rec.meta = meta.dump();
        records.push_back(std::move(rec));
    }
    return records;
}

PassageCollection passages_from_records(std::vector<RawRecord> records, const FieldNames& fields) {
    std::vector<Passage> passages;
    passages.reserve(records.size());
    std::unordered_map<std::string, std::size_t> first_line;
    for (auto& rec : records) {
        Passage p;
        p.id = std::move(rec.fields[fields.id]);
        p.text = std::move(rec.fields[fields.text]);
        p.meta = std::move(rec.meta);
        auto [it, inserted] = first_line.emplace(p.id, rec.line);
        if (!inserted) {
            throw FormatError("line " + std::to_string(rec.line) + ": duplicate passage id '" + p.id +
                                  "' (first seen on line " + std::to_string(it->second) + ")",
                              rec.line);
        }
        if (is_blank(p.text)) {
            throw FormatError("line " + std::to_string(rec.line) + ": passage '" + p.id + "' has empty text",
                              rec.line);
        }
        passages.push_back(std::move(p));
    }
    return PassageCollection(std::move(passages));
}

QueryLoadResult queries_from_records(std::vector<RawRecord> records, const PassageCollection& collection,
                                     TargetPolicy policy, const FieldNames& fields) {
    QueryLoadResult result;
    std::unordered_map<std::string, std::size_t> seen;
    for (auto& rec : records) {
        QueryRecord q;
        q.qid = std::move(rec.fields[fields.qid]);
        q.context = std::move(rec.fields[fields.context]);
        q.target_id = std::move(rec.fields[fields.target_id]);
        q.meta = std::move(rec.meta);
        auto [it, inserted] = seen.emplace(q.qid, rec.line);
        if (!inserted) {
            throw FormatError("line " + std::to_string(rec.line) + ": duplicate qid '" + q.qid + "'", rec.line);
        }
        if (is_blank(q.context)) {
            throw FormatError("line " + std::to_string(rec.line) + ": query '" + q.qid + "' has empty context",
                              rec.line);
        }
        auto h = collection.find(q.target_id);
        if (!h) {
            result.skipped.push_back({q.qid, q.target_id, rec.line});
            continue;
        }
        q.target = *h;
        result.queries.push_back(std::move(q));
    }
    if (policy == TargetPolicy::strict && !result.skipped.empty()) {
        std::string msg = "unresolvable target passage for " + std::to_string(result.skipped.size()) +
                          " quer" + (result.skipped.size() == 1 ? "y" : "ies") + ":";
        for (const auto& s : result.skipped) msg += " " + s.qid + " (target '" + s.target_id + "')";
        throw FormatError(msg, result.skipped.front().line);
    }
    return result;
}

}  // namespace

PassageCollection::PassageCollection(std::vector<Passage> passages) : passages_(std::move(passages)) {
    if (passages_.size() > std::numeric_limits<Handle>::max()) throw Error("collection too large");
    id_index_.reserve(passages_.size());
    for (std::size_t i = 0; i < passages_.size(); ++i) {
        const auto& p = passages_[i];
        if (!id_index_.emplace(p.id, static_cast<Handle>(i)).second) {
            throw FormatError("duplicate passage id '" + p.id + "'", i + 1);
        }
        if (is_blank(p.text)) throw FormatError("passage '" + p.id + "' has empty text", i + 1);
    }
}

const Passage& PassageCollection::at(Handle h) const {
    if (h >= passages_.size()) throw Error("passage handle " + std::to_string(h) + " out of range");
    return passages_[h];
}

std::optional<Handle> PassageCollection::find(std::string_view id) const {
    auto it = id_index_.find(std::string(id));
    if (it == id_index_.end()) return std::nullopt;
    return it->second;
}

Handle PassageCollection::handle_of(std::string_view id) const {
    auto h = find(id);
    if (!h) throw Error("unknown passage id '" + std::string(id) + "'");
    return *h;
}

InputFormat parse_input_format(std::string_view name) {
    if (name == "jsonl" || name == "json") return InputFormat::jsonl;
    if (name == "csv" || name == "tsv") return InputFormat::csv;
    throw ConfigError("unknown input format '" + std::string(name) + "'");
}

InputFormat infer_input_format(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return (ext == ".csv" || ext == ".tsv") ? InputFormat::csv : InputFormat::jsonl;
}

PassageCollection parse_passages_jsonl(std::string_view content, const FieldNames& fields) {
    return passages_from_records(read_jsonl_records(content, {fields.id, fields.text}), fields);
}

PassageCollection parse_passages_csv(std::string_view content, const LoadOptions& options) {
    const auto& f = options.fields;
    return passages_from_records(read_csv_records(content, options.csv_delimiter, {f.id, f.text}), f);
}

PassageCollection load_passages(const std::filesystem::path& path, const LoadOptions& options) {
    const std::string content = read_all(path);
    try {
        return options.format == InputFormat::csv ? parse_passages_csv(content, options)
                                                  : parse_passages_jsonl(content, options.fields);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.location());
    }
}

std::string passages_to_jsonl(const PassageCollection& collection) {
    std::string out;
    for (const auto& p : collection.passages()) {
        ordered_json obj = ordered_json::object();
        obj["id"] = p.id;
        obj["text"] = p.text;
        if (!p.meta.empty()) {
            const auto meta = ordered_json::parse(p.meta);
            for (const auto& [k, v] : meta.items()) obj[k] = v;
        }
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void save_passages(const std::filesystem::path& path, const PassageCollection& collection) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << passages_to_jsonl(collection);
}

QueryLoadResult parse_queries_jsonl(std::string_view content, const PassageCollection& collection,
                                    TargetPolicy policy, const FieldNames& fields) {
    auto records = read_jsonl_records(content, {fields.qid, fields.context, fields.target_id});
    return queries_from_records(std::move(records), collection, policy, fields);
}

QueryLoadResult parse_queries_csv(std::string_view content, const PassageCollection& collection,
                                  TargetPolicy policy, const LoadOptions& options) {
    const auto& f = options.fields;
    auto records = read_csv_records(content, options.csv_delimiter, {f.qid, f.context, f.target_id});
    return queries_from_records(std::move(records), collection, policy, f);
}

QueryLoadResult load_queries(const std::filesystem::path& path, const PassageCollection& collection,
                             TargetPolicy policy, const LoadOptions& options) {
    const std::string content = read_all(path);
    try {
        return options.format == InputFormat::csv
                   ? parse_queries_csv(content, collection, policy, options)
                   : parse_queries_jsonl(content, collection, policy, options.fields);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.location());
    }
}

std::string queries_to_jsonl(const std::vector<QueryRecord>& queries) {
    std::string out;
    for (const auto& q : queries) {
        ordered_json obj = ordered_json::object();
        obj["qid"] = q.qid;
        obj["context"] = q.context;
        obj["target_id"] = q.target_id;
        if (!q.meta.empty()) {
            const auto meta = ordered_json::parse(q.meta);
            for (const auto& [k, v] : meta.items()) obj[k] = v;
        }
        out += obj.dump();
        out += '\n';
    }
    return out;
}

QuerySplit split_queries(const std::vector<QueryRecord>& queries, double train_fraction,
                         std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction must lie strictly between 0 and 1");
    }
    if (queries.empty()) throw Error("split_queries: no queries to split");

    const std::size_t n = queries.size();
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(stream_seed(seed, 0));
    fisher_yates(order, rng);

    std::vector<bool> in_train(n, false);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

    QuerySplit split;
    split.train.reserve(n_train);
    split.test.reserve(n - n_train);
    for (std::size_t i = 0; i < n; ++i) (in_train[i] ? split.train : split.test).push_back(queries[i]);
    return split;
}

std::uint64_t FrequencyTable::count(Handle h) const {
    auto it = counts.find(h);
    return it == counts.end() ? 0 : it->second;
}

FrequencyTable citation_frequency(const std::vector<QueryRecord>& queries) {
    FrequencyTable table;
    for (const auto& q : queries) ++table.counts[q.target];
    table.total = queries.size();
    return table;
}

double top_share(const FrequencyTable& table, double fraction) {
    if (table.counts.empty() || table.total == 0) throw Error("top_share: empty frequency table");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("top_share: fraction must lie in (0, 1]");

    std::vector<std::pair<Handle, std::uint64_t>> ranked(table.counts.begin(), table.counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    const auto distinct = static_cast<double>(ranked.size());
    auto take = static_cast<std::size_t>(std::ceil(fraction * distinct - 1e-9));
    take = std::clamp<std::size_t>(take, 1, ranked.size());

    std::uint64_t mass = 0;
    for (std::size_t i = 0; i < take; ++i) mass += ranked[i].second;
    return static_cast<double>(mass) / static_cast<double>(table.total);
}

CorpusStats corpus_stats(const PassageCollection& collection, const std::vector<QueryRecord>& queries) {
    CorpusStats stats;
    stats.n_passages = collection.size();
    stats.n_queries = queries.size();
    if (!queries.empty()) stats.top_1pct_share = top_share(citation_frequency(queries), 0.01);
    return stats;
}

std::string corpus_stats_json(const CorpusStats& stats) {
    ordered_json obj = ordered_json::object();
    obj["n_passages"] = stats.n_passages;
    obj["n_queries"] = stats.n_queries;
    obj["top_1pct_share"] = stats.top_1pct_share ? ordered_json(*stats.top_1pct_share) : ordered_json();
    return obj.dump();
}

}  // namespace lpr
