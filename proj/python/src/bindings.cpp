#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lpr/corpus.hpp"
#include "lpr/dense.hpp"
#include "lpr/eval.hpp"
#include "lpr/pipeline.hpp"
#include "lpr/rewrite.hpp"
#include "lpr/sparse.hpp"
#include "lpr/textproc.hpp"

namespace py = pybind11;
using namespace lpr;

namespace {

/// BM25 index bundled with the collection it was built from, so hits come back as ids.
struct PyIndex {
    PassageCollection collection;
    SparseIndex index;
    TokenizerOptions tokenizer;

    std::vector<std::pair<std::string, double>> search(const std::string& query, std::size_t k) const {
        const auto ranked = index.search(tokenize(query, tokenizer), k);
        std::vector<std::pair<std::string, double>> out;
        for (const auto& e : ranked.entries) out.emplace_back(collection[e.handle].id, e.score);
        return out;
    }
};

PassageCollection collection_from(const std::vector<std::pair<std::string, std::string>>& passages) {
    std::vector<Passage> ps;
    ps.reserve(passages.size());
    for (const auto& [id, text] : passages) ps.push_back({id, text, {}});
    return PassageCollection(std::move(ps));
}

py::dict summary_dict(const MetricSummary& m) {
    py::dict d;
    d["recall_at_1"] = m.recall_at_1;
    d["recall_at_10"] = m.recall_at_10;
    d["ndcg_at_10"] = m.ndcg_at_10;
    return d;
}

ExperimentConfig make_config(const std::optional<std::filesystem::path>& config_file,
                             const std::map<std::string, std::string>& overrides) {
    ExperimentConfig cfg = config_file ? load_config_file(*config_file) : ExperimentConfig{};
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Legal passage retrieval experiment engine";

    py::register_exception<Error>(m, "Error");
    py::register_exception<FormatError>(m, "FormatError", m.attr("Error"));
    py::register_exception<ConfigError>(m, "ConfigError", m.attr("Error"));
    py::register_exception<IoError>(m, "IoError", m.attr("Error"));

    m.def(
        "tokenize",
        [](const std::string& text, bool stem, bool stopwords) { return tokenize(text, {stem, stopwords}); },
        py::arg("text"), py::arg("stem") = false, py::arg("stopwords") = false);
    m.def("porter_stem", [](const std::string& w) { return porter_stem(w); });

    py::class_<PyIndex>(m, "Bm25Index")
        .def(py::init([](const std::vector<std::pair<std::string, std::string>>& passages, double k1, double b,
                         bool stem, bool stopwords) {
                 auto collection = collection_from(passages);
                 const TokenizerOptions tok{stem, stopwords};
                 auto index = build_index(collection, BM25Params{k1, b}, tok);
                 return PyIndex{std::move(collection), std::move(index), tok};
             }),
             py::arg("passages"), py::arg("k1") = 1.5, py::arg("b") = 0.75, py::arg("stem") = false,
             py::arg("stopwords") = false)
        .def("search", &PyIndex::search, py::arg("query"), py::arg("k") = 10)
        .def("score",
             [](const PyIndex& self, const std::string& query, const std::string& id) {
                 return self.index.score(tokenize(query, self.tokenizer), self.collection.handle_of(id));
             })
        .def("idf", [](const PyIndex& self, const std::string& term) { return self.index.idf(term); })
        .def("save", [](const PyIndex& self, const std::filesystem::path& p) { self.index.save(p); })
        .def_property_readonly("n_docs", [](const PyIndex& self) { return self.index.n_docs(); })
        .def_property_readonly("n_terms", [](const PyIndex& self) { return self.index.n_terms(); });

    m.def(
        "read_embeddings",
        [](const std::filesystem::path& path) {
            auto f = read_embedding_file(path);
            py::array_t<float> arr({static_cast<py::ssize_t>(f.n), static_cast<py::ssize_t>(f.dim)});
            std::copy(f.values.begin(), f.values.end(), arr.mutable_data());
            return py::make_tuple(arr, f.normalized);
        },
        py::arg("path"), "Returns (matrix, normalized_flag) from an EMB1 file.");
    m.def(
        "write_embeddings",
        [](const std::filesystem::path& path, py::array_t<float, py::array::c_style | py::array::forcecast> matrix,
           bool normalized) {
            if (matrix.ndim() != 2) throw ConfigError("embeddings must be a 2-d array");
            EmbeddingFile f;
            f.n = static_cast<std::uint32_t>(matrix.shape(0));
            f.dim = static_cast<std::uint32_t>(matrix.shape(1));
            f.normalized = normalized;
            f.values.assign(matrix.data(), matrix.data() + matrix.size());
            write_embedding_file(path, f);
        },
        py::arg("path"), py::arg("matrix"), py::arg("normalized") = false);

    m.def("strip_scaffolding", [](const std::string& s) { return strip_scaffolding(s); });
    m.def("parse_cot_output", [](const std::string& raw) {
        const auto r = parse_cot_output(raw);
        return py::make_tuple(r.passage, r.tag_found);
    });
    m.def("gure_prompt", [](const std::string& context) {
        return render_prompt(make_template(TemplateKind::gure), context);
    });

    m.def(
        "paired_t_test",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            const auto r = paired_t_test(a, b);
            py::dict d;
            d["t"] = r.t_statistic;
            d["p"] = r.p_value;
            d["n"] = r.n;
            d["significant_at_01"] = r.significant_at_01;
            d["degenerate"] = r.degenerate;
            return d;
        },
        py::arg("a"), py::arg("b"));
    m.def("bleu", [](const std::vector<std::string>& c, const std::vector<std::string>& r) { return bleu(c, r); },
          py::arg("candidates"), py::arg("references"));
    m.def(
        "rouge_l",
        [](const std::string& c, const std::string& r) {
            const auto s = rouge_l(c, r);
            return py::make_tuple(s.precision, s.recall, s.f1);
        },
        py::arg("candidate"), py::arg("reference"));
    m.def(
        "top_share",
        [](const std::vector<std::uint64_t>& counts, double fraction) {
            FrequencyTable t;
            Handle h = 0;
            for (auto c : counts) {
                if (c > 0) t.counts[h] = c;
                t.total += c;
                ++h;
            }
            return top_share(t, fraction);
        },
        py::arg("counts"), py::arg("fraction"), "Mass share of the most cited passages, given per-passage counts.");

    m.def(
        "config_hash",
        [](const std::map<std::string, std::string>& overrides, std::optional<std::filesystem::path> config_file) {
            return make_config(config_file, overrides).hash();
        },
        py::arg("settings") = std::map<std::string, std::string>{}, py::arg("config_file") = py::none());

    m.def(
        "run_experiment",
        [](const std::map<std::string, std::string>& overrides, std::optional<std::filesystem::path> config_file) {
            const auto cfg = make_config(config_file, overrides);
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(cfg);
            }
            py::dict d;
            d["run_name"] = r.report.run_name;
            d["config_hash"] = r.report.config_hash;
            d["mean"] = summary_dict(r.report.mean);
            d["stdev"] = summary_dict(r.report.stdev);
            py::list trials;
            for (const auto& t : r.report.per_trial) {
                py::dict td;
                td["recall_at_1"] = t.recall_at_1;
                td["recall_at_10"] = t.recall_at_10;
                td["ndcg_at_10"] = t.ndcg_at_10;
                td["n_queries"] = t.n_queries;
                trials.append(td);
            }
            d["per_trial"] = trials;
            d["run_files"] = r.run_files;
            d["report_json"] = r.report_json;
            d["manifest"] = r.manifest;
            d["cache_hits"] = r.cache_hits;
            d["endpoint_calls"] = r.endpoint_calls;
            return d;
        },
        py::arg("settings") = std::map<std::string, std::string>{}, py::arg("config_file") = py::none(),
        "Runs one experiment. `settings` takes the same dotted keys as the config file.");
}
