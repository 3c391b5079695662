#include "tart/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>

#include <json.hpp>

#include "tart/encoder.hpp"
#include "tart/rng.hpp"

namespace tart {

using nlohmann::json;

void Corpus::rebuild_index() {
    label_index.clear();
    for (std::size_t i = 0; i < examples.size(); ++i)
        label_index[examples[i].label].push_back(i);
}

ClassSplit ClassSplit::make(std::vector<std::string> train, std::vector<std::string> val,
                            std::vector<std::string> test) {
    std::set<std::string> seen;
    auto check = [&seen](const std::vector<std::string>& labels, const char* name) {
        for (const auto& l : labels) {
            if (!seen.insert(l).second)
                throw ConfigError(std::string("class split: label '") + l +
                                  "' appears in more than one set (" + name + ")");
        }
    };
    check(train, "train");
    check(val, "val");
    check(test, "test");
    return ClassSplit{std::move(train), std::move(val), std::move(test)};
}

Corpus parse_corpus(std::istream& in, const std::string& source_name) {
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(source_name + ":" + std::to_string(line_no) +
                              ": malformed record: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("label") || !rec["label"].is_string())
            throw FormatError(source_name + ":" + std::to_string(line_no) +
                              ": missing string field 'label'");
        Example ex;
        ex.label = rec["label"].get<std::string>();
        if (rec.contains("vector")) {
            if (!rec["vector"].is_array())
                throw FormatError(source_name + ":" + std::to_string(line_no) +
                                  ": 'vector' must be an array of reals");
            for (const auto& v : rec["vector"]) {
                if (!v.is_number())
                    throw FormatError(source_name + ":" + std::to_string(line_no) +
                                      ": non-numeric entry in 'vector'");
                ex.features.push_back(v.get<double>());
            }
            if (ex.features.empty())
                throw FormatError(source_name + ":" + std::to_string(line_no) +
                                  ": empty 'vector'");
            for (double v : ex.features)
                if (!std::isfinite(v))
                    throw FormatError(source_name + ":" + std::to_string(line_no) +
                                      ": non-finite entry in 'vector'");
        } else if (rec.contains("text") && rec["text"].is_string()) {
            ex.text = rec["text"].get<std::string>();
        } else {
            throw FormatError(source_name + ":" + std::to_string(line_no) +
                              ": record needs a string 'text' or numeric 'vector' field");
        }
        corpus.examples.push_back(std::move(ex));
    }
    corpus.rebuild_index();
    return corpus;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open corpus file: " + path);
    return parse_corpus(in, path);
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write corpus file: " + path);
    for (const auto& ex : corpus.examples) {
        json rec;
        if (ex.is_vector())
            rec["vector"] = ex.features;
        else
            rec["text"] = ex.text;
        rec["label"] = ex.label;
        out << rec.dump() << "\n";
    }
}

void save_split(const ClassSplit& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write split file: " + path);
    json obj;
    obj["train"] = split.train_labels;
    obj["val"] = split.val_labels;
    obj["test"] = split.test_labels;
    out << obj.dump(2) << "\n";
}

ClassSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open split file: " + path);
    json obj;
    try {
        in >> obj;
    } catch (const json::exception& e) {
        throw FormatError(path + ": malformed split file: " + std::string(e.what()));
    }
    auto get = [&obj, &path](const char* key) {
        if (!obj.contains(key) || !obj[key].is_array())
            throw FormatError(path + ": split file needs a '" + std::string(key) + "' array");
        return obj[key].get<std::vector<std::string>>();
    };
    return ClassSplit::make(get("train"), get("val"), get("test"));
}

namespace {

EpisodeExample to_episode_example(const Example& ex, std::size_t class_id) {
    EpisodeExample out;
    out.class_id = class_id;
    if (ex.is_vector())
        out.features = ex.features;
    else
        out.tokens = tokenize(ex.text);
    return out;
}

}  // namespace

Episode sample_episode(const Corpus& corpus, const std::vector<std::string>& split_labels,
                       std::size_t n, std::size_t k, std::size_t q, std::uint64_t seed) {
    // Canonical label order so results never depend on caller ordering.
    std::vector<std::string> labels = split_labels;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

    std::vector<std::string> eligible;
    std::string deficient;
    for (const auto& l : labels) {
        auto it = corpus.label_index.find(l);
        std::size_t count = it == corpus.label_index.end() ? 0 : it->second.size();
        if (count >= k + q)
            eligible.push_back(l);
        else if (deficient.empty())
            deficient = l;
    }
    if (eligible.size() < n) {
        std::string msg = "sample_episode: only " + std::to_string(eligible.size()) +
                          " of " + std::to_string(n) + " required labels are eligible";
        if (!deficient.empty())
            msg += "; label '" + deficient + "' has fewer than " + std::to_string(k + q) +
                   " examples";
        throw SamplingError(msg);
    }

    Rng rng(seed);
    rng.shuffle(eligible);

    Episode ep;
    ep.n_way = n;
    ep.k_shot = k;
    ep.q_queries = q;
    for (std::size_t c = 0; c < n; ++c) {
        const std::string& label = eligible[c];
        ep.original_labels.push_back(label);
        std::vector<std::size_t> pool = corpus.label_index.at(label);
        rng.shuffle(pool);
        for (std::size_t i = 0; i < k; ++i)
            ep.support.push_back(to_episode_example(corpus.examples[pool[i]], c));
        for (std::size_t i = k; i < k + q; ++i)
            ep.query.push_back(to_episode_example(corpus.examples[pool[i]], c));
    }
    return ep;
}

std::pair<Corpus, SyntheticMeta> make_synthetic_corpus(const SyntheticParams& params) {
    if (params.inter_class_gap < 0.0) throw ConfigError("synthetic: inter_class_gap must be >= 0");
    if (params.noise <= 0.0) throw ConfigError("synthetic: noise must be > 0");
    if (params.n_classes < 1 || params.per_class < 1 || params.dim < 2)
        throw ConfigError("synthetic: n_classes, per_class >= 1 and dim >= 2 required");

    Rng rng(params.seed);
    std::size_t dim = params.dim;
    double noise = params.noise;
    // Classes sit far from the origin so cluster offsets of size
    // `inter_class_gap` are small angular perturbations.
    double base_norm = 16.0;

    auto random_unit = [&rng, dim]() {
        std::vector<double> v(dim);
        double s = 0.0;
        for (double& x : v) {
            x = rng.gaussian();
            s += x * x;
        }
        s = std::sqrt(s);
        for (double& x : v) x /= s;
        return v;
    };

    std::vector<double> shared = random_unit();

    // Clustered offsets live in a fixed low-dimensional subspace orthogonal
    // to the shared direction: the low-variance regime has structure that a
    // task-adaptive metric can exploit while per-coordinate noise stays
    // isotropic in the full space.
    std::size_t subdim = std::min<std::size_t>(2, dim - 1);
    std::vector<std::vector<double>> basis;
    for (std::size_t b = 0; b < subdim; ++b) {
        std::vector<double> v = random_unit();
        auto project_out = [&v, dim](const std::vector<double>& u) {
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) d += v[j] * u[j];
            for (std::size_t j = 0; j < dim; ++j) v[j] -= d * u[j];
        };
        project_out(shared);
        for (const auto& u : basis) project_out(u);
        double s = 0.0;
        for (double x : v) s += x * x;
        s = std::sqrt(s);
        for (double& x : v) x /= s;
        basis.push_back(std::move(v));
    }

    SyntheticMeta meta;
    meta.n_clustered = (params.n_classes + 1) / 2;
    for (std::size_t c = 0; c < params.n_classes; ++c) {
        std::vector<double> mean(dim);
        if (c < meta.n_clustered) {
            // Gaussian positions scaled so nearby classes sit roughly
            // inter_class_gap apart.
            double off = params.inter_class_gap / std::sqrt(2.0);
            for (std::size_t j = 0; j < dim; ++j) mean[j] = base_norm * shared[j];
            for (const auto& u : basis) {
                double w = off * rng.gaussian();
                for (std::size_t j = 0; j < dim; ++j) mean[j] += w * u[j];
            }
        } else {
            std::vector<double> dir = random_unit();
            for (std::size_t j = 0; j < dim; ++j) mean[j] = base_norm * dir[j];
        }
        meta.class_means.push_back(std::move(mean));
    }

    Corpus corpus;
    for (std::size_t c = 0; c < params.n_classes; ++c) {
        char label[32];
        std::snprintf(label, sizeof(label), "class_%03zu", c);
        for (std::size_t i = 0; i < params.per_class; ++i) {
            Example ex;
            ex.label = label;
            ex.features.resize(dim);
            for (std::size_t j = 0; j < dim; ++j)
                ex.features[j] = meta.class_means[c][j] + noise * rng.gaussian();
            corpus.examples.push_back(std::move(ex));
        }
    }
    corpus.rebuild_index();
    return {std::move(corpus), std::move(meta)};
}

ClassSplit synthetic_benchmark_split(const SyntheticMeta& meta, std::size_t n_classes,
                                     std::size_t n_way) {
    auto label_of = [](std::size_t c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "class_%03zu", c);
        return std::string(buf);
    };
    std::size_t clustered_per_eval = (n_way * 3 + 4) / 5;  // ceil(0.6 * n_way)
    std::size_t separated_per_eval = n_way - clustered_per_eval;
    if (meta.n_clustered < 2 * clustered_per_eval ||
        n_classes - meta.n_clustered < 2 * separated_per_eval)
        throw ConfigError("synthetic split: not enough classes for val and test sets of " +
                          std::to_string(n_way) + " labels each");

    std::vector<std::string> test, val, train;
    std::size_t c_used = 0, s_used = 0;
    for (std::size_t i = 0; i < clustered_per_eval; ++i) test.push_back(label_of(c_used++));
    for (std::size_t i = 0; i < clustered_per_eval; ++i) val.push_back(label_of(c_used++));
    std::size_t sep0 = meta.n_clustered;
    for (std::size_t i = 0; i < separated_per_eval; ++i) test.push_back(label_of(sep0 + s_used++));
    for (std::size_t i = 0; i < separated_per_eval; ++i) val.push_back(label_of(sep0 + s_used++));
    for (std::size_t c = c_used; c < meta.n_clustered; ++c) train.push_back(label_of(c));
    for (std::size_t c = sep0 + s_used; c < n_classes; ++c) train.push_back(label_of(c));
    return ClassSplit::make(std::move(train), std::move(val), std::move(test));
}

}  // namespace tart
