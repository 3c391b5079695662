#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "tart/episodes.hpp"
#include "tart/training.hpp"

namespace py = pybind11;

namespace {

tart::Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() == 1) {
        std::vector<double> data(a.data(), a.data() + a.shape(0));
        return tart::Matrix(1, static_cast<std::size_t>(a.shape(0)), std::move(data));
    }
    if (a.ndim() != 2) throw tart::ShapeError("expected a 1-D or 2-D array");
    std::vector<double> data(a.data(), a.data() + a.size());
    return tart::Matrix(static_cast<std::size_t>(a.shape(0)),
                        static_cast<std::size_t>(a.shape(1)), std::move(data));
}

py::array_t<double> to_array(const tart::Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::copy(m.data(), m.data() + m.size(), out.mutable_data());
    return out;
}

tart::HeadConfig head_config(const std::string& distance, double lambda) {
    tart::HeadConfig cfg;
    cfg.lambda = lambda;
    if (distance == "cosine")
        cfg.distance = tart::DistanceKind::Cosine;
    else if (distance == "sqeuclidean")
        cfg.distance = tart::DistanceKind::SquaredEuclidean;
    else
        throw tart::ConfigError("distance must be 'cosine' or 'sqeuclidean'");
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_tart, m) {
    m.doc() = "Task-adaptive reference transformation for few-shot classification";

    py::register_exception<tart::DegenerateTaskError>(m, "DegenerateTaskError");

    m.def(
        "compute_prototypes",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> support,
           const std::vector<std::size_t>& labels, std::size_t n_way) {
            tart::Matrix s = to_matrix(support);
            if (labels.size() != s.rows())
                throw tart::ShapeError("labels length must match support rows");
            tart::Tape tape;
            std::vector<std::vector<tart::Node*>> by_class(n_way);
            tart::Node* sn = tape.constant(s);
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] >= n_way) throw tart::ShapeError("label out of range");
                by_class[labels[i]].push_back(tape.row(sn, i));
            }
            auto proto = tart::compute_prototypes(tape, by_class);
            return to_array(proto.raw->value);
        },
        py::arg("support"), py::arg("labels"), py::arg("n_way"),
        "Per-class means of support embeddings, rows ordered by class id.");

    m.def(
        "compute_w",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> prototypes,
           py::array_t<double, py::array::c_style | py::array::forcecast> references) {
            tart::Tape tape;
            tart::Node* p = tape.constant(to_matrix(prototypes));
            tart::PrototypeSet proto{p, tape.row_normalize(p)};
            tart::Node* r = tape.constant(to_matrix(references));
            return to_array(tart::compute_w(tape, proto, r)->value);
        },
        py::arg("prototypes"), py::arg("references"),
        "Task-adaptive transformation W solving P_norm W = R_norm.");

    m.def(
        "classify",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> query,
           py::array_t<double, py::array::c_style | py::array::forcecast> prototypes,
           py::array_t<double, py::array::c_style | py::array::forcecast> references,
           const std::string& distance) {
            tart::Tape tape;
            tart::Node* p = tape.constant(to_matrix(prototypes));
            tart::PrototypeSet proto{p, tape.row_normalize(p)};
            tart::Node* r = tape.constant(to_matrix(references));
            tart::Node* w = tart::compute_w(tape, proto, r);
            tart::Node* q = tape.constant(to_matrix(query));
            auto cfg = head_config(distance, 0.5);
            return to_array(tart::classify(tape, q, proto, w, cfg)->value);
        },
        py::arg("query"), py::arg("prototypes"), py::arg("references"),
        py::arg("distance") = "cosine",
        "Softmax class probabilities of one query in the transformed space.");

    m.def(
        "proto_classify",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> query,
           py::array_t<double, py::array::c_style | py::array::forcecast> prototypes,
           const std::string& distance) {
            tart::Tape tape;
            tart::Node* p = tape.constant(to_matrix(prototypes));
            tart::PrototypeSet proto{p, tape.row_normalize(p)};
            tart::Node* q = tape.constant(to_matrix(query));
            auto cfg = head_config(distance, 0.5);
            return to_array(tart::proto_baseline_classify(tape, q, proto, cfg)->value);
        },
        py::arg("query"), py::arg("prototypes"), py::arg("distance") = "cosine",
        "PROTO baseline probabilities (no transformation).");

    m.def(
        "gradcheck",
        [](bool corrupt) {
            auto report = tart::gradcheck_toy_episode(corrupt);
            py::dict out;
            for (const auto& g : report.groups) out[g.name.c_str()] = g.max_rel_err;
            out["worst"] = report.worst();
            out["passed"] = report.passed();
            return out;
        },
        py::arg("corrupt") = false,
        "Finite-difference check of the full loss gradient on a toy episode.");

    m.def(
        "make_synthetic",
        [](const std::string& out_dir, std::size_t classes, std::size_t per_class, double gap,
           double noise, std::size_t dim, std::uint64_t seed, std::size_t n_way) {
            tart::SyntheticParams p{classes, per_class, gap, noise, dim, seed};
            auto [corpus, meta] = tart::make_synthetic_corpus(p);
            auto split = tart::synthetic_benchmark_split(meta, classes, n_way);
            tart::save_corpus(corpus, out_dir + "/synthetic.jsonl");
            tart::save_split(split, out_dir + "/split.json");
        },
        py::arg("out_dir"), py::arg("classes") = 16, py::arg("per_class") = 30,
        py::arg("gap") = 1.0, py::arg("noise") = 1.0, py::arg("dim") = 16, py::arg("seed") = 0,
        py::arg("n_way") = 5, "Writes the synthetic benchmark corpus and split files.");

    m.def(
        "train",
        [](const std::string& corpus_path, const std::string& split_path,
           const std::string& checkpoint_path, std::uint64_t seed, std::size_t n_way,
           std::size_t k_shot, std::size_t q_queries, double lambda, double lr,
           std::size_t episodes_per_epoch, std::size_t patience, std::size_t max_epochs,
           std::size_t val_episodes, std::size_t embed_dim, bool baseline,
           const std::string& distance) {
            tart::Corpus corpus = tart::load_corpus(corpus_path);
            tart::ClassSplit split = tart::load_split(split_path);
            tart::TrainConfig cfg;
            cfg.n_way = n_way;
            cfg.k_shot = k_shot;
            cfg.q_queries = q_queries;
            cfg.head = head_config(distance, lambda);
            cfg.lr = lr;
            cfg.episodes_per_epoch = episodes_per_epoch;
            cfg.patience_epochs = patience;
            cfg.max_epochs = max_epochs;
            cfg.val_episodes = val_episodes;
            cfg.embed_dim = embed_dim;
            cfg.use_tart = !baseline;
            tart::TrainState state = tart::train(corpus, split, cfg, seed);
            tart::save_checkpoint(state, checkpoint_path);
            return state.best_val_acc;
        },
        py::arg("corpus"), py::arg("split"), py::arg("checkpoint"), py::arg("seed") = 1,
        py::arg("n_way") = 5, py::arg("k_shot") = 1, py::arg("q_queries") = 5,
        py::arg("lambda_") = 0.5, py::arg("lr") = 1e-4, py::arg("episodes_per_epoch") = 100,
        py::arg("patience") = 20, py::arg("max_epochs") = 1000, py::arg("val_episodes") = 100,
        py::arg("embed_dim") = 256, py::arg("baseline") = false, py::arg("distance") = "cosine",
        "Episodic meta-training; writes a checkpoint and returns best validation accuracy.");

    m.def(
        "evaluate",
        [](const std::string& checkpoint_path, const std::string& corpus_path,
           const std::string& split_path, std::size_t episodes, std::uint64_t seed,
           std::size_t n_way, std::size_t k_shot, std::size_t q_queries, bool baseline,
           const std::string& distance, std::size_t workers) {
            tart::TrainState state = tart::load_checkpoint(checkpoint_path);
            tart::Corpus corpus = tart::load_corpus(corpus_path);
            tart::ClassSplit split = tart::load_split(split_path);
            tart::TrainConfig cfg;
            cfg.n_way = n_way;
            cfg.k_shot = k_shot;
            cfg.q_queries = q_queries;
            cfg.head = head_config(distance, 0.5);
            cfg.use_tart = !baseline;
            cfg.embed_dim = state.params.encoder.projection.cols();
            auto rep = tart::evaluate(state.params, corpus, split.test_labels, cfg, episodes,
                                      seed, nullptr, workers);
            py::dict out;
            out["mean_accuracy"] = rep.mean_accuracy;
            out["ci95"] = rep.ci95;
            out["n_episodes"] = rep.n_episodes;
            out["skipped_degenerate_episodes"] = rep.skipped_degenerate_episodes;
            return out;
        },
        py::arg("checkpoint"), py::arg("corpus"), py::arg("split"), py::arg("episodes") = 1000,
        py::arg("seed") = 1, py::arg("n_way") = 5, py::arg("k_shot") = 1,
        py::arg("q_queries") = 5, py::arg("baseline") = false, py::arg("distance") = "cosine",
        py::arg("workers") = 1, "Mean accuracy over test episodes from a checkpoint.");
}
