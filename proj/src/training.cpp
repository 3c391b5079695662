#include "tart/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tart/rng.hpp"

namespace tart {

namespace {

// Seed-stream tags keeping train/val/test episode draws independent.
constexpr std::uint64_t kInitStream = 0x494e4954;
constexpr std::uint64_t kValStream = 0x56414c;

double scalar(const Node* n) { return n->value.at(0, 0); }

Node* encode_example(Tape& tape, const EncoderGraph& graph, const Vocab* vocab,
                     const EpisodeExample& ex) {
    if (!ex.features.empty()) return encode_vector(tape, graph, ex.features);
    if (!vocab) throw ConfigError("text example but no vocabulary/embeddings loaded");
    return encode(tape, graph, *vocab, ex.tokens);
}

}  // namespace

void TrainConfig::validate() const {
    if (lr < 0.0) throw ConfigError("config: lr must be >= 0");
    if (episodes_per_epoch < 1 || patience_epochs < 1 || max_epochs < 1 || val_episodes < 1 ||
        test_episodes < 1)
        throw ConfigError("config: episode/epoch counts must be >= 1");
    if (n_way < 2 || k_shot < 1 || q_queries < 1)
        throw ConfigError("config: need n_way >= 2, k_shot >= 1, q_queries >= 1");
    if (embed_dim < n_way)
        throw ConfigError("config: embed_dim must be >= n_way for a full-row-rank solve");
    if (head.lambda < 0.0) throw ConfigError("config: lambda must be >= 0");
}

ModelParams ModelParams::init(std::size_t input_dim, std::size_t embed_dim, std::size_t n_way,
                              Rng& rng, EmbeddingTable table) {
    ModelParams p;
    p.encoder.table = std::move(table);
    double a = std::sqrt(6.0 / static_cast<double>(input_dim + embed_dim));
    p.encoder.projection = Matrix(input_dim, embed_dim);
    for (std::size_t i = 0; i < p.encoder.projection.size(); ++i)
        p.encoder.projection.data()[i] = rng.uniform(-a, a);
    p.encoder.bias = Matrix(1, embed_dim);
    p.reference = ReferenceLayer::init(n_way, embed_dim, rng);
    return p;
}

std::map<std::string, Matrix*> ModelParams::named() {
    std::map<std::string, Matrix*> m;
    m["projection"] = &encoder.projection;
    m["bias"] = &encoder.bias;
    m["r_raw"] = &reference.r_raw;
    if (encoder.table.trainable) m["embeddings"] = &encoder.table.vectors;
    return m;
}

std::map<std::string, const Matrix*> ModelParams::named() const {
    std::map<std::string, const Matrix*> m;
    for (auto& [k, v] : const_cast<ModelParams*>(this)->named()) m[k] = v;
    return m;
}

EpisodeLoss build_episode_loss(Tape& tape, const Episode& episode, const ModelParams& params,
                               const Vocab* vocab, const TrainConfig& cfg) {
    EncoderGraph graph = EncoderGraph::bind(tape, params.encoder);

    std::vector<std::vector<Node*>> support_by_class(episode.n_way);
    for (const auto& ex : episode.support)
        support_by_class[ex.class_id].push_back(encode_example(tape, graph, vocab, ex));
    PrototypeSet proto = compute_prototypes(tape, support_by_class);

    std::vector<Node*> query_embs;
    std::vector<std::size_t> query_classes;
    for (const auto& ex : episode.query) {
        query_embs.push_back(encode_example(tape, graph, vocab, ex));
        query_classes.push_back(ex.class_id);
    }

    EpisodeLoss out{};
    out.projection = graph.projection;
    out.bias = graph.bias;
    out.embeddings = graph.embeddings;
    if (cfg.use_tart) {
        out.r_raw = tape.leaf(params.reference.r_raw);
        Node* w = compute_w(tape, proto, out.r_raw);
        out.cls = classification_loss(tape, query_embs, query_classes, proto, w, cfg.head);
        out.drr = drr_loss(tape, proto, w, cfg.head);
        out.total = total_loss(tape, out.cls, out.drr, cfg.head);
    } else {
        out.cls = proto_baseline_loss(tape, query_embs, query_classes, proto, cfg.head);
        out.total = out.cls;
    }
    return out;
}

double evaluate_episode(const Episode& episode, const ModelParams& params, const Vocab* vocab,
                        const TrainConfig& cfg) {
    Tape tape;
    EncoderGraph graph = EncoderGraph::bind(tape, params.encoder);

    std::vector<std::vector<Node*>> support_by_class(episode.n_way);
    for (const auto& ex : episode.support)
        support_by_class[ex.class_id].push_back(encode_example(tape, graph, vocab, ex));
    PrototypeSet proto = compute_prototypes(tape, support_by_class);

    Node* w = nullptr;
    Node* r_raw = nullptr;
    if (cfg.use_tart) {
        r_raw = tape.leaf(params.reference.r_raw);
        w = compute_w(tape, proto, r_raw);
    }

    std::size_t correct = 0;
    for (const auto& ex : episode.query) {
        Node* q = encode_example(tape, graph, vocab, ex);
        Node* probs = cfg.use_tart ? classify(tape, q, proto, w, cfg.head)
                                   : proto_baseline_classify(tape, q, proto, cfg.head);
        std::size_t best = 0;
        for (std::size_t c = 1; c < episode.n_way; ++c)
            if (probs->value.at(0, c) > probs->value.at(0, best)) best = c;
        if (best == ex.class_id) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(episode.query.size());
}

void adam_step(TrainState& state, const std::map<std::string, const Matrix*>& grads,
               const TrainConfig& cfg) {
    state.step += 1;
    auto t = static_cast<double>(state.step);
    double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);

    auto params = state.params.named();
    for (const auto& [name, grad] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("adam_step: unknown parameter " + name);
        Matrix& p = *it->second;
        if (!grad->all_finite())
            throw NumericalError("adam_step: non-finite gradient for parameter '" + name +
                                 "' at step " + std::to_string(state.step));
        Matrix& m = state.adam_m.try_emplace(name, p.rows(), p.cols()).first->second;
        Matrix& v = state.adam_v.try_emplace(name, p.rows(), p.cols()).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            double g = grad->data()[i];
            m.data()[i] = cfg.adam_beta1 * m.data()[i] + (1.0 - cfg.adam_beta1) * g;
            v.data()[i] = cfg.adam_beta2 * v.data()[i] + (1.0 - cfg.adam_beta2) * g * g;
            double mhat = m.data()[i] / bc1;
            double vhat = v.data()[i] / bc2;
            p.data()[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

TrainState train(const Corpus& corpus, const ClassSplit& split, const TrainConfig& cfg,
                 std::uint64_t run_seed, const Vocab* vocab, const EmbeddingTable* table,
                 std::ostream* log) {
    cfg.validate();

    std::size_t input_dim = cfg.input_dim;
    if (input_dim == 0) {
        if (table && table->vectors.size() > 0) {
            input_dim = table->dim();
        } else {
            for (const auto& ex : corpus.examples)
                if (ex.is_vector()) {
                    input_dim = ex.features.size();
                    break;
                }
        }
        if (input_dim == 0) throw ConfigError("train: cannot infer input dimension");
    }

    Rng init_rng(mix_seed(run_seed, kInitStream));
    TrainState state;
    state.params = ModelParams::init(input_dim, cfg.embed_dim, cfg.n_way, init_rng,
                                     table ? *table : EmbeddingTable{});

    ModelParams best_params = state.params;
    double best_val = -1.0;
    std::size_t total_steps = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        double drr_sum = 0.0;
        std::size_t steps = 0;
        std::size_t skipped = 0;
        for (std::size_t i = 0; i < cfg.episodes_per_epoch; ++i) {
            Episode ep = sample_episode(corpus, split.train_labels, cfg.n_way, cfg.k_shot,
                                        cfg.q_queries, mix_seed(run_seed, epoch, i));
            Tape tape;
            EpisodeLoss el;
            try {
                el = build_episode_loss(tape, ep, state.params, vocab, cfg);
            } catch (const DegenerateTaskError&) {
                ++skipped;
                if (log) *log << "# skipped degenerate episode " << i << " in epoch " << epoch
                              << "\n";
                continue;
            }
            tape.backward(el.total);

            std::map<std::string, const Matrix*> grads;
            grads["projection"] = &el.projection->grad;
            grads["bias"] = &el.bias->grad;
            if (el.r_raw) grads["r_raw"] = &el.r_raw->grad;
            if (el.embeddings) grads["embeddings"] = &el.embeddings->grad;
            adam_step(state, grads, cfg);

            loss_sum += scalar(el.total);
            if (el.drr) drr_sum += cfg.head.lambda * scalar(el.drr);
            ++steps;
        }
        total_steps += steps;
        if (total_steps == 0)
            throw Error("train: every episode so far was degenerate; nothing to learn from");

        // Fixed validation episode set: early stopping must compare epochs
        // on the same tasks.
        EvalReport val = evaluate(state.params, corpus, split.val_labels, cfg, cfg.val_episodes,
                                  mix_seed(run_seed, kValStream), vocab);
        double val_acc = val.mean_accuracy;
        if (val_acc > best_val) {
            best_val = val_acc;
            best_params = state.params;
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
        }
        state.best_val_acc = best_val;

        if (log) {
            char line[256];
            std::snprintf(line, sizeof(line),
                          "epoch %zu train_loss %.10f drr_term %.10f val_acc %.6f "
                          "since_improvement %zu skipped %zu\n",
                          epoch, steps ? loss_sum / static_cast<double>(steps) : 0.0,
                          steps ? drr_sum / static_cast<double>(steps) : 0.0, val_acc,
                          state.epochs_since_improvement, skipped);
            *log << line;
        }

        if (state.epochs_since_improvement >= cfg.patience_epochs) break;
    }

    state.params = best_params;
    return state;
}

EvalReport evaluate(const ModelParams& params, const Corpus& corpus,
                    const std::vector<std::string>& labels, const TrainConfig& cfg,
                    std::size_t n_episodes, std::uint64_t run_seed, const Vocab* vocab,
                    std::size_t workers) {
    if (workers < 1) workers = 1;
    constexpr double kSkipped = -1.0;
    std::vector<double> accs(n_episodes, kSkipped);

    auto run_range = [&](std::size_t worker_id) {
        for (std::size_t i = worker_id; i < n_episodes; i += workers) {
            Episode ep = sample_episode(corpus, labels, cfg.n_way, cfg.k_shot, cfg.q_queries,
                                        mix_seed(run_seed, i));
            try {
                accs[i] = evaluate_episode(ep, params, vocab, cfg);
            } catch (const DegenerateTaskError&) {
                accs[i] = kSkipped;
            }
        }
    };

    if (workers == 1) {
        run_range(0);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run_range, w);
        for (auto& t : threads) t.join();
    }

    EvalReport report;
    double sum = 0.0;
    std::vector<double> kept;
    for (double a : accs) {
        if (a == kSkipped) {
            ++report.skipped_degenerate_episodes;
        } else {
            kept.push_back(a);
            sum += a;
        }
    }
    report.n_episodes = kept.size();
    if (kept.empty()) {
        report.all_degenerate = true;
        return report;
    }
    report.mean_accuracy = sum / static_cast<double>(kept.size());
    if (kept.size() > 1) {
        double ss = 0.0;
        for (double a : kept) ss += (a - report.mean_accuracy) * (a - report.mean_accuracy);
        double sd = std::sqrt(ss / static_cast<double>(kept.size() - 1));
        report.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(kept.size()));
    }
    report.per_seed = {report.mean_accuracy};
    return report;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

void write_tensor(std::ofstream& out, const std::string& name, const Matrix& m) {
    out << name << " " << m.rows() << " " << m.cols() << "\n";
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);

    std::map<std::string, const Matrix*> tensors;
    for (const auto& [name, p] : state.params.named()) tensors["param." + name] = p;
    // The frozen embedding table still travels with the checkpoint so a
    // loaded model can evaluate text corpora.
    if (!state.params.encoder.table.trainable)
        tensors["param.embeddings"] = &state.params.encoder.table.vectors;
    for (const auto& [name, m] : state.adam_m) tensors["adam_m." + name] = &m;
    for (const auto& [name, m] : state.adam_v) tensors["adam_v." + name] = &m;
    Matrix step(1, 1, {static_cast<double>(state.step)});
    Matrix best(1, 1, {state.best_val_acc});
    Matrix since(1, 1, {static_cast<double>(state.epochs_since_improvement)});
    Matrix emb_trainable(1, 1, {state.params.encoder.table.trainable ? 1.0 : 0.0});
    tensors["meta.step"] = &step;
    tensors["meta.best_val_acc"] = &best;
    tensors["meta.epochs_since_improvement"] = &since;
    tensors["meta.embeddings_trainable"] = &emb_trainable;

    out << "TARTCKPT 1\n";
    for (const auto& [name, m] : tensors) write_tensor(out, name, *m);
    if (!out) throw CheckpointError("write failed: " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "TARTCKPT" || version != 1)
        throw CheckpointError(path + ": not a TARTCKPT version 1 file");
    in.ignore(1);  // trailing newline

    std::map<std::string, Matrix> tensors;
    std::string name;
    while (in >> name) {
        std::size_t rows, cols;
        if (!(in >> rows >> cols)) throw CheckpointError(path + ": truncated tensor header");
        in.ignore(1);
        std::vector<double> data(rows * cols);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)))
            throw CheckpointError(path + ": truncated tensor data for " + name);
        tensors.emplace(name, Matrix(rows, cols, std::move(data)));
    }

    auto take = [&tensors, &path](const std::string& key) -> Matrix {
        auto it = tensors.find(key);
        if (it == tensors.end())
            throw CheckpointError(path + ": missing tensor " + key);
        Matrix m = std::move(it->second);
        tensors.erase(it);
        return m;
    };

    TrainState state;
    state.params.encoder.projection = take("param.projection");
    state.params.encoder.bias = take("param.bias");
    state.params.reference.r_raw = take("param.r_raw");
    state.params.encoder.table.vectors = take("param.embeddings");
    state.params.encoder.table.trainable = take("meta.embeddings_trainable").at(0, 0) != 0.0;
    state.step = static_cast<std::size_t>(take("meta.step").at(0, 0));
    state.best_val_acc = take("meta.best_val_acc").at(0, 0);
    state.epochs_since_improvement =
        static_cast<std::size_t>(take("meta.epochs_since_improvement").at(0, 0));
    for (auto& [key, m] : tensors) {
        if (key.rfind("adam_m.", 0) == 0)
            state.adam_m.emplace(key.substr(7), std::move(m));
        else if (key.rfind("adam_v.", 0) == 0)
            state.adam_v.emplace(key.substr(7), std::move(m));
        else
            throw CheckpointError(path + ": unknown tensor " + key);
    }
    return state;
}

std::string format_eval_report(const EvalReport& report) {
    nlohmann::json obj;
    obj["mean_accuracy"] = report.mean_accuracy;
    obj["ci95"] = report.ci95;
    obj["n_episodes"] = report.n_episodes;
    obj["per_seed"] = report.per_seed;
    obj["skipped_degenerate_episodes"] = report.skipped_degenerate_episodes;
    obj["all_degenerate"] = report.all_degenerate;
    return obj.dump(2) + "\n";
}

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& g : groups) w = std::max(w, g.max_rel_err);
    return w;
}

GradCheckReport gradcheck_toy_episode(bool corrupt_inverse, double fd_step) {
    constexpr std::size_t kDim = 5, kEmbed = 8, kWay = 3, kShot = 2, kQueries = 2;
    Rng rng(0x70417254);

    Episode ep;
    ep.n_way = kWay;
    ep.k_shot = kShot;
    ep.q_queries = kQueries;
    auto draw = [&rng]() {
        EpisodeExample ex;
        ex.features.resize(kDim);
        for (double& x : ex.features) x = rng.gaussian();
        return ex;
    };
    for (std::size_t c = 0; c < kWay; ++c) {
        for (std::size_t i = 0; i < kShot; ++i) {
            auto ex = draw();
            ex.class_id = c;
            ep.support.push_back(std::move(ex));
        }
        for (std::size_t i = 0; i < kQueries; ++i) {
            auto ex = draw();
            ex.class_id = c;
            ep.query.push_back(std::move(ex));
        }
    }

    TrainConfig cfg;
    cfg.n_way = kWay;
    cfg.k_shot = kShot;
    cfg.q_queries = kQueries;
    cfg.embed_dim = kEmbed;
    cfg.input_dim = kDim;

    ModelParams params = ModelParams::init(kDim, kEmbed, kWay, rng);

    Tape tape;
    tape.corrupt_inverse_backward = corrupt_inverse;
    EpisodeLoss el = build_episode_loss(tape, ep, params, nullptr, cfg);
    tape.backward(el.total);

    std::map<std::string, const Matrix*> analytic;
    analytic["projection"] = &el.projection->grad;
    analytic["bias"] = &el.bias->grad;
    analytic["r_raw"] = &el.r_raw->grad;

    auto loss_at = [&](const ModelParams& p) {
        Tape t;
        return scalar(build_episode_loss(t, ep, p, nullptr, cfg).total);
    };

    GradCheckReport report;
    for (auto& [name, param] : params.named()) {
        if (!analytic.count(name)) continue;
        const Matrix& ad = *analytic.at(name);
        double worst = 0.0;
        for (std::size_t i = 0; i < param->size(); ++i) {
            double saved = param->data()[i];
            param->data()[i] = saved + fd_step;
            double up = loss_at(params);
            param->data()[i] = saved - fd_step;
            double down = loss_at(params);
            param->data()[i] = saved;
            double fd = (up - down) / (2.0 * fd_step);
            double denom = std::max({std::fabs(fd), std::fabs(ad.data()[i]), 1e-6});
            worst = std::max(worst, std::fabs(fd - ad.data()[i]) / denom);
        }
        report.groups.push_back({name, worst});
    }
    return report;
}

}  // namespace tart
