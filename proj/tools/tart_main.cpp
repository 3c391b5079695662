#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "tart/episodes.hpp"
#include "tart/training.hpp"

namespace fs = std::filesystem;

namespace {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("TART_LOG");
        if (!env) return LogLevel::Info;
        std::string v(env);
        if (v == "error") return LogLevel::Error;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::cerr << "[tart] " << msg << "\n";
}

struct RunConfig {
    std::string config_path;
    std::string corpus_path;
    std::string split_path;
    std::string embeddings_path;
    std::size_t vocab_limit = 0;
    bool embeddings_trainable = false;
    std::string out_dir = "out";
    std::string distance = "cosine";
    bool baseline = false;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::size_t workers = 1;
    tart::TrainConfig train;

    tart::TrainConfig resolved_train() const {
        tart::TrainConfig cfg = train;
        cfg.use_tart = !baseline;
        if (distance == "cosine")
            cfg.head.distance = tart::DistanceKind::Cosine;
        else if (distance == "sqeuclidean")
            cfg.head.distance = tart::DistanceKind::SquaredEuclidean;
        else
            throw tart::ConfigError("distance must be 'cosine' or 'sqeuclidean'");
        return cfg;
    }
};

void add_run_options(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--config", rc.config_path,
                    "config file with flat `key = value` lines; flags override it");
    cmd->add_option("--corpus", rc.corpus_path, "corpus file (one JSON record per line)");
    cmd->add_option("--split", rc.split_path, "class split file");
    cmd->add_option("--embeddings", rc.embeddings_path, "word vector file (text corpora only)");
    cmd->add_option("--vocab-limit", rc.vocab_limit, "cap on loaded vocabulary size");
    cmd->add_flag("--embeddings-trainable", rc.embeddings_trainable,
                  "backprop into the embedding table");
    cmd->add_option("--out", rc.out_dir, "output directory");
    cmd->add_option("--distance", rc.distance, "cosine | sqeuclidean");
    cmd->add_flag("--baseline", rc.baseline, "train/evaluate the PROTO baseline head");
    cmd->add_option("--seeds", rc.seeds, "run seeds");
    cmd->add_option("--workers", rc.workers, "evaluation worker threads");
    cmd->add_option("--lambda", rc.train.head.lambda, "DRR regularization strength");
    cmd->add_option("--lr", rc.train.lr, "Adam learning rate");
    cmd->add_option("--n-way", rc.train.n_way, "classes per episode");
    cmd->add_option("--k-shot", rc.train.k_shot, "support examples per class");
    cmd->add_option("--q-queries", rc.train.q_queries, "query examples per class");
    cmd->add_option("--episodes-per-epoch", rc.train.episodes_per_epoch, "");
    cmd->add_option("--patience", rc.train.patience_epochs, "early-stop patience in epochs");
    cmd->add_option("--max-epochs", rc.train.max_epochs, "");
    cmd->add_option("--val-episodes", rc.train.val_episodes, "");
    cmd->add_option("--test-episodes", rc.train.test_episodes, "");
    cmd->add_option("--input-dim", rc.train.input_dim, "feature dimension D (0 = infer)");
    cmd->add_option("--embed-dim", rc.train.embed_dim, "reference dimension E");
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

// Fills in values from a flat `key = value` config file, skipping any key
// the user already gave as a command-line flag.
void apply_config_file(CLI::App* cmd, RunConfig& rc) {
    if (rc.config_path.empty()) return;
    std::ifstream in(rc.config_path);
    if (!in) throw tart::ConfigError("cannot open config file: " + rc.config_path);

    auto to_size = [](const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); };
    auto to_bool = [](const std::string& v) { return v == "true" || v == "1"; };
    std::map<std::string, std::function<void(const std::string&)>> setters;
    setters["corpus"] = [&rc](const std::string& v) { rc.corpus_path = v; };
    setters["split"] = [&rc](const std::string& v) { rc.split_path = v; };
    setters["embeddings"] = [&rc](const std::string& v) { rc.embeddings_path = v; };
    setters["vocab-limit"] = [&rc, to_size](const std::string& v) { rc.vocab_limit = to_size(v); };
    setters["embeddings-trainable"] = [&rc, to_bool](const std::string& v) {
        rc.embeddings_trainable = to_bool(v);
    };
    setters["out"] = [&rc](const std::string& v) { rc.out_dir = v; };
    setters["distance"] = [&rc](const std::string& v) { rc.distance = v; };
    setters["baseline"] = [&rc, to_bool](const std::string& v) { rc.baseline = to_bool(v); };
    setters["workers"] = [&rc, to_size](const std::string& v) { rc.workers = to_size(v); };
    setters["lambda"] = [&rc](const std::string& v) { rc.train.head.lambda = std::stod(v); };
    setters["lr"] = [&rc](const std::string& v) { rc.train.lr = std::stod(v); };
    setters["n-way"] = [&rc, to_size](const std::string& v) { rc.train.n_way = to_size(v); };
    setters["k-shot"] = [&rc, to_size](const std::string& v) { rc.train.k_shot = to_size(v); };
    setters["q-queries"] = [&rc, to_size](const std::string& v) {
        rc.train.q_queries = to_size(v);
    };
    setters["episodes-per-epoch"] = [&rc, to_size](const std::string& v) {
        rc.train.episodes_per_epoch = to_size(v);
    };
    setters["patience"] = [&rc, to_size](const std::string& v) {
        rc.train.patience_epochs = to_size(v);
    };
    setters["max-epochs"] = [&rc, to_size](const std::string& v) {
        rc.train.max_epochs = to_size(v);
    };
    setters["val-episodes"] = [&rc, to_size](const std::string& v) {
        rc.train.val_episodes = to_size(v);
    };
    setters["test-episodes"] = [&rc, to_size](const std::string& v) {
        rc.train.test_episodes = to_size(v);
    };
    setters["input-dim"] = [&rc, to_size](const std::string& v) {
        rc.train.input_dim = to_size(v);
    };
    setters["embed-dim"] = [&rc, to_size](const std::string& v) {
        rc.train.embed_dim = to_size(v);
    };
    setters["seeds"] = [&rc](const std::string& v) {
        rc.seeds.clear();
        std::istringstream ss(v);
        std::uint64_t s;
        while (ss >> s) rc.seeds.push_back(s);
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw tart::ConfigError(rc.config_path + ":" + std::to_string(line_no) +
                                    ": expected `key = value`");
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end())
            throw tart::ConfigError(rc.config_path + ":" + std::to_string(line_no) +
                                    ": unknown config key '" + key + "'");
        if (cmd->count("--" + key) > 0) continue;  // flag wins over file
        try {
            it->second(value);
        } catch (const std::exception&) {
            throw tart::ConfigError(rc.config_path + ":" + std::to_string(line_no) +
                                    ": bad value for '" + key + "'");
        }
    }
}

void echo_resolved_config(const RunConfig& rc, const fs::path& dir) {
    std::ofstream out(dir / "config.resolved");
    out << "corpus = " << rc.corpus_path << "\n"
        << "split = " << rc.split_path << "\n"
        << "embeddings = " << rc.embeddings_path << "\n"
        << "vocab_limit = " << rc.vocab_limit << "\n"
        << "embeddings_trainable = " << (rc.embeddings_trainable ? "true" : "false") << "\n"
        << "out = " << rc.out_dir << "\n"
        << "distance = " << rc.distance << "\n"
        << "baseline = " << (rc.baseline ? "true" : "false") << "\n"
        << "workers = " << rc.workers << "\n"
        << "lambda = " << rc.train.head.lambda << "\n"
        << "lr = " << rc.train.lr << "\n"
        << "n_way = " << rc.train.n_way << "\n"
        << "k_shot = " << rc.train.k_shot << "\n"
        << "q_queries = " << rc.train.q_queries << "\n"
        << "episodes_per_epoch = " << rc.train.episodes_per_epoch << "\n"
        << "patience = " << rc.train.patience_epochs << "\n"
        << "max_epochs = " << rc.train.max_epochs << "\n"
        << "val_episodes = " << rc.train.val_episodes << "\n"
        << "test_episodes = " << rc.train.test_episodes << "\n"
        << "input_dim = " << rc.train.input_dim << "\n"
        << "embed_dim = " << rc.train.embed_dim << "\n";
    out << "seeds =";
    for (auto s : rc.seeds) out << " " << s;
    out << "\n";
}

struct LoadedData {
    tart::Corpus corpus;
    tart::ClassSplit split;
    std::optional<tart::Vocab> vocab;
    std::optional<tart::EmbeddingTable> table;
};

LoadedData load_data(const RunConfig& rc, bool need_split = true) {
    LoadedData data;
    if (rc.corpus_path.empty()) throw tart::ConfigError("no corpus file given (--corpus)");
    data.corpus = tart::load_corpus(rc.corpus_path);
    if (need_split) {
        if (rc.split_path.empty()) throw tart::ConfigError("no split file given (--split)");
        data.split = tart::load_split(rc.split_path);
    }
    if (!rc.embeddings_path.empty()) {
        auto [vocab, table] = tart::load_embeddings(rc.embeddings_path, rc.vocab_limit);
        table.trainable = rc.embeddings_trainable;
        data.vocab = std::move(vocab);
        data.table = std::move(table);
    }
    return data;
}

int cmd_train(const RunConfig& rc) {
    auto data = load_data(rc);
    tart::TrainConfig cfg = rc.resolved_train();
    cfg.validate();
    fs::create_directories(rc.out_dir);
    echo_resolved_config(rc, rc.out_dir);

    for (auto seed : rc.seeds) {
        log_info("training seed " + std::to_string(seed));
        std::ofstream log(fs::path(rc.out_dir) / ("train_seed" + std::to_string(seed) + ".log"));
        tart::TrainState state =
            tart::train(data.corpus, data.split, cfg, seed, data.vocab ? &*data.vocab : nullptr,
                        data.table ? &*data.table : nullptr, &log);
        tart::save_checkpoint(
            state, (fs::path(rc.out_dir) / ("ckpt_seed" + std::to_string(seed) + ".tartckpt"))
                       .string());
    }
    return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint, std::size_t n_episodes) {
    auto data = load_data(rc);
    tart::TrainConfig cfg = rc.resolved_train();
    if (n_episodes == 0) n_episodes = cfg.test_episodes;

    fs::create_directories(rc.out_dir);
    tart::EvalReport merged;
    std::vector<double> per_seed;
    std::size_t skipped = 0;
    for (auto seed : rc.seeds) {
        tart::TrainState state = tart::load_checkpoint(checkpoint);
        tart::EvalReport rep =
            tart::evaluate(state.params, data.corpus, data.split.test_labels, cfg, n_episodes,
                           seed, data.vocab ? &*data.vocab : nullptr, rc.workers);
        per_seed.push_back(rep.mean_accuracy);
        skipped += rep.skipped_degenerate_episodes;
        merged = rep;
    }
    double mean = 0.0;
    for (double a : per_seed) mean += a;
    mean /= static_cast<double>(per_seed.size());
    merged.per_seed = per_seed;
    merged.mean_accuracy = per_seed.size() == 1 ? per_seed[0] : mean;
    merged.skipped_degenerate_episodes = skipped;

    std::string text = tart::format_eval_report(merged);
    std::ofstream(fs::path(rc.out_dir) / "eval.json") << text;
    std::cout << text;
    return 0;
}

int cmd_gradcheck() {
    tart::GradCheckReport report = tart::gradcheck_toy_episode();
    for (const auto& g : report.groups)
        std::cout << g.name << " max_rel_err " << g.max_rel_err << "\n";
    std::cout << "worst " << report.worst() << (report.passed() ? " PASS" : " FAIL") << "\n";
    return report.passed() ? 0 : 1;
}

int cmd_synth(const tart::SyntheticParams& params, std::size_t n_way, const std::string& out_dir) {
    auto [corpus, meta] = tart::make_synthetic_corpus(params);
    tart::ClassSplit split = tart::synthetic_benchmark_split(meta, params.n_classes, n_way);
    fs::create_directories(out_dir);
    tart::save_corpus(corpus, (fs::path(out_dir) / "synthetic.jsonl").string());
    tart::save_split(split, (fs::path(out_dir) / "split.json").string());
    log_info("wrote synthetic corpus (" + std::to_string(corpus.examples.size()) +
             " examples) and split to " + out_dir);
    return 0;
}

int cmd_export_embeddings(const RunConfig& rc, const std::string& checkpoint,
                          const std::string& out_path, std::uint64_t seed) {
    auto data = load_data(rc, /*need_split=*/false);
    if (data.corpus.examples.empty()) throw tart::EmptyInputError("export: corpus is empty");
    tart::TrainConfig cfg = rc.resolved_train();
    tart::TrainState state = tart::load_checkpoint(checkpoint);

    std::vector<std::string> labels;
    for (const auto& [label, idx] : data.corpus.label_index) labels.push_back(label);
    tart::Episode ep = tart::sample_episode(data.corpus, labels, cfg.n_way, cfg.k_shot,
                                            cfg.q_queries, seed);

    // One episode fixes W; every corpus example is then projected by it.
    tart::Tape tape;
    tart::EncoderGraph graph = tart::EncoderGraph::bind(tape, state.params.encoder);
    const tart::Vocab* vocab = data.vocab ? &*data.vocab : nullptr;
    std::vector<std::vector<tart::Node*>> by_class(ep.n_way);
    for (const auto& ex : ep.support) {
        tart::Node* e = ex.features.empty()
                            ? tart::encode(tape, graph, *vocab, ex.tokens)
                            : tart::encode_vector(tape, graph, ex.features);
        by_class[ex.class_id].push_back(e);
    }
    tart::PrototypeSet proto = tart::compute_prototypes(tape, by_class);
    tart::Node* r = tape.leaf(state.params.reference.r_raw);
    tart::Node* w = tart::compute_w(tape, proto, r);

    std::ofstream out(out_path);
    if (!out) throw tart::FormatError("cannot write " + out_path);
    out.precision(17);
    for (const auto& ex : data.corpus.examples) {
        tart::Node* e = ex.is_vector()
                            ? tart::encode_vector(tape, graph, ex.features)
                            : tart::encode(tape, graph, *vocab, tart::tokenize(ex.text));
        tart::Node* t = tape.matmul(e, w);
        out << ex.label;
        for (std::size_t c = 0; c < t->value.cols(); ++c) out << "\t" << t->value.at(0, c);
        out << "\n";
    }
    log_info("wrote transformed embeddings to " + out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TART: task-adaptive reference transformation for few-shot classification"};
    app.require_subcommand(1);

    RunConfig rc;

    auto* train_cmd = app.add_subcommand("train", "episodic meta-training");
    add_run_options(train_cmd, rc);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on test episodes");
    add_run_options(eval_cmd, rc);
    std::string checkpoint;
    std::size_t eval_episodes = 0;
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--episodes", eval_episodes, "test episode count (default from config)");

    auto* grad_cmd = app.add_subcommand("gradcheck",
                                        "finite-difference check of the full loss gradient");
    (void)grad_cmd;

    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic benchmark");
    tart::SyntheticParams sp;
    std::string synth_out = "synth";
    std::size_t synth_n_way = 5;
    synth_cmd->add_option("--classes", sp.n_classes, "total class count");
    synth_cmd->add_option("--per-class", sp.per_class, "examples per class");
    synth_cmd->add_option("--gap", sp.inter_class_gap, "inter-class gap of clustered classes");
    synth_cmd->add_option("--noise", sp.noise, "sample noise sigma");
    synth_cmd->add_option("--dim", sp.dim, "feature dimension");
    synth_cmd->add_option("--seed", sp.seed, "generator seed");
    synth_cmd->add_option("--n-way", synth_n_way, "episode width the split is sized for");
    synth_cmd->add_option("--out", synth_out, "output directory");

    auto* export_cmd = app.add_subcommand("export-embeddings",
                                          "transformed-space coordinates as TSV");
    add_run_options(export_cmd, rc);
    std::string export_ckpt, export_out = "embeddings.tsv";
    std::uint64_t export_seed = 1;
    export_cmd->add_option("--checkpoint", export_ckpt, "checkpoint file")->required();
    export_cmd->add_option("--output", export_out, "TSV output path");
    export_cmd->add_option("--episode-seed", export_seed, "seed of the episode that fixes W");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            apply_config_file(train_cmd, rc);
            return cmd_train(rc);
        }
        if (eval_cmd->parsed()) {
            apply_config_file(eval_cmd, rc);
            return cmd_eval(rc, checkpoint, eval_episodes);
        }
        if (grad_cmd->parsed()) return cmd_gradcheck();
        if (synth_cmd->parsed()) return cmd_synth(sp, synth_n_way, synth_out);
        if (export_cmd->parsed()) {
            apply_config_file(export_cmd, rc);
            return cmd_export_embeddings(rc, export_ckpt, export_out, export_seed);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
