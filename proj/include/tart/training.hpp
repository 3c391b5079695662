#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "tart/encoder.hpp"
#include "tart/episodes.hpp"
#include "tart/head.hpp"

namespace tart {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t episodes_per_epoch = 100;
    std::size_t patience_epochs = 20;
    std::size_t max_epochs = 1000;
    std::size_t test_episodes = 1000;
    std::size_t val_episodes = 100;
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_queries = 5;
    std::size_t input_dim = 0;    // D; 0 means take it from the data
    std::size_t embed_dim = 256;  // E, the reference dimension
    HeadConfig head;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool use_tart = true;  // false: PROTO baseline (identity transformation)

    void validate() const;
};

struct ModelParams {
    MeanAffineEncoder encoder;
    ReferenceLayer reference;

    static ModelParams init(std::size_t input_dim, std::size_t embed_dim, std::size_t n_way,
                            Rng& rng, EmbeddingTable table = {});
    std::map<std::string, Matrix*> named();
    std::map<std::string, const Matrix*> named() const;
};

struct TrainState {
    ModelParams params;
    std::map<std::string, Matrix> adam_m;
    std::map<std::string, Matrix> adam_v;
    std::size_t step = 0;
    double best_val_acc = 0.0;
    std::size_t epochs_since_improvement = 0;
};

struct EvalReport {
    double mean_accuracy = 0.0;
    double ci95 = 0.0;
    std::size_t n_episodes = 0;
    std::vector<double> per_seed;
    std::size_t skipped_degenerate_episodes = 0;
    bool all_degenerate = false;
};

/// Leaf handles for one episode's loss graph.
struct EpisodeLoss {
    Node* total;
    Node* cls;
    Node* drr;  // null for the PROTO baseline
    Node* projection;
    Node* bias;
    Node* r_raw;       // null for the PROTO baseline
    Node* embeddings;  // null when the table is frozen
};

/// Builds the full loss graph for one episode on the given tape.
/// `vocab` may be null for pre-embedded corpora.
EpisodeLoss build_episode_loss(Tape& tape, const Episode& episode, const ModelParams& params,
                               const Vocab* vocab, const TrainConfig& cfg);

/// Query accuracy of one episode under a parameter snapshot (argmax with
/// ties broken toward the lowest class id). Throws DegenerateTaskError.
double evaluate_episode(const Episode& episode, const ModelParams& params, const Vocab* vocab,
                        const TrainConfig& cfg);

/// Standard Adam with bias correction, one step over all named parameters.
void adam_step(TrainState& state, const std::map<std::string, const Matrix*>& grads,
               const TrainConfig& cfg);

/// Algorithm: per epoch, episodes_per_epoch sampled training episodes each
/// take one optimizer step; early-stops when validation accuracy has not
/// improved for patience_epochs. Returns the best-validation state.
TrainState train(const Corpus& corpus, const ClassSplit& split, const TrainConfig& cfg,
                 std::uint64_t run_seed, const Vocab* vocab = nullptr,
                 const EmbeddingTable* table = nullptr, std::ostream* log = nullptr);

/// Mean accuracy and 95% CI over n_episodes test episodes; degenerate
/// episodes are skipped and counted. `workers` > 1 fans episodes out over
/// threads without changing the result.
EvalReport evaluate(const ModelParams& params, const Corpus& corpus,
                    const std::vector<std::string>& labels, const TrainConfig& cfg,
                    std::size_t n_episodes, std::uint64_t run_seed, const Vocab* vocab = nullptr,
                    std::size_t workers = 1);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

std::string format_eval_report(const EvalReport& report);

struct GradCheckGroup {
    std::string name;
    double max_rel_err;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double worst() const;
    bool passed(double tol = 1e-4) const { return worst() <= tol; }
};

/// Full-loss finite-difference check on a fixed 3-way 2-shot toy episode
/// with embed_dim 8 (exercises backprop through the pseudoinverse).
/// `corrupt_inverse` is a test hook that breaks the inverse backward rule.
GradCheckReport gradcheck_toy_episode(bool corrupt_inverse = false, double fd_step = 1e-5);

}  // namespace tart
