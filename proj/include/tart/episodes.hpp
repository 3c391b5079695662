#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tart/errors.hpp"

namespace tart {

/// One labeled example: free text or a pre-embedded feature vector.
struct Example {
    std::string text;
    std::vector<double> features;  // non-empty for pre-embedded corpora
    std::string label;

    bool is_vector() const { return !features.empty(); }
};

struct Corpus {
    std::vector<Example> examples;
    // Ordered map so label iteration is deterministic.
    std::map<std::string, std::vector<std::size_t>> label_index;

    void rebuild_index();
};

/// Disjoint train/val/test label sets.
struct ClassSplit {
    std::vector<std::string> train_labels;
    std::vector<std::string> val_labels;
    std::vector<std::string> test_labels;

    /// Throws ConfigError if the sets overlap.
    static ClassSplit make(std::vector<std::string> train, std::vector<std::string> val,
                           std::vector<std::string> test);
};

struct EpisodeExample {
    std::vector<std::string> tokens;
    std::vector<double> features;
    std::size_t class_id;  // 0..N-1
};

/// One N-way K-shot task: disjoint support and query sets with classes
/// relabeled 0..N-1.
struct Episode {
    std::size_t n_way, k_shot, q_queries;
    std::vector<EpisodeExample> support;  // N*K
    std::vector<EpisodeExample> query;    // N*Q
    std::vector<std::string> original_labels;  // class_id -> label
};

/// Reads one JSON object per line with string fields `text` (or numeric
/// array `vector`) and `label`.
Corpus load_corpus(const std::string& path);
Corpus parse_corpus(std::istream& in, const std::string& source_name);

void save_corpus(const Corpus& corpus, const std::string& path);
void save_split(const ClassSplit& split, const std::string& path);
ClassSplit load_split(const std::string& path);

/// Seed-deterministic sampling: n labels without replacement from
/// split_labels, then k+q examples per label (first k support, next q
/// query). Independent of any map iteration order.
Episode sample_episode(const Corpus& corpus, const std::vector<std::string>& split_labels,
                       std::size_t n, std::size_t k, std::size_t q, std::uint64_t seed);

struct SyntheticParams {
    std::size_t n_classes = 10;
    std::size_t per_class = 50;
    double inter_class_gap = 1.0;
    double noise = 1.0;
    std::size_t dim = 16;
    std::uint64_t seed = 0;
};

struct SyntheticMeta {
    std::size_t n_clustered;  // classes sharing the low-variance cluster
    std::vector<std::vector<double>> class_means;
};

/// Gaussian-cluster benchmark: half the classes packed around a shared
/// direction at pairwise distance `inter_class_gap` (the low inter-class
/// variance regime), the rest well separated. Emitted as pre-embedded
/// vectors so the text encoder is bypassed.
std::pair<Corpus, SyntheticMeta> make_synthetic_corpus(const SyntheticParams& params);

/// Disjoint split for the synthetic benchmark. Test and val each get
/// ceil(0.6 * n_way) clustered labels and the rest separated, so sampled
/// episodes sit in the low inter-class-variance regime; remaining labels
/// go to train.
ClassSplit synthetic_benchmark_split(const SyntheticMeta& meta, std::size_t n_classes,
                                     std::size_t n_way);

}  // namespace tart
