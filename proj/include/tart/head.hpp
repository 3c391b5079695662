#pragma once

#include <vector>

#include "tart/autodiff.hpp"
#include "tart/matrix.hpp"
#include "tart/rng.hpp"

namespace tart {

enum class DistanceKind { Cosine, SquaredEuclidean };

struct HeadConfig {
    DistanceKind distance = DistanceKind::Cosine;
    double lambda = 0.5;
    double epsilon = 1e-8;  // cosine denominator guard
};

/// Learnable per-class reference vectors r_1..r_N (pre-normalization).
struct ReferenceLayer {
    Matrix r_raw;  // N x E

    static ReferenceLayer init(std::size_t n_way, std::size_t embed_dim, Rng& rng);
};

/// Class prototypes for one episode: row c is the mean of class-c support
/// embeddings, plus the row-normalized variant used to solve for W.
struct PrototypeSet {
    Node* raw;         // N x E
    Node* normalized;  // N x E
};

PrototypeSet compute_prototypes(Tape& tape,
                                const std::vector<std::vector<Node*>>& support_by_class);

/// Task-adaptive transformation: the minimum-norm solution of
/// P_norm W = R_norm via the right pseudoinverse P^T (P P^T)^-1.
/// Throws DegenerateTaskError when the normalized prototypes are
/// row-rank deficient.
Node* compute_w(Tape& tape, const PrototypeSet& proto, Node* reference_raw);

/// Scalar distance between two 1xE rows.
Node* distance(Tape& tape, Node* u, Node* v, const HeadConfig& cfg);

/// Softmax class probabilities over distances between the transformed query
/// and each transformed (raw) prototype. 1xN output.
Node* classify(Tape& tape, Node* query_emb, const PrototypeSet& proto, Node* w,
               const HeadConfig& cfg);

/// PROTO baseline: nearest-prototype softmax with no transformation.
Node* proto_baseline_classify(Tape& tape, Node* query_emb, const PrototypeSet& proto,
                              const HeadConfig& cfg);

/// Mean over queries of d(qW, p_true W) + log sum_c exp(-d(qW, p_c W)).
Node* classification_loss(Tape& tape, const std::vector<Node*>& query_embs,
                          const std::vector<std::size_t>& query_classes,
                          const PrototypeSet& proto, Node* w, const HeadConfig& cfg);

/// Baseline variant of the classification loss (identity transformation).
Node* proto_baseline_loss(Tape& tape, const std::vector<Node*>& query_embs,
                          const std::vector<std::size_t>& query_classes,
                          const PrototypeSet& proto, const HeadConfig& cfg);

/// Discriminative reference regularization: -sum over ordered pairs i != j
/// of d(p_i W, p_j W).
Node* drr_loss(Tape& tape, const PrototypeSet& proto, Node* w, const HeadConfig& cfg);

/// L = L_cls + lambda * L_drr.
Node* total_loss(Tape& tape, Node* l_cls, Node* l_drr, const HeadConfig& cfg);

}  // namespace tart
