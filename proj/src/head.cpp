#include "tart/head.hpp"

#include <cmath>
#include <string>

namespace tart {

ReferenceLayer ReferenceLayer::init(std::size_t n_way, std::size_t embed_dim, Rng& rng) {
    // Fan-based uniform init keeps initial row norms O(1) before
    // normalization.
    double a = std::sqrt(6.0 / static_cast<double>(n_way + embed_dim));
    Matrix r(n_way, embed_dim);
    for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-a, a);
    return ReferenceLayer{std::move(r)};
}

PrototypeSet compute_prototypes(Tape& tape,
                                const std::vector<std::vector<Node*>>& support_by_class) {
    std::vector<Node*> proto_rows;
    proto_rows.reserve(support_by_class.size());
    for (std::size_t c = 0; c < support_by_class.size(); ++c) {
        if (support_by_class[c].empty())
            throw EmptyInputError("compute_prototypes: class " + std::to_string(c) +
                                  " has no support embeddings");
        proto_rows.push_back(tape.mean_rows(tape.stack_rows(support_by_class[c])));
    }
    Node* raw = tape.stack_rows(proto_rows);
    return PrototypeSet{raw, tape.row_normalize(raw)};
}

Node* compute_w(Tape& tape, const PrototypeSet& proto, Node* reference_raw) {
    Node* p_norm = proto.normalized;
    Node* r_norm = tape.row_normalize(reference_raw);
    Node* gram = tape.matmul(p_norm, tape.transpose(p_norm));
    Node* gram_inv;
    try {
        gram_inv = tape.inverse(gram);
    } catch (const SingularMatrixError&) {
        // Identify colliding prototypes: normalized rows with dot ~ 1.
        std::vector<std::pair<int, int>> colliding;
        const Matrix& g = gram->value;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = i + 1; j < g.cols(); ++j)
                if (std::fabs(g.at(i, j)) > 1.0 - 1e-10)
                    colliding.emplace_back(static_cast<int>(i), static_cast<int>(j));
        throw DegenerateTaskError(
            "degenerate task: normalized prototype matrix is row-rank deficient",
            std::move(colliding));
    }
    return tape.matmul(tape.matmul(tape.transpose(p_norm), gram_inv), r_norm);
}

Node* distance(Tape& tape, Node* u, Node* v, const HeadConfig& cfg) {
    if (cfg.distance == DistanceKind::SquaredEuclidean) {
        Node* diff = tape.sub(u, v);
        return tape.dot(diff, diff);
    }
    Node* uv = tape.dot(u, v);
    Node* nu = tape.sqrt(tape.dot(u, u));
    Node* nv = tape.sqrt(tape.dot(v, v));
    Node* denom = tape.clamp_min(tape.mul(nu, nv), cfg.epsilon);
    Node* cos = tape.div_by_scalar(uv, denom);
    return tape.affine(cos, -1.0, 1.0);  // 1 - cos, range [0, 2]
}

namespace {

// Distances from a transformed query to each transformed prototype row,
// as a stacked Nx1 node.
Node* distance_column(Tape& tape, Node* query_emb, const PrototypeSet& proto, Node* w,
                      const HeadConfig& cfg) {
    std::size_t n_way = proto.raw->value.rows();
    Node* tq = w ? tape.matmul(query_emb, w) : query_emb;
    Node* tp = w ? tape.matmul(proto.raw, w) : proto.raw;
    std::vector<Node*> dists;
    dists.reserve(n_way);
    for (std::size_t c = 0; c < n_way; ++c)
        dists.push_back(distance(tape, tq, tape.row(tp, c), cfg));
    return tape.stack_rows(dists);
}

double min_value(const Node* col) {
    double m = col->value.at(0, 0);
    for (std::size_t i = 1; i < col->value.rows(); ++i) m = std::min(m, col->value.at(i, 0));
    return m;
}

Node* softmax_over_neg_distances(Tape& tape, Node* dist_col) {
    // Shift by the smallest distance so exp never underflows to an
    // all-zero row; a constant shift cancels in the softmax.
    Node* weights = tape.exp(tape.affine(dist_col, -1.0, min_value(dist_col)));
    Node* z = tape.sum(weights);
    return tape.transpose(tape.div_by_scalar(weights, z));
}

Node* loss_over_queries(Tape& tape, const std::vector<Node*>& query_embs,
                        const std::vector<std::size_t>& query_classes,
                        const PrototypeSet& proto, Node* w, const HeadConfig& cfg) {
    if (query_embs.empty()) throw EmptyInputError("classification_loss: no queries");
    if (query_embs.size() != query_classes.size())
        throw ShapeError("classification_loss: query/label count mismatch");
    std::size_t n_way = proto.raw->value.rows();
    std::vector<Node*> per_query;
    per_query.reserve(query_embs.size());
    for (std::size_t q = 0; q < query_embs.size(); ++q) {
        if (query_classes[q] >= n_way)
            throw ShapeError("classification_loss: query class out of range");
        Node* dists = distance_column(tape, query_embs[q], proto, w, cfg);
        // Stabilized log-sum-exp: the constant shift cancels exactly.
        double m = min_value(dists);
        Node* log_z = tape.affine(
            tape.log(tape.sum(tape.exp(tape.affine(dists, -1.0, m)))), 1.0, -m);
        Node* d_true = tape.row(dists, query_classes[q]);
        per_query.push_back(tape.add(d_true, log_z));
    }
    return tape.mean_rows(tape.stack_rows(per_query));
}

}  // namespace

Node* classify(Tape& tape, Node* query_emb, const PrototypeSet& proto, Node* w,
               const HeadConfig& cfg) {
    return softmax_over_neg_distances(tape, distance_column(tape, query_emb, proto, w, cfg));
}

Node* proto_baseline_classify(Tape& tape, Node* query_emb, const PrototypeSet& proto,
                              const HeadConfig& cfg) {
    return softmax_over_neg_distances(tape,
                                      distance_column(tape, query_emb, proto, nullptr, cfg));
}

Node* classification_loss(Tape& tape, const std::vector<Node*>& query_embs,
                          const std::vector<std::size_t>& query_classes,
                          const PrototypeSet& proto, Node* w, const HeadConfig& cfg) {
    return loss_over_queries(tape, query_embs, query_classes, proto, w, cfg);
}

Node* proto_baseline_loss(Tape& tape, const std::vector<Node*>& query_embs,
                          const std::vector<std::size_t>& query_classes,
                          const PrototypeSet& proto, const HeadConfig& cfg) {
    return loss_over_queries(tape, query_embs, query_classes, proto, nullptr, cfg);
}

Node* drr_loss(Tape& tape, const PrototypeSet& proto, Node* w, const HeadConfig& cfg) {
    std::size_t n_way = proto.raw->value.rows();
    if (n_way < 2)
        throw DegenerateTaskError("drr_loss: need at least 2 classes");
    Node* tp = tape.matmul(proto.raw, w);
    std::vector<Node*> terms;
    terms.reserve(n_way * (n_way - 1));
    for (std::size_t i = 0; i < n_way; ++i) {
        Node* pi = tape.row(tp, i);
        for (std::size_t j = 0; j < n_way; ++j) {
            if (i == j) continue;
            terms.push_back(distance(tape, pi, tape.row(tp, j), cfg));
        }
    }
    return tape.scale(tape.sum(tape.stack_rows(terms)), -1.0);
}

Node* total_loss(Tape& tape, Node* l_cls, Node* l_drr, const HeadConfig& cfg) {
    return tape.add(l_cls, tape.scale(l_drr, cfg.lambda));
}

}  // namespace tart
