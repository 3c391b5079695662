#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "tart/matrix.hpp"

namespace tart {

/// Autodiff graph vertex. Holds a value and a same-shaped gradient
/// accumulator; the backward rule is a closure over parent nodes.
struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(const Node&)> backward_rule;  // null for leaves/constants

    explicit Node(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
};

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// valid topological order; backward() walks it in reverse exactly once.
///
/// A tape and its nodes are confined to one thread. Rebuild per episode.
class Tape {
  public:
    Node* constant(Matrix value);

    /// A leaf with gradient tracking; grads are read back after backward().
    Node* leaf(Matrix value) { return constant(std::move(value)); }

    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* mul(Node* a, Node* b);  // elementwise (Hadamard)
    Node* matmul(Node* a, Node* b);
    Node* transpose(Node* a);
    Node* scale(Node* a, double s);
    /// alpha * a + beta, elementwise.
    Node* affine(Node* a, double alpha, double beta);
    Node* exp(Node* a);
    Node* log(Node* a);
    Node* sqrt(Node* a);
    /// max(a, floor) elementwise; gradient passes only where a > floor.
    Node* clamp_min(Node* a, double floor);
    /// Elementwise a / s where s is 1x1.
    Node* div_by_scalar(Node* a, Node* s);
    Node* sum(Node* a);        // 1x1
    Node* mean_rows(Node* a);  // 1xN column means
    Node* row_normalize(Node* a);
    Node* inverse(Node* a);
    Node* row(Node* a, std::size_t r);  // 1xN view of one row
    Node* stack_rows(const std::vector<Node*>& rows);
    Node* dot(Node* u, Node* v);  // 1x1 inner product of 1xN rows

    /// Seeds the scalar root with 1 and accumulates grads through the tape.
    /// A tape can only be walked backward once.
    void backward(Node* root);

    std::size_t node_count() const { return nodes_.size(); }

    /// Test hook: corrupts the inverse backward rule so gradient checks fail.
    bool corrupt_inverse_backward = false;

    static constexpr double kRowNormEps = 1e-12;
    static constexpr double kConditionLimit = 1e12;

  private:
    Node* emplace(Matrix value);

    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

/// LU factorization with partial pivoting; throws SingularMatrixError when
/// the pivot-ratio condition estimate exceeds Tape::kConditionLimit.
Matrix invert(const Matrix& a);

}  // namespace tart
