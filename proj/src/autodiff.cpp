#include "tart/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tart {

Node* Tape::emplace(Matrix value) {
    nodes_.emplace_back(std::move(value));
    return &nodes_.back();
}

Node* Tape::constant(Matrix value) { return emplace(std::move(value)); }

Node* Tape::add(Node* a, Node* b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("add: shape mismatch");
    Matrix out = a->value;
    out += b->value;
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, b](const Node& self) {
        a->grad += self.grad;
        b->grad += self.grad;
    };
    return n;
}

Node* Tape::sub(Node* a, Node* b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("sub: shape mismatch");
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b->value.data()[i];
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, b](const Node& self) {
        a->grad += self.grad;
        for (std::size_t i = 0; i < b->grad.size(); ++i)
            b->grad.data()[i] -= self.grad.data()[i];
    };
    return n;
}

Node* Tape::mul(Node* a, Node* b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("mul: shape mismatch");
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b->value.data()[i];
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, b](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            a->grad.data()[i] += self.grad.data()[i] * b->value.data()[i];
            b->grad.data()[i] += self.grad.data()[i] * a->value.data()[i];
        }
    };
    return n;
}

Node* Tape::matmul(Node* a, Node* b) {
    Node* n = emplace(tart::matmul(a->value, b->value));
    n->backward_rule = [a, b](const Node& self) {
        a->grad += tart::matmul(self.grad, tart::transpose(b->value));
        b->grad += tart::matmul(tart::transpose(a->value), self.grad);
    };
    return n;
}

Node* Tape::transpose(Node* a) {
    Node* n = emplace(tart::transpose(a->value));
    n->backward_rule = [a](const Node& self) { a->grad += tart::transpose(self.grad); };
    return n;
}

Node* Tape::scale(Node* a, double s) { return affine(a, s, 0.0); }

Node* Tape::affine(Node* a, double alpha, double beta) {
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = alpha * out.data()[i] + beta;
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, alpha](const Node& self) {
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.data()[i] += alpha * self.grad.data()[i];
    };
    return n;
}

Node* Tape::exp(Node* a) {
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(out.data()[i]);
    Node* n = emplace(std::move(out));
    n->backward_rule = [a](const Node& self) {
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.data()[i] += self.grad.data()[i] * self.value.data()[i];
    };
    return n;
}

Node* Tape::log(Node* a) {
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(out.data()[i]);
    Node* n = emplace(std::move(out));
    n->backward_rule = [a](const Node& self) {
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.data()[i] += self.grad.data()[i] / a->value.data()[i];
    };
    return n;
}

Node* Tape::sqrt(Node* a) {
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::sqrt(out.data()[i]);
    Node* n = emplace(std::move(out));
    n->backward_rule = [a](const Node& self) {
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.data()[i] += self.grad.data()[i] / (2.0 * self.value.data()[i]);
    };
    return n;
}

Node* Tape::clamp_min(Node* a, double floor) {
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(out.data()[i], floor);
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, floor](const Node& self) {
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            if (a->value.data()[i] > floor) a->grad.data()[i] += self.grad.data()[i];
    };
    return n;
}

Node* Tape::div_by_scalar(Node* a, Node* s) {
    if (s->value.size() != 1) throw ShapeError("div_by_scalar: divisor must be 1x1");
    double d = s->value.at(0, 0);
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] /= d;
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, s, d](const Node& self) {
        double ds = 0.0;
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
            a->grad.data()[i] += self.grad.data()[i] / d;
            ds -= self.grad.data()[i] * self.value.data()[i] / d;
        }
        s->grad.at(0, 0) += ds;
    };
    return n;
}

Node* Tape::sum(Node* a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value.data()[i];
    Node* n = emplace(Matrix(1, 1, {s}));
    n->backward_rule = [a](const Node& self) {
        double g = self.grad.at(0, 0);
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad.data()[i] += g;
    };
    return n;
}

Node* Tape::mean_rows(Node* a) {
    std::size_t m = a->value.rows();
    if (m == 0) throw EmptyInputError("mean_rows: empty input");
    Matrix out(1, a->value.cols());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < a->value.cols(); ++c) out.at(0, c) += a->value.at(r, c);
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(0, c) /= static_cast<double>(m);
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, m](const Node& self) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < a->grad.cols(); ++c)
                a->grad.at(r, c) += self.grad.at(0, c) / static_cast<double>(m);
    };
    return n;
}

Node* Tape::row_normalize(Node* a) {
    std::size_t m = a->value.rows();
    std::size_t k = a->value.cols();
    Matrix out = a->value;
    std::vector<double> scales(m);
    for (std::size_t r = 0; r < m; ++r) {
        scales[r] = std::max(row_norm(a->value, r), kRowNormEps);
        for (std::size_t c = 0; c < k; ++c) out.at(r, c) /= scales[r];
    }
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, scales = std::move(scales)](const Node& self) {
        // Quotient rule per row. When the norm hits the eps floor the scale
        // is constant, so only the first term applies.
        std::size_t k = a->grad.cols();
        for (std::size_t r = 0; r < a->grad.rows(); ++r) {
            double s = scales[r];
            double gdoty = 0.0;
            for (std::size_t c = 0; c < k; ++c) gdoty += self.grad.at(r, c) * self.value.at(r, c);
            bool clamped = row_norm(a->value, r) <= kRowNormEps;
            for (std::size_t c = 0; c < k; ++c) {
                double g = self.grad.at(r, c) / s;
                if (!clamped) g -= self.value.at(r, c) * gdoty / s;
                a->grad.at(r, c) += g;
            }
        }
    };
    return n;
}

Matrix invert(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("inverse: matrix must be square");
    std::size_t n = a.rows();
    Matrix lu = a;
    Matrix inv = Matrix::identity(n);
    double max_pivot = 0.0, min_pivot = 0.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t best = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(lu.at(r, col)) > std::fabs(lu.at(best, col))) best = r;
        if (best != col) {
            for (std::size_t c = 0; c < n; ++c) {
                std::swap(lu.at(col, c), lu.at(best, c));
                std::swap(inv.at(col, c), inv.at(best, c));
            }
        }
        double pivot = lu.at(col, col);
        double ap = std::fabs(pivot);
        if (ap == 0.0) {
            throw SingularMatrixError("inverse: matrix is singular (zero pivot)");
        }
        max_pivot = col == 0 ? ap : std::max(max_pivot, ap);
        min_pivot = col == 0 ? ap : std::min(min_pivot, ap);
        // Gauss-Jordan elimination carried on the augmented identity.
        for (std::size_t c = 0; c < n; ++c) {
            lu.at(col, c) /= pivot;
            inv.at(col, c) /= pivot;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = lu.at(r, col);
            if (f == 0.0) continue;
            for (std::size_t c = 0; c < n; ++c) {
                lu.at(r, c) -= f * lu.at(col, c);
                inv.at(r, c) -= f * inv.at(col, c);
            }
        }
    }
    if (max_pivot / min_pivot > Tape::kConditionLimit) {
        throw SingularMatrixError("inverse: matrix is ill-conditioned "
                                  "(pivot-ratio condition estimate exceeds 1e12)");
    }
    return inv;
}

Node* Tape::inverse(Node* a) {
    Node* n = emplace(invert(a->value));
    bool corrupt = corrupt_inverse_backward;
    n->backward_rule = [a, corrupt](const Node& self) {
        // dA = -inv(A)^T . G . inv(A)^T
        Matrix invT = tart::transpose(self.value);
        Matrix d = tart::matmul(tart::matmul(invT, self.grad), invT);
        double sign = corrupt ? 1.0 : -1.0;
        for (std::size_t i = 0; i < d.size(); ++i) a->grad.data()[i] += sign * d.data()[i];
    };
    return n;
}

Node* Tape::row(Node* a, std::size_t r) {
    if (r >= a->value.rows()) throw ShapeError("row: index out of range");
    Matrix out(1, a->value.cols());
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(0, c) = a->value.at(r, c);
    Node* n = emplace(std::move(out));
    n->backward_rule = [a, r](const Node& self) {
        for (std::size_t c = 0; c < self.grad.cols(); ++c)
            a->grad.at(r, c) += self.grad.at(0, c);
    };
    return n;
}

Node* Tape::stack_rows(const std::vector<Node*>& rows) {
    if (rows.empty()) throw EmptyInputError("stack_rows: empty input");
    std::size_t k = rows[0]->value.cols();
    Matrix out(rows.size(), k);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r]->value.rows() != 1 || rows[r]->value.cols() != k)
            throw ShapeError("stack_rows: rows must all be 1xN");
        for (std::size_t c = 0; c < k; ++c) out.at(r, c) = rows[r]->value.at(0, c);
    }
    Node* n = emplace(std::move(out));
    n->backward_rule = [rows](const Node& self) {
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < self.grad.cols(); ++c)
                rows[r]->grad.at(0, c) += self.grad.at(r, c);
    };
    return n;
}

Node* Tape::dot(Node* u, Node* v) {
    if (!u->value.same_shape(v->value) || u->value.rows() != 1)
        throw ShapeError("dot: operands must be matching 1xN rows");
    double s = 0.0;
    for (std::size_t i = 0; i < u->value.size(); ++i) s += u->value.data()[i] * v->value.data()[i];
    Node* n = emplace(Matrix(1, 1, {s}));
    n->backward_rule = [u, v](const Node& self) {
        double g = self.grad.at(0, 0);
        for (std::size_t i = 0; i < u->grad.size(); ++i) {
            u->grad.data()[i] += g * v->value.data()[i];
            v->grad.data()[i] += g * u->value.data()[i];
        }
    };
    return n;
}

void Tape::backward(Node* root) {
    if (root->value.rows() != 1 || root->value.cols() != 1)
        throw ShapeError("backward: root must be a 1x1 scalar");
    if (backward_done_)
        throw Error("backward: tape has already been walked; rebuild the tape");
    backward_done_ = true;
    root->grad.at(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->backward_rule) it->backward_rule(*it);
    }
}

}  // namespace tart
