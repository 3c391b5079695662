#include <doctest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "tart/autodiff.hpp"

using namespace tart;
using testutil::fd_grad;
using testutil::max_rel_err;
using testutil::random_matrix;

TEST_CASE("matrix construction validates shape and finiteness") {
    CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Matrix::from_external(1, 2, {1.0, std::nan("")}), FormatError);
    CHECK_THROWS_AS(Matrix::from_external(1, 1, {INFINITY}), FormatError);
    Matrix m = Matrix::from_external(2, 2, {1, 2, 3, 4});
    CHECK(m.at(1, 0) == 3.0);
}

TEST_CASE("matmul value") {
    Tape tape;
    Node* i2 = tape.constant(Matrix::identity(2));
    Node* m = tape.constant(Matrix(2, 2, {1, 2, 3, 4}));
    CHECK(tape.matmul(i2, m)->value == m->value);

    Node* v = tape.constant(Matrix(2, 1, {1, 1}));
    Node* p = tape.matmul(m, v);
    CHECK(p->value.at(0, 0) == 3.0);
    CHECK(p->value.at(1, 0) == 7.0);

    CHECK_THROWS_AS(tape.matmul(v, m), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(42);
    Matrix a = random_matrix(3, 4, rng);
    Matrix b = random_matrix(4, 2, rng);

    Tape tape;
    Node* na = tape.leaf(a);
    Node* nb = tape.leaf(b);
    Node* root = tape.sum(tape.matmul(na, nb));
    tape.backward(root);

    auto fa = [&] {
        Tape t;
        return t.sum(t.matmul(t.constant(a), t.constant(b)))->value.at(0, 0);
    };
    CHECK(max_rel_err(na->grad, fd_grad(a, fa)) <= 1e-6);
    CHECK(max_rel_err(nb->grad, fd_grad(b, fa)) <= 1e-6);
}

TEST_CASE("inverse value") {
    Tape tape;
    Node* i3 = tape.inverse(tape.constant(Matrix::identity(3)));
    CHECK(max_abs(i3->value) == 1.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(i3->value.at(i, i) == 1.0);

    Node* d = tape.inverse(tape.constant(Matrix(2, 2, {2, 0, 0, 4})));
    CHECK(d->value.at(0, 0) == 0.5);
    CHECK(d->value.at(1, 1) == 0.25);
    CHECK(d->value.at(0, 1) == 0.0);
}

TEST_CASE("inverse residual bound on well-conditioned inputs") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        // Diagonally dominant, hence condition far below 1e6.
        Matrix a = random_matrix(5, 5, rng);
        for (std::size_t i = 0; i < 5; ++i) a.at(i, i) += 10.0;
        Matrix inv = invert(a);
        Matrix residual = matmul(a, inv);
        for (std::size_t i = 0; i < 5; ++i) residual.at(i, i) -= 1.0;
        CHECK(max_abs(residual) <= 1e-10);
    }
}

TEST_CASE("inverse rejects singular and ill-conditioned matrices") {
    CHECK_THROWS_AS(invert(Matrix(2, 2, {1, 2, 2, 4})), SingularMatrixError);
    CHECK_THROWS_AS(invert(Matrix(2, 2, {1, 0, 0, 1e-14})), SingularMatrixError);
    CHECK_THROWS_AS(invert(Matrix(2, 3, {1, 0, 0, 0, 1, 0})), ShapeError);
}

TEST_CASE("inverse gradient vs finite differences") {
    Rng rng(11);
    Matrix a = random_matrix(5, 5, rng);
    for (std::size_t i = 0; i < 5; ++i) a.at(i, i) += 10.0;

    Tape tape;
    Node* na = tape.leaf(a);
    Node* root = tape.sum(tape.inverse(na));
    tape.backward(root);

    auto f = [&] {
        Tape t;
        return t.sum(t.inverse(t.constant(a)))->value.at(0, 0);
    };
    CHECK(max_rel_err(na->grad, fd_grad(a, f)) <= 1e-6);
}

TEST_CASE("row_normalize values") {
    Tape tape;
    Node* n = tape.row_normalize(tape.constant(Matrix(1, 2, {3, 4})));
    CHECK(n->value.at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(n->value.at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));

    Node* z = tape.row_normalize(tape.constant(Matrix(1, 2, {0, 0})));
    CHECK(z->value.at(0, 0) == 0.0);
    CHECK(z->value.at(0, 1) == 0.0);
}

TEST_CASE("row_normalize output row norms are 0 or 1") {
    Rng rng(3);
    Matrix a = random_matrix(4, 6, rng, 2.0);
    Tape tape;
    Node* n = tape.row_normalize(tape.constant(a));
    for (std::size_t r = 0; r < 4; ++r) {
        double norm = row_norm(n->value, r);
        CHECK((norm == 0.0 || (norm >= 1.0 - 1e-9 && norm <= 1.0 + 1e-9)));
    }
}

TEST_CASE("row_normalize gradient vs finite differences") {
    Rng rng(5);
    Matrix a = random_matrix(3, 4, rng);
    Matrix w = random_matrix(3, 4, rng);  // weights make the objective non-symmetric

    Tape tape;
    Node* na = tape.leaf(a);
    Node* root = tape.sum(tape.mul(tape.row_normalize(na), tape.constant(w)));
    tape.backward(root);

    auto f = [&] {
        Tape t;
        return t.sum(t.mul(t.row_normalize(t.constant(a)), t.constant(w)))->value.at(0, 0);
    };
    CHECK(max_rel_err(na->grad, fd_grad(a, f)) <= 1e-6);
}

TEST_CASE("mean_rows values and summation oracle") {
    Tape tape;
    Node* single = tape.mean_rows(tape.constant(Matrix(1, 3, {1, 2, 3})));
    CHECK(single->value == Matrix(1, 3, {1, 2, 3}));

    Node* sym = tape.mean_rows(tape.constant(Matrix(2, 2, {1, 0, 0, 1})));
    CHECK(sym->value.at(0, 0) == 0.5);
    CHECK(sym->value.at(0, 1) == 0.5);

    Rng rng(9);
    Matrix a = random_matrix(7, 3, rng);
    Node* mean = tape.mean_rows(tape.constant(a));
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < 7; ++r) s += a.at(r, c);
        CHECK(std::fabs(mean->value.at(0, c) - s / 7.0) <= 1e-12);
    }

    CHECK_THROWS_AS(tape.mean_rows(tape.constant(Matrix(0, 3))), EmptyInputError);
}

TEST_CASE("mean_rows gradient distributes G/m") {
    Rng rng(13);
    Matrix a = random_matrix(4, 3, rng);
    Matrix w = random_matrix(1, 3, rng);

    Tape tape;
    Node* na = tape.leaf(a);
    Node* root = tape.sum(tape.mul(tape.mean_rows(na), tape.constant(w)));
    tape.backward(root);

    auto f = [&] {
        Tape t;
        return t.sum(t.mul(t.mean_rows(t.constant(a)), t.constant(w)))->value.at(0, 0);
    };
    CHECK(max_rel_err(na->grad, fd_grad(a, f)) <= 1e-6);
}

TEST_CASE("elementwise ops: values and finite differences") {
    Tape tape;
    Node* x = tape.constant(Matrix(1, 2, {1, 2}));
    Node* y = tape.constant(Matrix(1, 2, {3, 4}));
    CHECK(tape.add(x, y)->value == Matrix(1, 2, {4, 6}));
    CHECK(tape.sub(y, x)->value == Matrix(1, 2, {2, 2}));
    CHECK(tape.mul(x, y)->value == Matrix(1, 2, {3, 8}));
    CHECK(tape.scale(x, 2.0)->value == Matrix(1, 2, {2, 4}));
    CHECK(tape.transpose(x)->value == Matrix(2, 1, {1, 2}));
    CHECK(tape.exp(tape.constant(Matrix(1, 1, {0.0})))->value.at(0, 0) == 1.0);
    CHECK(tape.log(tape.constant(Matrix(1, 1, {1.0})))->value.at(0, 0) == 0.0);
    CHECK(tape.sqrt(tape.constant(Matrix(1, 1, {9.0})))->value.at(0, 0) == 3.0);

    Rng rng(17);
    Matrix a = random_matrix(2, 3, rng);
    Matrix b = random_matrix(2, 3, rng);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = std::fabs(a.data()[i]) + 0.5;

    auto check_fd = [&](auto build) {
        Tape t;
        Node* na = t.leaf(a);
        Node* nb = t.leaf(b);
        Node* root = build(t, na, nb);
        t.backward(root);
        auto f = [&] {
            Tape t2;
            Node* ca = t2.constant(a);
            Node* cb = t2.constant(b);
            return build(t2, ca, cb)->value.at(0, 0);
        };
        CHECK(max_rel_err(na->grad, fd_grad(a, f)) <= 1e-6);
        CHECK(max_rel_err(nb->grad, fd_grad(b, f)) <= 1e-6);
    };
    check_fd([](Tape& t, Node* x_, Node* y_) { return t.sum(t.add(x_, y_)); });
    check_fd([](Tape& t, Node* x_, Node* y_) { return t.sum(t.mul(t.sub(x_, y_), y_)); });
    check_fd([](Tape& t, Node* x_, Node* y_) { return t.sum(t.mul(t.exp(t.scale(y_, 0.3)), x_)); });
    check_fd([](Tape& t, Node* x_, Node* y_) { return t.sum(t.mul(t.log(x_), y_)); });
    check_fd([](Tape& t, Node* x_, Node* y_) { return t.sum(t.mul(t.sqrt(x_), y_)); });
    check_fd([](Tape& t, Node* x_, Node* y_) {
        return t.sum(t.div_by_scalar(y_, t.sum(t.mul(x_, x_))));
    });
}

TEST_CASE("backward contracts") {
    SUBCASE("constant root leaves parameter grads zero") {
        Tape tape;
        Node* w = tape.leaf(Matrix(2, 2, {1, 2, 3, 4}));
        Node* c = tape.constant(Matrix(1, 1, {5.0}));
        tape.backward(c);
        CHECK(max_abs(w->grad) == 0.0);
    }

    SUBCASE("sum of squares has gradient 2W") {
        Tape tape;
        Matrix w(2, 2, {1, -2, 3, 0.5});
        Node* nw = tape.leaf(w);
        tape.backward(tape.sum(tape.mul(nw, nw)));
        for (std::size_t i = 0; i < w.size(); ++i)
            CHECK(nw->grad.data()[i] == 2.0 * w.data()[i]);
    }

    SUBCASE("non-scalar root is a shape error") {
        Tape tape;
        Node* w = tape.leaf(Matrix(2, 2));
        CHECK_THROWS_AS(tape.backward(w), ShapeError);
    }

    SUBCASE("second backward on one tape is an error") {
        Tape tape;
        Node* root = tape.sum(tape.leaf(Matrix(2, 2, {1, 2, 3, 4})));
        tape.backward(root);
        CHECK_THROWS_AS(tape.backward(root), Error);
    }

    SUBCASE("backward is deterministic across identical tapes") {
        auto run = [] {
            Rng rng(23);
            Tape tape;
            Node* a = tape.leaf(random_matrix(3, 3, rng));
            Node* b = tape.leaf(random_matrix(3, 3, rng));
            Node* root = tape.sum(tape.mul(tape.row_normalize(tape.matmul(a, b)), b));
            tape.backward(root);
            return std::pair(a->grad, b->grad);
        };
        auto [ga1, gb1] = run();
        auto [ga2, gb2] = run();
        CHECK(ga1 == ga2);
        CHECK(gb1 == gb2);
    }
}

TEST_CASE("centering identity: rows minus column means sum to zero") {
    Rng rng(29);
    Matrix a = random_matrix(6, 4, rng, 3.0);
    Tape tape;
    Node* na = tape.constant(a);
    Node* mean = tape.mean_rows(na);
    std::vector<Node*> centered;
    for (std::size_t r = 0; r < a.rows(); ++r)
        centered.push_back(tape.sub(tape.row(na, r), mean));
    Node* stacked = tape.stack_rows(centered);
    Node* colsum = tape.mean_rows(stacked);  // zero iff columns sum to zero
    CHECK(max_abs(colsum->value) <= 1e-12);
}
