#include <doctest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "tart/head.hpp"

using namespace tart;
using testutil::random_matrix;

namespace {

HeadConfig cosine_cfg(double lambda = 0.5) {
    HeadConfig cfg;
    cfg.lambda = lambda;
    return cfg;
}

// Independent step-by-step recomputation with plain Matrix algebra:
// prototypes -> normalize -> W -> distances -> softmax.
Matrix oracle_probs(const Matrix& proto_raw, const Matrix& r_raw, const Matrix& query) {
    std::size_t n = proto_raw.rows();
    Matrix p_norm = proto_raw, r_norm = r_raw;
    for (std::size_t r = 0; r < n; ++r) {
        double np = std::max(row_norm(p_norm, r), 1e-12);
        double nr = std::max(row_norm(r_norm, r), 1e-12);
        for (std::size_t c = 0; c < p_norm.cols(); ++c) {
            p_norm.at(r, c) /= np;
            r_norm.at(r, c) /= nr;
        }
    }
    Matrix w = matmul(matmul(transpose(p_norm), invert(matmul(p_norm, transpose(p_norm)))),
                      r_norm);
    Matrix tq = matmul(query, w);
    Matrix tp = matmul(proto_raw, w);
    Matrix probs(1, n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        double dot = 0.0, nq = 0.0, np = 0.0;
        for (std::size_t j = 0; j < tq.cols(); ++j) {
            dot += tq.at(0, j) * tp.at(c, j);
            nq += tq.at(0, j) * tq.at(0, j);
            np += tp.at(c, j) * tp.at(c, j);
        }
        double d = 1.0 - dot / std::max(std::sqrt(nq) * std::sqrt(np), 1e-8);
        probs.at(0, c) = std::exp(-d);
        z += probs.at(0, c);
    }
    for (std::size_t c = 0; c < n; ++c) probs.at(0, c) /= z;
    return probs;
}

}  // namespace

TEST_CASE("compute_prototypes") {
    Tape tape;
    SUBCASE("mean of identical copies is the copy") {
        Node* v = tape.constant(Matrix(1, 3, {1, 2, 3}));
        auto proto = compute_prototypes(tape, {{v, v, v}, {v, v, v}});
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(proto.raw->value.at(0, c) == v->value.at(0, c));
    }
    SUBCASE("45 degree normalization") {
        Node* a = tape.constant(Matrix(1, 2, {2, 0}));
        Node* b = tape.constant(Matrix(1, 2, {0, 2}));
        Node* c = tape.constant(Matrix(1, 2, {5, 0}));
        auto proto = compute_prototypes(tape, {{a, b}, {c}});
        CHECK(proto.raw->value.at(0, 0) == 1.0);
        CHECK(proto.raw->value.at(0, 1) == 1.0);
        double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        CHECK(proto.normalized->value.at(0, 0) == doctest::Approx(inv_sqrt2).epsilon(1e-12));
        CHECK(proto.normalized->value.at(0, 1) == doctest::Approx(inv_sqrt2).epsilon(1e-12));
    }
    SUBCASE("5-way 3-shot matches per-class summation oracle") {
        Rng rng(41);
        std::vector<std::vector<Node*>> by_class(5);
        std::vector<std::vector<Matrix>> raw(5);
        for (int c = 0; c < 5; ++c)
            for (int k = 0; k < 3; ++k) {
                Matrix m = random_matrix(1, 6, rng);
                raw[c].push_back(m);
                by_class[c].push_back(tape.constant(m));
            }
        auto proto = compute_prototypes(tape, by_class);
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t j = 0; j < 6; ++j) {
                double s = (raw[c][0].at(0, j) + raw[c][1].at(0, j) + raw[c][2].at(0, j)) / 3.0;
                CHECK(std::fabs(proto.raw->value.at(c, j) - s) <= 1e-12);
            }
    }
    SUBCASE("empty class is an error") {
        Node* v = tape.constant(Matrix(1, 3, {1, 2, 3}));
        CHECK_THROWS_AS(compute_prototypes(tape, {{v}, {}}), EmptyInputError);
    }
}

TEST_CASE("compute_w solves P_norm W = R_norm") {
    SUBCASE("orthonormal rows, R = P: W is the projection P^T P") {
        Tape tape;
        Node* p = tape.constant(Matrix(2, 3, {1, 0, 0, 0, 1, 0}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = compute_w(tape, proto, p);
        Matrix expect = matmul(transpose(p->value), p->value);
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(w->value.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
        Matrix resid = matmul(proto.normalized->value, w->value);
        for (std::size_t i = 0; i < resid.size(); ++i) resid.data()[i] -= p->value.data()[i];
        CHECK(frobenius_norm(resid) <= 1e-8);
    }
    SUBCASE("closed form for axis-aligned P and permuted R") {
        Tape tape;
        Node* p = tape.constant(Matrix(2, 3, {1, 0, 0, 0, 1, 0}));
        Node* r = tape.constant(Matrix(2, 3, {0, 0, 1, 0, 1, 0}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = compute_w(tape, proto, r);
        Matrix expect(3, 3, {0, 0, 1, 0, 1, 0, 0, 0, 0});
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(w->value.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
    }
    SUBCASE("defining property holds for random full-row-rank inputs") {
        Rng rng(43);
        for (int trial = 0; trial < 10; ++trial) {
            Tape tape;
            Node* p = tape.constant(random_matrix(4, 16, rng));
            Node* r = tape.constant(random_matrix(4, 16, rng));
            PrototypeSet proto{p, tape.row_normalize(p)};
            Node* w = compute_w(tape, proto, r);
            Matrix resid = matmul(proto.normalized->value, w->value);
            Matrix r_norm = tape.row_normalize(r)->value;
            for (std::size_t i = 0; i < resid.size(); ++i) resid.data()[i] -= r_norm.data()[i];
            CHECK(frobenius_norm(resid) <= 1e-8);

            // Moore-Penrose right-inverse identity: P_norm P^+ = I.
            Matrix pn = proto.normalized->value;
            Matrix pplus = matmul(transpose(pn), invert(matmul(pn, transpose(pn))));
            Matrix eye = matmul(pn, pplus);
            for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) -= 1.0;
            CHECK(max_abs(eye) <= 1e-8);
        }
    }
    SUBCASE("identical prototypes raise DegenerateTaskError naming the pair") {
        Tape tape;
        Node* p = tape.constant(Matrix(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 2, 0, 0, 0}));
        Rng rng(1);
        Node* r = tape.constant(random_matrix(3, 4, rng));
        PrototypeSet proto{p, tape.row_normalize(p)};
        try {
            compute_w(tape, proto, r);
            FAIL("expected DegenerateTaskError");
        } catch (const DegenerateTaskError& e) {
            REQUIRE(e.colliding_classes.size() == 1);
            CHECK(e.colliding_classes[0].first == 0);
            CHECK(e.colliding_classes[0].second == 2);
        }
    }
}

TEST_CASE("distance") {
    Tape tape;
    HeadConfig cfg = cosine_cfg();
    Node* u = tape.constant(Matrix(1, 2, {1, 0}));
    Node* v = tape.constant(Matrix(1, 2, {0, 1}));
    Node* nu = tape.constant(Matrix(1, 2, {-1, 0}));
    CHECK(distance(tape, u, u, cfg)->value.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(distance(tape, u, v, cfg)->value.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(distance(tape, u, nu, cfg)->value.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

    HeadConfig sq;
    sq.distance = DistanceKind::SquaredEuclidean;
    CHECK(distance(tape, u, v, sq)->value.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(distance(tape, u, u, sq)->value.at(0, 0) == 0.0);
}

TEST_CASE("classify") {
    HeadConfig cfg = cosine_cfg();
    SUBCASE("equidistant prototypes give the uniform distribution") {
        Tape tape;
        // Query orthogonal to all three prototypes: cosine distance 1 each.
        Node* p = tape.constant(Matrix(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* q = tape.constant(Matrix(1, 4, {0, 0, 0, 1}));
        Node* probs = proto_baseline_classify(tape, q, proto, cfg);
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(probs->value.at(0, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("query equal to a singleton prototype wins its class") {
        Rng rng(47);
        Tape tape;
        Matrix praw = random_matrix(4, 8, rng);
        Node* p = tape.constant(praw);
        Node* r = tape.constant(random_matrix(4, 8, rng));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = compute_w(tape, proto, r);
        for (std::size_t c = 0; c < 4; ++c) {
            Node* q = tape.row(p, c);
            Node* probs = classify(tape, q, proto, w, cfg);
            std::size_t best = 0;
            for (std::size_t j = 1; j < 4; ++j)
                if (probs->value.at(0, j) > probs->value.at(0, best)) best = j;
            CHECK(best == c);
        }
    }
    SUBCASE("matches the step-by-step oracle to 1e-10") {
        Matrix praw(3, 4, {0.9, 0.2, -0.3, 0.5, -0.4, 1.1, 0.7, -0.2, 0.1, -0.6, 0.8, 1.3});
        Matrix rraw(3, 4, {1.0, -0.2, 0.4, 0.3, -0.5, 0.9, -0.1, 0.7, 0.2, 0.3, -1.1, 0.6});
        Matrix query(1, 4, {0.7, -0.1, 0.4, 0.9});

        Tape tape;
        Node* p = tape.constant(praw);
        Node* r = tape.constant(rraw);
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = compute_w(tape, proto, r);
        Node* probs = classify(tape, tape.constant(query), proto, w, cosine_cfg());

        Matrix expect = oracle_probs(praw, rraw, query);
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(std::fabs(probs->value.at(0, c) - expect.at(0, c)) <= 1e-10);
    }
    SUBCASE("probabilities lie in (0,1) and sum to 1; cosine is scale-invariant") {
        Rng rng(53);
        for (int trial = 0; trial < 20; ++trial) {
            Tape tape;
            Node* p = tape.constant(random_matrix(5, 12, rng));
            Node* r = tape.constant(random_matrix(5, 12, rng));
            PrototypeSet proto{p, tape.row_normalize(p)};
            Node* w = compute_w(tape, proto, r);
            Matrix q = random_matrix(1, 12, rng);
            Node* probs = classify(tape, tape.constant(q), proto, w, cosine_cfg());
            double sum = 0.0;
            for (std::size_t c = 0; c < 5; ++c) {
                double pc = probs->value.at(0, c);
                CHECK(pc > 0.0);
                CHECK(pc < 1.0);
                sum += pc;
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-9);

            double alpha = 0.1 + 5.0 * rng.next_double();
            Matrix qs = q;
            for (std::size_t i = 0; i < qs.size(); ++i) qs.data()[i] *= alpha;
            Node* probs2 = classify(tape, tape.constant(qs), proto, w, cosine_cfg());
            for (std::size_t c = 0; c < 5; ++c)
                CHECK(std::fabs(probs->value.at(0, c) - probs2->value.at(0, c)) <= 1e-9);
        }
    }
}

TEST_CASE("classification_loss") {
    HeadConfig cfg = cosine_cfg();
    SUBCASE("uniform softmax gives log N") {
        Tape tape;
        Node* p = tape.constant(Matrix(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* r = tape.constant(Matrix(3, 4, {0, 1, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0}));
        Node* w = compute_w(tape, proto, r);
        // In the reference space all transformed prototypes are axes; a query
        // mapping to the fourth axis is equidistant from all of them.
        Node* q = tape.constant(Matrix(1, 4, {0, 0, 0, 1}));
        Node* loss = classification_loss(tape, {q}, {0}, proto, w, cfg);
        CHECK(loss->value.at(0, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-10));
    }
    SUBCASE("equals mean negative log probability of the true class") {
        Rng rng(59);
        Tape tape;
        Node* p = tape.constant(random_matrix(3, 8, rng));
        Node* r = tape.constant(random_matrix(3, 8, rng));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = compute_w(tape, proto, r);
        std::vector<Node*> queries;
        std::vector<std::size_t> labels;
        double neg_log_sum = 0.0;
        for (int i = 0; i < 6; ++i) {
            Node* q = tape.constant(random_matrix(1, 8, rng));
            std::size_t y = i % 3;
            queries.push_back(q);
            labels.push_back(y);
            neg_log_sum -= std::log(classify(tape, q, proto, w, cfg)->value.at(0, y));
        }
        Node* loss = classification_loss(tape, queries, labels, proto, w, cfg);
        CHECK(std::fabs(loss->value.at(0, 0) - neg_log_sum / 6.0) <= 1e-10);
    }
}

TEST_CASE("drr_loss") {
    HeadConfig cfg = cosine_cfg();
    SUBCASE("identical transformed prototypes give zero") {
        Tape tape;
        Node* p = tape.constant(Matrix(2, 3, {1, 2, 3, 1, 2, 3}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = tape.constant(Matrix::identity(3));
        CHECK(drr_loss(tape, proto, w, cfg)->value.at(0, 0) ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("two orthogonal transformed prototypes give -2") {
        Tape tape;
        Node* p = tape.constant(Matrix(2, 2, {1, 0, 0, 1}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = tape.constant(Matrix::identity(2));
        CHECK(drr_loss(tape, proto, w, cfg)->value.at(0, 0) ==
              doctest::Approx(-2.0).epsilon(1e-12));
    }
    SUBCASE("ordered-pair sum is twice the unordered sum and stays in range") {
        Rng rng(61);
        Tape tape;
        Node* p = tape.constant(random_matrix(4, 6, rng));
        Node* r = tape.constant(random_matrix(4, 6, rng));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = compute_w(tape, proto, r);
        double loss = drr_loss(tape, proto, w, cfg)->value.at(0, 0);

        Matrix tp = matmul(p->value, w->value);
        double unordered = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = i + 1; j < 4; ++j) {
                double dot = 0.0, ni = 0.0, nj = 0.0;
                for (std::size_t c = 0; c < 6; ++c) {
                    dot += tp.at(i, c) * tp.at(j, c);
                    ni += tp.at(i, c) * tp.at(i, c);
                    nj += tp.at(j, c) * tp.at(j, c);
                }
                unordered += 1.0 - dot / std::max(std::sqrt(ni) * std::sqrt(nj), 1e-8);
            }
        CHECK(std::fabs(loss - (-2.0 * unordered)) <= 1e-12);
        CHECK(loss <= 0.0);
        CHECK(loss >= -2.0 * 4 * 3);
    }
    SUBCASE("fewer than two classes is degenerate") {
        Tape tape;
        Node* p = tape.constant(Matrix(1, 3, {1, 0, 0}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = tape.constant(Matrix::identity(3));
        CHECK_THROWS_AS(drr_loss(tape, proto, w, cfg), DegenerateTaskError);
    }
}

TEST_CASE("total_loss combines with lambda") {
    Tape tape;
    Node* cls = tape.constant(Matrix(1, 1, {1.0}));
    Node* drr = tape.constant(Matrix(1, 1, {-2.0}));
    CHECK(total_loss(tape, cls, drr, cosine_cfg(0.0))->value.at(0, 0) == 1.0);
    CHECK(total_loss(tape, cls, drr, cosine_cfg(0.5))->value.at(0, 0) == 0.0);
    for (double lambda : {0.3, 0.5, 0.7, 0.9})
        CHECK(total_loss(tape, cls, drr, cosine_cfg(lambda))->value.at(0, 0) ==
              doctest::Approx(1.0 - 2.0 * lambda).epsilon(1e-12));
}

TEST_CASE("proto_baseline_classify equals classify with identity W") {
    Rng rng(67);
    Tape tape;
    Node* p = tape.constant(random_matrix(3, 5, rng));
    PrototypeSet proto{p, tape.row_normalize(p)};
    Node* q = tape.constant(random_matrix(1, 5, rng));
    Node* eye = tape.constant(Matrix::identity(5));
    Node* a = proto_baseline_classify(tape, q, proto, cosine_cfg());
    Node* b = classify(tape, q, proto, eye, cosine_cfg());
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(std::fabs(a->value.at(0, c) - b->value.at(0, c)) <= 1e-12);
}

TEST_CASE("rotating a prototype apart strictly lowers drr under fixed W") {
    HeadConfig cfg = cosine_cfg();
    auto drr_at = [&cfg](double theta, const Matrix& w_fixed) {
        Tape tape;
        Matrix praw(2, 2, {1, 0, std::cos(theta), std::sin(theta)});
        Node* p = tape.constant(praw);
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* w = tape.constant(w_fixed);
        return drr_loss(tape, proto, w, cfg)->value.at(0, 0);
    };

    // W solved once at the initial (nearly aligned) configuration.
    Matrix w_fixed;
    {
        Tape tape;
        double theta0 = 0.05;
        Node* p = tape.constant(Matrix(2, 2, {1, 0, std::cos(theta0), std::sin(theta0)}));
        PrototypeSet proto{p, tape.row_normalize(p)};
        Node* r = tape.constant(Matrix(2, 2, {1, 0, 0, 1}));
        w_fixed = compute_w(tape, proto, r)->value;
    }

    double prev = drr_at(0.05, w_fixed);
    for (double theta = 0.15; theta <= 1.5707963267948966; theta += 0.1) {
        double cur = drr_at(theta, w_fixed);
        CHECK(cur < prev);
        prev = cur;
    }
}
