#include "enviro/graph.hpp"
#include "enviro/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

using namespace enviro;

namespace {

Mat random_mat(int rows, int cols, std::uint64_t seed, double scale = 0.7) {
    Mat m(rows, cols);
    Rng rng(seed);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
    return m;
}

// Fixed pseudo-random readout weights, so gradient errors in any entry or a
// transposed layout cannot cancel out of the scalar loss.
Mat readout_weights(Eigen::Index rows, Eigen::Index cols) {
    Mat c(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            c(i, j) = std::sin(0.7 * static_cast<double>(i) + 1.3 * static_cast<double>(j)) +
                      0.25;
    return c;
}

// sum(out .* C) as a 1x1 tape node. Dimensions are copied up front: pushing
// nodes may reallocate the tape, invalidating references into it.
graph::Var scalar_readout(graph::Tape& tape, graph::Var out) {
    const Eigen::Index rows = tape.value(out).rows();
    const Eigen::Index cols = tape.value(out).cols();
    graph::Var weighted = tape.mul(out, tape.constant(readout_weights(rows, cols)));
    graph::Var left = tape.constant(Mat::Ones(1, rows));
    graph::Var right = tape.constant(Mat::Ones(cols, 1));
    return tape.matmul(tape.matmul(left, weighted), right);
}

using Build = std::function<graph::Var(graph::Tape&, graph::Var)>;

// Central-difference check of d(loss)/d(param) for every parameter entry.
void fd_check(int rows, int cols, std::uint64_t seed, const Build& body, double eps = 1e-5) {
    Mat value = random_mat(rows, cols, seed);
    Mat grad = Mat::Zero(rows, cols);
    {
        graph::Tape tape;
        graph::Var p = tape.param(&value, &grad);
        graph::Var loss = scalar_readout(tape, body(tape, p));
        REQUIRE(tape.value(loss).size() == 1);
        tape.backward(loss);
    }
    auto loss_at = [&]() {
        graph::Tape tape;
        Mat dummy = Mat::Zero(rows, cols);
        graph::Var p = tape.param(&value, &dummy);
        return tape.value(scalar_readout(tape, body(tape, p)))(0, 0);
    };
    for (int j = 0; j < cols; ++j) {
        for (int i = 0; i < rows; ++i) {
            const double keep = value(i, j);
            value(i, j) = keep + eps;
            const double up = loss_at();
            value(i, j) = keep - eps;
            const double down = loss_at();
            value(i, j) = keep;
            const double fd = (up - down) / (2.0 * eps);
            CHECK(std::abs(grad(i, j) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("matmul gradients, both operand positions") {
    const Mat other = random_mat(4, 5, 21);
    fd_check(3, 4, 1, [&](graph::Tape& t, graph::Var p) {
        return t.matmul(p, t.constant(other));
    });
    fd_check(4, 5, 2, [&](graph::Tape& t, graph::Var p) {
        return t.matmul(t.constant(random_mat(3, 4, 22)), p);
    });
}

TEST_CASE("elementwise add, sub, mul") {
    const Mat other = random_mat(4, 6, 31);
    fd_check(4, 6, 3, [&](graph::Tape& t, graph::Var p) {
        return t.add(p, t.constant(other));
    });
    fd_check(4, 6, 4, [&](graph::Tape& t, graph::Var p) {
        return t.sub(t.constant(other), p);
    });
    fd_check(4, 6, 5, [&](graph::Tape& t, graph::Var p) {
        return t.mul(p, t.constant(other));
    });
}

TEST_CASE("an operand used twice accumulates both paths") {
    fd_check(3, 3, 6, [&](graph::Tape& t, graph::Var p) { return t.mul(p, p); });
    fd_check(3, 3, 7, [&](graph::Tape& t, graph::Var p) {
        return t.add(t.scale(p, 2.0), t.mul(p, p));
    });
}

TEST_CASE("scale, add_scalar, transpose") {
    fd_check(3, 5, 8, [&](graph::Tape& t, graph::Var p) { return t.scale(p, -1.7); });
    fd_check(3, 5, 9, [&](graph::Tape& t, graph::Var p) { return t.add_scalar(p, 0.4); });
    fd_check(3, 5, 10, [&](graph::Tape& t, graph::Var p) { return t.transpose(p); });
}

TEST_CASE("column broadcasts") {
    const Mat body = random_mat(4, 7, 41);
    fd_check(4, 7, 11, [&](graph::Tape& t, graph::Var p) {
        return t.add_col(p, t.constant(random_mat(4, 1, 42)));
    });
    fd_check(4, 1, 12, [&](graph::Tape& t, graph::Var p) {
        return t.add_col(t.constant(body), p);
    });
    fd_check(4, 7, 13, [&](graph::Tape& t, graph::Var p) {
        return t.mul_col(p, t.constant(random_mat(4, 1, 43)));
    });
    fd_check(4, 1, 14, [&](graph::Tape& t, graph::Var p) {
        return t.mul_col(t.constant(body), p);
    });
}

TEST_CASE("nonlinearities") {
    fd_check(5, 7, 15, [&](graph::Tape& t, graph::Var p) { return t.layernorm(p); });
    fd_check(4, 6, 16, [&](graph::Tape& t, graph::Var p) { return t.softmax_rows(p); });
    fd_check(4, 6, 17, [&](graph::Tape& t, graph::Var p) { return t.sigmoid(p); });
    fd_check(4, 6, 18, [&](graph::Tape& t, graph::Var p) { return t.gelu(p); });
}

TEST_CASE("slicing and stacking") {
    fd_check(6, 5, 19, [&](graph::Tape& t, graph::Var p) { return t.rows(p, 1, 3); });
    fd_check(6, 5, 20, [&](graph::Tape& t, graph::Var p) { return t.cols(p, 2, 2); });
    fd_check(3, 5, 21, [&](graph::Tape& t, graph::Var p) {
        return t.vstack(p, t.constant(random_mat(2, 5, 51)));
    });
    fd_check(2, 5, 22, [&](graph::Tape& t, graph::Var p) {
        return t.vstack(t.constant(random_mat(3, 5, 52)), p);
    });
}

TEST_CASE("embedding gathers columns and scatter-adds gradients") {
    const std::vector<int> ids = {2, 0, 4, 4, 7, 2};
    fd_check(5, 9, 23, [&](graph::Tape& t, graph::Var p) { return t.embed(p, ids); });

    // Repeated ids: the gradient of a repeated column is the sum over uses.
    Mat table = random_mat(3, 4, 53);
    Mat grad = Mat::Zero(3, 4);
    graph::Tape tape;
    graph::Var e = tape.embed(tape.param(&table, &grad), {1, 1, 1});
    tape.backward(scalar_readout(tape, e));
    const Mat w = readout_weights(3, 3);
    CHECK((grad.col(1) - (w.col(0) + w.col(1) + w.col(2))).norm() < 1e-12);
    CHECK(grad.col(0).norm() == 0.0);
}

TEST_CASE("convolutions") {
    const int k = 3;
    fd_check(3, 8, 24, [&](graph::Tape& t, graph::Var p) {
        return t.conv1d(p, t.constant(random_mat(4, 3 * k, 61)), k);
    });
    fd_check(4, 3 * k, 25, [&](graph::Tape& t, graph::Var p) {
        return t.conv1d(t.constant(random_mat(3, 8, 62)), p, k);
    });
    fd_check(4, 8, 26, [&](graph::Tape& t, graph::Var p) {
        return t.dwconv1d(p, t.constant(random_mat(4, k, 63)));
    });
    fd_check(4, k, 27, [&](graph::Tape& t, graph::Var p) {
        return t.dwconv1d(t.constant(random_mat(4, 8, 64)), p);
    });
}

TEST_CASE("weighted column sum of squares") {
    Vec w(6);
    for (int i = 0; i < 6; ++i) w(i) = (i % 2 == 0) ? 1.0 : 0.25;
    Mat value = random_mat(4, 6, 65);
    Mat grad = Mat::Zero(4, 6);
    graph::Tape tape;
    graph::Var loss = tape.sum_sq_cols_weighted(tape.param(&value, &grad), w, 13.0);
    double expect = 0.0;
    for (int j = 0; j < 6; ++j) expect += w(j) * value.col(j).squaredNorm();
    CHECK(tape.value(loss)(0, 0) == doctest::Approx(expect / 13.0));
    tape.backward(loss);
    for (int j = 0; j < 6; ++j)
        CHECK((grad.col(j) - 2.0 * w(j) / 13.0 * value.col(j)).norm() < 1e-12);
}

TEST_CASE("a deep composition still matches finite differences") {
    const Mat w1 = random_mat(6, 4, 71);
    const Mat w2 = random_mat(4, 6, 72);
    fd_check(4, 5, 28, [&](graph::Tape& t, graph::Var p) {
        graph::Var h = t.gelu(t.matmul(t.constant(w1), p));
        h = t.layernorm(h);
        h = t.matmul(t.constant(w2), h);
        return t.sigmoid(t.add(h, p));
    });
}

TEST_CASE("leaf kinds: input tracks, constant does not, param aliases") {
    graph::Tape tape;
    graph::Var x = tape.input(Mat::Ones(2, 2));
    graph::Var c = tape.constant(Mat::Ones(2, 2));
    graph::Var s = tape.mul(x, c);
    tape.backward(scalar_readout(tape, s));
    CHECK(tape.grad(x).cwiseAbs().minCoeff() > 0.0);
    CHECK(tape.grad(c).norm() == 0.0);

    // Param grads accumulate across tapes until cleared by the caller.
    Mat value = Mat::Ones(2, 2);
    Mat grad = Mat::Zero(2, 2);
    for (int pass = 0; pass < 2; ++pass) {
        graph::Tape t2;
        t2.backward(scalar_readout(t2, t2.param(&value, &grad)));
    }
    CHECK((grad - 2.0 * readout_weights(2, 2)).norm() < 1e-12);
}

TEST_CASE("shape mismatches are rejected") {
    graph::Tape tape;
    graph::Var a = tape.input(Mat::Ones(2, 3));
    graph::Var b = tape.input(Mat::Ones(3, 3));
    CHECK_THROWS_AS(tape.add(a, b), ShapeError);
    CHECK_THROWS_AS(tape.mul(a, b), ShapeError);
    CHECK_THROWS_AS(tape.matmul(a, tape.input(Mat::Ones(2, 2))), ShapeError);
    CHECK_THROWS_AS(tape.add_col(a, tape.input(Mat::Ones(3, 1))), ShapeError);
    CHECK_THROWS_AS(tape.rows(a, 1, 5), ShapeError);
}

}  // TEST_SUITE
