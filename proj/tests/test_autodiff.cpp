#include <doctest.h>

#include <cmath>

#include "moss/autodiff.hpp"
#include "moss/error.hpp"
#include "moss/rng.hpp"
#include "support.hpp"

using namespace moss;
using namespace moss::test;

namespace {

// Applies a fixed random projection so reduction losses exercise non-uniform
// output gradients.
ad::Var pseudo_loss(const ad::Var& v, uint64_t seed = 99) {
    Rng rng(seed);
    Tensor w(v.value().shape());
    for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal();
    return ad::sum_all(ad::mul(v, ad::Var::leaf(w, false)));
}

}  // namespace

TEST_CASE("rng streams are deterministic and distribution sanity holds") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(7);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::fabs(sum / n) < 0.05);
    CHECK(std::fabs(sq / n - 1.0) < 0.05);

    auto p = r.dirichlet(0.5, 8);
    double total = 0.0;
    for (double v : p) {
        CHECK(v >= 0.0);
        total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("derive_seed separates streams") {
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a", {0}) != derive_seed(1, "a", {1}));
    CHECK(derive_seed(1, "a", {5}) == derive_seed(1, "a", {5}));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(3);
    std::vector<ad::Var> params = {ad::Var::leaf(random_tensor({4, 5}, rng), true),
                                   ad::Var::leaf(random_tensor({4, 5}, rng), true)};
    auto check = [&](const std::function<ad::Var()>& fn) {
        CHECK(gradient_check(params, fn) < 1e-6);
    };
    check([&] { return pseudo_loss(ad::add(params[0], params[1])); });
    check([&] { return pseudo_loss(ad::sub(params[0], params[1])); });
    check([&] { return pseudo_loss(ad::mul(params[0], params[1])); });
    check([&] { return pseudo_loss(ad::scale(params[0], -1.7)); });
    check([&] { return pseudo_loss(ad::square(params[0])); });
    check([&] { return ad::mean_all(ad::mul(params[0], params[1])); });
}

TEST_CASE("matmul and bias gradients match finite differences") {
    Rng rng(4);
    std::vector<ad::Var> params = {ad::Var::leaf(random_tensor({3, 4}, rng), true),
                                   ad::Var::leaf(random_tensor({4, 2}, rng), true),
                                   ad::Var::leaf(random_tensor({2}, rng), true)};
    auto fn = [&] {
        return pseudo_loss(ad::add_rows(ad::matmul(params[0], params[1]), params[2]));
    };
    CHECK(gradient_check(params, fn) < 1e-6);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(5);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            std::vector<ad::Var> params = {
                ad::Var::leaf(random_tensor({2, 3, 5, 5}, rng), true),   // x
                ad::Var::leaf(random_tensor({4, 3, 3, 3}, rng, 0.5), true),  // w
                ad::Var::leaf(random_tensor({4}, rng), true)};           // b
            auto fn = [&] { return pseudo_loss(ad::conv2d(params[0], params[1], params[2], stride, pad)); };
            CHECK(gradient_check(params, fn) < 1e-6);
        }
    }
}

TEST_CASE("depthwise conv gradients match finite differences") {
    Rng rng(6);
    std::vector<ad::Var> params = {ad::Var::leaf(random_tensor({2, 3, 5, 5}, rng), true),
                                   ad::Var::leaf(random_tensor({3, 3, 3}, rng, 0.5), true),
                                   ad::Var::leaf(random_tensor({3}, rng), true)};
    auto fn = [&] { return pseudo_loss(ad::dwconv2d(params[0], params[1], params[2], 2, 1)); };
    CHECK(gradient_check(params, fn) < 1e-6);
}

TEST_CASE("pooling, resize, broadcast and reshape gradients match finite differences") {
    Rng rng(7);
    std::vector<ad::Var> params = {ad::Var::leaf(random_tensor({2, 3, 6, 6}, rng), true)};
    CHECK(gradient_check(params, [&] { return pseudo_loss(ad::avgpool2d(params[0], 2, 2)); }) < 1e-6);
    CHECK(gradient_check(params, [&] { return pseudo_loss(ad::global_avgpool(params[0])); }) < 1e-6);
    CHECK(gradient_check(params, [&] { return pseudo_loss(ad::flatten(params[0])); }) < 1e-6);
    CHECK(gradient_check(params, [&] { return pseudo_loss(ad::bilinear_resize(params[0], 4, 9)); }) < 1e-6);
    CHECK(gradient_check(params, [&] { return pseudo_loss(ad::relu(params[0])); }) < 1e-6);

    std::vector<ad::Var> mat = {ad::Var::leaf(random_tensor({3, 4}, rng), true)};
    CHECK(gradient_check(mat, [&] { return pseudo_loss(ad::broadcast_spatial(mat[0], 2, 3)); }) < 1e-6);
    CHECK(gradient_check(mat, [&] { return pseudo_loss(ad::softmax_rows(mat[0])); }) < 1e-6);
    CHECK(gradient_check(mat, [&] { return pseudo_loss(ad::mean_rows(mat[0])); }) < 1e-6);
}

TEST_CASE("channel and column weighting gradients match finite differences") {
    Rng rng(8);
    std::vector<ad::Var> params = {ad::Var::leaf(random_tensor({2, 3, 4, 4}, rng), true),
                                   ad::Var::leaf(random_tensor({3}, rng), true)};
    CHECK(gradient_check(params, [&] { return pseudo_loss(ad::mul_channels(params[0], params[1])); }) < 1e-6);

    std::vector<ad::Var> cols = {ad::Var::leaf(random_tensor({3, 5}, rng), true),
                                 ad::Var::leaf(random_tensor({5}, rng), true)};
    CHECK(gradient_check(cols, [&] { return pseudo_loss(ad::mul_cols(cols[0], cols[1])); }) < 1e-6);
}

TEST_CASE("cross entropy matches a hand-computed value and its gradients check out") {
    // Two rows, three classes; compare against -log softmax computed longhand.
    Tensor logits({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 1.5});
    std::vector<int> labels = {1, 2};
    ad::Var lv = ad::Var::leaf(logits, true);
    ad::Var loss = ad::cross_entropy_with_logits(lv, labels);

    auto row_ce = [&](int r, int y) {
        double m = std::max({logits.at2(r, 0), logits.at2(r, 1), logits.at2(r, 2)});
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) sum += std::exp(logits.at2(r, c) - m);
        return std::log(sum) + m - logits.at2(r, y);
    };
    const double expected = (row_ce(0, 1) + row_ce(1, 2)) / 2.0;
    CHECK(loss.value()[0] == doctest::Approx(expected).epsilon(1e-12));

    std::vector<ad::Var> params = {lv};
    CHECK(gradient_check(params, [&] {
              return ad::cross_entropy_with_logits(params[0], labels);
          }) < 1e-6);
}

TEST_CASE("concat and gather route gradients to the right slots") {
    Rng rng(9);
    std::vector<ad::Var> params = {ad::Var::leaf(random_tensor({2, 1}, rng), true),
                                   ad::Var::leaf(random_tensor({2, 2}, rng), true)};
    CHECK(gradient_check(params, [&] {
              return pseudo_loss(ad::concat_cols({params[0], params[1]}));
          }) < 1e-6);

    std::vector<ad::Var> vec = {ad::Var::leaf(random_tensor({4}, rng), true)};
    CHECK(gradient_check(vec, [&] {
              return ad::mul(ad::gather_scalar(vec[0], 2), ad::gather_scalar(vec[0], 0));
          }) < 1e-6);
}

TEST_CASE("shape mismatches raise domain errors") {
    ad::Var a = ad::Var::leaf(Tensor({2, 2}), false);
    ad::Var b = ad::Var::leaf(Tensor({2, 3}), false);
    CHECK_THROWS_AS(ad::add(a, b), DomainError);
    CHECK_THROWS_AS(ad::matmul(a, ad::Var::leaf(Tensor({4, 2}), false)), DomainError);
    CHECK_THROWS_AS(ad::conv2d(a, b, a, 1, 0), DomainError);
}
