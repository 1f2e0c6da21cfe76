#include "doctest.h"
#include "ursct/gradcheck.hpp"
#include "ursct/ops.hpp"

using namespace ursct;

TEST_SUITE_BEGIN("gradcheck");

TEST_CASE("linear map gradient is exact to fd tolerance") {
    Rng rng(101);
    auto w = Tensor<double>::zeros({4, 3});
    for (auto& v : w.mutable_data()) v = rng.uniform(-1, 1);
    auto x = Tensor<double>::zeros({2, 4});
    for (auto& v : x.mutable_data()) v = rng.uniform(-1, 1);
    auto rep = finite_diff_check([=] { return reduce_mean_all(matmul(x, w)); }, {x, w});
    CHECK(rep.max_rel_err < 1e-6);
    CHECK(rep.coords == 20);
}

TEST_CASE("layer_norm survives a near-constant input") {
    // Tiny variance stresses the rsqrt path; epsilon keeps it finite.
    auto x = Tensor<double>::from({6}, {0.5, 0.5002, 0.4999, 0.5001, 0.5, 0.4998});
    auto g = Tensor<double>::from({6}, {1.1, 0.9, 1.0, 1.2, 0.8, 1.05});
    auto b = Tensor<double>::from({6}, {0.1, -0.2, 0.0, 0.3, -0.1, 0.2});
    auto rep = finite_diff_check(
        [=] { return reduce_mean_all(layer_norm(x, g, b, 1e-5)); }, {x, g, b}, 1e-6);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("sampled probing touches the requested coordinate count") {
    Rng rng(7);
    auto x = Tensor<double>::zeros({5, 5});
    for (auto& v : x.mutable_data()) v = rng.uniform(-1, 1);
    Rng probe(19);
    auto rep = finite_diff_check([=] { return reduce_mean_all(mul(x, x)); }, {x}, 1e-5, 6, &probe);
    CHECK(rep.coords == 6);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("builtin tensor-op suite is green") {
    for (const auto& c : gradcheck_tensor_ops(1234)) {
        INFO(c.name, " max_rel_err=", c.max_rel_err, " tol=", c.tol);
        CHECK(c.pass);
        CHECK(c.max_rel_err < c.tol);
    }
}

TEST_CASE("builtin loss suite is green") {
    for (const auto& c : gradcheck_losses(1234)) {
        INFO(c.name, " max_rel_err=", c.max_rel_err, " tol=", c.tol);
        CHECK(c.pass);
        CHECK(c.max_rel_err < c.tol);
    }
}

TEST_CASE("builtin model suite is green") {
    for (const auto& c : gradcheck_model(1234)) {
        INFO(c.name, " max_rel_err=", c.max_rel_err, " tol=", c.tol);
        CHECK(c.pass);
        CHECK(c.max_rel_err < c.tol);
    }
}

TEST_SUITE_END();
