#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "macc/numeric.hpp"
#include "macc/tasks.hpp"
#include "oracles.hpp"

using namespace macc;

namespace {

Task make_bowl(Vec64 lambda) {
    Task t;
    t.family = TaskFamily::Bowl;
    t.dims = static_cast<std::uint32_t>(lambda.size());
    t.bowl_lambda = std::move(lambda);
    t.init_params.assign(t.dims, 0.0);
    return t;
}

Task make_quadratic(Mat64 a, Vec64 b) {
    Task t;
    t.family = TaskFamily::Quadratic;
    t.dims = static_cast<std::uint32_t>(b.size());
    t.quad_a = std::move(a);
    t.quad_b = std::move(b);
    t.init_params.assign(t.dims, 0.0);
    return t;
}

}  // namespace

TEST_CASE("generate_task is deterministic") {
    Task a = generate_task(TaskFamily::Quadratic, 7, 4);
    Task b = generate_task(TaskFamily::Quadratic, 7, 4);
    CHECK(a.quad_a.data == b.quad_a.data);
    CHECK(a.quad_b == b.quad_b);
    CHECK(a.init_params == b.init_params);
    CHECK(a.dims == 4);
}

TEST_CASE("softmax data has balanced labels") {
    Task t = generate_task(TaskFamily::SoftmaxRegression, 1, kSoftmaxDims);
    REQUIRE(t.data.size() == 512);
    std::size_t class0 = 0;
    for (std::uint32_t label : t.data.labels) {
        if (label == 0) ++class0;
    }
    double frac = static_cast<double>(class0) / 512.0;
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
}

TEST_CASE("two-d task reaches its analytic minimum at the minimizer") {
    for (std::uint64_t seed : {3ULL, 4ULL, 5ULL}) {
        Task t = generate_task(TaskFamily::TwoD, seed, 2);
        Vec64 argmin = twod_minimizer(t);
        CHECK(loss(t, argmin, Batch{}) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(norm2(grad(t, argmin, Batch{})) < 1e-8);
    }
    Task rosen = generate_task(TaskFamily::TwoD, 3, 2);  // seed % 3 == 0 selects Rosenbrock
    CHECK(rosen.twod_kind == TwoDKind::Rosenbrock);
    CHECK(twod_minimizer(rosen) == Vec64{1.0, 1.0});
    CHECK_THROWS_AS(generate_task(TaskFamily::TwoD, 3, 3), DimensionError);
}

TEST_CASE("quadratic loss vanishes at the solved minimizer") {
    Task t = generate_task(TaskFamily::Quadratic, 21, 4);
    Vec64 theta = oracles::solve_linear(t.quad_a, t.quad_b);
    CHECK(loss(t, theta, Batch{}) < 1e-18);
}

TEST_CASE("bowl loss and gradient fixtures") {
    Task t = make_bowl({1.0, 2.0});
    CHECK(loss(t, {2.0, 1.0}, Batch{}) == 3.0);
    CHECK(grad(t, {2.0, 1.0}, Batch{}) == Vec64{2.0, 2.0});
}

TEST_CASE("quadratic gradient with identity matrix") {
    Mat64 eye(2, 2);
    eye(0, 0) = 1.0;
    eye(1, 1) = 1.0;
    Task t = make_quadratic(eye, {1.0, 2.0});
    CHECK(grad(t, {0.0, 0.0}, Batch{}) == Vec64{-1.0, -2.0});
    CHECK_THROWS_AS(loss(t, {1.0, 2.0, 3.0}, Batch{}), DimensionError);
}

TEST_CASE("zero-weight softmax cross-entropy is ln 2") {
    Task t = generate_task(TaskFamily::SoftmaxRegression, 2, kSoftmaxDims);
    Vec64 zero(t.dims, 0.0);
    CHECK(loss(t, zero, full_batch(t)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("fully connected gradient matches finite differences") {
    Task t = generate_task(TaskFamily::FullyConnected, 9, kFcDims);
    Batch fb = full_batch(t);
    RngStream rng(77);
    Vec64 x(t.dims);
    for (double& v : x) v = 0.2 * rng.normal();
    Vec64 numeric = finite_diff_grad([&](const Vec64& p) { return loss(t, p, fb); }, x);
    GradCheckResult res = grad_check(grad(t, x, fb), numeric, 1e-5);
    CHECK(res.ok);
}

TEST_CASE("every family's gradient matches finite differences at random points") {
    // h = 1e-4: the dataset losses are means over 512 samples, so coordinates
    // near zero need the larger step to keep finite-difference roundoff below
    // the 1e-5 relative gate.
    RngStream rng(2024);
    for (TaskFamily family : kAllFamilies) {
        for (int rep = 0; rep < 100; ++rep) {
            std::uint32_t dims = family == TaskFamily::TwoD ? 2 : 2 + rng.uniform_index(4);
            Task t = generate_task(family, 1000 + rep, dims);
            Batch fb = full_batch(t);
            Vec64 x(t.dims);
            for (double& v : x) v = 0.5 * rng.normal();
            Vec64 numeric =
                finite_diff_grad([&](const Vec64& p) { return loss(t, p, fb); }, x, 1e-4);
            GradCheckResult res = grad_check(grad(t, x, fb), numeric, 1e-5);
            CAPTURE(family_name(family));
            CAPTURE(rep);
            REQUIRE(res.ok);
        }
    }
}

TEST_CASE("quadratic and bowl are non-negative with a flat minimizer") {
    RngStream rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        Task q = generate_task(TaskFamily::Quadratic, 400 + rep, 4);
        Vec64 x(4);
        for (double& v : x) v = rng.normal();
        CHECK(loss(q, x, Batch{}) >= 0.0);
        Vec64 argmin = oracles::solve_linear(q.quad_a, q.quad_b);
        CHECK(norm2(grad(q, argmin, Batch{})) < 1e-10);

        Task b = generate_task(TaskFamily::Bowl, 500 + rep, 4);
        CHECK(loss(b, x, Batch{}) >= 0.0);
        CHECK(norm2(grad(b, Vec64(4, 0.0), Batch{})) == 0.0);
    }
}

TEST_CASE("accuracy fixtures") {
    Task t = generate_task(TaskFamily::SoftmaxRegression, 3, kSoftmaxDims);
    Vec64 zero(t.dims, 0.0);
    std::size_t class0 = 0;
    for (std::uint32_t label : t.data.labels) {
        if (label == 0) ++class0;
    }
    // zero weights tie every class score; ties go to class 0
    CHECK(accuracy(t, zero) == static_cast<double>(class0) / 512.0);

    Task sep;  // handcrafted separable dataset with separating weights
    sep.family = TaskFamily::SoftmaxRegression;
    sep.dims = kSoftmaxDims;
    sep.data.features = Mat64(4, kNumFeatures);
    sep.data.labels = {0, 0, 1, 1};
    for (int i = 0; i < 4; ++i) sep.data.features(i, 0) = i < 2 ? 1.0 : -1.0;
    sep.init_params.assign(sep.dims, 0.0);
    Vec64 w(sep.dims, 0.0);
    w[0] = 1.0;                 // class-0 weight on feature 0
    w[kNumFeatures + 1] = -1.0;  // class-1 weight on feature 0
    CHECK(accuracy(sep, w) == 1.0);

    Task q = generate_task(TaskFamily::Quadratic, 1, 2);
    CHECK_THROWS_AS(accuracy(q, {0.0, 0.0}), UnsupportedError);
}

TEST_CASE("batches for dataset-free families are empty") {
    Task t = generate_task(TaskFamily::Quadratic, 6, 3);
    RngStream rng(1);
    auto bs = batches(t, rng, 32, 5);
    CHECK(bs.size() == 5);
    for (const Batch& b : bs) CHECK(b.empty());
}

TEST_CASE("batches are deterministic in the rng seed") {
    Task t = generate_task(TaskFamily::SoftmaxRegression, 8, kSoftmaxDims);
    RngStream r1(55), r2(55);
    auto a = batches(t, r1, 32, 4);
    auto b = batches(t, r2, 32, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].features.data == b[i].features.data);
        CHECK(a[i].labels == b[i].labels);
    }
}

TEST_CASE("one epoch of batches covers distinct samples") {
    // 128-sample dataset with feature 0 encoding the row index
    Task t;
    t.family = TaskFamily::SoftmaxRegression;
    t.dims = kSoftmaxDims;
    t.data.features = Mat64(128, kNumFeatures);
    t.data.labels.assign(128, 0);
    for (int i = 0; i < 128; ++i) t.data.features(i, 0) = i;
    t.init_params.assign(t.dims, 0.0);

    RngStream rng(9);
    auto bs = batches(t, rng, 32, 4);
    std::set<double> seen;
    for (const Batch& b : bs) {
        REQUIRE(b.features.rows == 32);
        for (std::size_t r = 0; r < b.features.rows; ++r) seen.insert(b.features(r, 0));
    }
    CHECK(seen.size() == 128);
}

TEST_CASE("oversubscribed batch request is rejected") {
    Task t = generate_task(TaskFamily::SoftmaxRegression, 8, kSoftmaxDims);
    RngStream rng(2);
    CHECK_THROWS_AS(batches(t, rng, 32, 17), CapacityError);
}

TEST_CASE("batch stream refills across epochs without replacement") {
    Task t = generate_task(TaskFamily::FullyConnected, 12, kFcDims);
    RngStream rng(3);
    BatchStream stream(t, rng, 64);
    std::multiset<double> first_epoch, second_epoch;
    for (int i = 0; i < 8; ++i) {
        Batch b = stream.next();
        for (std::size_t r = 0; r < b.features.rows; ++r) first_epoch.insert(b.features(r, 0));
    }
    for (int i = 0; i < 8; ++i) {
        Batch b = stream.next();
        for (std::size_t r = 0; r < b.features.rows; ++r) second_epoch.insert(b.features(r, 0));
    }
    CHECK(first_epoch.size() == 512);
    CHECK(first_epoch == second_epoch);  // same sample multiset, fresh order
}

TEST_CASE("family names round-trip") {
    for (TaskFamily f : kAllFamilies) CHECK(family_from_name(family_name(f)) == f);
    CHECK_THROWS_AS(family_from_name("pyramid"), ConfigError);
}
