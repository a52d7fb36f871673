#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "macc/parallel_exec.hpp"
#include "macc/scheduler.hpp"
#include "macc/tasks.hpp"

using namespace macc;

namespace {

ClusterGroup one_group(std::uint32_t gid, std::vector<Cluster> cs) {
    ClusterGroup g;
    g.group_id = gid;
    g.clusters = std::move(cs);
    for (const Cluster& c : g.clusters) g.total_cost += c.est_cost;
    return g;
}

Cluster one_cluster(std::uint32_t id, std::vector<std::uint32_t> task_ids) {
    Cluster c;
    c.id = id;
    c.task_ids = std::move(task_ids);
    return c;
}

// Runner whose "meta-gradient" encodes the task id, for arithmetic checks.
TaskRunner encoding_runner(std::size_t grad_len = 3) {
    return [grad_len](const Cluster&, std::uint32_t task_id) {
        TaskRunResult r;
        r.meta_grad.assign(grad_len, 0.0);
        for (std::size_t i = 0; i < grad_len; ++i) {
            r.meta_grad[i] = static_cast<double>(task_id) + 0.1 * static_cast<double>(i);
        }
        r.meta_loss = static_cast<double>(task_id);
        return r;
    };
}

}  // namespace

TEST_CASE("deterministic_mean fixtures") {
    CHECK(deterministic_mean({Vec64{3.25, -1.5}}) == Vec64{3.25, -1.5});

    Vec64 m = deterministic_mean({Vec64{1.0}, Vec64{2.0}, Vec64{4.0}});
    CHECK(m[0] == static_cast<double>((1.0L + 2.0L + 4.0L) / 3.0L));

    CHECK(deterministic_mean({Vec64{1.0, 3.0}, Vec64{3.0, 1.0}}) == Vec64{2.0, 2.0});

    CHECK_THROWS_AS(deterministic_mean({}), ConfigError);
    CHECK_THROWS_AS(deterministic_mean({Vec64{1.0}, Vec64{1.0, 2.0}}), DimensionError);
}

TEST_CASE("mean of k identical vectors reproduces the vector bit-exactly") {
    RngStream rng(11);
    Vec64 g(7);
    for (double& v : g) v = 100.0 * rng.normal();
    for (std::size_t k : {1u, 2u, 3u, 5u, 7u, 64u}) {
        std::vector<Vec64> items(k, g);
        CHECK(deterministic_mean(items) == g);
    }
}

TEST_CASE("parallel_batch_grads equals the per-batch gradients it averages") {
    Task task = generate_task(TaskFamily::SoftmaxRegression, 21, kSoftmaxDims);
    RngStream rng(5);
    std::vector<Batch> bs = batches(task, rng, 16, 4);
    Vec64 params = task.init_params;

    Vec64 single = parallel_batch_grads(task, params, {bs[0]}, 1);
    CHECK(single == grad(task, params, bs[0]));

    std::vector<Vec64> each;
    for (const Batch& b : bs) each.push_back(grad(task, params, b));
    Vec64 averaged = parallel_batch_grads(task, params, bs, 1);
    CHECK(averaged == deterministic_mean(each));

    Vec64 d2 = parallel_batch_grads(task, params, bs, 2);
    Vec64 d8 = parallel_batch_grads(task, params, bs, 8);
    CHECK(averaged == d2);
    CHECK(averaged == d8);

    CHECK_THROWS_AS(parallel_batch_grads(task, params, {}, 1), ConfigError);
}

TEST_CASE("dataset-free families give identical grads for any batch degree") {
    for (TaskFamily family : {TaskFamily::Quadratic, TaskFamily::Bowl, TaskFamily::TwoD}) {
        Task task = generate_task(family, 303, family == TaskFamily::TwoD ? 2 : 4);
        std::vector<Batch> bs(4);  // empty batches: full-objective families
        Vec64 g1 = parallel_batch_grads(task, task.init_params, bs, 1);
        Vec64 g4 = parallel_batch_grads(task, task.init_params, bs, 4);
        CHECK(g1 == grad(task, task.init_params, bs[0]));
        CHECK(g1 == g4);
    }
}

TEST_CASE("non-finite gradient is reported with the offending batch index") {
    Task task = generate_task(TaskFamily::Quadratic, 7, 3);
    Vec64 params(3, std::nan(""));
    std::vector<Batch> bs(2);
    CHECK_THROWS_WITH_AS(parallel_batch_grads(task, params, bs, 1),
                         doctest::Contains("batch 0"), NumericError);
}

TEST_CASE("run_indexed finishes all work even when one item throws") {
    std::atomic<int> completed{0};
    auto body = [&](std::size_t i) {
        if (i == 3) throw DivergenceError("synthetic failure");
        completed.fetch_add(1);
    };
    bool threw = false;
    try {
        run_indexed(8, 4, body);
    } catch (const DivergenceError& e) {
        threw = true;
        CHECK_MESSAGE(std::string(e.what()).find("7 of 8 work items completed") !=
                          std::string::npos,
                      e.what());
    }
    CHECK(threw);
    CHECK(completed.load() == 7);
}

TEST_CASE("run_indexed reports the lowest-index error when several throw") {
    auto body = [&](std::size_t i) {
        if (i == 2 || i == 5) throw NumericError("item " + std::to_string(i));
    };
    CHECK_THROWS_WITH_AS(run_indexed(8, 1, body), doctest::Contains("item 2"), NumericError);
}

TEST_CASE("resolve_degree honors the requested cap, item count, and environment") {
    CHECK(resolve_degree(3, 100) == 3);
    CHECK(resolve_degree(8, 2) == 2);
    CHECK(resolve_degree(5, 0) == 1);
    CHECK(resolve_degree(0, 1000) >= 1);

    setenv("MACC_THREADS", "2", 1);
    CHECK(resolve_degree(8, 100) == 2);
    CHECK(resolve_degree(1, 100) == 1);
    setenv("MACC_THREADS", "0", 1);  // nonsensical value is ignored
    CHECK(resolve_degree(3, 100) == 3);
    unsetenv("MACC_THREADS");
}

TEST_CASE("parallel_cluster_step identity case") {
    std::vector<ClusterGroup> groups{one_group(0, {one_cluster(0, {4})})};
    ClusterStepResult r = parallel_cluster_step(groups, encoding_runner(), 1);
    REQUIRE(r.cluster_ids == std::vector<std::uint32_t>{0});
    CHECK(r.cluster_grads[0] == Vec64{4.0, 4.1, 4.2});
    CHECK(r.averaged_grad == Vec64{4.0, 4.1, 4.2});
    CHECK(r.cluster_losses[0] == 4.0);
    CHECK(r.group_seconds.size() == 1);
}

TEST_CASE("cluster averaging is independent of how clusters are grouped") {
    Cluster u = one_cluster(0, {1, 2});
    Cluster v = one_cluster(1, {5});
    TaskRunner runner = encoding_runner();

    std::vector<ClusterGroup> together{one_group(0, {u, v})};
    std::vector<ClusterGroup> apart{one_group(0, {u}), one_group(1, {v})};
    std::vector<ClusterGroup> swapped{one_group(0, {v}), one_group(1, {u})};

    ClusterStepResult a = parallel_cluster_step(together, runner, 1);
    ClusterStepResult b = parallel_cluster_step(apart, runner, 2);
    ClusterStepResult c = parallel_cluster_step(swapped, runner, 2);

    // cluster 0 averages tasks 1 and 2; cluster 1 is task 5 alone
    CHECK(a.cluster_grads[0] == deterministic_mean({Vec64{1.0, 1.1, 1.2}, Vec64{2.0, 2.1, 2.2}}));
    CHECK(a.cluster_grads[1] == Vec64{5.0, 5.1, 5.2});
    CHECK(a.averaged_grad ==
          deterministic_mean({a.cluster_grads[0], a.cluster_grads[1]}));

    CHECK(a.cluster_ids == b.cluster_ids);
    CHECK(a.cluster_grads == b.cluster_grads);
    CHECK(a.averaged_grad == b.averaged_grad);
    CHECK(a.cluster_losses == b.cluster_losses);
    CHECK(a.cluster_ids == c.cluster_ids);
    CHECK(a.averaged_grad == c.averaged_grad);
}

TEST_CASE("parallel_cluster_step is bit-identical across degrees") {
    std::vector<ClusterGroup> groups{
        one_group(0, {one_cluster(0, {0, 1, 2}), one_cluster(2, {7})}),
        one_group(1, {one_cluster(1, {3, 4})}),
        one_group(2, {one_cluster(3, {5, 6})}),
    };
    TaskRunner runner = encoding_runner(5);
    ClusterStepResult d1 = parallel_cluster_step(groups, runner, 1);
    ClusterStepResult d2 = parallel_cluster_step(groups, runner, 2);
    ClusterStepResult dmax = parallel_cluster_step(groups, runner, 64);
    CHECK(d1.cluster_ids == std::vector<std::uint32_t>{0, 1, 2, 3});
    CHECK(d1.cluster_grads == d2.cluster_grads);
    CHECK(d1.cluster_grads == dmax.cluster_grads);
    CHECK(d1.averaged_grad == d2.averaged_grad);
    CHECK(d1.averaged_grad == dmax.averaged_grad);
    CHECK(d1.cluster_losses == dmax.cluster_losses);
}

TEST_CASE("divergence inside a group carries full location context") {
    std::vector<ClusterGroup> groups{
        one_group(0, {one_cluster(0, {0})}),
        one_group(1, {one_cluster(3, {8, 9})}),
    };
    TaskRunner runner = [](const Cluster&, std::uint32_t task_id) -> TaskRunResult {
        if (task_id == 9) throw DivergenceError("task 9 diverged at step 2: loss 1e12");
        TaskRunResult r;
        r.meta_grad.assign(1, 0.0);
        return r;
    };
    try {
        parallel_cluster_step(groups, runner, 2);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        std::string msg = e.what();
        CHECK(msg.find("group 1") != std::string::npos);
        CHECK(msg.find("cluster 3") != std::string::npos);
        CHECK(msg.find("task 9") != std::string::npos);
    }
}

TEST_CASE("duplicate cluster ids across groups are rejected") {
    std::vector<ClusterGroup> groups{
        one_group(0, {one_cluster(2, {0})}),
        one_group(1, {one_cluster(2, {1})}),
    };
    CHECK_THROWS_AS(parallel_cluster_step(groups, encoding_runner(), 2), ConfigError);
}

TEST_CASE("groups actually overlap in time on a multicore host") {
    if (std::thread::hardware_concurrency() < 2) return;  // timing claim needs real parallelism
    using clock = std::chrono::steady_clock;
    TaskRunner sleepy = [](const Cluster&, std::uint32_t) {
        std::this_thread::sleep_for(std::chrono::milliseconds(120));
        TaskRunResult r;
        r.meta_grad.assign(1, 1.0);
        return r;
    };
    std::vector<ClusterGroup> groups{
        one_group(0, {one_cluster(0, {0})}),
        one_group(1, {one_cluster(1, {1})}),
    };
    auto t0 = clock::now();
    ClusterStepResult r = parallel_cluster_step(groups, sleepy, 2);
    double wall = std::chrono::duration<double>(clock::now() - t0).count();
    double summed = r.group_seconds[0] + r.group_seconds[1];
    CHECK(wall < 0.75 * summed);
}
