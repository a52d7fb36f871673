#include "macc/parallel_exec.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "macc/errors.hpp"

namespace macc {

std::size_t resolve_degree(std::size_t requested, std::size_t item_count) {
    std::size_t hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    std::size_t d = requested == 0 ? hw : requested;
    if (const char* env = std::getenv("MACC_THREADS")) {
        char* end = nullptr;
        unsigned long cap = std::strtoul(env, &end, 10);
        if (end && *end == '\0' && cap >= 1) d = std::min<std::size_t>(d, cap);
    }
    d = std::min(d, item_count);
    return std::max<std::size_t>(d, 1);
}

namespace {

[[noreturn]] void rethrow_with_progress(const std::exception_ptr& ep, std::size_t completed,
                                        std::size_t total) {
    std::string suffix = " [" + std::to_string(completed) + " of " + std::to_string(total) +
                         " work items completed]";
    try {
        std::rethrow_exception(ep);
    } catch (const DivergenceError& e) {
        throw DivergenceError(e.what() + suffix);
    } catch (const NumericError& e) {
        throw NumericError(e.what() + suffix);
    } catch (const ConfigError& e) {
        throw ConfigError(e.what() + suffix);
    } catch (const MaccError& e) {
        throw MaccError(e.what() + suffix);
    } catch (const std::exception& e) {
        throw MaccError(e.what() + suffix);
    }
}

}  // namespace

void run_indexed(std::size_t count, std::size_t degree,
                 const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    degree = std::clamp<std::size_t>(degree, 1, count);

    std::atomic<std::size_t> next{0};
    std::mutex err_mx;
    std::size_t failures = 0;
    std::size_t first_bad = count;
    std::exception_ptr first_err;

    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mx);
                ++failures;
                if (i < first_bad) {
                    first_bad = i;
                    first_err = std::current_exception();
                }
            }
        }
    };

    if (degree == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(degree - 1);
        for (std::size_t i = 0; i + 1 < degree; ++i) pool.emplace_back(worker);
        worker();
        for (std::thread& t : pool) t.join();
    }
    if (first_err) rethrow_with_progress(first_err, count - failures, count);
}

Vec64 deterministic_mean(const std::vector<Vec64>& items) {
    if (items.empty()) throw ConfigError("deterministic_mean: empty input");
    const std::size_t n = items.front().size();
    for (const Vec64& v : items) require_same_length(items.front(), v, "deterministic_mean");
    Vec64 out(n);
    const long double inv = 1.0L / static_cast<long double>(items.size());
    for (std::size_t j = 0; j < n; ++j) {
        long double acc = 0.0L;
        for (const Vec64& v : items) acc += v[j];
        out[j] = static_cast<double>(acc * inv);
    }
    return out;
}

Vec64 parallel_batch_grads(const Task& task, const Vec64& params,
                           const std::vector<Batch>& batches, std::size_t degree) {
    if (batches.empty()) throw ConfigError("parallel_batch_grads: no batches");
    std::vector<Vec64> grads(batches.size());
    run_indexed(batches.size(), resolve_degree(degree, batches.size()), [&](std::size_t i) {
        Vec64 g = grad(task, params, batches[i]);
        if (!all_finite(g)) {
            throw NumericError("parallel_batch_grads: non-finite gradient for batch " +
                               std::to_string(i));
        }
        grads[i] = std::move(g);
    });
    return deterministic_mean(grads);
}

ClusterStepResult parallel_cluster_step(const std::vector<ClusterGroup>& groups,
                                        const TaskRunner& runner, std::size_t degree) {
    struct ClusterOut {
        std::uint32_t id = 0;
        Vec64 grad;
        double loss = 0.0;
    };
    std::size_t total_clusters = 0;
    for (const ClusterGroup& g : groups) total_clusters += g.clusters.size();
    if (total_clusters == 0) throw ConfigError("parallel_cluster_step: no clusters in any group");

    std::vector<std::vector<ClusterOut>> per_group(groups.size());
    std::vector<double> group_seconds(groups.size(), 0.0);

    run_indexed(groups.size(), resolve_degree(degree, groups.size()), [&](std::size_t gi) {
        const ClusterGroup& group = groups[gi];
        auto start = std::chrono::steady_clock::now();
        std::vector<ClusterOut> outs;
        outs.reserve(group.clusters.size());
        for (const Cluster& cluster : group.clusters) {
            std::vector<Vec64> grads;
            grads.reserve(cluster.task_ids.size());
            long double loss_acc = 0.0L;
            for (std::uint32_t tid : cluster.task_ids) {
                try {
                    TaskRunResult r = runner(cluster, tid);
                    loss_acc += r.meta_loss;
                    grads.push_back(std::move(r.meta_grad));
                } catch (const DivergenceError& e) {
                    throw DivergenceError("group " + std::to_string(group.group_id) +
                                          ", cluster " + std::to_string(cluster.id) + ", task " +
                                          std::to_string(tid) + ": " + e.what());
                }
            }
            ClusterOut out;
            out.id = cluster.id;
            out.grad = deterministic_mean(grads);
            out.loss = static_cast<double>(loss_acc / static_cast<long double>(grads.size()));
            outs.push_back(std::move(out));
        }
        group_seconds[gi] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        per_group[gi] = std::move(outs);
    });

    std::vector<ClusterOut> all;
    all.reserve(total_clusters);
    for (std::vector<ClusterOut>& outs : per_group) {
        for (ClusterOut& o : outs) all.push_back(std::move(o));
    }
    std::sort(all.begin(), all.end(),
              [](const ClusterOut& a, const ClusterOut& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < all.size(); ++i) {
        if (all[i].id == all[i - 1].id) {
            throw ConfigError("parallel_cluster_step: duplicate cluster id " +
                              std::to_string(all[i].id) + " across groups");
        }
    }

    ClusterStepResult result;
    result.group_seconds = std::move(group_seconds);
    std::vector<Vec64> sorted_grads;
    sorted_grads.reserve(all.size());
    for (ClusterOut& o : all) {
        result.cluster_ids.push_back(o.id);
        result.cluster_losses.push_back(o.loss);
        sorted_grads.push_back(std::move(o.grad));
    }
    result.averaged_grad = deterministic_mean(sorted_grads);
    result.cluster_grads = std::move(sorted_grads);
    return result;
}

}  // namespace macc
