#include "macc/meta_engine.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <unordered_map>

#include "macc/errors.hpp"
#include "macc/parallel_exec.hpp"

namespace macc {

namespace {

// Streams for a task loop derive from (seed, task id, meta iteration);
// evaluation uses a reserved slot far outside any iteration index.
constexpr std::uint64_t kEvalStream = 0xE7A1'0000'0000'0000ULL;

RngStream loop_stream(std::uint64_t seed, std::uint32_t task_id, std::uint64_t iteration) {
    return RngStream(seed).substream(task_id).substream(iteration);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void MetaConfig::validate() const {
    std::string bad;
    auto fail = [&bad](const std::string& msg) {
        if (!bad.empty()) bad += "; ";
        bad += msg;
    };
    if (unroll_steps < 1) fail("unroll_steps must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (batch_parallel_degree < 1) fail("batch_parallel_degree must be >= 1");
    if (k_clusters < 1) fail("k_clusters must be >= 1");
    if (g_groups < 1) fail("g_groups must be >= 1");
    if (g_groups > k_clusters) fail("g_groups must be <= k_clusters");
    if (hidden < 1) fail("hidden must be >= 1");
    if (!(meta_lr > 0.0)) fail("meta_lr must be > 0");
    if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) fail("rmsprop_decay must be in (0, 1)");
    if (!(rmsprop_eps >= 0.0)) fail("rmsprop_eps must be >= 0");
    if (!bad.empty()) throw ConfigError("invalid config: " + bad);
}

TaskLoopResult task_loop(const Task& task, const OptimizerParams& w, const MetaConfig& cfg,
                         RngStream rng) {
    cfg.validate();
    const std::uint32_t dims = task.dims;
    Vec64 theta = task.init_params;
    OptimizerState state = OptimizerState::zeros(dims, w.hidden);
    UnrollTape tape;
    tape.dims = dims;
    tape.hidden = w.hidden;
    tape.steps.resize(cfg.unroll_steps);
    BatchStream stream(task, rng, cfg.batch_size);
    const std::uint32_t B = cfg.batch_parallel_degree;

    TaskLoopResult out;
    out.loss_trace.reserve(cfg.unroll_steps);
    std::vector<Batch> step_batches;
    for (std::uint32_t t = 0; t < cfg.unroll_steps; ++t) {
        step_batches.clear();
        for (std::uint32_t b = 0; b < B; ++b) step_batches.push_back(stream.next());

        long double loss_acc = 0.0L;
        for (const Batch& b : step_batches) loss_acc += loss(task, theta, b);
        double step_loss = static_cast<double>(loss_acc / static_cast<long double>(B));
        if (!std::isfinite(step_loss) || step_loss > kDivergenceGuard) {
            throw DivergenceError("task " + std::to_string(task.id) + " diverged at step " +
                                  std::to_string(t) + ": loss " + std::to_string(step_loss));
        }

        Vec64 g = parallel_batch_grads(task, theta, step_batches, B);
        UnrollStep& entry = tape.steps[t];
        Vec64 delta = optimizer_step(w, state, g, &entry);
        entry.task_loss = step_loss;
        out.loss_trace.push_back(step_loss);
        axpy(1.0, delta, theta);
    }

    out.meta_grad = meta_backward(w, tape);
    double total = 0.0;
    for (double v : out.loss_trace) total += v;
    out.meta_loss = total;
    out.final_params = std::move(theta);
    return out;
}

void meta_update_rmsprop(OptimizerParams& w, RmspropState& rs, const Vec64& meta_grad,
                         const MetaConfig& cfg) {
    Vec64 flat = flatten(w);
    require_same_length(flat, meta_grad, "meta_update_rmsprop");
    require_same_length(flat, rs.v, "meta_update_rmsprop state");
    if (!all_finite(meta_grad)) throw NumericError("meta_update_rmsprop: non-finite meta-gradient");
    const double rho = cfg.rmsprop_decay;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        rs.v[i] = rho * rs.v[i] + (1.0 - rho) * meta_grad[i] * meta_grad[i];
        // zero gradient means zero step even when sqrt(v)+eps is zero
        if (meta_grad[i] == 0.0) continue;
        flat[i] -= cfg.meta_lr * meta_grad[i] / (std::sqrt(rs.v[i]) + cfg.rmsprop_eps);
    }
    w = unflatten(flat, w.hidden);
}

TrainResult meta_train_sequential(const std::vector<Task>& tasks, const MetaConfig& cfg) {
    cfg.validate();
    if (tasks.empty()) throw ConfigError("meta_train_sequential: no tasks");

    TrainResult res;
    res.cluster_ids = {0};
    OptimizerParams w = init_params(cfg.seed, cfg.hidden);
    RmspropState rs = RmspropState::zeros(w.flat_size());

    auto start = std::chrono::steady_clock::now();
    for (std::uint32_t iter = 0; iter < cfg.meta_iterations; ++iter) {
        long double loss_acc = 0.0L;
        for (const Task& task : tasks) {
            TaskLoopResult r = task_loop(task, w, cfg, loop_stream(cfg.seed, task.id, iter));
            meta_update_rmsprop(w, rs, r.meta_grad, cfg);
            loss_acc += r.meta_loss;
        }
        res.iteration_cluster_loss.push_back(
            {static_cast<double>(loss_acc / static_cast<long double>(tasks.size()))});
    }
    res.train_seconds = seconds_since(start);
    res.w_final = std::move(w);
    return res;
}

TrainResult meta_train_optimized(const std::vector<Task>& tasks, const MetaConfig& cfg) {
    cfg.validate();
    if (tasks.empty()) throw ConfigError("meta_train_optimized: no tasks");

    std::vector<Cluster> clusters =
        cluster_tasks(tasks, cfg.k_clusters, cfg.cluster_strategy, cfg.seed, cfg.unroll_steps);
    Schedule schedule = group_clusters_lpt(clusters, cfg.g_groups);

    std::unordered_map<std::uint32_t, const Task*> by_id;
    for (const Task& t : tasks) by_id.emplace(t.id, &t);

    TrainResult res;
    res.schedule = schedule;
    for (const Cluster& c : clusters) res.cluster_ids.push_back(c.id);
    res.group_seconds.assign(schedule.groups.size(), 0.0);

    OptimizerParams w = init_params(cfg.seed, cfg.hidden);
    RmspropState rs = RmspropState::zeros(w.flat_size());

    auto start = std::chrono::steady_clock::now();
    for (std::uint32_t iter = 0; iter < cfg.meta_iterations; ++iter) {
        TaskRunner runner = [&w, &cfg, &by_id, iter](const Cluster&,
                                                     std::uint32_t task_id) -> TaskRunResult {
            TaskLoopResult r =
                task_loop(*by_id.at(task_id), w, cfg, loop_stream(cfg.seed, task_id, iter));
            return TaskRunResult{std::move(r.meta_grad), r.meta_loss};
        };
        ClusterStepResult step =
            parallel_cluster_step(schedule.groups, runner, schedule.groups.size());
        meta_update_rmsprop(w, rs, step.averaged_grad, cfg);
        res.iteration_cluster_loss.push_back(step.cluster_losses);
        for (std::size_t g = 0; g < step.group_seconds.size(); ++g) {
            res.group_seconds[g] += step.group_seconds[g];
        }
    }
    res.train_seconds = seconds_since(start);
    res.w_final = std::move(w);
    return res;
}

EvalReport evaluate_optimizer(const OptimizerParams& w, const std::vector<Task>& test_tasks,
                              const MetaConfig& cfg) {
    cfg.validate();
    if (test_tasks.empty()) throw ConfigError("evaluate_optimizer: no test tasks");

    EvalReport rep;
    long double init_acc = 0.0L, final_acc = 0.0L, acc_acc = 0.0L;
    std::size_t acc_count = 0;
    for (const Task& t : test_tasks) {
        Batch fb = full_batch(t);
        double initial = loss(t, t.init_params, fb);
        TaskLoopResult r =
            task_loop(t, w, cfg, RngStream(cfg.seed).substream(t.id).substream(kEvalStream));
        double final_loss = loss(t, r.final_params, fb);
        rep.initial_losses.push_back(initial);
        rep.final_losses.push_back(final_loss);
        init_acc += initial;
        final_acc += final_loss;
        if (t.dataset_backed()) {
            acc_acc += accuracy(t, r.final_params);
            ++acc_count;
        }
    }
    const long double n = static_cast<long double>(test_tasks.size());
    rep.mean_initial_loss = static_cast<double>(init_acc / n);
    rep.mean_final_loss = static_cast<double>(final_acc / n);
    rep.has_accuracy = acc_count > 0;
    if (rep.has_accuracy) {
        rep.mean_accuracy = static_cast<double>(acc_acc / static_cast<long double>(acc_count));
    }
    return rep;
}

}  // namespace macc
