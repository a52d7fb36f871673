#pragma once

#include <cstdint>
#include <vector>

#include "macc/learned_optimizer.hpp"
#include "macc/rng.hpp"
#include "macc/scheduler.hpp"
#include "macc/tasks.hpp"
#include "macc/vec.hpp"

namespace macc {

struct MetaConfig {
    std::uint32_t unroll_steps = 20;     // N task-loop steps per task
    std::uint32_t batch_size = 32;
    std::uint32_t meta_iterations = 20;
    double meta_lr = 1e-3;
    double rmsprop_decay = 0.9;
    double rmsprop_eps = 1e-8;
    std::uint32_t batch_parallel_degree = 1;  // batches averaged per unroll step
    std::uint32_t k_clusters = 1;
    std::uint32_t g_groups = 1;
    std::uint64_t seed = 42;
    std::uint32_t hidden = 8;
    ClusterStrategy cluster_strategy = ClusterStrategy::ByFamily;

    // Throws ConfigError listing every violation. meta_iterations may be 0
    // (an empty meta loop returns the fresh optimizer unchanged).
    void validate() const;
};

struct RmspropState {
    Vec64 v;  // second-moment accumulator over the flattened meta-parameters

    static RmspropState zeros(std::size_t n) { return RmspropState{Vec64(n, 0.0)}; }
};

struct TaskLoopResult {
    double meta_loss = 0.0;  // sum of loss_trace
    Vec64 meta_grad;         // w-sized, flattened
    Vec64 loss_trace;        // pre-update loss at each unroll step
    Vec64 final_params;
};

inline constexpr double kDivergenceGuard = 1e10;

// Trains one task for cfg.unroll_steps with a fresh OptimizerState, recording
// the unroll on a tape; each step averages batch_parallel_degree batch
// gradients (deterministic reduction). rng drives batch sampling only.
TaskLoopResult task_loop(const Task& task, const OptimizerParams& w, const MetaConfig& cfg,
                         RngStream rng);

// v' = rho v + (1-rho) g^2; w' = w - meta_lr g / (sqrt(v') + eps), on the
// flattened representation.
void meta_update_rmsprop(OptimizerParams& w, RmspropState& rs, const Vec64& meta_grad,
                         const MetaConfig& cfg);

struct TrainResult {
    OptimizerParams w_final;
    std::vector<std::uint32_t> cluster_ids;  // loss-column labels; {0} for the baseline
    std::vector<std::vector<double>> iteration_cluster_loss;  // [iteration][cluster column]
    Schedule schedule;                  // no groups for the baseline
    std::vector<double> group_seconds;  // per group, accumulated over iterations
    double train_seconds = 0.0;
};

// Baseline pipeline: tasks in fixed order, one RMSProp update immediately
// after every task. Single-threaded by definition.
TrainResult meta_train_sequential(const std::vector<Task>& tasks, const MetaConfig& cfg);

// Optimized pipeline: cluster tasks, LPT-balance clusters into groups, run
// the groups concurrently each iteration, then apply one RMSProp update with
// the deterministic average of the per-cluster meta-gradients.
TrainResult meta_train_optimized(const std::vector<Task>& tasks, const MetaConfig& cfg);

struct EvalReport {
    std::vector<double> initial_losses;  // full-data loss at init params, per task
    std::vector<double> final_losses;    // full-data loss after the task loop, per task
    double mean_initial_loss = 0.0;
    double mean_final_loss = 0.0;
    double mean_accuracy = 0.0;  // over classification tasks only
    bool has_accuracy = false;
};

// Runs a frozen-w task loop on every test task; no meta updates.
EvalReport evaluate_optimizer(const OptimizerParams& w, const std::vector<Task>& test_tasks,
                              const MetaConfig& cfg);

}  // namespace macc
