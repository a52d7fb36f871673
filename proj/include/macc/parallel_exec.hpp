#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "macc/scheduler.hpp"
#include "macc/tasks.hpp"
#include "macc/vec.hpp"

namespace macc {

// Worker count actually used for `item_count` work items: the requested
// degree (0 = all hardware threads), capped by the MACC_THREADS environment
// variable and by the item count, never below 1. Degree only changes wall
// time; every public result here is bit-independent of it.
std::size_t resolve_degree(std::size_t requested, std::size_t item_count);

// Runs fn(0..count-1) on `degree` workers and blocks until every item has
// been attempted; an error in one item never abandons the others. If any item
// threw, the error of the lowest failed index is rethrown (same taxonomy
// type) with "[i of n work items completed]" appended.
void run_indexed(std::size_t count, std::size_t degree,
                 const std::function<void(std::size_t)>& fn);

// Left-fold sum in ascending item order (extended precision), divided once by
// the count. The mean of k copies of g is bit-exactly g.
Vec64 deterministic_mean(const std::vector<Vec64>& items);

// Mean of per-batch task gradients, reduced in ascending batch-index order;
// bit-identical for every degree.
Vec64 parallel_batch_grads(const Task& task, const Vec64& params,
                           const std::vector<Batch>& batches, std::size_t degree);

// One task's full task loop under frozen meta-parameters; supplied by the
// meta engine so this module stays free of training logic.
struct TaskRunResult {
    Vec64 meta_grad;
    double meta_loss = 0.0;
};
using TaskRunner = std::function<TaskRunResult(const Cluster&, std::uint32_t task_id)>;

struct ClusterStepResult {
    std::vector<std::uint32_t> cluster_ids;  // ascending
    std::vector<Vec64> cluster_grads;        // per cluster: mean over its tasks' meta-grads
    std::vector<double> cluster_losses;      // per cluster: mean meta-loss over its tasks
    Vec64 averaged_grad;                     // mean over clusters, ascending-id reduction
    std::vector<double> group_seconds;       // wall time per group, indexed like `groups`
};

// Runs the cluster groups concurrently (one worker per group); within a group
// clusters and their tasks run sequentially. Divergence errors are rethrown
// with (group, cluster, task) context.
ClusterStepResult parallel_cluster_step(const std::vector<ClusterGroup>& groups,
                                        const TaskRunner& runner, std::size_t degree);

}  // namespace macc
