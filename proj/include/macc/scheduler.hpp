#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "macc/tasks.hpp"

namespace macc {

// How tasks are partitioned into clusters before grouping. ByFamily is the
// default; KMeansFeatures clusters on per-task feature vectors.
enum class ClusterStrategy : std::uint8_t { ByFamily, KMeansFeatures };

const char* cluster_strategy_name(ClusterStrategy s);
ClusterStrategy cluster_strategy_from_name(const std::string& name);  // throws ConfigError

struct Cluster {
    std::uint32_t id = 0;
    std::vector<std::uint32_t> task_ids;
    std::string family_label;  // a family name, or "mixed"
    double est_cost = 0.0;
};

struct ClusterGroup {
    std::uint32_t group_id = 0;
    std::vector<Cluster> clusters;  // processed sequentially in this order
    double total_cost = 0.0;
};

struct Schedule {
    std::vector<ClusterGroup> groups;
    double makespan = 0.0;  // max group total_cost
};

// Partitions tasks into k clusters. ByFamily requires k to equal the number
// of distinct families present; KMeansFeatures runs seeded k-means (20
// iterations, k-means++ init) on [dims, family one-hot, initial loss, initial
// gradient norm], standardized per column. est_cost is filled with the
// analytic proxy for the given unroll length.
std::vector<Cluster> cluster_tasks(const std::vector<Task>& tasks, std::uint32_t k,
                                   ClusterStrategy strategy, std::uint64_t seed,
                                   std::uint32_t unroll_steps);

// probe present: measured mean step seconds x unroll_steps x task count.
// Otherwise the analytic proxy: sum over member tasks of
// unroll_steps x dims x family multiplier (FullyConnected 4, SoftmaxRegression
// 2, others 1).
double estimate_cost(const Cluster& cluster, const std::vector<Task>& tasks,
                     std::uint32_t unroll_steps,
                     std::optional<double> probe_mean_step_seconds = std::nullopt);

// Longest-processing-time greedy: clusters by est_cost descending (ties by
// ascending id) onto the least-loaded of G groups (ties to the lowest
// group_id).
Schedule group_clusters_lpt(const std::vector<Cluster>& clusters, std::uint32_t g);

// Exhaustive minimum-makespan partition for <= 12 clusters; ties broken by
// the lexicographically smallest canonical assignment vector.
Schedule optimal_grouping_bruteforce(const std::vector<Cluster>& clusters, std::uint32_t g);

// Pretty-printed JSON: groups with member cluster ids and est_costs, plus the
// predicted makespan.
std::string schedule_to_json(const Schedule& schedule);

}  // namespace macc
