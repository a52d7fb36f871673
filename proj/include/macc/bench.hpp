#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "macc/meta_engine.hpp"
#include "macc/scheduler.hpp"
#include "macc/tasks.hpp"

namespace macc {

struct ManifestEntry {
    TaskFamily family = TaskFamily::Quadratic;
    std::uint32_t count = 1;
    std::uint32_t dims = 0;  // 0 = family default (Quadratic/Bowl 4, TwoD 2, fixed nets theirs)
    std::uint64_t seed = 0;
};

enum class RunMode : std::uint8_t { Sequential, Optimized, Compare };

const char* run_mode_name(RunMode m);
RunMode run_mode_from_name(const std::string& name);  // throws ConfigError

struct RunConfig {
    MetaConfig meta;
    std::vector<ManifestEntry> manifest;
    RunMode mode = RunMode::Sequential;
    std::uint32_t repetitions = 3;
    std::string out_dir = "out";

    std::uint32_t total_tasks() const;
    void validate() const;  // throws ConfigError listing every violation
};

// JSON config file -> validated RunConfig. Unknown keys are rejected; absent
// keys take documented defaults (k_clusters = distinct manifest families,
// g_groups = min(2, k_clusters)).
RunConfig parse_config(const std::string& path);
RunConfig parse_config_json(const nlohmann::json& doc);
nlohmann::json serialize_config(const RunConfig& cfg);

// Tasks get ids 0..n-1 in manifest order; per-task seeds are entry.seed + j.
// Test tasks are the held-out twins: disjoint seeds and ids.
std::vector<Task> build_tasks(const std::vector<ManifestEntry>& manifest);
std::vector<Task> build_test_tasks(const std::vector<ManifestEntry>& manifest);

struct LossCurveRow {
    std::uint32_t iteration = 0;
    std::uint32_t cluster_id = 0;
    double meta_loss = 0.0;
};

struct RunReport {
    nlohmann::json config_echo;
    std::uint32_t num_tasks = 0;
    std::uint32_t num_clusters = 0;
    bool has_base = false;
    bool has_optimized = false;
    bool has_speedup = false;  // iff both pipelines ran (compare mode)
    double base_time_s = 0.0;
    double optimized_time_s = 0.0;
    double speedup = 0.0;
    double generation_seconds = 0.0;
    double eval_seconds = 0.0;
    std::vector<double> group_seconds;
    bool has_schedule = false;
    Schedule schedule;
    std::vector<LossCurveRow> loss_curves;
    EvalReport eval;
    OptimizerParams w_final;
};

// Executes the configured mode (compare = sequential then optimized on the
// identical tasks and seed), timing the training loops with a monotonic clock
// over `repetitions` runs (median; compare mode uses at least 3). Task
// generation and report I/O are excluded from the timed region. Always
// evaluates on the held-out test set.
RunReport run(const RunConfig& cfg);

// Writes report.json, timings.csv, loss_curves.csv and schedule.json into
// dir, plus the final meta-parameters as w_final.bin. Deterministic bytes for
// a given report.
void emit_report(const RunReport& report, const std::string& dir);

struct TrendRow {
    std::uint32_t num_tasks = 0;
    double speedup = 0.0;
};

// Compare run per task count (manifest rescaled round-robin); emits each
// run's files under <out_dir>/tasks_<n>/ and the trend table to
// <out_dir>/trend.csv.
std::vector<TrendRow> sweep(const RunConfig& base, const std::vector<std::uint32_t>& task_counts);

// Rescales entry counts round-robin so they sum to total.
std::vector<ManifestEntry> scale_manifest(const std::vector<ManifestEntry>& manifest,
                                          std::uint32_t total);

// Shortest round-trip representation (std::to_chars).
std::string format_double(double v);
// Fixed 4 decimal places, the ratio column convention.
std::string format_speedup(double v);

std::string timings_csv(const RunReport& report);
std::string loss_curves_csv(const RunReport& report);
std::string trend_csv(const std::vector<TrendRow>& rows);

}  // namespace macc
