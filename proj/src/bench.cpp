#include "macc/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "macc/errors.hpp"
#include "macc/learned_optimizer.hpp"

namespace macc {

namespace {

using nlohmann::json;

// Held-out test tasks reuse the manifest with shifted seeds and ids.
constexpr std::uint64_t kTestSeedOffset = 0x7E57'0000ULL;
constexpr std::uint32_t kTestIdOffset = 1u << 20;

std::uint32_t default_dims(TaskFamily family) {
    switch (family) {
        case TaskFamily::Quadratic:
        case TaskFamily::Bowl: return 4;
        case TaskFamily::TwoD: return 2;
        case TaskFamily::SoftmaxRegression: return kSoftmaxDims;
        case TaskFamily::FullyConnected: return kFcDims;
    }
    return 4;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f || !f.write(content.data(), static_cast<std::streamsize>(content.size()))) {
        throw IoError("emit_report: cannot write " + path);
    }
}

// -------- config parsing ---------------------------------------------------

void require_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where,
                  std::vector<std::string>& violations) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            violations.push_back(where + ": unknown key '" + it.key() + "'");
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where,
                std::vector<std::string>& violations) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        violations.push_back(where + ": field '" + std::string(key) + "' has the wrong type");
    }
}

}  // namespace

const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Sequential: return "sequential";
        case RunMode::Optimized: return "optimized";
        case RunMode::Compare: return "compare";
    }
    return "sequential";
}

RunMode run_mode_from_name(const std::string& name) {
    if (name == "sequential") return RunMode::Sequential;
    if (name == "optimized") return RunMode::Optimized;
    if (name == "compare") return RunMode::Compare;
    throw ConfigError("unknown mode '" + name + "'");
}

std::uint32_t RunConfig::total_tasks() const {
    std::uint32_t n = 0;
    for (const ManifestEntry& e : manifest) n += e.count;
    return n;
}

void RunConfig::validate() const {
    std::vector<std::string> bad;
    try {
        meta.validate();
    } catch (const ConfigError& e) {
        bad.push_back(e.what());
    }
    if (manifest.empty()) bad.push_back("tasks: at least one manifest entry required");
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const ManifestEntry& e = manifest[i];
        std::string where = "tasks[" + std::to_string(i) + "]";
        if (e.count < 1) bad.push_back(where + ": count must be >= 1");
        if (e.dims < 1) bad.push_back(where + ": dims must be >= 1");
        if (e.family == TaskFamily::TwoD && e.dims != 2) {
            bad.push_back(where + ": two_d requires dims 2");
        }
        if (e.family == TaskFamily::SoftmaxRegression && e.dims != kSoftmaxDims) {
            bad.push_back(where + ": softmax_regression has fixed dims " +
                          std::to_string(kSoftmaxDims));
        }
        if (e.family == TaskFamily::FullyConnected && e.dims != kFcDims) {
            bad.push_back(where + ": fully_connected has fixed dims " + std::to_string(kFcDims));
        }
    }
    if (!manifest.empty() && meta.k_clusters > total_tasks()) {
        bad.push_back("k_clusters exceeds the task count");
    }
    if (repetitions < 1) bad.push_back("repetitions must be >= 1");
    if (out_dir.empty()) bad.push_back("out_dir must be non-empty");
    if (!bad.empty()) {
        std::string msg = "invalid config: ";
        for (std::size_t i = 0; i < bad.size(); ++i) {
            if (i) msg += "; ";
            msg += bad[i];
        }
        throw ConfigError(msg);
    }
}

RunConfig parse_config_json(const json& doc) {
    std::vector<std::string> violations;
    if (!doc.is_object()) throw ConfigError("invalid config: top level must be a JSON object");

    static const std::set<std::string> kTopKeys = {
        "mode",           "seed",          "hidden",      "unroll_steps",
        "batch_size",     "meta_iterations", "meta_lr",   "rmsprop_decay",
        "rmsprop_eps",    "batch_parallel_degree", "k_clusters", "g_groups",
        "cluster_strategy", "repetitions", "out_dir",     "tasks"};
    static const std::set<std::string> kEntryKeys = {"family", "count", "dims", "seed"};
    require_keys(doc, kTopKeys, "config", violations);

    RunConfig cfg;
    read_field(doc, "seed", cfg.meta.seed, "config", violations);
    read_field(doc, "hidden", cfg.meta.hidden, "config", violations);
    read_field(doc, "unroll_steps", cfg.meta.unroll_steps, "config", violations);
    read_field(doc, "batch_size", cfg.meta.batch_size, "config", violations);
    read_field(doc, "meta_iterations", cfg.meta.meta_iterations, "config", violations);
    read_field(doc, "meta_lr", cfg.meta.meta_lr, "config", violations);
    read_field(doc, "rmsprop_decay", cfg.meta.rmsprop_decay, "config", violations);
    read_field(doc, "rmsprop_eps", cfg.meta.rmsprop_eps, "config", violations);
    read_field(doc, "batch_parallel_degree", cfg.meta.batch_parallel_degree, "config", violations);
    read_field(doc, "repetitions", cfg.repetitions, "config", violations);
    read_field(doc, "out_dir", cfg.out_dir, "config", violations);

    std::string mode_name = run_mode_name(cfg.mode);
    read_field(doc, "mode", mode_name, "config", violations);
    std::string strategy_name = cluster_strategy_name(cfg.meta.cluster_strategy);
    read_field(doc, "cluster_strategy", strategy_name, "config", violations);
    try {
        cfg.mode = run_mode_from_name(mode_name);
    } catch (const ConfigError& e) {
        violations.push_back(e.what());
    }
    try {
        cfg.meta.cluster_strategy = cluster_strategy_from_name(strategy_name);
    } catch (const ConfigError& e) {
        violations.push_back(e.what());
    }

    std::set<TaskFamily> families;
    if (auto it = doc.find("tasks"); it != doc.end()) {
        if (!it->is_array()) {
            violations.push_back("config: 'tasks' must be an array");
        } else {
            std::size_t i = 0;
            for (const json& entry : *it) {
                std::string where = "tasks[" + std::to_string(i) + "]";
                ManifestEntry e;
                if (!entry.is_object()) {
                    violations.push_back(where + ": must be an object");
                    ++i;
                    continue;
                }
                require_keys(entry, kEntryKeys, where, violations);
                std::string fam_name;
                if (!entry.contains("family")) {
                    violations.push_back(where + ": 'family' is required");
                } else {
                    read_field(entry, "family", fam_name, where, violations);
                    try {
                        e.family = family_from_name(fam_name);
                        families.insert(e.family);
                    } catch (const ConfigError& err) {
                        violations.push_back(where + ": " + err.what());
                    }
                }
                read_field(entry, "count", e.count, where, violations);
                read_field(entry, "seed", e.seed, where, violations);
                e.dims = default_dims(e.family);
                read_field(entry, "dims", e.dims, where, violations);
                cfg.manifest.push_back(e);
                ++i;
            }
        }
    } else {
        violations.push_back("config: 'tasks' is required");
    }

    // defaults that depend on the manifest
    cfg.meta.k_clusters = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(families.size()));
    read_field(doc, "k_clusters", cfg.meta.k_clusters, "config", violations);
    cfg.meta.g_groups = std::min<std::uint32_t>(2, cfg.meta.k_clusters);
    read_field(doc, "g_groups", cfg.meta.g_groups, "config", violations);

    if (!violations.empty()) {
        std::string msg = "invalid config: ";
        for (std::size_t i = 0; i < violations.size(); ++i) {
            if (i) msg += "; ";
            msg += violations[i];
        }
        throw ConfigError(msg);
    }
    cfg.validate();
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_config_json(doc);
}

json serialize_config(const RunConfig& cfg) {
    json tasks = json::array();
    for (const ManifestEntry& e : cfg.manifest) {
        tasks.push_back({{"family", family_name(e.family)},
                         {"count", e.count},
                         {"dims", e.dims},
                         {"seed", e.seed}});
    }
    return json{{"mode", run_mode_name(cfg.mode)},
                {"seed", cfg.meta.seed},
                {"hidden", cfg.meta.hidden},
                {"unroll_steps", cfg.meta.unroll_steps},
                {"batch_size", cfg.meta.batch_size},
                {"meta_iterations", cfg.meta.meta_iterations},
                {"meta_lr", cfg.meta.meta_lr},
                {"rmsprop_decay", cfg.meta.rmsprop_decay},
                {"rmsprop_eps", cfg.meta.rmsprop_eps},
                {"batch_parallel_degree", cfg.meta.batch_parallel_degree},
                {"k_clusters", cfg.meta.k_clusters},
                {"g_groups", cfg.meta.g_groups},
                {"cluster_strategy", cluster_strategy_name(cfg.meta.cluster_strategy)},
                {"repetitions", cfg.repetitions},
                {"out_dir", cfg.out_dir},
                {"tasks", std::move(tasks)}};
}

std::vector<Task> build_tasks(const std::vector<ManifestEntry>& manifest) {
    std::vector<Task> tasks;
    std::uint32_t id = 0;
    for (const ManifestEntry& e : manifest) {
        for (std::uint32_t j = 0; j < e.count; ++j) {
            Task t = generate_task(e.family, e.seed + j, e.dims);
            t.id = id++;
            tasks.push_back(std::move(t));
        }
    }
    return tasks;
}

std::vector<Task> build_test_tasks(const std::vector<ManifestEntry>& manifest) {
    std::vector<Task> tasks;
    std::uint32_t id = kTestIdOffset;
    for (const ManifestEntry& e : manifest) {
        for (std::uint32_t j = 0; j < e.count; ++j) {
            Task t = generate_task(e.family, e.seed + kTestSeedOffset + j, e.dims);
            t.id = id++;
            tasks.push_back(std::move(t));
        }
    }
    return tasks;
}

RunReport run(const RunConfig& cfg) {
    cfg.validate();
    RunReport rep;
    rep.config_echo = serialize_config(cfg);

    auto gen_start = std::chrono::steady_clock::now();
    std::vector<Task> tasks = build_tasks(cfg.manifest);
    std::vector<Task> test_tasks = build_test_tasks(cfg.manifest);
    rep.generation_seconds = seconds_since(gen_start);
    rep.num_tasks = static_cast<std::uint32_t>(tasks.size());

    const std::uint32_t reps =
        cfg.mode == RunMode::Compare ? std::max<std::uint32_t>(cfg.repetitions, 3) : cfg.repetitions;

    TrainResult seq, opt;
    if (cfg.mode != RunMode::Optimized) {
        std::vector<double> times;
        for (std::uint32_t r = 0; r < reps; ++r) {
            seq = meta_train_sequential(tasks, cfg.meta);
            times.push_back(seq.train_seconds);
        }
        rep.base_time_s = median(times);
        rep.has_base = true;
    }
    if (cfg.mode != RunMode::Sequential) {
        std::vector<double> times;
        for (std::uint32_t r = 0; r < reps; ++r) {
            opt = meta_train_optimized(tasks, cfg.meta);
            times.push_back(opt.train_seconds);
        }
        rep.optimized_time_s = median(times);
        rep.has_optimized = true;
        rep.schedule = opt.schedule;
        rep.has_schedule = true;
        rep.group_seconds = opt.group_seconds;
    }
    if (cfg.mode == RunMode::Compare) {
        rep.speedup = rep.base_time_s / rep.optimized_time_s;
        rep.has_speedup = true;
    }

    const TrainResult& record = cfg.mode == RunMode::Sequential ? seq : opt;
    rep.num_clusters = static_cast<std::uint32_t>(record.cluster_ids.size());
    for (std::size_t iter = 0; iter < record.iteration_cluster_loss.size(); ++iter) {
        const std::vector<double>& row = record.iteration_cluster_loss[iter];
        for (std::size_t c = 0; c < row.size(); ++c) {
            rep.loss_curves.push_back(LossCurveRow{static_cast<std::uint32_t>(iter),
                                                   record.cluster_ids[c], row[c]});
        }
    }
    rep.w_final = record.w_final;

    auto eval_start = std::chrono::steady_clock::now();
    rep.eval = evaluate_optimizer(rep.w_final, test_tasks, cfg.meta);
    rep.eval_seconds = seconds_since(eval_start);
    return rep;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_speedup(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
}

std::string timings_csv(const RunReport& report) {
    std::string out = "num_clusters,num_tasks,base_time_s,optimized_time_s,speedup\n";
    out += std::to_string(report.num_clusters) + "," + std::to_string(report.num_tasks) + ",";
    out += (report.has_base ? format_double(report.base_time_s) : std::string()) + ",";
    out += (report.has_optimized ? format_double(report.optimized_time_s) : std::string()) + ",";
    out += (report.has_speedup ? format_speedup(report.speedup) : std::string()) + "\n";
    return out;
}

std::string loss_curves_csv(const RunReport& report) {
    std::string out = "iteration,cluster_id,meta_loss\n";
    for (const LossCurveRow& row : report.loss_curves) {
        out += std::to_string(row.iteration) + "," + std::to_string(row.cluster_id) + "," +
               format_double(row.meta_loss) + "\n";
    }
    return out;
}

std::string trend_csv(const std::vector<TrendRow>& rows) {
    std::string out = "num_tasks,speedup\n";
    for (const TrendRow& row : rows) {
        out += std::to_string(row.num_tasks) + "," + format_speedup(row.speedup) + "\n";
    }
    return out;
}

namespace {

json report_to_json(const RunReport& rep) {
    json timing{{"generation_seconds", rep.generation_seconds},
                {"eval_seconds", rep.eval_seconds},
                {"group_seconds", rep.group_seconds}};
    timing["base_time_s"] = rep.has_base ? json(rep.base_time_s) : json(nullptr);
    timing["optimized_time_s"] = rep.has_optimized ? json(rep.optimized_time_s) : json(nullptr);
    if (rep.has_speedup) timing["speedup"] = rep.speedup;

    json curves = json::array();
    for (const LossCurveRow& row : rep.loss_curves) {
        curves.push_back({{"iteration", row.iteration},
                          {"cluster_id", row.cluster_id},
                          {"meta_loss", row.meta_loss}});
    }

    json eval{{"mean_initial_loss", rep.eval.mean_initial_loss},
              {"mean_final_loss", rep.eval.mean_final_loss},
              {"initial_losses", rep.eval.initial_losses},
              {"final_losses", rep.eval.final_losses}};
    if (rep.eval.has_accuracy) eval["mean_accuracy"] = rep.eval.mean_accuracy;

    Vec64 flat = flatten(rep.w_final);
    json fingerprint{{"flat_size", flat.size()},
                     {"l2_norm", norm2(flat)},
                     {"log_step", rep.w_final.log_step}};

    json doc{{"config", rep.config_echo},
             {"num_tasks", rep.num_tasks},
             {"num_clusters", rep.num_clusters},
             {"timing", std::move(timing)},
             {"eval", std::move(eval)},
             {"loss_curves", std::move(curves)},
             {"w_fingerprint", std::move(fingerprint)}};
    doc["schedule"] = rep.has_schedule ? json::parse(schedule_to_json(rep.schedule))
                                       : json{{"groups", json::array()}, {"makespan", 0.0}};
    return doc;
}

}  // namespace

void emit_report(const RunReport& report, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("emit_report: cannot create directory " + dir + ": " + ec.message());

    write_file(dir + "/report.json", report_to_json(report).dump(2) + "\n");
    write_file(dir + "/timings.csv", timings_csv(report));
    write_file(dir + "/loss_curves.csv", loss_curves_csv(report));
    write_file(dir + "/schedule.json",
               (report.has_schedule
                    ? schedule_to_json(report.schedule)
                    : json{{"groups", json::array()}, {"makespan", 0.0}}.dump(2)) +
                   "\n");
    save_checkpoint(dir + "/w_final.bin", report.w_final);
}

std::vector<ManifestEntry> scale_manifest(const std::vector<ManifestEntry>& manifest,
                                          std::uint32_t total) {
    if (manifest.empty()) throw ConfigError("scale_manifest: empty manifest");
    if (total < 1) throw ConfigError("scale_manifest: total must be >= 1");
    std::vector<ManifestEntry> scaled = manifest;
    for (ManifestEntry& e : scaled) e.count = 0;
    for (std::uint32_t j = 0; j < total; ++j) ++scaled[j % scaled.size()].count;
    std::erase_if(scaled, [](const ManifestEntry& e) { return e.count == 0; });
    return scaled;
}

std::vector<TrendRow> sweep(const RunConfig& base, const std::vector<std::uint32_t>& task_counts) {
    if (task_counts.empty()) throw ConfigError("sweep: no task counts given");
    for (std::size_t i = 1; i < task_counts.size(); ++i) {
        if (task_counts[i] <= task_counts[i - 1]) {
            throw ConfigError("sweep: task counts must be strictly ascending");
        }
    }
    std::vector<TrendRow> rows;
    for (std::uint32_t n : task_counts) {
        RunConfig cfg = base;
        cfg.mode = RunMode::Compare;
        cfg.manifest = scale_manifest(base.manifest, n);
        cfg.out_dir = base.out_dir + "/tasks_" + std::to_string(n);
        std::uint32_t distinct = 0;
        {
            std::set<TaskFamily> fams;
            for (const ManifestEntry& e : cfg.manifest) fams.insert(e.family);
            distinct = static_cast<std::uint32_t>(fams.size());
        }
        if (cfg.meta.cluster_strategy == ClusterStrategy::ByFamily) {
            cfg.meta.k_clusters = distinct;
        } else {
            cfg.meta.k_clusters = std::min<std::uint32_t>(cfg.meta.k_clusters, n);
        }
        cfg.meta.g_groups = std::min(cfg.meta.g_groups, cfg.meta.k_clusters);
        RunReport rep = run(cfg);
        emit_report(rep, cfg.out_dir);
        rows.push_back(TrendRow{n, rep.speedup});
    }
    std::error_code ec;
    std::filesystem::create_directories(base.out_dir, ec);
    if (ec) {
        throw IoError("sweep: cannot create directory " + base.out_dir + ": " + ec.message());
    }
    write_file(base.out_dir + "/trend.csv", trend_csv(rows));
    return rows;
}

}  // namespace macc
