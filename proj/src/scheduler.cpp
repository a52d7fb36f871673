#include "macc/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "macc/errors.hpp"
#include "macc/rng.hpp"

namespace macc {

namespace {

constexpr std::size_t kNumFamilySlots = 5;
constexpr std::size_t kFeatureDim = 1 + kNumFamilySlots + 2;  // dims, one-hot, loss, grad norm

double family_cost_multiplier(TaskFamily f) {
    switch (f) {
        case TaskFamily::FullyConnected: return 4.0;
        case TaskFamily::SoftmaxRegression: return 2.0;
        default: return 1.0;
    }
}

std::unordered_map<std::uint32_t, std::size_t> index_by_id(const std::vector<Task>& tasks) {
    std::unordered_map<std::uint32_t, std::size_t> idx;
    idx.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!idx.emplace(tasks[i].id, i).second) {
            throw ConfigError("duplicate task id " + std::to_string(tasks[i].id));
        }
    }
    return idx;
}

std::string label_for(const std::vector<const Task*>& members) {
    TaskFamily f = members.front()->family;
    for (const Task* t : members) {
        if (t->family != f) return "mixed";
    }
    return family_name(f);
}

// Standardized per-task features for KMeansFeatures.
Mat64 task_features(const std::vector<Task>& tasks) {
    Mat64 feats(tasks.size(), kFeatureDim);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Task& t = tasks[i];
        Batch fb = full_batch(t);
        feats(i, 0) = static_cast<double>(t.dims);
        feats(i, 1 + static_cast<std::size_t>(t.family)) = 1.0;
        feats(i, 1 + kNumFamilySlots) = loss(t, t.init_params, fb);
        feats(i, 2 + kNumFamilySlots) = norm2(grad(t, t.init_params, fb));
    }
    for (std::size_t c = 0; c < kFeatureDim; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < feats.rows; ++r) mean += feats(r, c);
        mean /= static_cast<double>(feats.rows);
        double var = 0.0;
        for (std::size_t r = 0; r < feats.rows; ++r) {
            double d = feats(r, c) - mean;
            var += d * d;
        }
        double sd = std::sqrt(var / static_cast<double>(feats.rows));
        for (std::size_t r = 0; r < feats.rows; ++r) {
            feats(r, c) = sd > 1e-12 ? (feats(r, c) - mean) / sd : 0.0;
        }
    }
    return feats;
}

double sq_dist(const Mat64& feats, std::size_t row, const Vec64& center) {
    double acc = 0.0;
    for (std::size_t c = 0; c < feats.cols; ++c) {
        double d = feats(row, c) - center[c];
        acc += d * d;
    }
    return acc;
}

std::vector<std::uint32_t> kmeans_assign(const std::vector<Task>& tasks, std::uint32_t k,
                                         std::uint64_t seed) {
    const std::size_t n = tasks.size();
    Mat64 feats = task_features(tasks);
    RngStream rng(seed);

    // k-means++ seeding
    std::vector<Vec64> centers;
    centers.reserve(k);
    auto point = [&feats](std::size_t row) {
        Vec64 p(feats.cols);
        for (std::size_t c = 0; c < feats.cols; ++c) p[c] = feats(row, c);
        return p;
    };
    centers.push_back(point(rng.uniform_index(n)));
    Vec64 d2(n);
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec64& c : centers) best = std::min(best, sq_dist(feats, i, c));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centers.push_back(point(rng.uniform_index(n)));
            continue;
        }
        double threshold = rng.uniform() * total;
        double run = 0.0;
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            run += d2[i];
            if (run >= threshold) {
                chosen = i;
                break;
            }
        }
        centers.push_back(point(chosen));
    }

    std::vector<std::uint32_t> assign(n, 0);
    for (int iter = 0; iter < 20; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t arg = 0;
            for (std::uint32_t c = 0; c < k; ++c) {
                double d = sq_dist(feats, i, centers[c]);
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
            assign[i] = arg;
        }
        // fix empty clusters: steal the point farthest from its center
        std::vector<std::size_t> counts(k, 0);
        for (std::uint32_t a : assign) ++counts[a];
        for (std::uint32_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            double worst = -1.0;
            std::size_t victim = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i]] <= 1) continue;
                double d = sq_dist(feats, i, centers[assign[i]]);
                if (d > worst) {
                    worst = d;
                    victim = i;
                }
            }
            --counts[assign[victim]];
            assign[victim] = c;
            counts[c] = 1;
        }
        for (std::uint32_t c = 0; c < k; ++c) {
            Vec64 mean(feats.cols, 0.0);
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] != c) continue;
                for (std::size_t col = 0; col < feats.cols; ++col) mean[col] += feats(i, col);
                ++cnt;
            }
            for (double& v : mean) v /= static_cast<double>(cnt);
            centers[c] = std::move(mean);
        }
    }
    return assign;
}

}  // namespace

const char* cluster_strategy_name(ClusterStrategy s) {
    return s == ClusterStrategy::ByFamily ? "by_family" : "kmeans_features";
}

ClusterStrategy cluster_strategy_from_name(const std::string& name) {
    if (name == "by_family") return ClusterStrategy::ByFamily;
    if (name == "kmeans_features") return ClusterStrategy::KMeansFeatures;
    throw ConfigError("unknown cluster strategy '" + name + "'");
}

std::vector<Cluster> cluster_tasks(const std::vector<Task>& tasks, std::uint32_t k,
                                   ClusterStrategy strategy, std::uint64_t seed,
                                   std::uint32_t unroll_steps) {
    if (tasks.empty()) throw ConfigError("cluster_tasks: no tasks");
    if (k < 1) throw ConfigError("cluster_tasks: k must be >= 1");
    if (k > tasks.size()) {
        throw ConfigError("cluster_tasks: k=" + std::to_string(k) + " exceeds task count " +
                          std::to_string(tasks.size()));
    }
    if (unroll_steps < 1) throw ConfigError("cluster_tasks: unroll_steps must be >= 1");
    index_by_id(tasks);  // id uniqueness check

    // member task indices per cluster, cluster order fixed below
    std::vector<std::vector<std::size_t>> members;
    if (strategy == ClusterStrategy::ByFamily) {
        std::vector<std::vector<std::size_t>> by_family(kNumFamilySlots);
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            by_family[static_cast<std::size_t>(tasks[i].family)].push_back(i);
        }
        for (auto& m : by_family) {
            if (!m.empty()) members.push_back(std::move(m));
        }
        if (members.size() != k) {
            throw ConfigError("cluster_tasks: ByFamily needs k equal to the " +
                              std::to_string(members.size()) + " distinct families present, got " +
                              std::to_string(k));
        }
    } else {
        std::vector<std::uint32_t> assign = kmeans_assign(tasks, k, seed);
        std::vector<std::vector<std::size_t>> raw(k);
        for (std::size_t i = 0; i < tasks.size(); ++i) raw[assign[i]].push_back(i);
        // deterministic ids: order clusters by their smallest member index
        std::sort(raw.begin(), raw.end(),
                  [](const auto& a, const auto& b) { return a.front() < b.front(); });
        members = std::move(raw);
    }

    std::vector<Cluster> clusters(members.size());
    for (std::size_t c = 0; c < members.size(); ++c) {
        Cluster& cl = clusters[c];
        cl.id = static_cast<std::uint32_t>(c);
        std::vector<const Task*> ts;
        for (std::size_t i : members[c]) {
            cl.task_ids.push_back(tasks[i].id);
            ts.push_back(&tasks[i]);
        }
        cl.family_label = label_for(ts);
        cl.est_cost = estimate_cost(cl, tasks, unroll_steps);
    }
    return clusters;
}

double estimate_cost(const Cluster& cluster, const std::vector<Task>& tasks,
                     std::uint32_t unroll_steps, std::optional<double> probe_mean_step_seconds) {
    if (probe_mean_step_seconds) {
        return *probe_mean_step_seconds * static_cast<double>(unroll_steps) *
               static_cast<double>(cluster.task_ids.size());
    }
    auto idx = index_by_id(tasks);
    double total = 0.0;
    for (std::uint32_t tid : cluster.task_ids) {
        auto it = idx.find(tid);
        if (it == idx.end()) {
            throw ConfigError("estimate_cost: cluster references unknown task id " +
                              std::to_string(tid));
        }
        const Task& t = tasks[it->second];
        total += static_cast<double>(unroll_steps) * static_cast<double>(t.dims) *
                 family_cost_multiplier(t.family);
    }
    return total;
}

Schedule group_clusters_lpt(const std::vector<Cluster>& clusters, std::uint32_t g) {
    if (g < 1 || g > clusters.size()) {
        throw ConfigError("group_clusters_lpt: G=" + std::to_string(g) +
                          " out of range for " + std::to_string(clusters.size()) + " clusters");
    }
    std::vector<std::size_t> order(clusters.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&clusters](std::size_t a, std::size_t b) {
        if (clusters[a].est_cost != clusters[b].est_cost) {
            return clusters[a].est_cost > clusters[b].est_cost;
        }
        return clusters[a].id < clusters[b].id;
    });

    Schedule s;
    s.groups.resize(g);
    for (std::uint32_t i = 0; i < g; ++i) s.groups[i].group_id = i;
    for (std::size_t pos : order) {
        std::size_t target = 0;
        for (std::size_t i = 1; i < g; ++i) {
            if (s.groups[i].total_cost < s.groups[target].total_cost) target = i;
        }
        s.groups[target].clusters.push_back(clusters[pos]);
        s.groups[target].total_cost += clusters[pos].est_cost;
    }
    for (const ClusterGroup& grp : s.groups) s.makespan = std::max(s.makespan, grp.total_cost);
    return s;
}

namespace {

struct BruteState {
    const std::vector<Cluster>* clusters;
    std::uint32_t g;
    std::vector<std::uint8_t> assign;
    std::vector<double> loads;
    double best_makespan;
    std::vector<std::uint8_t> best_assign;
};

// DFS in ascending-label order over canonical assignment vectors (a[0]=0,
// a[i] <= max used + 1): the first complete assignment reaching a given
// makespan is the lexicographically smallest one.
void brute_dfs(BruteState& st, std::size_t i, std::uint32_t used, double cur_max) {
    if (cur_max >= st.best_makespan) return;
    if (i == st.clusters->size()) {
        st.best_makespan = cur_max;
        st.best_assign = st.assign;
        return;
    }
    double cost = (*st.clusters)[i].est_cost;
    std::uint32_t limit = std::min(st.g, used + 1);
    for (std::uint32_t label = 0; label < limit; ++label) {
        st.assign[i] = static_cast<std::uint8_t>(label);
        st.loads[label] += cost;
        brute_dfs(st, i + 1, std::max(used, label + 1), std::max(cur_max, st.loads[label]));
        st.loads[label] -= cost;
    }
}

}  // namespace

Schedule optimal_grouping_bruteforce(const std::vector<Cluster>& clusters, std::uint32_t g) {
    if (clusters.size() > 12) {
        throw CapacityError("optimal_grouping_bruteforce: " + std::to_string(clusters.size()) +
                            " clusters exceeds the exhaustive limit of 12");
    }
    if (g < 1 || g > clusters.size()) {
        throw ConfigError("optimal_grouping_bruteforce: G=" + std::to_string(g) +
                          " out of range for " + std::to_string(clusters.size()) + " clusters");
    }
    BruteState st{&clusters, g, std::vector<std::uint8_t>(clusters.size(), 0),
                  std::vector<double>(g, 0.0), std::numeric_limits<double>::infinity(), {}};
    brute_dfs(st, 0, 0, 0.0);

    Schedule s;
    s.groups.resize(g);
    for (std::uint32_t i = 0; i < g; ++i) s.groups[i].group_id = i;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        ClusterGroup& grp = s.groups[st.best_assign[i]];
        grp.clusters.push_back(clusters[i]);
        grp.total_cost += clusters[i].est_cost;
    }
    for (const ClusterGroup& grp : s.groups) s.makespan = std::max(s.makespan, grp.total_cost);
    return s;
}

std::string schedule_to_json(const Schedule& schedule) {
    nlohmann::json groups = nlohmann::json::array();
    for (const ClusterGroup& g : schedule.groups) {
        nlohmann::json members = nlohmann::json::array();
        for (const Cluster& c : g.clusters) {
            members.push_back({{"cluster_id", c.id},
                               {"task_ids", c.task_ids},
                               {"family", c.family_label},
                               {"est_cost", c.est_cost}});
        }
        groups.push_back({{"group_id", g.group_id},
                          {"total_cost", g.total_cost},
                          {"clusters", std::move(members)}});
    }
    nlohmann::json doc{{"groups", std::move(groups)}, {"makespan", schedule.makespan}};
    return doc.dump(2);
}

}  // namespace macc
