#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "macc/rng.hpp"
#include "macc/vec.hpp"

namespace macc {

enum class TaskFamily : std::uint8_t {
    Quadratic,
    Bowl,
    SoftmaxRegression,
    FullyConnected,
    TwoD,
};

inline constexpr TaskFamily kAllFamilies[] = {
    TaskFamily::Quadratic, TaskFamily::Bowl, TaskFamily::SoftmaxRegression,
    TaskFamily::FullyConnected, TaskFamily::TwoD};

const char* family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& name);  // throws ConfigError

// Classification data shared by SoftmaxRegression and FullyConnected tasks.
struct Dataset {
    Mat64 features;                    // samples x feature_dim
    std::vector<std::uint32_t> labels;  // class index per sample
    std::size_t size() const { return labels.size(); }
};

// Architecture constants for the classification families.
inline constexpr std::uint32_t kNumClasses = 2;
inline constexpr std::uint32_t kNumFeatures = 5;
inline constexpr std::uint32_t kNumSamples = 512;
inline constexpr std::uint32_t kFcHiddenWidth = 8;
inline constexpr std::uint32_t kSoftmaxDims = kNumClasses * (kNumFeatures + 1);
inline constexpr std::uint32_t kFcDims = kFcHiddenWidth * kNumFeatures + kFcHiddenWidth +
                                         kNumClasses * kFcHiddenWidth + kNumClasses;

enum class TwoDKind : std::uint8_t { Rosenbrock, Booth, Ackley };

// One optimizable problem instance. fixed_data is fully determined by
// (family, seed, dims); only the members for the task's family are populated.
struct Task {
    std::uint32_t id = 0;
    TaskFamily family = TaskFamily::Quadratic;
    std::uint32_t dims = 0;
    std::uint64_t seed = 0;

    Mat64 quad_a;        // Quadratic
    Vec64 quad_b;        // Quadratic
    Vec64 bowl_lambda;   // Bowl
    Dataset data;        // SoftmaxRegression / FullyConnected
    TwoDKind twod_kind = TwoDKind::Rosenbrock;

    Vec64 init_params;

    bool dataset_backed() const {
        return family == TaskFamily::SoftmaxRegression || family == TaskFamily::FullyConnected;
    }
};

// A minibatch view. Empty (rows == 0) for dataset-free families.
struct Batch {
    Mat64 features;
    std::vector<std::uint32_t> labels;
    bool empty() const { return features.rows == 0; }
};

// Deterministic task construction. dims is honored for Quadratic/Bowl, must
// be 2 for TwoD, and is derived from the fixed architecture for
// SoftmaxRegression (12) and FullyConnected (66).
Task generate_task(TaskFamily family, std::uint64_t seed, std::uint32_t dims);

double loss(const Task& task, const Vec64& params, const Batch& batch);
Vec64 grad(const Task& task, const Vec64& params, const Batch& batch);

// Fraction of dataset samples whose argmax class score matches the label;
// ties go to the lowest class index. Classification families only.
double accuracy(const Task& task, const Vec64& params, const Dataset& dataset);
double accuracy(const Task& task, const Vec64& params);

// One epoch's worth of batches: `count` disjoint slices of a fresh
// permutation (dataset families), or `count` empty batches (dataset-free).
std::vector<Batch> batches(const Task& task, RngStream& rng, std::uint32_t batch_size,
                           std::uint32_t count);

// The whole dataset as a single batch (empty batch for dataset-free tasks).
Batch full_batch(const Task& task);

// Global minimizer of a TwoD task's objective (all three catalog functions
// have minimum value 0).
Vec64 twod_minimizer(const Task& task);

// Endless deterministic batch sequence for a task loop: dataset families get
// fresh without-replacement epochs as needed, dataset-free families get empty
// batches.
class BatchStream {
public:
    BatchStream(const Task& task, RngStream rng, std::uint32_t batch_size);
    Batch next();

private:
    const Task* task_;
    RngStream rng_;
    std::uint32_t batch_size_;
    std::uint32_t per_epoch_;
    std::deque<Batch> pending_;
};

}  // namespace macc
