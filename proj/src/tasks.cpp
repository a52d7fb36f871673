#include "macc/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "macc/errors.hpp"

namespace macc {

namespace {

void check_params(const Task& task, const Vec64& params) {
    if (params.size() != task.dims) {
        throw DimensionError("task " + std::to_string(task.id) + ": expected " +
                             std::to_string(task.dims) + " params, got " +
                             std::to_string(params.size()));
    }
}

void check_batch(const Task& task, const Batch& batch) {
    if (task.dataset_backed() && batch.empty()) {
        throw DimensionError("task " + std::to_string(task.id) +
                             ": dataset-backed family needs a non-empty batch");
    }
}

// Stable log-sum-exp over class logits.
double logsumexp(const Vec64& z) {
    double m = *std::max_element(z.begin(), z.end());
    double acc = 0.0;
    for (double v : z) acc += std::exp(v - m);
    return m + std::log(acc);
}

Dataset generate_two_cluster_data(RngStream& rng) {
    Vec64 mu(kNumFeatures);
    for (auto& m : mu) m = rng.uniform(0.5, 1.5);
    Dataset d;
    d.features = Mat64(kNumSamples, kNumFeatures);
    d.labels.resize(kNumSamples);
    for (std::uint32_t i = 0; i < kNumSamples; ++i) {
        std::uint32_t label = i % 2;  // exactly balanced
        d.labels[i] = label;
        double sign = label == 0 ? 1.0 : -1.0;
        for (std::uint32_t f = 0; f < kNumFeatures; ++f) {
            d.features(i, f) = sign * mu[f] + rng.normal();
        }
    }
    return d;
}

// Class scores for one sample row under a softmax-regression parameter vector
// laid out as [w_c0..w_c4, b_c] per class.
Vec64 softmax_logits(const Vec64& params, const Mat64& x, std::size_t row) {
    Vec64 z(kNumClasses, 0.0);
    for (std::uint32_t c = 0; c < kNumClasses; ++c) {
        const double* wc = params.data() + c * (kNumFeatures + 1);
        double acc = wc[kNumFeatures];
        for (std::uint32_t f = 0; f < kNumFeatures; ++f) acc += wc[f] * x(row, f);
        z[c] = acc;
    }
    return z;
}

// Fully connected net: tanh hidden layer then linear class scores. Parameter
// layout: [W1 (hidden x F, row-major), b1, W2 (C x hidden, row-major), b2].
struct FcViews {
    const double* w1;
    const double* b1;
    const double* w2;
    const double* b2;
};

FcViews fc_views(const Vec64& params) {
    const double* p = params.data();
    FcViews v;
    v.w1 = p;
    v.b1 = p + kFcHiddenWidth * kNumFeatures;
    v.w2 = v.b1 + kFcHiddenWidth;
    v.b2 = v.w2 + kNumClasses * kFcHiddenWidth;
    return v;
}

Vec64 fc_logits(const Vec64& params, const Mat64& x, std::size_t row, Vec64* hidden_out) {
    FcViews v = fc_views(params);
    Vec64 h(kFcHiddenWidth);
    for (std::uint32_t j = 0; j < kFcHiddenWidth; ++j) {
        double acc = v.b1[j];
        for (std::uint32_t f = 0; f < kNumFeatures; ++f) acc += v.w1[j * kNumFeatures + f] * x(row, f);
        h[j] = std::tanh(acc);
    }
    Vec64 z(kNumClasses);
    for (std::uint32_t c = 0; c < kNumClasses; ++c) {
        double acc = v.b2[c];
        for (std::uint32_t j = 0; j < kFcHiddenWidth; ++j) acc += v.w2[c * kFcHiddenWidth + j] * h[j];
        z[c] = acc;
    }
    if (hidden_out) *hidden_out = std::move(h);
    return z;
}

double rosenbrock(double x, double y) {
    return (1.0 - x) * (1.0 - x) + 100.0 * (y - x * x) * (y - x * x);
}

double booth(double x, double y) {
    double a = x + 2.0 * y - 7.0;
    double b = 2.0 * x + y - 5.0;
    return a * a + b * b;
}

double ackley(double x, double y) {
    double r = std::sqrt(0.5 * (x * x + y * y));
    double c = 0.5 * (std::cos(2.0 * std::numbers::pi * x) + std::cos(2.0 * std::numbers::pi * y));
    return -20.0 * std::exp(-0.2 * r) - std::exp(c) + std::numbers::e + 20.0;
}

}  // namespace

const char* family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::Quadratic: return "quadratic";
        case TaskFamily::Bowl: return "bowl";
        case TaskFamily::SoftmaxRegression: return "softmax_regression";
        case TaskFamily::FullyConnected: return "fully_connected";
        case TaskFamily::TwoD: return "two_d";
    }
    return "unknown";
}

TaskFamily family_from_name(const std::string& name) {
    for (TaskFamily f : kAllFamilies) {
        if (name == family_name(f)) return f;
    }
    throw ConfigError("unknown task family '" + name + "'");
}

Task generate_task(TaskFamily family, std::uint64_t seed, std::uint32_t dims) {
    if (dims < 1) throw DimensionError("generate_task: dims must be >= 1");
    Task t;
    t.family = family;
    t.seed = seed;
    RngStream rng = RngStream(seed).substream(static_cast<std::uint64_t>(family));

    switch (family) {
        case TaskFamily::Quadratic: {
            t.dims = dims;
            t.quad_a = Mat64(dims, dims);
            for (auto& v : t.quad_a.data) v = rng.normal();
            t.quad_b.resize(dims);
            for (auto& v : t.quad_b) v = rng.normal();
            t.init_params.resize(dims);
            for (auto& v : t.init_params) v = rng.normal();
            break;
        }
        case TaskFamily::Bowl: {
            t.dims = dims;
            t.bowl_lambda.resize(dims);
            for (auto& v : t.bowl_lambda) v = rng.uniform(0.1, 10.0);
            t.init_params.resize(dims);
            for (auto& v : t.init_params) v = rng.normal();
            break;
        }
        case TaskFamily::SoftmaxRegression: {
            t.dims = kSoftmaxDims;
            t.data = generate_two_cluster_data(rng);
            t.init_params.resize(t.dims);
            for (auto& v : t.init_params) v = 0.1 * rng.normal();
            break;
        }
        case TaskFamily::FullyConnected: {
            t.dims = kFcDims;
            t.data = generate_two_cluster_data(rng);
            t.init_params.assign(t.dims, 0.0);
            // weights get small random values, biases stay zero
            for (std::uint32_t i = 0; i < kFcHiddenWidth * kNumFeatures; ++i)
                t.init_params[i] = 0.1 * rng.normal();
            for (std::uint32_t i = 0; i < kNumClasses * kFcHiddenWidth; ++i)
                t.init_params[kFcHiddenWidth * kNumFeatures + kFcHiddenWidth + i] = 0.1 * rng.normal();
            break;
        }
        case TaskFamily::TwoD: {
            if (dims != 2) throw DimensionError("generate_task: TwoD requires dims == 2");
            t.dims = 2;
            t.twod_kind = static_cast<TwoDKind>(seed % 3);
            t.init_params = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
            break;
        }
    }
    return t;
}

double loss(const Task& task, const Vec64& params, const Batch& batch) {
    check_params(task, params);
    check_batch(task, batch);
    switch (task.family) {
        case TaskFamily::Quadratic: {
            Vec64 r = matvec(task.quad_a, params);
            double acc = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) {
                double d = r[i] - task.quad_b[i];
                acc += d * d;
            }
            return 0.5 * acc;
        }
        case TaskFamily::Bowl: {
            double acc = 0.0;
            for (std::size_t i = 0; i < params.size(); ++i)
                acc += task.bowl_lambda[i] * params[i] * params[i];
            return 0.5 * acc;
        }
        case TaskFamily::SoftmaxRegression: {
            double acc = 0.0;
            for (std::size_t i = 0; i < batch.features.rows; ++i) {
                Vec64 z = softmax_logits(params, batch.features, i);
                acc += logsumexp(z) - z[batch.labels[i]];
            }
            return acc / static_cast<double>(batch.features.rows);
        }
        case TaskFamily::FullyConnected: {
            double acc = 0.0;
            for (std::size_t i = 0; i < batch.features.rows; ++i) {
                Vec64 z = fc_logits(params, batch.features, i, nullptr);
                acc += logsumexp(z) - z[batch.labels[i]];
            }
            return acc / static_cast<double>(batch.features.rows);
        }
        case TaskFamily::TwoD: {
            double x = params[0], y = params[1];
            switch (task.twod_kind) {
                case TwoDKind::Rosenbrock: return rosenbrock(x, y);
                case TwoDKind::Booth: return booth(x, y);
                case TwoDKind::Ackley: return ackley(x, y);
            }
            break;
        }
    }
    throw UnsupportedError("loss: unhandled family");
}

Vec64 grad(const Task& task, const Vec64& params, const Batch& batch) {
    check_params(task, params);
    check_batch(task, batch);
    switch (task.family) {
        case TaskFamily::Quadratic: {
            Vec64 r = matvec(task.quad_a, params);
            for (std::size_t i = 0; i < r.size(); ++i) r[i] -= task.quad_b[i];
            return matvec_transposed(task.quad_a, r);
        }
        case TaskFamily::Bowl: {
            Vec64 g(params.size());
            for (std::size_t i = 0; i < params.size(); ++i)
                g[i] = task.bowl_lambda[i] * params[i];
            return g;
        }
        case TaskFamily::SoftmaxRegression: {
            Vec64 g(task.dims, 0.0);
            double inv_n = 1.0 / static_cast<double>(batch.features.rows);
            for (std::size_t i = 0; i < batch.features.rows; ++i) {
                Vec64 z = softmax_logits(params, batch.features, i);
                double lse = logsumexp(z);
                for (std::uint32_t c = 0; c < kNumClasses; ++c) {
                    double dz = std::exp(z[c] - lse) - (c == batch.labels[i] ? 1.0 : 0.0);
                    dz *= inv_n;
                    double* gc = g.data() + c * (kNumFeatures + 1);
                    for (std::uint32_t f = 0; f < kNumFeatures; ++f) gc[f] += dz * batch.features(i, f);
                    gc[kNumFeatures] += dz;
                }
            }
            return g;
        }
        case TaskFamily::FullyConnected: {
            Vec64 g(task.dims, 0.0);
            FcViews v = fc_views(params);
            double* gw1 = g.data();
            double* gb1 = g.data() + kFcHiddenWidth * kNumFeatures;
            double* gw2 = gb1 + kFcHiddenWidth;
            double* gb2 = gw2 + kNumClasses * kFcHiddenWidth;
            double inv_n = 1.0 / static_cast<double>(batch.features.rows);
            for (std::size_t i = 0; i < batch.features.rows; ++i) {
                Vec64 h;
                Vec64 z = fc_logits(params, batch.features, i, &h);
                double lse = logsumexp(z);
                Vec64 dz(kNumClasses);
                for (std::uint32_t c = 0; c < kNumClasses; ++c)
                    dz[c] = (std::exp(z[c] - lse) - (c == batch.labels[i] ? 1.0 : 0.0)) * inv_n;
                Vec64 dh(kFcHiddenWidth, 0.0);
                for (std::uint32_t c = 0; c < kNumClasses; ++c) {
                    for (std::uint32_t j = 0; j < kFcHiddenWidth; ++j) {
                        gw2[c * kFcHiddenWidth + j] += dz[c] * h[j];
                        dh[j] += dz[c] * v.w2[c * kFcHiddenWidth + j];
                    }
                    gb2[c] += dz[c];
                }
                for (std::uint32_t j = 0; j < kFcHiddenWidth; ++j) {
                    double da = dh[j] * (1.0 - h[j] * h[j]);
                    for (std::uint32_t f = 0; f < kNumFeatures; ++f)
                        gw1[j * kNumFeatures + f] += da * batch.features(i, f);
                    gb1[j] += da;
                }
            }
            return g;
        }
        case TaskFamily::TwoD: {
            double x = params[0], y = params[1];
            switch (task.twod_kind) {
                case TwoDKind::Rosenbrock:
                    return {-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)};
                case TwoDKind::Booth: {
                    double a = x + 2.0 * y - 7.0;
                    double b = 2.0 * x + y - 5.0;
                    return {2.0 * a + 4.0 * b, 4.0 * a + 2.0 * b};
                }
                case TwoDKind::Ackley: {
                    double r = std::sqrt(0.5 * (x * x + y * y));
                    double c = 0.5 * (std::cos(2.0 * std::numbers::pi * x) +
                                      std::cos(2.0 * std::numbers::pi * y));
                    double ec = std::exp(c);
                    if (r == 0.0) return {0.0, 0.0};  // nonsmooth point at the minimum
                    double er = std::exp(-0.2 * r);
                    double pi = std::numbers::pi;
                    return {2.0 * x * er / r + pi * std::sin(2.0 * pi * x) * ec,
                            2.0 * y * er / r + pi * std::sin(2.0 * pi * y) * ec};
                }
            }
            break;
        }
    }
    throw UnsupportedError("grad: unhandled family");
}

double accuracy(const Task& task, const Vec64& params, const Dataset& dataset) {
    check_params(task, params);
    if (task.family != TaskFamily::SoftmaxRegression && task.family != TaskFamily::FullyConnected) {
        throw UnsupportedError(std::string("accuracy: not defined for family ") +
                               family_name(task.family));
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Vec64 z = task.family == TaskFamily::SoftmaxRegression
                      ? softmax_logits(params, dataset.features, i)
                      : fc_logits(params, dataset.features, i, nullptr);
        std::size_t best = 0;
        for (std::size_t c = 1; c < z.size(); ++c) {
            if (z[c] > z[best]) best = c;  // ties keep the lowest index
        }
        if (best == dataset.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

double accuracy(const Task& task, const Vec64& params) { return accuracy(task, params, task.data); }

std::vector<Batch> batches(const Task& task, RngStream& rng, std::uint32_t batch_size,
                           std::uint32_t count) {
    if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
    std::vector<Batch> out;
    out.reserve(count);
    if (!task.dataset_backed()) {
        out.resize(count);
        return out;
    }
    std::size_t n = task.data.size();
    if (static_cast<std::size_t>(batch_size) * count > n) {
        throw CapacityError("batches: " + std::to_string(count) + " x " + std::to_string(batch_size) +
                            " oversubscribes " + std::to_string(n) + "-sample dataset");
    }
    std::vector<std::uint32_t> perm = rng.permutation(n);
    for (std::uint32_t b = 0; b < count; ++b) {
        Batch batch;
        batch.features = Mat64(batch_size, kNumFeatures);
        batch.labels.resize(batch_size);
        for (std::uint32_t i = 0; i < batch_size; ++i) {
            std::uint32_t src = perm[b * batch_size + i];
            for (std::uint32_t f = 0; f < kNumFeatures; ++f)
                batch.features(i, f) = task.data.features(src, f);
            batch.labels[i] = task.data.labels[src];
        }
        out.push_back(std::move(batch));
    }
    return out;
}

Batch full_batch(const Task& task) {
    Batch b;
    if (task.dataset_backed()) {
        b.features = task.data.features;
        b.labels = task.data.labels;
    }
    return b;
}

Vec64 twod_minimizer(const Task& task) {
    if (task.family != TaskFamily::TwoD) throw UnsupportedError("twod_minimizer: not a TwoD task");
    switch (task.twod_kind) {
        case TwoDKind::Rosenbrock: return {1.0, 1.0};
        case TwoDKind::Booth: return {1.0, 3.0};
        case TwoDKind::Ackley: return {0.0, 0.0};
    }
    throw UnsupportedError("twod_minimizer: unhandled kind");
}

BatchStream::BatchStream(const Task& task, RngStream rng, std::uint32_t batch_size)
    : task_(&task), rng_(rng), batch_size_(batch_size) {
    if (task.dataset_backed()) {
        per_epoch_ = static_cast<std::uint32_t>(task.data.size() / batch_size);
        if (per_epoch_ == 0) {
            throw CapacityError("BatchStream: batch_size " + std::to_string(batch_size) +
                                " exceeds dataset size " + std::to_string(task.data.size()));
        }
    } else {
        per_epoch_ = 0;
    }
}

Batch BatchStream::next() {
    if (!task_->dataset_backed()) return Batch{};
    if (pending_.empty()) {
        for (auto& b : batches(*task_, rng_, batch_size_, per_epoch_)) pending_.push_back(std::move(b));
    }
    Batch b = std::move(pending_.front());
    pending_.pop_front();
    return b;
}

}  // namespace macc
