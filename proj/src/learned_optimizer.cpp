#include "macc/learned_optimizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "macc/errors.hpp"
#include "macc/rng.hpp"

namespace macc {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Fixed traversal order shared by flatten, unflatten and init: for each GRU
// (param level first) the blocks wr, ur, br, wz, uz, bz, wn, un, bn; then the
// readout weights, readout bias, log step scale.
template <typename Gru, typename Fn>
void for_each_gru_block(Gru& g, Fn&& fn) {
    fn(g.wr.data);
    fn(g.ur.data);
    fn(g.br);
    fn(g.wz.data);
    fn(g.uz.data);
    fn(g.bz);
    fn(g.wn.data);
    fn(g.un.data);
    fn(g.bn);
}

}  // namespace

GruWeights GruWeights::zeros(std::uint32_t input_dim, std::uint32_t hidden) {
    GruWeights g;
    g.input_dim = input_dim;
    g.hidden = hidden;
    g.wr = Mat64(hidden, input_dim);
    g.wz = Mat64(hidden, input_dim);
    g.wn = Mat64(hidden, input_dim);
    g.ur = Mat64(hidden, hidden);
    g.uz = Mat64(hidden, hidden);
    g.un = Mat64(hidden, hidden);
    g.br.assign(hidden, 0.0);
    g.bz.assign(hidden, 0.0);
    g.bn.assign(hidden, 0.0);
    return g;
}

Vec64 gru_forward(const GruWeights& w, const Vec64& x, const Vec64& h, GruCache* cache) {
    if (x.size() != w.input_dim || h.size() != w.hidden) {
        throw DimensionError("gru_forward: input/hidden size mismatch");
    }
    const std::uint32_t H = w.hidden;
    Vec64 r(H), z(H), n(H), h_out(H);
    for (std::uint32_t j = 0; j < H; ++j) {
        double ar = w.br[j], az = w.bz[j];
        for (std::uint32_t i = 0; i < w.input_dim; ++i) {
            ar += w.wr(j, i) * x[i];
            az += w.wz(j, i) * x[i];
        }
        for (std::uint32_t i = 0; i < H; ++i) {
            ar += w.ur(j, i) * h[i];
            az += w.uz(j, i) * h[i];
        }
        r[j] = sigmoid(ar);
        z[j] = sigmoid(az);
    }
    for (std::uint32_t j = 0; j < H; ++j) {
        double an = w.bn[j];
        for (std::uint32_t i = 0; i < w.input_dim; ++i) an += w.wn(j, i) * x[i];
        for (std::uint32_t i = 0; i < H; ++i) an += w.un(j, i) * (r[i] * h[i]);
        n[j] = std::tanh(an);
        h_out[j] = (1.0 - z[j]) * n[j] + z[j] * h[j];
    }
    if (cache) {
        cache->x = x;
        cache->h_in = h;
        cache->r = r;
        cache->z = z;
        cache->n = n;
    }
    return h_out;
}

void gru_backward(const GruWeights& w, const GruCache& cache, const Vec64& dh_out,
                  GruWeights& grads, Vec64* dx, Vec64& dh_in) {
    const std::uint32_t H = w.hidden;
    const Vec64& x = cache.x;
    const Vec64& h = cache.h_in;
    const Vec64& r = cache.r;
    const Vec64& z = cache.z;
    const Vec64& n = cache.n;

    // h' = (1-z)*n + z*h
    Vec64 dz(H), dn_pre(H);
    for (std::uint32_t j = 0; j < H; ++j) {
        dz[j] = dh_out[j] * (h[j] - n[j]);
        dn_pre[j] = dh_out[j] * (1.0 - z[j]) * (1.0 - n[j] * n[j]);
        dh_in[j] += dh_out[j] * z[j];
    }

    // candidate gate: n = tanh(Wn x + Un (r*h) + bn)
    Vec64 dq(H, 0.0);  // adjoint of r*h
    for (std::uint32_t j = 0; j < H; ++j) {
        for (std::uint32_t i = 0; i < w.input_dim; ++i) grads.wn(j, i) += dn_pre[j] * x[i];
        for (std::uint32_t i = 0; i < H; ++i) {
            grads.un(j, i) += dn_pre[j] * (r[i] * h[i]);
            dq[i] += w.un(j, i) * dn_pre[j];
        }
        grads.bn[j] += dn_pre[j];
        if (dx) {
            for (std::uint32_t i = 0; i < w.input_dim; ++i) (*dx)[i] += w.wn(j, i) * dn_pre[j];
        }
    }

    Vec64 dr_pre(H), dz_pre(H);
    for (std::uint32_t j = 0; j < H; ++j) {
        double dr = dq[j] * h[j];
        dh_in[j] += dq[j] * r[j];
        dr_pre[j] = dr * r[j] * (1.0 - r[j]);
        dz_pre[j] = dz[j] * z[j] * (1.0 - z[j]);
    }

    for (std::uint32_t j = 0; j < H; ++j) {
        for (std::uint32_t i = 0; i < w.input_dim; ++i) {
            grads.wr(j, i) += dr_pre[j] * x[i];
            grads.wz(j, i) += dz_pre[j] * x[i];
        }
        for (std::uint32_t i = 0; i < H; ++i) {
            grads.ur(j, i) += dr_pre[j] * h[i];
            grads.uz(j, i) += dz_pre[j] * h[i];
            dh_in[i] += w.ur(j, i) * dr_pre[j] + w.uz(j, i) * dz_pre[j];
        }
        grads.br[j] += dr_pre[j];
        grads.bz[j] += dz_pre[j];
        if (dx) {
            for (std::uint32_t i = 0; i < w.input_dim; ++i)
                (*dx)[i] += w.wr(j, i) * dr_pre[j] + w.wz(j, i) * dz_pre[j];
        }
    }
}

std::size_t optimizer_flat_size(std::uint32_t hidden) {
    std::size_t h = hidden;
    return 3 * (2 + h + 1) * h + 3 * (h + h + 1) * h + h + 2;
}

std::size_t OptimizerParams::flat_size() const { return optimizer_flat_size(hidden); }

OptimizerParams init_params(std::uint64_t seed, std::uint32_t hidden) {
    if (hidden < 1) throw ConfigError("init_params: hidden must be >= 1");
    OptimizerParams w;
    w.hidden = hidden;
    w.param_gru = GruWeights::zeros(2, hidden);
    w.tensor_gru = GruWeights::zeros(hidden, hidden);
    w.out_w.assign(hidden, 0.0);
    w.out_b = 0.0;
    w.log_step = std::log(0.01);
    RngStream rng(seed);
    auto fill = [&rng](Vec64& block) {
        for (auto& v : block) v = rng.uniform(-0.1, 0.1);
    };
    for_each_gru_block(w.param_gru, fill);
    for_each_gru_block(w.tensor_gru, fill);
    return w;
}

Mat64 preprocess_gradient(const Vec64& g, const Vec64& rms, double eps) {
    require_same_length(g, rms, "preprocess_gradient");
    Mat64 f(g.size(), 2);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double denom = std::sqrt(rms[i] + eps);
        f(i, 0) = std::clamp(g[i] / denom, -kFeatureClamp, kFeatureClamp);
        f(i, 1) = std::clamp(std::log(rms[i] + eps) / 10.0, -kFeatureClamp, kFeatureClamp);
    }
    return f;
}

Vec64 optimizer_step(const OptimizerParams& w, OptimizerState& state, const Vec64& g,
                     UnrollStep* tape_entry) {
    const std::size_t dims = state.rms.size();
    const std::uint32_t H = w.hidden;
    if (g.size() != dims) {
        throw DimensionError("optimizer_step: gradient length " + std::to_string(g.size()) +
                             " vs state dims " + std::to_string(dims));
    }
    if (!all_finite(g)) throw NumericError("optimizer_step: non-finite gradient input");

    if (tape_entry) {
        tape_entry->grad_in = g;
        tape_entry->h_param_in = state.h_param;
        tape_entry->h_tensor_in = state.h_tensor;
    }

    for (std::size_t i = 0; i < dims; ++i) {
        state.rms[i] = kRmsDecay * state.rms[i] + (1.0 - kRmsDecay) * g[i] * g[i];
    }
    Mat64 features = preprocess_gradient(g, state.rms);

    // tensor level: one GRU step on the mean per-parameter state
    Vec64 mean(H, 0.0);
    for (std::size_t i = 0; i < dims; ++i) {
        for (std::uint32_t j = 0; j < H; ++j) mean[j] += state.h_param(i, j);
    }
    for (std::uint32_t j = 0; j < H; ++j) mean[j] /= static_cast<double>(dims);
    GruCache tensor_cache;
    Vec64 h_tensor_new =
        gru_forward(w.tensor_gru, mean, state.h_tensor, tape_entry ? &tensor_cache : nullptr);

    // parameter level: GRU per coordinate, biased by the new tensor state
    Mat64 h_param_new(dims, H);
    Vec64 proj(dims), delta(dims);
    double scale = std::exp(w.log_step);
    std::vector<GruCache> param_caches;
    if (tape_entry) param_caches.resize(dims);
    Vec64 x(2), h_in(H);
    for (std::size_t i = 0; i < dims; ++i) {
        x[0] = features(i, 0);
        x[1] = features(i, 1);
        for (std::uint32_t j = 0; j < H; ++j) h_in[j] = state.h_param(i, j) + h_tensor_new[j];
        Vec64 h_out = gru_forward(w.param_gru, x, h_in, tape_entry ? &param_caches[i] : nullptr);
        double u = w.out_b;
        for (std::uint32_t j = 0; j < H; ++j) {
            u += w.out_w[j] * h_out[j];
            h_param_new(i, j) = h_out[j];
        }
        proj[i] = u;
        delta[i] = -scale * u;
    }

    state.h_param = h_param_new;
    state.h_tensor = h_tensor_new;

    if (tape_entry) {
        tape_entry->features = std::move(features);
        tape_entry->tensor_mean = std::move(mean);
        tape_entry->tensor_cache = std::move(tensor_cache);
        tape_entry->param_caches = std::move(param_caches);
        tape_entry->h_param_out = state.h_param;
        tape_entry->h_tensor_out = state.h_tensor;
        tape_entry->proj = proj;
        tape_entry->delta = delta;
    }
    return delta;
}

OptimizerState OptimizerState::zeros(std::uint32_t dims, std::uint32_t hidden) {
    OptimizerState s;
    s.h_param = Mat64(dims, hidden);
    s.h_tensor.assign(hidden, 0.0);
    s.rms.assign(dims, 0.0);
    return s;
}

Vec64 meta_backward(const OptimizerParams& w, const UnrollTape& tape) {
    const std::uint32_t H = w.hidden;
    const std::size_t dims = tape.dims;
    if (tape.hidden != H) {
        throw ConfigError("meta_backward: tape hidden " + std::to_string(tape.hidden) +
                          " vs params hidden " + std::to_string(H));
    }
    for (const UnrollStep& s : tape.steps) {
        if (s.grad_in.size() != dims || s.param_caches.size() != dims) {
            throw ConfigError("meta_backward: tape step inconsistent with declared dims");
        }
    }

    OptimizerParams acc;  // gradient accumulator, same layout as w
    acc.hidden = H;
    acc.param_gru = GruWeights::zeros(2, H);
    acc.tensor_gru = GruWeights::zeros(H, H);
    acc.out_w.assign(H, 0.0);
    acc.out_b = 0.0;
    acc.log_step = 0.0;

    double scale = std::exp(w.log_step);
    Vec64 theta_bar(dims, 0.0);     // adjoint of theta after the step being processed
    Mat64 hp_bar(dims, H);          // adjoint of h_param after that step
    Vec64 ht_bar(H, 0.0);           // adjoint of h_tensor after that step

    for (std::size_t t = tape.steps.size(); t-- > 0;) {
        const UnrollStep& s = tape.steps[t];

        // delta and readout
        for (std::size_t i = 0; i < dims; ++i) {
            double delta_bar = theta_bar[i];
            acc.log_step += delta_bar * s.delta[i];
            double u_bar = -scale * delta_bar;
            acc.out_b += u_bar;
            for (std::uint32_t j = 0; j < H; ++j) {
                acc.out_w[j] += u_bar * s.h_param_out(i, j);
                hp_bar(i, j) += u_bar * w.out_w[j];
            }
        }

        // per-parameter GRU; its hidden input is h_param_in + h_tensor_out
        Mat64 hp_in_bar(dims, H);
        Vec64 dh_out(H), dh_in(H);
        for (std::size_t i = 0; i < dims; ++i) {
            for (std::uint32_t j = 0; j < H; ++j) {
                dh_out[j] = hp_bar(i, j);
                dh_in[j] = 0.0;
            }
            gru_backward(w.param_gru, s.param_caches[i], dh_out, acc.param_gru, nullptr, dh_in);
            for (std::uint32_t j = 0; j < H; ++j) {
                hp_in_bar(i, j) += dh_in[j];
                ht_bar[j] += dh_in[j];
            }
        }

        // tensor GRU; its input is the coordinate mean of h_param_in
        Vec64 mean_bar(H, 0.0), ht_in_bar(H, 0.0);
        gru_backward(w.tensor_gru, s.tensor_cache, ht_bar, acc.tensor_gru, &mean_bar, ht_in_bar);
        double inv_dims = 1.0 / static_cast<double>(dims);
        for (std::size_t i = 0; i < dims; ++i) {
            for (std::uint32_t j = 0; j < H; ++j) hp_in_bar(i, j) += mean_bar[j] * inv_dims;
        }

        // roll adjoints across the theta update: theta_{t+1} = theta_t + delta_t,
        // and the step-t loss contributes its recorded gradient
        for (std::size_t i = 0; i < dims; ++i) theta_bar[i] += s.grad_in[i];
        hp_bar = std::move(hp_in_bar);
        ht_bar = std::move(ht_in_bar);
    }
    return flatten(acc);
}

Vec64 flatten(const OptimizerParams& w) {
    Vec64 flat;
    flat.reserve(w.flat_size());
    auto append = [&flat](const Vec64& block) { flat.insert(flat.end(), block.begin(), block.end()); };
    for_each_gru_block(w.param_gru, append);
    for_each_gru_block(w.tensor_gru, append);
    append(w.out_w);
    flat.push_back(w.out_b);
    flat.push_back(w.log_step);
    return flat;
}

OptimizerParams unflatten(const Vec64& flat, std::uint32_t hidden) {
    if (flat.size() != optimizer_flat_size(hidden)) {
        throw DimensionError("unflatten: expected " + std::to_string(optimizer_flat_size(hidden)) +
                             " values for hidden " + std::to_string(hidden) + ", got " +
                             std::to_string(flat.size()));
    }
    OptimizerParams w;
    w.hidden = hidden;
    w.param_gru = GruWeights::zeros(2, hidden);
    w.tensor_gru = GruWeights::zeros(hidden, hidden);
    w.out_w.assign(hidden, 0.0);
    std::size_t pos = 0;
    auto take = [&flat, &pos](Vec64& block) {
        std::copy(flat.begin() + pos, flat.begin() + pos + block.size(), block.begin());
        pos += block.size();
    };
    for_each_gru_block(w.param_gru, take);
    for_each_gru_block(w.tensor_gru, take);
    take(w.out_w);
    w.out_b = flat[pos++];
    w.log_step = flat[pos++];
    return w;
}

namespace {

constexpr char kMagic[4] = {'M', 'A', 'C', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const OptimizerParams& w) {
    Vec64 flat = flatten(w);
    std::string bytes;
    bytes.reserve(16 + 8 * flat.size());
    bytes.append(kMagic, 4);
    put_u32(bytes, kCheckpointVersion);
    put_u64(bytes, static_cast<std::uint64_t>(flat.size()));
    for (double v : flat) put_u64(bytes, std::bit_cast<std::uint64_t>(v));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw IoError("save_checkpoint: cannot write " + path);
    }
}

OptimizerParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IoError("load_checkpoint: bad header in " + path);
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    std::uint32_t version = get_u32(p + 4);
    if (version != kCheckpointVersion) {
        throw IoError("load_checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    }
    std::uint64_t count = get_u64(p + 8);
    if (bytes.size() != 16 + 8 * count) {
        throw IoError("load_checkpoint: truncated payload in " + path);
    }
    std::uint32_t hidden = 0;
    for (std::uint32_t h = 1; h <= 4096; ++h) {
        if (optimizer_flat_size(h) == count) {
            hidden = h;
            break;
        }
    }
    if (hidden == 0) {
        throw IoError("load_checkpoint: " + std::to_string(count) +
                      " values match no hidden width in " + path);
    }
    Vec64 flat(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        flat[i] = std::bit_cast<double>(get_u64(p + 16 + 8 * i));
    }
    return unflatten(flat, hidden);
}

}  // namespace macc
