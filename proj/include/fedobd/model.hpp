#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedobd/data.hpp"
#include "fedobd/rng.hpp"
#include "fedobd/tensor.hpp"

namespace fedobd {

// Dense feed-forward classifier: input -> hidden... -> classes, ReLU between
// layers, softmax cross-entropy on top. Layers are named layer1..layerN-1
// plus "head" for the final one; block_spec groups layers into named blocks
// (layers left out become singleton blocks).
struct ModelSpec {
    std::vector<std::size_t> layer_dims;
    std::vector<std::pair<std::string, std::vector<std::string>>> block_spec;
    std::uint64_t seed = 0;

    std::size_t dense_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
    std::size_t classes() const { return layer_dims.empty() ? 0 : layer_dims.back(); }

    bool operator==(const ModelSpec&) const = default;
};

inline std::vector<std::string> layer_names(const ModelSpec& spec) {
    std::vector<std::string> names;
    for (std::size_t l = 0; l + 1 < spec.dense_layers(); ++l)
        names.push_back("layer" + std::to_string(l + 1));
    if (spec.dense_layers() > 0) names.push_back("head");
    return names;
}

inline void validate_spec(const ModelSpec& spec) {
    if (spec.layer_dims.size() < 3)
        throw std::invalid_argument("model needs input, at least one hidden layer and classes");
    for (std::size_t d : spec.layer_dims)
        if (d == 0) throw std::invalid_argument("layer dimensions must be positive");
    if (spec.classes() < 2) throw std::invalid_argument("need at least 2 classes");
}

// Completed block partition: declared blocks plus singleton blocks for any
// layer the spec leaves out, in layer order. Blocks must tile the layers.
inline std::vector<std::pair<std::string, std::vector<std::string>>> resolve_blocks(
    const ModelSpec& spec) {
    validate_spec(spec);
    auto names = layer_names(spec);

    // map each declared layer to its block
    std::vector<int> owner(names.size(), -1);
    for (std::size_t b = 0; b < spec.block_spec.size(); ++b) {
        for (const auto& layer : spec.block_spec[b].second) {
            auto it = std::find(names.begin(), names.end(), layer);
            if (it == names.end())
                throw std::invalid_argument("block '" + spec.block_spec[b].first +
                                            "' names unknown layer '" + layer + "'");
            auto idx = static_cast<std::size_t>(it - names.begin());
            if (owner[idx] != -1)
                throw std::invalid_argument("layer '" + layer + "' appears in more than one block");
            owner[idx] = static_cast<int>(b);
        }
    }

    std::vector<std::pair<std::string, std::vector<std::string>>> blocks;
    std::vector<bool> emitted(spec.block_spec.size(), false);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (owner[i] == -1) {
            blocks.push_back({names[i], {names[i]}});
            continue;
        }
        auto b = static_cast<std::size_t>(owner[i]);
        if (emitted[b]) continue;
        // a block's layers must be consecutive so that concatenating blocks
        // in order reproduces the parameter vector
        const auto& members = spec.block_spec[b].second;
        for (std::size_t j = 0; j < members.size(); ++j) {
            if (i + j >= names.size() || owner[i + j] != static_cast<int>(b) ||
                members[j] != names[i + j])
                throw std::invalid_argument("block '" + spec.block_spec[b].first +
                                            "' must cover consecutive layers in order");
        }
        blocks.push_back(spec.block_spec[b]);
        emitted[b] = true;
        i += members.size() - 1;
    }
    return blocks;
}

struct Model {
    ModelSpec spec;
    ParameterVector params;
};

// Cosine annealing over a global epoch counter.
struct LrSchedule {
    double initial_lr = 0.1;
    std::size_t total_epochs = 1;
    double min_lr = 0.0;
};

inline double lr_at(const LrSchedule& schedule, std::size_t epoch_index) {
    if (schedule.total_epochs == 0 || schedule.initial_lr <= 0.0 ||
        schedule.min_lr > schedule.initial_lr)
        throw std::invalid_argument("invalid learning-rate schedule");
    if (epoch_index > schedule.total_epochs)
        throw std::out_of_range("epoch index " + std::to_string(epoch_index) +
                                " past schedule end " + std::to_string(schedule.total_epochs));
    double t = static_cast<double>(epoch_index) / static_cast<double>(schedule.total_epochs);
    return schedule.min_lr +
           0.5 * (schedule.initial_lr - schedule.min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Weights uniform in +-1/sqrt(fan_in), biases zero, deterministic per seed.
inline Model init_model(const ModelSpec& spec) {
    validate_spec(spec);
    resolve_blocks(spec);  // surface block errors at construction
    auto names = layer_names(spec);
    Rng rng(spec.seed);

    std::vector<NamedArray> arrays;
    for (std::size_t l = 0; l < spec.dense_layers(); ++l) {
        std::size_t fan_in = spec.layer_dims[l];
        std::size_t fan_out = spec.layer_dims[l + 1];
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        NamedArray w{names[l] + ".weight", std::vector<double>(fan_out * fan_in), {fan_out, fan_in}};
        for (auto& x : w.values) x = rng.uniform(-bound, bound);
        arrays.push_back(std::move(w));
        arrays.push_back({names[l] + ".bias", std::vector<double>(fan_out, 0.0), {fan_out}});
    }
    return Model{spec, flatten(arrays)};
}

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

namespace detail {

// Forward (and optionally backward) pass over the given sample indices.
// Gradients are the mean over the batch, laid out like the parameters.
inline EvalResult run_batch(const Model& model, const Dataset& data,
                            std::span<const std::size_t> indices, ParameterVector* grad_out) {
    const auto& dims = model.spec.layer_dims;
    if (data.dims != dims.front())
        throw std::invalid_argument("dimension mismatch: model expects " +
                                    std::to_string(dims.front()) + " features, data has " +
                                    std::to_string(data.dims));
    if (data.classes > model.spec.classes())
        throw std::invalid_argument("dimension mismatch: more label classes than model outputs");

    std::size_t n_layers = model.spec.dense_layers();
    const double* p = model.params.values.data();
    // weight of layer l lives at layout entry 2l, bias at 2l+1
    auto weight = [&](std::size_t l) { return p + model.params.layout[2 * l].offset; };
    auto bias = [&](std::size_t l) { return p + model.params.layout[2 * l + 1].offset; };

    double* g = nullptr;
    if (grad_out) {
        grad_out->layout = model.params.layout;
        grad_out->values.assign(model.params.values.size(), 0.0);
        g = grad_out->values.data();
    }

    std::vector<std::vector<double>> acts(n_layers + 1);  // post-activation per layer
    for (std::size_t l = 0; l <= n_layers; ++l) acts[l].resize(dims[l]);
    std::vector<double> delta, delta_prev;

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t idx : indices) {
        auto row = data.row(idx);
        int label = data.labels[idx];
        if (label < 0 || static_cast<std::size_t>(label) >= model.spec.classes())
            throw std::invalid_argument("label out of range: " + std::to_string(label));
        std::copy(row.begin(), row.end(), acts[0].begin());

        for (std::size_t l = 0; l < n_layers; ++l) {
            const double* w = weight(l);
            const double* b = bias(l);
            const auto& in = acts[l];
            auto& out = acts[l + 1];
            std::size_t nin = dims[l], nout = dims[l + 1];
            for (std::size_t o = 0; o < nout; ++o) {
                double z = b[o];
                const double* wrow = w + o * nin;
                for (std::size_t k = 0; k < nin; ++k) z += wrow[k] * in[k];
                out[o] = (l + 1 < n_layers) ? std::max(z, 0.0) : z;
            }
        }

        // softmax cross-entropy on the logits
        auto& logits = acts[n_layers];
        double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double z : logits) sum += std::exp(z - mx);
        double log_sum = std::log(sum) + mx;
        loss_sum += log_sum - logits[static_cast<std::size_t>(label)];

        std::size_t pred = static_cast<std::size_t>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (pred == static_cast<std::size_t>(label)) ++correct;

        if (!g) continue;

        delta.resize(dims[n_layers]);
        for (std::size_t o = 0; o < dims[n_layers]; ++o) {
            double prob = std::exp(logits[o] - log_sum);
            delta[o] = prob - (o == static_cast<std::size_t>(label) ? 1.0 : 0.0);
        }
        for (std::size_t l = n_layers; l-- > 0;) {
            const double* w = weight(l);
            double* gw = g + model.params.layout[2 * l].offset;
            double* gb = g + model.params.layout[2 * l + 1].offset;
            const auto& in = acts[l];
            std::size_t nin = dims[l], nout = dims[l + 1];
            for (std::size_t o = 0; o < nout; ++o) {
                double d = delta[o];
                gb[o] += d;
                double* grow = gw + o * nin;
                for (std::size_t k = 0; k < nin; ++k) grow[k] += d * in[k];
            }
            if (l == 0) break;
            delta_prev.assign(nin, 0.0);
            for (std::size_t o = 0; o < nout; ++o) {
                double d = delta[o];
                const double* wrow = w + o * nin;
                for (std::size_t k = 0; k < nin; ++k) delta_prev[k] += d * wrow[k];
            }
            // ReLU gate of the layer below
            for (std::size_t k = 0; k < nin; ++k)
                if (acts[l][k] <= 0.0) delta_prev[k] = 0.0;
            delta.swap(delta_prev);
        }
    }

    if (g) {
        double inv = 1.0 / static_cast<double>(indices.size());
        for (std::size_t i = 0; i < model.params.values.size(); ++i) g[i] *= inv;
    }
    EvalResult res;
    res.loss = loss_sum / static_cast<double>(indices.size());
    res.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    return res;
}

}  // namespace detail

inline EvalResult forward(const Model& model, const Dataset& data,
                          std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("empty batch");
    return detail::run_batch(model, data, indices, nullptr);
}

inline EvalResult forward(const Model& model, const Dataset& data) {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return forward(model, data, all);
}

// Mean loss gradient over the batch; used by SGD and by the finite-difference
// checks in the test suite.
inline ParameterVector loss_gradient(const Model& model, const Dataset& data,
                                     std::span<const std::size_t> indices,
                                     EvalResult* eval_out = nullptr) {
    if (indices.empty()) throw std::invalid_argument("empty batch");
    ParameterVector grad;
    EvalResult res = detail::run_batch(model, data, indices, &grad);
    if (eval_out) *eval_out = res;
    return grad;
}

// Plain SGD with a cosine-annealed learning rate indexed by global epoch
// (epoch_offset + local epoch). Pure: the input model is left untouched,
// shuffling is driven entirely by shuffle_seed.
inline Model train_local(const Model& model, const Dataset& data, std::size_t epochs,
                         const LrSchedule& schedule, std::size_t batch_size,
                         std::size_t epoch_offset, std::uint64_t shuffle_seed) {
    if (data.size() == 0) throw std::invalid_argument("empty dataset");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");

    Model out = model;
    Rng rng(shuffle_seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t e = 0; e < epochs; ++e) {
        double lr = lr_at(schedule, epoch_offset + e);
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t count = std::min(batch_size, order.size() - start);
            std::span<const std::size_t> batch(order.data() + start, count);
            ParameterVector grad = loss_gradient(out, data, batch);
            for (std::size_t i = 0; i < out.params.values.size(); ++i)
                out.params.values[i] -= lr * grad.values[i];
        }
    }
    return out;
}

// Layout-entry span each block occupies; each layer owns two consecutive
// entries (weight, bias).
struct BlockRange {
    std::string name;
    std::size_t first_entry = 0;
    std::size_t entry_count = 0;
};

inline std::vector<BlockRange> block_ranges(const ModelSpec& spec) {
    auto blocks = resolve_blocks(spec);
    std::vector<BlockRange> out;
    std::size_t layer = 0;
    for (const auto& [block_name, members] : blocks) {
        out.push_back({block_name, 2 * layer, 2 * members.size()});
        layer += members.size();
    }
    return out;
}

// Named block slices of the parameter vector, in block order; concatenating
// them in order reproduces params exactly.
inline std::vector<std::pair<std::string, ParameterVector>> blocks_of(const Model& model) {
    std::vector<std::pair<std::string, ParameterVector>> out;
    for (const auto& range : block_ranges(model.spec))
        out.push_back({range.name, slice_entries(model.params, range.first_entry, range.entry_count)});
    return out;
}

}  // namespace fedobd
