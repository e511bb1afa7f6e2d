#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedobd/rng.hpp"
#include "fedobd/tensor.hpp"

namespace fedobd {

// Relative weight between information loss and compression ratio, and the
// bit width of the uncompressed representation (32 in typical environments).
struct QuantizationParams {
    double beta = 1e-3;
    unsigned repr_bits = 32;
};

// Result of quantizing one tensor: per-element grid levels and signs plus the
// scalars needed to dequantize. Levels lie in [0, s].
struct QuantizedTensor {
    std::vector<std::uint64_t> levels;
    std::vector<std::int8_t> signs;  // +1 or -1; sign of 0 is +1
    double offset = 0.0;
    double d = 0.0;
    std::uint64_t s = 1;
    std::vector<LayoutEntry> original_layout;

    std::size_t size() const { return levels.size(); }
};

// Bits needed per level index: ceil(log2(s + 1)).
inline unsigned bits_per_level(std::uint64_t s) {
    return static_cast<unsigned>(std::bit_width(s));
}

// Adaptive deterministic quantization of one vector.
//
//   offset = argmin over theta of max(|max v + theta|, |min v + theta|),
//            i.e. -(max v + min v)/2
//   d      = max |v + offset|
//   s      = floor(max(sqrt(ln4 * repr/beta * d), 1))
//   level  = |v + offset| / d rounded to the nearest multiple of 1/s,
//            ties toward the larger level
//
// A constant vector gives d = 0; we emit s = 1 with all levels 0 and let the
// offset carry the value.
inline QuantizedTensor adq_quantize(const ParameterVector& v, const QuantizationParams& params) {
    if (v.values.empty()) throw std::invalid_argument("no parameters");
    if (params.beta <= 0.0 || params.repr_bits == 0)
        throw std::invalid_argument("invalid quantization params");

    double mx = v.values[0], mn = v.values[0];
    for (double x : v.values) {
        mx = std::max(mx, x);
        mn = std::min(mn, x);
    }
    QuantizedTensor q;
    q.original_layout = v.layout;
    q.offset = -(mx + mn) / 2.0;

    double d = 0.0;
    for (double x : v.values) d = std::max(d, std::fabs(x + q.offset));
    q.d = d;

    double s_real = std::sqrt(std::log(4.0) * (static_cast<double>(params.repr_bits) / params.beta) * d);
    q.s = static_cast<std::uint64_t>(std::floor(std::max(s_real, 1.0)));

    q.levels.resize(v.values.size());
    q.signs.resize(v.values.size());
    for (std::size_t i = 0; i < v.values.size(); ++i) {
        double shifted = v.values[i] + q.offset;
        q.signs[i] = shifted < 0.0 ? -1 : 1;
        if (d == 0.0) {
            q.levels[i] = 0;
        } else {
            auto level = static_cast<std::uint64_t>(
                std::floor(std::fabs(shifted) * static_cast<double>(q.s) / d + 0.5));
            q.levels[i] = std::min(level, q.s);
        }
    }
    return q;
}

inline ParameterVector adq_dequantize(const QuantizedTensor& q) {
    ParameterVector out;
    out.layout = q.original_layout;
    out.values.resize(q.levels.size());
    for (std::size_t i = 0; i < q.levels.size(); ++i) {
        double magnitude =
            q.d == 0.0 ? 0.0
                       : static_cast<double>(q.levels[i]) * q.d / static_cast<double>(q.s);
        out.values[i] = static_cast<double>(q.signs[i]) * magnitude - q.offset;
    }
    return out;
}

// ADQ applied independently to each tensor of a parameter set. Each layer has
// its own parameter distribution, so per-layer offsets and scales lose less.
inline std::vector<QuantizedTensor> nnadq_quantize(const std::vector<ParameterVector>& layers,
                                                   const QuantizationParams& params) {
    if (layers.empty()) throw std::invalid_argument("no parameters");
    std::vector<QuantizedTensor> out;
    out.reserve(layers.size());
    for (const auto& layer : layers) out.push_back(adq_quantize(layer, params));
    return out;
}

inline ParameterVector nnadq_dequantize(const std::vector<QuantizedTensor>& tensors) {
    std::vector<ParameterVector> parts;
    parts.reserve(tensors.size());
    for (const auto& t : tensors) parts.push_back(adq_dequantize(t));
    return concat(parts);
}

// QSGD-style stochastic quantization, the baseline NNADQ is compared against.
// Levels are chosen randomly so that dequantization is unbiased; the L2 norm
// rides in the d field and the offset is unused.
inline QuantizedTensor sq_quantize(const ParameterVector& v, std::uint64_t s, std::uint64_t seed) {
    if (v.values.empty()) throw std::invalid_argument("no parameters");
    if (s == 0) throw std::invalid_argument("s must be positive");

    QuantizedTensor q;
    q.original_layout = v.layout;
    q.s = s;
    q.offset = 0.0;
    q.d = l2_norm(v);
    q.levels.resize(v.values.size());
    q.signs.resize(v.values.size());

    Rng rng(seed);
    for (std::size_t i = 0; i < v.values.size(); ++i) {
        double x = v.values[i];
        q.signs[i] = x < 0.0 ? -1 : 1;
        if (q.d == 0.0) {
            q.levels[i] = 0;
            continue;
        }
        double ratio = std::fabs(x) * static_cast<double>(s) / q.d;  // in [0, s]
        double lower = std::floor(ratio);
        double frac = ratio - lower;
        auto level = static_cast<std::uint64_t>(lower);
        if (rng.uniform01() < frac) ++level;
        q.levels[i] = std::min(level, s);
    }
    return q;
}

inline ParameterVector sq_dequantize(const QuantizedTensor& q) {
    ParameterVector out;
    out.layout = q.original_layout;
    out.values.resize(q.levels.size());
    for (std::size_t i = 0; i < q.levels.size(); ++i)
        out.values[i] = q.d * static_cast<double>(q.signs[i]) * static_cast<double>(q.levels[i]) /
                        static_cast<double>(q.s);
    return out;
}

// Byte cost of the layout metadata as the wire codec writes it:
// entry count (u32) then per entry name (u16 length + bytes), offset (u64),
// length (u64), rank (u8) and one u64 per dimension.
inline std::size_t layout_metadata_bytes(const std::vector<LayoutEntry>& layout) {
    std::size_t bytes = 4;
    for (const auto& entry : layout) bytes += 2 + entry.name.size() + 8 + 8 + 1 + 8 * entry.shape.size();
    return bytes;
}

// Exact bit cost of one quantized tensor on the wire:
//   n * ceil(log2(s+1))  level indices
//   n                    sign bits
//   3 * 64               offset, d, s
//   layout metadata      see layout_metadata_bytes
// The serializer emits exactly ceil(payload_bits/8) bytes per tensor.
inline std::uint64_t payload_bits(const QuantizedTensor& q) {
    auto n = static_cast<std::uint64_t>(q.levels.size());
    return n * bits_per_level(q.s) + n + 3 * 64 +
           8 * static_cast<std::uint64_t>(layout_metadata_bytes(q.original_layout));
}

}  // namespace fedobd
