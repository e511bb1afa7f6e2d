#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedobd {

// One named tensor inside a flat parameter vector.
struct LayoutEntry {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
    std::vector<std::size_t> shape;

    bool operator==(const LayoutEntry&) const = default;
};

struct NamedArray {
    std::string name;
    std::vector<double> values;
    std::vector<std::size_t> shape;  // empty -> rank-1 {values.size()}
};

// Flat sequence of parameters plus the layer layout that produced it.
// Treated as immutable once built; all operations return new vectors.
struct ParameterVector {
    std::vector<double> values;
    std::vector<LayoutEntry> layout;

    std::size_t size() const { return values.size(); }
    bool same_layout(const ParameterVector& other) const { return layout == other.layout; }
};

inline void validate_layout(const ParameterVector& v) {
    std::size_t expected_offset = 0;
    for (const auto& entry : v.layout) {
        if (entry.offset != expected_offset)
            throw std::invalid_argument("layout offsets must be contiguous from 0");
        expected_offset += entry.length;
    }
    if (expected_offset != v.values.size())
        throw std::invalid_argument("layout lengths do not cover the value array");
}

// Concatenates named layers, in the given order, into one flat vector.
inline ParameterVector flatten(const std::vector<NamedArray>& layers) {
    ParameterVector out;
    std::size_t offset = 0;
    for (const auto& layer : layers) {
        LayoutEntry entry;
        entry.name = layer.name;
        entry.offset = offset;
        entry.length = layer.values.size();
        entry.shape = layer.shape.empty() ? std::vector<std::size_t>{layer.values.size()}
                                          : layer.shape;
        for (const auto& existing : out.layout)
            if (existing.name == entry.name)
                throw std::invalid_argument("duplicate layer name: " + entry.name);
        out.layout.push_back(std::move(entry));
        out.values.insert(out.values.end(), layer.values.begin(), layer.values.end());
        offset += layer.values.size();
    }
    if (out.values.empty()) throw std::invalid_argument("no parameters");
    return out;
}

inline ParameterVector flatten(const std::vector<std::string>& order,
                               const std::map<std::string, std::vector<double>>& layers) {
    std::vector<NamedArray> named;
    named.reserve(order.size());
    for (const auto& name : order) {
        auto it = layers.find(name);
        if (it == layers.end())
            throw std::invalid_argument("layer not found: " + name);
        named.push_back({name, it->second, {}});
    }
    return flatten(named);
}

inline std::vector<NamedArray> unflatten(const ParameterVector& v) {
    std::vector<NamedArray> out;
    out.reserve(v.layout.size());
    for (const auto& entry : v.layout) {
        NamedArray arr;
        arr.name = entry.name;
        arr.shape = entry.shape;
        arr.values.assign(v.values.begin() + static_cast<std::ptrdiff_t>(entry.offset),
                          v.values.begin() + static_cast<std::ptrdiff_t>(entry.offset + entry.length));
        out.push_back(std::move(arr));
    }
    return out;
}

inline double l2_norm(const ParameterVector& v) {
    double sum = 0.0;
    for (double x : v.values) sum += x * x;
    return std::sqrt(sum);
}

inline double linf_norm(const ParameterVector& v) {
    double m = 0.0;
    for (double x : v.values) m = std::max(m, std::fabs(x));
    return m;
}

inline std::size_t param_count(const ParameterVector& v) { return v.values.size(); }

inline ParameterVector diff(const ParameterVector& a, const ParameterVector& b) {
    if (!a.same_layout(b)) throw std::invalid_argument("incompatible shapes");
    ParameterVector out;
    out.layout = a.layout;
    out.values.resize(a.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] - b.values[i];
    return out;
}

inline ParameterVector add(const ParameterVector& a, const ParameterVector& b) {
    if (!a.same_layout(b)) throw std::invalid_argument("incompatible shapes");
    ParameterVector out;
    out.layout = a.layout;
    out.values.resize(a.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] + b.values[i];
    return out;
}

// Slice of consecutive layout entries, rebased so offsets start at 0.
inline ParameterVector slice_entries(const ParameterVector& v, std::size_t first,
                                     std::size_t count) {
    if (first + count > v.layout.size()) throw std::out_of_range("entry slice out of range");
    ParameterVector out;
    std::size_t offset = 0;
    for (std::size_t i = first; i < first + count; ++i) {
        LayoutEntry entry = v.layout[i];
        entry.offset = offset;
        offset += entry.length;
        out.layout.push_back(std::move(entry));
    }
    if (count > 0) {
        std::size_t begin = v.layout[first].offset;
        out.values.assign(v.values.begin() + static_cast<std::ptrdiff_t>(begin),
                          v.values.begin() + static_cast<std::ptrdiff_t>(begin + offset));
    }
    return out;
}

inline ParameterVector slice_entry(const ParameterVector& v, std::size_t index) {
    return slice_entries(v, index, 1);
}

// One single-entry vector per layout entry, in layout order.
inline std::vector<ParameterVector> split_by_entry(const ParameterVector& v) {
    std::vector<ParameterVector> out;
    out.reserve(v.layout.size());
    for (std::size_t i = 0; i < v.layout.size(); ++i) out.push_back(slice_entry(v, i));
    return out;
}

inline ParameterVector concat(const std::vector<ParameterVector>& parts) {
    ParameterVector out;
    std::size_t offset = 0;
    for (const auto& part : parts) {
        for (LayoutEntry entry : part.layout) {
            entry.offset += offset;
            out.layout.push_back(std::move(entry));
        }
        out.values.insert(out.values.end(), part.values.begin(), part.values.end());
        offset += part.values.size();
    }
    return out;
}

}  // namespace fedobd
