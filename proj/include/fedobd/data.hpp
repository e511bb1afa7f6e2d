#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedobd/rng.hpp"

namespace fedobd {

// Labeled classification samples, features stored row-major.
struct Dataset {
    std::vector<double> features;  // size() x dims
    std::vector<int> labels;       // each in [0, classes)
    std::size_t dims = 0;
    std::size_t classes = 0;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * dims, dims};
    }
};

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> client_indices;
    std::vector<std::size_t> test_indices;
};

// Gaussian clusters around seeded random centers; samples grouped by class.
inline Dataset generate_blobs(std::size_t classes, std::size_t dims, std::size_t per_class,
                              double spread, std::uint64_t seed) {
    if (classes == 0 || dims == 0 || per_class == 0)
        throw std::invalid_argument("blob parameters must be positive");
    Rng rng(seed);
    std::vector<double> centers(classes * dims);
    for (auto& c : centers) c = rng.normal();

    Dataset out;
    out.dims = dims;
    out.classes = classes;
    out.features.reserve(classes * per_class * dims);
    out.labels.reserve(classes * per_class);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t j = 0; j < per_class; ++j) {
            for (std::size_t k = 0; k < dims; ++k)
                out.features.push_back(centers[c * dims + k] + spread * rng.normal());
            out.labels.push_back(static_cast<int>(c));
        }
    }
    return out;
}

// Seeded shuffle, test split first, remainder dealt to clients as evenly as
// possible (sizes differ by at most one).
inline PartitionPlan partition_iid(const Dataset& data, std::size_t n_clients,
                                   double test_fraction, std::uint64_t seed) {
    if (n_clients == 0) throw std::invalid_argument("need at least one client");
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw std::invalid_argument("test_fraction must be in [0, 1)");

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    auto test_count = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(data.size())));
    std::size_t train_count = data.size() - test_count;
    if (train_count < n_clients)
        throw std::invalid_argument("too few samples: every client needs at least one");

    PartitionPlan plan;
    plan.test_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
    plan.client_indices.resize(n_clients);
    std::size_t base = train_count / n_clients;
    std::size_t extra = train_count % n_clients;
    std::size_t pos = test_count;
    for (std::size_t c = 0; c < n_clients; ++c) {
        std::size_t take = base + (c < extra ? 1 : 0);
        plan.client_indices[c].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                      order.begin() + static_cast<std::ptrdiff_t>(pos + take));
        pos += take;
    }
    return plan;
}

inline Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
    Dataset out;
    out.dims = data.dims;
    out.classes = data.classes;
    out.features.reserve(indices.size() * data.dims);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        auto r = data.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
        out.labels.push_back(data.labels[i]);
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace detail

// Numeric CSV with a header row; the named label column holds non-negative
// integer class ids, every other column is a feature. Errors carry the
// offending file line number (header is line 1).
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_csv_line(line);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size())
        throw std::runtime_error(path + ": label column '" + label_column + "' not found");
    if (header.size() < 2) throw std::runtime_error(path + ": no feature columns");

    Dataset out;
    out.dims = header.size() - 1;
    int max_label = -1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error(path + ": row " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i == label_idx) {
                std::size_t consumed = 0;
                long value = 0;
                try {
                    value = std::stol(fields[i], &consumed);
                } catch (const std::exception&) {
                    consumed = 0;
                }
                if (consumed != fields[i].size() || value < 0)
                    throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                                             ": invalid label '" + fields[i] + "'");
                out.labels.push_back(static_cast<int>(value));
                max_label = std::max(max_label, static_cast<int>(value));
            } else {
                std::size_t consumed = 0;
                double value = 0.0;
                try {
                    value = std::stod(fields[i], &consumed);
                } catch (const std::exception&) {
                    consumed = 0;
                }
                if (consumed != fields[i].size())
                    throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                                             ": non-numeric feature '" + fields[i] + "'");
                out.features.push_back(value);
            }
        }
    }
    if (out.labels.empty()) throw std::runtime_error(path + ": no data rows");
    out.classes = static_cast<std::size_t>(max_label) + 1;
    return out;
}

inline void write_csv(const Dataset& data, const std::string& path,
                      const std::string& label_column = "label") {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t k = 0; k < data.dims; ++k) out << "f" << k << ",";
    out << label_column << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto r = data.row(i);
        for (double x : r) out << x << ",";
        out << data.labels[i] << "\n";
    }
}

}  // namespace fedobd
