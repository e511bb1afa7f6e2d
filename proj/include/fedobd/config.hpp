#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedobd/orchestrator.hpp"

namespace fedobd {

// Flat key = value config files; '#' starts a comment, blank lines ignored.
// Every key has a default, so an empty file is a valid experiment.
//
//   mode            fedobd | fedavg | fedobd_sq | fedobd_no_stage2 | fedobd_no_dropout
//   clients         number of FL clients (n)
//   subset          clients sampled per stage-1 round (k), default ceil(n/2)
//   rounds          stage-1 rounds (R)
//   local_epochs    stage-1 local epochs per round (E1)
//   stage2_epochs   stage-2 epochs (E2)
//   dropout_rate    block dropout rate lambda in [0, 1]
//   beta            quantization trade-off weight
//   batch_size      SGD mini-batch size
//   initial_lr / min_lr / total_epochs   cosine annealing schedule
//   master_seed     seeds everything
//   test_fraction   held-out server test split
//   hidden_dims     comma-separated hidden layer widths, e.g. 64,64
//   blocks          block spec "name:layer1,layer2;name2:head" (empty -> singletons)
//   dataset         blobs | csv
//   classes / dims / per_class / spread   blob generator
//   csv_path / label_column               csv loader

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) parts.push_back(trim(part));
    return parts;
}

inline std::size_t parse_size(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        long long v = std::stoll(value, &consumed);
        if (consumed != value.size() || v < 0) throw std::invalid_argument("");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected a non-negative integer, got '" + value + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        unsigned long long v = std::stoull(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected an unsigned integer, got '" + value + "'");
    }
}

inline double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        double v = std::stod(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected a number, got '" + value + "'");
    }
}

inline Mode parse_mode(const std::string& value) {
    for (const auto& [mode, name] : mode_names())
        if (name == value) return mode;
    std::string valid;
    for (const auto& [mode, name] : mode_names()) valid += (valid.empty() ? "" : ", ") + name;
    throw std::invalid_argument("mode: unknown mode '" + value + "' (valid: " + valid + ")");
}

inline std::vector<std::pair<std::string, std::vector<std::string>>> parse_blocks(
    const std::string& value) {
    std::vector<std::pair<std::string, std::vector<std::string>>> blocks;
    if (trim(value).empty()) return blocks;
    for (const auto& part : split(value, ';')) {
        if (part.empty()) continue;
        auto colon = part.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("blocks: expected 'name:layer,...' in '" + part + "'");
        std::string name = trim(part.substr(0, colon));
        auto layers = split(part.substr(colon + 1), ',');
        if (name.empty() || layers.empty() || layers.front().empty())
            throw std::invalid_argument("blocks: empty name or layer list in '" + part + "'");
        blocks.push_back({name, layers});
    }
    return blocks;
}

}  // namespace detail

inline ExperimentConfig parse_config_map(const std::map<std::string, std::string>& kv) {
    ExperimentConfig cfg;
    bool subset_given = false;
    for (const auto& [key, value] : kv) {
        if (key == "mode") cfg.mode = detail::parse_mode(value);
        else if (key == "clients") cfg.n_clients = detail::parse_size(key, value);
        else if (key == "subset") { cfg.subset_size = detail::parse_size(key, value); subset_given = true; }
        else if (key == "rounds") cfg.rounds = detail::parse_size(key, value);
        else if (key == "local_epochs") cfg.local_epochs = detail::parse_size(key, value);
        else if (key == "stage2_epochs") cfg.stage2_epochs = detail::parse_size(key, value);
        else if (key == "dropout_rate") cfg.dropout_rate = detail::parse_real(key, value);
        else if (key == "beta") cfg.beta = detail::parse_real(key, value);
        else if (key == "batch_size") cfg.batch_size = detail::parse_size(key, value);
        else if (key == "initial_lr") cfg.schedule.initial_lr = detail::parse_real(key, value);
        else if (key == "min_lr") cfg.schedule.min_lr = detail::parse_real(key, value);
        else if (key == "total_epochs") cfg.schedule.total_epochs = detail::parse_size(key, value);
        else if (key == "master_seed") cfg.master_seed = detail::parse_u64(key, value);
        else if (key == "test_fraction") cfg.test_fraction = detail::parse_real(key, value);
        else if (key == "hidden_dims") {
            cfg.hidden_dims.clear();
            for (const auto& d : detail::split(value, ','))
                cfg.hidden_dims.push_back(detail::parse_size(key, d));
        } else if (key == "blocks") cfg.block_spec = detail::parse_blocks(value);
        else if (key == "dataset") {
            if (value == "blobs") cfg.dataset.kind = DatasetSpec::Kind::blobs;
            else if (value == "csv") cfg.dataset.kind = DatasetSpec::Kind::csv;
            else throw std::invalid_argument("dataset: expected 'blobs' or 'csv', got '" + value + "'");
        }
        else if (key == "classes") cfg.dataset.classes = detail::parse_size(key, value);
        else if (key == "dims") cfg.dataset.dims = detail::parse_size(key, value);
        else if (key == "per_class") cfg.dataset.per_class = detail::parse_size(key, value);
        else if (key == "spread") cfg.dataset.spread = detail::parse_real(key, value);
        else if (key == "csv_path") cfg.dataset.csv_path = value;
        else if (key == "label_column") cfg.dataset.label_column = value;
        else throw std::invalid_argument("unknown key '" + key + "'");
    }
    if (!subset_given) cfg.subset_size = (cfg.n_clients + 1) / 2;  // 50% of clients per round
    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                        ": expected 'key = value'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (kv.count(key))
            throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": duplicate key '" +
                                        key + "'");
        kv[key] = value;
    }
    return parse_config_map(kv);
}

// Canonical key/value echo of the effective config; written into summaries
// and manifests so a run can be reproduced exactly.
inline std::map<std::string, std::string> config_echo(const ExperimentConfig& cfg) {
    std::map<std::string, std::string> kv;
    auto real = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    kv["mode"] = to_string(cfg.mode);
    kv["clients"] = std::to_string(cfg.n_clients);
    kv["subset"] = std::to_string(cfg.subset_size);
    kv["rounds"] = std::to_string(cfg.rounds);
    kv["local_epochs"] = std::to_string(cfg.local_epochs);
    kv["stage2_epochs"] = std::to_string(cfg.stage2_epochs);
    kv["dropout_rate"] = real(cfg.dropout_rate);
    kv["beta"] = real(cfg.beta);
    kv["batch_size"] = std::to_string(cfg.batch_size);
    kv["initial_lr"] = real(cfg.schedule.initial_lr);
    kv["min_lr"] = real(cfg.schedule.min_lr);
    kv["total_epochs"] = std::to_string(effective_schedule(cfg).total_epochs);
    kv["master_seed"] = std::to_string(cfg.master_seed);
    kv["test_fraction"] = real(cfg.test_fraction);
    std::string dims;
    for (std::size_t d : cfg.hidden_dims) dims += (dims.empty() ? "" : ",") + std::to_string(d);
    kv["hidden_dims"] = dims;
    std::string blocks;
    for (const auto& [name, layers] : cfg.block_spec) {
        std::string members;
        for (const auto& l : layers) members += (members.empty() ? "" : ",") + l;
        blocks += (blocks.empty() ? "" : ";") + name + ":" + members;
    }
    kv["blocks"] = blocks;
    kv["dataset"] = cfg.dataset.kind == DatasetSpec::Kind::blobs ? "blobs" : "csv";
    if (cfg.dataset.kind == DatasetSpec::Kind::blobs) {
        kv["classes"] = std::to_string(cfg.dataset.classes);
        kv["dims"] = std::to_string(cfg.dataset.dims);
        kv["per_class"] = std::to_string(cfg.dataset.per_class);
        kv["spread"] = real(cfg.dataset.spread);
    } else {
        kv["csv_path"] = cfg.dataset.csv_path;
        kv["label_column"] = cfg.dataset.label_column;
    }
    return kv;
}

}  // namespace fedobd
