#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedobd/config.hpp"
#include "fedobd/orchestrator.hpp"
#include "fedobd/version.hpp"

namespace fedobd {

// Experiment harness behind the CLI: runs a config and writes metrics.csv,
// summary.json and manifest.json into the output directory.

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string fmt_mb(std::uint64_t bytes) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(bytes) / 1e6);
    return buf;
}

inline std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<MetricsRecord>& metrics) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "stage,round,accuracy,loss,uplink_bytes,downlink_bytes,cumulative_bytes\n";
    for (const auto& row : metrics)
        out << row.stage << "," << row.round << "," << fmt_double(row.accuracy) << ","
            << fmt_double(row.loss) << "," << row.uplink_bytes << "," << row.downlink_bytes << ","
            << row.cumulative_bytes << "\n";
}

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
    nlohmann::json j;
    j["mode"] = to_string(cfg.mode);
    j["final_accuracy"] = result.summary.final_accuracy;
    j["final_loss"] = result.summary.final_loss;
    j["uplink_bytes"] = result.summary.uplink_bytes;
    j["downlink_bytes"] = result.summary.downlink_bytes;
    j["total_bytes"] = result.summary.total_bytes;
    j["uplink_mb"] = fmt_mb(result.summary.uplink_bytes);
    j["downlink_mb"] = fmt_mb(result.summary.downlink_bytes);
    j["total_mb"] = fmt_mb(result.summary.total_bytes);
    j["rows"] = result.metrics.size();
    j["config"] = config_echo(cfg);
    return j;
}

inline MetricsSink progress_sink(bool quiet) {
    if (quiet) return {};
    return [](const MetricsRecord& row) {
        std::cout << "stage " << row.stage << " round " << row.round
                  << "  acc=" << fmt_double(row.accuracy) << "  loss=" << fmt_double(row.loss)
                  << "  up=" << row.uplink_bytes << "B down=" << row.downlink_bytes
                  << "B total=" << fmt_mb(row.cumulative_bytes) << "MB\n";
    };
}

// One experiment into out_dir; returns the result for callers that compare runs.
inline ExperimentResult run_into(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                 const std::string& config_path, bool quiet) {
    std::filesystem::create_directories(out_dir);
    std::string started = iso_timestamp();

    ExperimentResult result = run_experiment(cfg, progress_sink(quiet));

    auto metrics_path = out_dir / "metrics.csv";
    auto summary_path = out_dir / "summary.json";
    auto manifest_path = out_dir / "manifest.json";
    write_metrics_csv(metrics_path, result.metrics);
    {
        std::ofstream out(summary_path);
        if (!out) throw std::runtime_error("cannot write " + summary_path.string());
        out << summary_json(cfg, result).dump(2) << "\n";
    }

    // manifest last: everything it names must exist
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["config_path"] = config_path;
    manifest["config"] = config_echo(cfg);
    manifest["started_at"] = started;
    manifest["finished_at"] = iso_timestamp();
    manifest["outputs"] = {metrics_path.string(), summary_path.string()};
    for (const auto& p : {metrics_path, summary_path})
        if (!std::filesystem::exists(p))
            throw std::runtime_error("output missing: " + p.string());
    std::ofstream out(manifest_path);
    if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
    out << manifest.dump(2) << "\n";
    return result;
}

}  // namespace detail

inline int run(const std::string& config_path, const std::string& out_dir,
               std::optional<std::uint64_t> seed_override = {}, bool quiet = false) {
    try {
        ExperimentConfig cfg = parse_config(config_path);
        if (seed_override) cfg.master_seed = *seed_override;
        ExperimentResult result = detail::run_into(cfg, out_dir, config_path, quiet);
        if (!quiet)
            std::cout << "done: accuracy=" << detail::fmt_double(result.summary.final_accuracy)
                      << " total=" << detail::fmt_mb(result.summary.total_bytes) << "MB -> "
                      << out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// Runs all five modes on the shared seed and writes a comparison table
// (mode, total MB, final accuracy) alongside the per-mode outputs.
inline int run_suite(const std::string& config_path, const std::string& out_dir,
                     std::optional<std::uint64_t> seed_override = {}, bool quiet = false) {
    try {
        ExperimentConfig base = parse_config(config_path);
        if (seed_override) base.master_seed = *seed_override;

        std::filesystem::path root(out_dir);
        std::filesystem::create_directories(root);
        std::vector<std::pair<std::string, ExperimentSummary>> table;
        for (const auto& [mode, name] : mode_names()) {
            ExperimentConfig cfg = base;
            cfg.mode = mode;
            if (!quiet) std::cout << "== " << name << " ==\n";
            ExperimentResult result = detail::run_into(cfg, root / name, config_path, quiet);
            table.push_back({name, result.summary});
        }

        auto table_path = root / "suite_summary.csv";
        std::ofstream out(table_path);
        if (!out) throw std::runtime_error("cannot write " + table_path.string());
        out << "mode,total_mb,final_accuracy\n";
        for (const auto& [name, summary] : table)
            out << name << "," << detail::fmt_mb(summary.total_bytes) << ","
                << detail::fmt_double(summary.final_accuracy) << "\n";

        if (!quiet) {
            std::cout << "\nmode                 total MB   final accuracy\n";
            for (const auto& [name, summary] : table) {
                char line[120];
                std::snprintf(line, sizeof(line), "%-20s %8s   %s\n", name.c_str(),
                              detail::fmt_mb(summary.total_bytes).c_str(),
                              detail::fmt_double(summary.final_accuracy).c_str());
                std::cout << line;
            }
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fedobd
