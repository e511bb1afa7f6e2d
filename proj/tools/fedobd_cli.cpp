// Experiment harness CLI: run a single experiment or the five-mode
// comparison suite from a flat key = value config file.

#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedobd/harness.hpp"
#include "fedobd/version.hpp"

int main(int argc, char** argv) {
    CLI::App app{"FedOBD federated-learning simulator"};
    app.set_version_flag("--version", std::string(fedobd::kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    bool quiet = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config_path, "config file")->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "override master_seed");
        cmd->add_flag("--quiet", quiet, "suppress progress output");
    };

    CLI::App* run_cmd = app.add_subcommand("run", "run one experiment");
    add_common(run_cmd);
    CLI::App* suite_cmd =
        app.add_subcommand("suite", "run all five modes on the shared seed and compare");
    add_common(suite_cmd);

    CLI11_PARSE(app, argc, argv);

    if (run_cmd->parsed()) return fedobd::run(config_path, out_dir, seed, quiet);
    return fedobd::run_suite(config_path, out_dir, seed, quiet);
}
