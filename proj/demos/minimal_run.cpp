// Smallest end-to-end use of the library: build a config in code, run the
// two-stage training, print per-round metrics.

#include <cstdio>

#include "fedobd/orchestrator.hpp"

int main() {
    fedobd::ExperimentConfig cfg;
    cfg.n_clients = 4;
    cfg.subset_size = 2;
    cfg.rounds = 5;
    cfg.local_epochs = 2;
    cfg.stage2_epochs = 3;
    cfg.dataset.classes = 3;
    cfg.dataset.dims = 8;
    cfg.dataset.per_class = 100;
    cfg.hidden_dims = {16};
    cfg.master_seed = 42;

    auto result = fedobd::run_experiment(cfg, [](const fedobd::MetricsRecord& row) {
        std::printf("stage %d round %2u  acc %.3f  loss %.4f  cumulative %llu B\n", row.stage,
                    row.round, row.accuracy, row.loss,
                    static_cast<unsigned long long>(row.cumulative_bytes));
    });
    std::printf("final accuracy %.3f, %llu bytes transmitted\n", result.summary.final_accuracy,
                static_cast<unsigned long long>(result.summary.total_bytes));
    return 0;
}
