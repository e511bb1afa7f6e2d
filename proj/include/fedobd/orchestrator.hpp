#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedobd/block_dropout.hpp"
#include "fedobd/data.hpp"
#include "fedobd/model.hpp"
#include "fedobd/protocol.hpp"
#include "fedobd/quantize.hpp"
#include "fedobd/rng.hpp"

namespace fedobd {

enum class Mode {
    fedobd,             // two-stage training with OBD and NNADQ
    fedavg,             // uncompressed full-participation baseline
    fedobd_sq,          // NNADQ replaced by stochastic quantization (s = 255)
    fedobd_no_stage2,   // stage 1 only
    fedobd_no_dropout,  // dropout rate forced to 0
};

inline const std::vector<std::pair<Mode, std::string>>& mode_names() {
    static const std::vector<std::pair<Mode, std::string>> names = {
        {Mode::fedobd, "fedobd"},
        {Mode::fedavg, "fedavg"},
        {Mode::fedobd_sq, "fedobd_sq"},
        {Mode::fedobd_no_stage2, "fedobd_no_stage2"},
        {Mode::fedobd_no_dropout, "fedobd_no_dropout"},
    };
    return names;
}

inline std::string to_string(Mode mode) {
    for (const auto& [m, name] : mode_names())
        if (m == mode) return name;
    return "?";
}

struct DatasetSpec {
    enum class Kind { blobs, csv };
    Kind kind = Kind::blobs;
    // blobs
    std::size_t classes = 10;
    std::size_t dims = 32;
    std::size_t per_class = 200;
    double spread = 1.0;
    // csv
    std::string csv_path;
    std::string label_column = "label";
};

struct ExperimentConfig {
    std::size_t n_clients = 16;
    std::size_t subset_size = 8;     // k; fedavg ignores this and uses all clients
    std::size_t rounds = 30;         // R
    std::size_t local_epochs = 5;    // E1
    std::size_t stage2_epochs = 10;  // E2
    double dropout_rate = 0.3;       // lambda
    double beta = 1e-3;
    std::size_t batch_size = 64;
    LrSchedule schedule{0.1, 0, 0.0};  // total_epochs 0 -> filled from R*E1+E2
    Mode mode = Mode::fedobd;
    std::uint64_t master_seed = 1;
    double test_fraction = 0.2;
    std::vector<std::size_t> hidden_dims = {64, 64};
    std::vector<std::pair<std::string, std::vector<std::string>>> block_spec;  // empty -> singletons
    DatasetSpec dataset;
};

struct MetricsRecord {
    int stage = 1;
    std::uint32_t round = 0;  // global round number; stage 2 continues after R
    double accuracy = 0.0;
    double loss = 0.0;
    std::uint64_t uplink_bytes = 0;
    std::uint64_t downlink_bytes = 0;
    std::uint64_t cumulative_bytes = 0;

    bool operator==(const MetricsRecord&) const = default;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;
using MessageObserver = std::function<void(Direction, std::size_t)>;

struct FederatedData {
    std::vector<Dataset> clients;
    Dataset test;
};

inline std::size_t stage2_epochs_of(const ExperimentConfig& cfg) {
    return (cfg.mode == Mode::fedavg || cfg.mode == Mode::fedobd_no_stage2) ? 0
                                                                            : cfg.stage2_epochs;
}

// Fills schedule.total_epochs when the config left it 0.
inline LrSchedule effective_schedule(const ExperimentConfig& cfg) {
    LrSchedule s = cfg.schedule;
    if (s.total_epochs == 0)
        s.total_epochs = cfg.rounds * cfg.local_epochs + stage2_epochs_of(cfg);
    return s;
}

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.n_clients == 0) throw std::invalid_argument("clients: must be positive");
    if (cfg.subset_size == 0 || cfg.subset_size > cfg.n_clients)
        throw std::invalid_argument("subset: must be in [1, clients]");
    if (cfg.dropout_rate < 0.0 || cfg.dropout_rate > 1.0)
        throw std::invalid_argument("dropout_rate: must be in [0, 1]");
    if (cfg.beta <= 0.0) throw std::invalid_argument("beta: must be positive");
    if (cfg.local_epochs == 0) throw std::invalid_argument("local_epochs: must be positive");
    if (cfg.batch_size == 0) throw std::invalid_argument("batch_size: must be positive");
    if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0)
        throw std::invalid_argument("test_fraction: must be in (0, 1) so the server can evaluate");
    if (cfg.hidden_dims.empty()) throw std::invalid_argument("hidden_dims: need at least one");
    for (std::size_t d : cfg.hidden_dims)
        if (d == 0) throw std::invalid_argument("hidden_dims: must be positive");
    LrSchedule sched = effective_schedule(cfg);
    if (sched.initial_lr <= 0.0) throw std::invalid_argument("initial_lr: must be positive");
    if (sched.min_lr < 0.0 || sched.min_lr > sched.initial_lr)
        throw std::invalid_argument("min_lr: must be in [0, initial_lr]");
    std::size_t needed = cfg.rounds * cfg.local_epochs + stage2_epochs_of(cfg);
    if (needed > 0 && sched.total_epochs < needed)
        throw std::invalid_argument("total_epochs: schedule too short for the configured run");
    if (cfg.dataset.kind == DatasetSpec::Kind::blobs) {
        if (cfg.dataset.classes < 2) throw std::invalid_argument("classes: need at least 2");
        if (cfg.dataset.dims == 0 || cfg.dataset.per_class == 0)
            throw std::invalid_argument("dims/per_class: must be positive");
        if (cfg.dataset.spread < 0.0) throw std::invalid_argument("spread: must be non-negative");
    } else if (cfg.dataset.csv_path.empty()) {
        throw std::invalid_argument("csv_path: required for csv datasets");
    }
}

inline FederatedData build_federated_data(const ExperimentConfig& cfg) {
    Dataset all;
    if (cfg.dataset.kind == DatasetSpec::Kind::blobs) {
        all = generate_blobs(cfg.dataset.classes, cfg.dataset.dims, cfg.dataset.per_class,
                             cfg.dataset.spread,
                             derive_seed(cfg.master_seed, SeedPurpose::dataset));
    } else {
        all = load_csv(cfg.dataset.csv_path, cfg.dataset.label_column);
    }
    PartitionPlan plan = partition_iid(all, cfg.n_clients, cfg.test_fraction,
                                       derive_seed(cfg.master_seed, SeedPurpose::partition));
    FederatedData data;
    data.clients.reserve(cfg.n_clients);
    for (const auto& idx : plan.client_indices) data.clients.push_back(subset(all, idx));
    data.test = subset(all, plan.test_indices);
    return data;
}

inline ModelSpec build_model_spec(const ExperimentConfig& cfg, const FederatedData& data) {
    ModelSpec spec;
    spec.layer_dims.push_back(data.test.dims);
    for (std::size_t d : cfg.hidden_dims) spec.layer_dims.push_back(d);
    spec.layer_dims.push_back(data.test.classes);
    spec.block_spec = cfg.block_spec;
    spec.seed = derive_seed(cfg.master_seed, SeedPurpose::model_init);
    return spec;
}

namespace detail {

inline constexpr std::uint32_t kBroadcastTag = 0xFFFFFFFFu;

// Quantizes one parameter vector layer by layer, honoring the mode's choice
// of NNADQ vs the SQ baseline. SQ seeds derive from (round, origin).
inline std::vector<QuantizedTensor> quantize_layers(const ExperimentConfig& cfg,
                                                    const ParameterVector& pv,
                                                    std::uint32_t round, std::uint32_t origin) {
    auto slices = split_by_entry(pv);
    if (cfg.mode == Mode::fedobd_sq) {
        Rng rng(derive_seed(cfg.master_seed, SeedPurpose::sq_stream, round, origin));
        std::vector<QuantizedTensor> out;
        out.reserve(slices.size());
        for (const auto& s : slices) out.push_back(sq_quantize(s, 255, rng.next_u64()));
        return out;
    }
    return nnadq_quantize(slices, QuantizationParams{cfg.beta, 32});
}

inline std::vector<std::size_t> sample_clients(std::uint64_t master, std::uint32_t round,
                                               std::size_t n, std::size_t k) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(master, SeedPurpose::client_sampling, round));
    rng.shuffle(ids);
    ids.resize(k);
    std::sort(ids.begin(), ids.end());  // ascending ids keep aggregation order deterministic
    return ids;
}

inline void note(const MessageObserver& observer, Direction dir, std::size_t bytes) {
    if (observer) observer(dir, bytes);
}

inline MetricsRecord make_record(int stage, std::uint32_t round, const EvalResult& ev,
                                 const TransmissionLedger& ledger) {
    const RoundTraffic& rt = ledger.per_round().empty() ? RoundTraffic{}
                                                        : ledger.per_round().back();
    MetricsRecord row;
    row.stage = stage;
    row.round = round;
    row.accuracy = ev.accuracy;
    row.loss = ev.loss;
    if (!ledger.per_round().empty() && rt.round == round) {
        row.uplink_bytes = rt.uplink_bytes;
        row.downlink_bytes = rt.downlink_bytes;
    }
    row.cumulative_bytes = ledger.total_bytes();
    return row;
}

}  // namespace detail

struct StageResult {
    Model model;
    std::vector<MetricsRecord> metrics;
};

// Stage 1 of the two-stage process: R rounds over random k-client subsets.
// Each round broadcasts the quantized global model, trains E1 local epochs,
// selects blocks under the dropout budget, uploads quantized block diffs, and
// aggregates the reconstructed client models.
inline StageResult run_stage1(const ExperimentConfig& cfg, const Model& initial_model,
                              const FederatedData& data, TransmissionLedger& ledger,
                              const MetricsSink& sink = {}, const MessageObserver& observer = {}) {
    validate_config(cfg);
    if (data.clients.size() != cfg.n_clients)
        throw std::invalid_argument("need one partition per client");
    LrSchedule schedule = effective_schedule(cfg);
    double lambda = cfg.mode == Mode::fedobd_no_dropout ? 0.0 : cfg.dropout_rate;

    StageResult result{initial_model, {}};
    Model& global = result.model;

    for (std::uint32_t r = 1; r <= cfg.rounds; ++r) {
        auto sampled = detail::sample_clients(cfg.master_seed, r, cfg.n_clients, cfg.subset_size);

        GlobalModelMessage broadcast;
        broadcast.round = r;
        broadcast.stage = 1;
        broadcast.tensors = detail::quantize_layers(cfg, global.params, r, detail::kBroadcastTag);
        auto bcast_bytes = encode(broadcast);
        for (std::size_t i = 0; i < sampled.size(); ++i) {
            ledger.record(r, Direction::downlink, bcast_bytes.size());
            detail::note(observer, Direction::downlink, bcast_bytes.size());
        }
        // what every selected client reconstructs and trains from
        Model base{global.spec, nnadq_dequantize(decode_global_model(bcast_bytes).tensors)};
        auto base_blocks = blocks_of(base);

        std::vector<Model> reconstructed;
        std::vector<std::size_t> counts;
        reconstructed.reserve(sampled.size());
        for (std::size_t c : sampled) {
            Model trained = train_local(
                base, data.clients[c], cfg.local_epochs, schedule, cfg.batch_size,
                (r - 1) * cfg.local_epochs,
                derive_seed(cfg.master_seed, SeedPurpose::shuffle, r, c));

            BlockUpdateMessage update;
            update.round = r;
            update.client_id = static_cast<std::uint32_t>(c);
            update.stage = 1;
            for (const auto& sb : select_blocks(base, trained, lambda)) {
                const ParameterVector* base_block = nullptr;
                for (const auto& [name, pv] : base_blocks)
                    if (name == sb.block_name) base_block = &pv;
                ParameterVector block_diff = diff(sb.payload, *base_block);
                update.entries.push_back(
                    {sb.block_name,
                     detail::quantize_layers(cfg, block_diff, r, static_cast<std::uint32_t>(c))});
            }
            auto update_bytes = encode(update);
            ledger.record(r, Direction::uplink, update_bytes.size());
            detail::note(observer, Direction::uplink, update_bytes.size());

            reconstructed.push_back(reconstruct(global, decode_block_update(update_bytes)));
            counts.push_back(data.clients[c].size());
        }
        global = aggregate(reconstructed, counts);

        EvalResult ev = forward(global, data.test);
        MetricsRecord row = detail::make_record(1, r, ev, ledger);
        result.metrics.push_back(row);
        if (sink) sink(row);
    }
    return result;
}

// Stage 2: E2 rounds of single-epoch fine-tuning with full participation and
// no dropout; the cosine schedule continues from epoch_offset.
inline StageResult run_stage2(const ExperimentConfig& cfg, const Model& stage1_model,
                              const FederatedData& data, std::size_t epoch_offset,
                              TransmissionLedger& ledger, const MetricsSink& sink = {},
                              const MessageObserver& observer = {}) {
    validate_config(cfg);
    if (data.clients.size() != cfg.n_clients)
        throw std::invalid_argument("need one partition per client");
    LrSchedule schedule = effective_schedule(cfg);

    StageResult result{stage1_model, {}};
    Model& global = result.model;

    for (std::uint32_t e = 1; e <= cfg.stage2_epochs; ++e) {
        auto round = static_cast<std::uint32_t>(cfg.rounds + e);

        GlobalModelMessage broadcast;
        broadcast.round = round;
        broadcast.stage = 2;
        broadcast.tensors = detail::quantize_layers(cfg, global.params, round, detail::kBroadcastTag);
        auto bcast_bytes = encode(broadcast);
        for (std::size_t c = 0; c < cfg.n_clients; ++c) {
            ledger.record(round, Direction::downlink, bcast_bytes.size());
            detail::note(observer, Direction::downlink, bcast_bytes.size());
        }
        Model base{global.spec, nnadq_dequantize(decode_global_model(bcast_bytes).tensors)};
        auto base_blocks = blocks_of(base);

        std::vector<Model> reconstructed;
        std::vector<std::size_t> counts;
        reconstructed.reserve(cfg.n_clients);
        for (std::size_t c = 0; c < cfg.n_clients; ++c) {
            Model trained = train_local(
                base, data.clients[c], 1, schedule, cfg.batch_size, epoch_offset + (e - 1),
                derive_seed(cfg.master_seed, SeedPurpose::shuffle, round, c));

            // full-model diff: every block travels, no dropout in stage 2
            BlockUpdateMessage update;
            update.round = round;
            update.client_id = static_cast<std::uint32_t>(c);
            update.stage = 2;
            auto trained_blocks = blocks_of(trained);
            for (std::size_t b = 0; b < trained_blocks.size(); ++b) {
                ParameterVector block_diff =
                    diff(trained_blocks[b].second, base_blocks[b].second);
                update.entries.push_back(
                    {trained_blocks[b].first,
                     detail::quantize_layers(cfg, block_diff, round, static_cast<std::uint32_t>(c))});
            }
            auto update_bytes = encode(update);
            ledger.record(round, Direction::uplink, update_bytes.size());
            detail::note(observer, Direction::uplink, update_bytes.size());

            reconstructed.push_back(reconstruct(global, decode_block_update(update_bytes)));
            counts.push_back(data.clients[c].size());
        }
        global = aggregate(reconstructed, counts);

        EvalResult ev = forward(global, data.test);
        MetricsRecord row = detail::make_record(2, round, ev, ledger);
        result.metrics.push_back(row);
        if (sink) sink(row);
    }
    return result;
}

namespace detail {

// FedAvg baseline: every round all clients receive the raw 32-bit global
// model, train E1 epochs and upload their raw full model.
inline StageResult run_fedavg(const ExperimentConfig& cfg, const Model& initial_model,
                              const FederatedData& data, TransmissionLedger& ledger,
                              const MetricsSink& sink, const MessageObserver& observer) {
    LrSchedule schedule = effective_schedule(cfg);
    StageResult result{initial_model, {}};
    Model& global = result.model;

    for (std::uint32_t r = 1; r <= cfg.rounds; ++r) {
        RawGlobalMessage broadcast{r, 1, global.params};
        auto bcast_bytes = encode(broadcast);
        for (std::size_t c = 0; c < cfg.n_clients; ++c) {
            ledger.record(r, Direction::downlink, bcast_bytes.size());
            note(observer, Direction::downlink, bcast_bytes.size());
        }
        Model base{global.spec, decode_raw_global(bcast_bytes).params};

        std::vector<Model> received;
        std::vector<std::size_t> counts;
        received.reserve(cfg.n_clients);
        for (std::size_t c = 0; c < cfg.n_clients; ++c) {
            Model trained = train_local(
                base, data.clients[c], cfg.local_epochs, schedule, cfg.batch_size,
                (r - 1) * cfg.local_epochs,
                derive_seed(cfg.master_seed, SeedPurpose::shuffle, r, c));
            RawUpdateMessage update{r, static_cast<std::uint32_t>(c), 1, trained.params};
            auto update_bytes = encode(update);
            ledger.record(r, Direction::uplink, update_bytes.size());
            note(observer, Direction::uplink, update_bytes.size());
            received.push_back(Model{global.spec, decode_raw_update(update_bytes).params});
            counts.push_back(data.clients[c].size());
        }
        global = aggregate(received, counts);

        EvalResult ev = forward(global, data.test);
        MetricsRecord row = make_record(1, r, ev, ledger);
        result.metrics.push_back(row);
        if (sink) sink(row);
    }
    return result;
}

}  // namespace detail

struct ExperimentSummary {
    double final_accuracy = 0.0;
    double final_loss = 0.0;
    std::uint64_t uplink_bytes = 0;
    std::uint64_t downlink_bytes = 0;
    std::uint64_t total_bytes = 0;
};

struct ExperimentResult {
    Model model;
    std::vector<MetricsRecord> metrics;
    TransmissionLedger ledger;
    ExperimentSummary summary;
};

// Runs the experiment the config describes, dispatching on mode.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const MetricsSink& sink = {},
                                       const MessageObserver& observer = {}) {
    validate_config(cfg);
    FederatedData data = build_federated_data(cfg);
    Model model = init_model(build_model_spec(cfg, data));

    ExperimentResult result;
    switch (cfg.mode) {
        case Mode::fedavg: {
            StageResult s = detail::run_fedavg(cfg, model, data, result.ledger, sink, observer);
            result.model = std::move(s.model);
            result.metrics = std::move(s.metrics);
            break;
        }
        case Mode::fedobd_no_stage2: {
            StageResult s = run_stage1(cfg, model, data, result.ledger, sink, observer);
            result.model = std::move(s.model);
            result.metrics = std::move(s.metrics);
            break;
        }
        case Mode::fedobd:
        case Mode::fedobd_sq:
        case Mode::fedobd_no_dropout: {
            StageResult s1 = run_stage1(cfg, model, data, result.ledger, sink, observer);
            StageResult s2 = run_stage2(cfg, s1.model, data, cfg.rounds * cfg.local_epochs,
                                        result.ledger, sink, observer);
            result.model = std::move(s2.model);
            result.metrics = std::move(s1.metrics);
            result.metrics.insert(result.metrics.end(), s2.metrics.begin(), s2.metrics.end());
            break;
        }
    }

    EvalResult final_eval = forward(result.model, data.test);
    result.summary.final_accuracy = final_eval.accuracy;
    result.summary.final_loss = final_eval.loss;
    result.summary.uplink_bytes = result.ledger.cumulative_uplink_bytes();
    result.summary.downlink_bytes = result.ledger.cumulative_downlink_bytes();
    result.summary.total_bytes = result.ledger.total_bytes();
    return result;
}

}  // namespace fedobd
