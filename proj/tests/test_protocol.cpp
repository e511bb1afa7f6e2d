#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedobd/protocol.hpp"
#include "fedobd/rng.hpp"

using namespace fedobd;

namespace {

ParameterVector random_pv(Rng& rng, std::size_t max_len = 64) {
    NamedArray arr{"t" + std::to_string(rng.below(1000)), std::vector<double>(1 + rng.below(max_len)), {}};
    for (auto& x : arr.values) x = rng.uniform(-5.0, 5.0);
    return flatten({arr});
}

QuantizedTensor random_tensor(Rng& rng) {
    double beta = std::pow(10.0, rng.uniform(-6.0, 0.0));
    return adq_quantize(random_pv(rng), {beta, 32});
}

bool tensors_equal(const QuantizedTensor& a, const QuantizedTensor& b) {
    return a.levels == b.levels && a.signs == b.signs && a.offset == b.offset && a.d == b.d &&
           a.s == b.s && a.original_layout == b.original_layout;
}

BlockUpdateMessage random_update(Rng& rng) {
    BlockUpdateMessage msg;
    msg.round = static_cast<std::uint32_t>(rng.below(1000));
    msg.client_id = static_cast<std::uint32_t>(rng.below(100));
    msg.stage = rng.below(2) ? 2 : 1;
    std::size_t n_blocks = rng.below(4);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        std::vector<QuantizedTensor> tensors;
        std::size_t n_tensors = 1 + rng.below(3);
        for (std::size_t t = 0; t < n_tensors; ++t) tensors.push_back(random_tensor(rng));
        msg.entries.push_back({"block" + std::to_string(b), std::move(tensors)});
    }
    return msg;
}

Model test_model(std::uint64_t seed) {
    return init_model(ModelSpec{{4, 6, 5, 3},
                                {{"front", {"layer1"}}, {"mid", {"layer2"}}, {"top", {"head"}}},
                                seed});
}

}  // namespace

TEST_CASE("block update messages round-trip exactly") {
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        BlockUpdateMessage msg = random_update(rng);
        auto bytes = encode(msg);
        BlockUpdateMessage back = decode_block_update(bytes);
        CHECK(back.round == msg.round);
        CHECK(back.client_id == msg.client_id);
        CHECK(back.stage == msg.stage);
        REQUIRE(back.entries.size() == msg.entries.size());
        for (std::size_t b = 0; b < msg.entries.size(); ++b) {
            CHECK(back.entries[b].first == msg.entries[b].first);
            REQUIRE(back.entries[b].second.size() == msg.entries[b].second.size());
            for (std::size_t t = 0; t < msg.entries[b].second.size(); ++t)
                CHECK(tensors_equal(back.entries[b].second[t], msg.entries[b].second[t]));
        }
    }
}

TEST_CASE("global model messages round-trip exactly") {
    Rng rng(103);
    for (int trial = 0; trial < 50; ++trial) {
        GlobalModelMessage msg;
        msg.round = static_cast<std::uint32_t>(rng.below(500));
        msg.stage = 1;
        std::size_t n = 1 + rng.below(5);
        for (std::size_t t = 0; t < n; ++t) msg.tensors.push_back(random_tensor(rng));
        GlobalModelMessage back = decode_global_model(encode(msg));
        CHECK(back.round == msg.round);
        REQUIRE(back.tensors.size() == msg.tensors.size());
        for (std::size_t t = 0; t < n; ++t) CHECK(tensors_equal(back.tensors[t], msg.tensors[t]));
    }
}

TEST_CASE("empty update decodes to an empty message") {
    BlockUpdateMessage msg;
    msg.round = 7;
    msg.client_id = 3;
    msg.stage = 1;
    auto bytes = encode(msg);
    BlockUpdateMessage back = decode_block_update(bytes);
    CHECK(back.entries.empty());
    CHECK(back.round == 7);
}

TEST_CASE("encoded size equals headers plus per-tensor payload bytes") {
    Rng rng(107);
    for (int trial = 0; trial < 50; ++trial) {
        BlockUpdateMessage msg = random_update(rng);
        auto bytes = encode(msg);
        // header: magic, version, kind, stage (4) + round (4) + client (4) + entry count (4)
        std::size_t expected = 4 + 4 + 4 + 4;
        for (const auto& [name, tensors] : msg.entries) {
            expected += 2 + name.size() + 4;  // name prefix + tensor count
            for (const auto& t : tensors)
                expected += (payload_bits(t) + 7) / 8;
        }
        CHECK(bytes.size() == expected);
    }
}

TEST_CASE("truncated and corrupt bytes fail with an offset") {
    Rng rng(109);
    BlockUpdateMessage msg = random_update(rng);
    while (msg.entries.empty()) msg = random_update(rng);
    auto bytes = encode(msg);

    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2,
                            bytes.size() - 1}) {
        std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        try {
            decode_block_update(truncated);
            FAIL("expected DecodeError");
        } catch (const DecodeError& e) {
            CHECK(e.offset <= truncated.size());
        }
    }

    auto corrupt = bytes;
    corrupt[0] = 0x00;  // magic
    CHECK_THROWS_AS(decode_block_update(corrupt), DecodeError);
    corrupt = bytes;
    corrupt[2] = 0x09;  // kind
    CHECK_THROWS_AS(decode_block_update(corrupt), DecodeError);
}

TEST_CASE("raw messages round-trip at 32-bit precision") {
    Model m = test_model(7);
    RawUpdateMessage msg{4, 2, 1, m.params};
    RawUpdateMessage back = decode_raw_update(encode(msg));
    CHECK(back.params.layout == m.params.layout);
    REQUIRE(back.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i)
        CHECK(back.params.values[i] == static_cast<double>(static_cast<float>(m.params.values[i])));
    // element count: values at f32 plus layout and header
    CHECK(encode(msg).size() ==
          4 + 4 + 4 + layout_metadata_bytes(m.params.layout) + 4 * m.params.size());
}

TEST_CASE("debug dump mentions the message fields") {
    Rng rng(113);
    BlockUpdateMessage msg = random_update(rng);
    msg.round = 42;
    auto text = to_debug_text(msg);
    CHECK(text.find("round=42") != std::string::npos);
    CHECK(text.find("client=") != std::string::npos);
}

TEST_CASE("reconstruct with an empty update returns the previous global") {
    Model global = test_model(11);
    BlockUpdateMessage empty;
    empty.round = 1;
    Model out = reconstruct(global, empty);
    CHECK(out.params.values == global.params.values);
}

TEST_CASE("reconstruct applies near-lossless diffs to named blocks only") {
    Model global = test_model(13);
    Model local = global;
    Rng rng(14);
    for (auto& v : local.params.values) v += rng.uniform(-0.2, 0.2);

    // quantize the full diff at tiny beta so the bound d/(2s) is tiny
    QuantizationParams lossless{1e-15, 32};
    auto global_blocks = blocks_of(global);
    auto local_blocks = blocks_of(local);

    SECTION("all blocks: reconstruct approximates the local model") {
        BlockUpdateMessage update;
        update.round = 1;
        for (std::size_t b = 0; b < global_blocks.size(); ++b) {
            ParameterVector block_diff = diff(local_blocks[b].second, global_blocks[b].second);
            update.entries.push_back(
                {global_blocks[b].first, nnadq_quantize(split_by_entry(block_diff), lossless)});
        }
        Model out = reconstruct(global, update);
        for (std::size_t i = 0; i < local.params.size(); ++i)
            CHECK(std::fabs(out.params.values[i] - local.params.values[i]) < 1e-7);
    }

    SECTION("single block: other parameter ranges stay bit-identical") {
        ParameterVector block_diff = diff(local_blocks[1].second, global_blocks[1].second);
        BlockUpdateMessage update;
        update.round = 1;
        update.entries.push_back({"mid", nnadq_quantize(split_by_entry(block_diff), lossless)});
        Model out = reconstruct(global, update);

        std::size_t begin = global.params.layout[2].offset;  // "mid" covers entries 2,3
        std::size_t end = begin + param_count(global_blocks[1].second);
        for (std::size_t i = 0; i < global.params.size(); ++i) {
            if (i < begin || i >= end)
                CHECK(out.params.values[i] == global.params.values[i]);
        }
        bool changed = false;
        for (std::size_t i = begin; i < end; ++i)
            changed |= (out.params.values[i] != global.params.values[i]);
        CHECK(changed);
    }

    SECTION("unknown block names are rejected") {
        BlockUpdateMessage update;
        update.entries.push_back(
            {"nope", nnadq_quantize(split_by_entry(global_blocks[0].second), lossless)});
        CHECK_THROWS_WITH(reconstruct(global, update),
                          Catch::Matchers::ContainsSubstring("unknown block"));
    }
}

TEST_CASE("aggregate takes the sample-weighted mean") {
    Model a = test_model(17);
    Model b = a;

    SECTION("identical models aggregate to themselves") {
        Model out = aggregate({a, b}, {3, 5});
        for (std::size_t i = 0; i < a.params.size(); ++i)
            CHECK(out.params.values[i] == Catch::Approx(a.params.values[i]).epsilon(1e-12));
    }

    SECTION("equal counts give the midpoint") {
        for (auto& v : a.params.values) v = 0.0;
        for (std::size_t i = 0; i < b.params.size(); ++i) b.params.values[i] = (i % 2) ? 4.0 : 2.0;
        Model out = aggregate({a, b}, {1, 1});
        for (std::size_t i = 0; i < out.params.size(); ++i)
            CHECK(out.params.values[i] == ((i % 2) ? 2.0 : 1.0));
    }

    SECTION("counts 1 and 3 weight 0.25/0.75") {
        for (auto& v : a.params.values) v = 0.0;
        for (auto& v : b.params.values) v = 4.0;
        Model out = aggregate({a, b}, {1, 3});
        for (double v : out.params.values) CHECK(v == 3.0);
    }

    SECTION("permutation invariance") {
        Rng rng(18);
        for (auto& v : b.params.values) v = rng.uniform(-1.0, 1.0);
        Model ab = aggregate({a, b}, {2, 7});
        Model ba = aggregate({b, a}, {7, 2});
        for (std::size_t i = 0; i < ab.params.size(); ++i)
            CHECK(ab.params.values[i] == Catch::Approx(ba.params.values[i]).epsilon(1e-12));
    }

    SECTION("errors") {
        CHECK_THROWS(aggregate({}, {}));
        CHECK_THROWS(aggregate({a, b}, {1}));
        CHECK_THROWS(aggregate({a, b}, {1, 0}));
        Model other = test_model(99);
        other.spec.seed = 1234;
        CHECK_THROWS(aggregate({a, other}, {1, 1}));
    }
}

TEST_CASE("ledger accumulates monotonically with per-round breakdown") {
    TransmissionLedger ledger;
    CHECK(ledger.total_bytes() == 0);
    ledger.record(1, Direction::uplink, 0);
    CHECK(ledger.cumulative_uplink_bytes() == 0);

    ledger.record(1, Direction::uplink, 100);
    ledger.record(1, Direction::uplink, 100);
    ledger.record(1, Direction::downlink, 40);
    ledger.record(2, Direction::downlink, 60);
    CHECK(ledger.cumulative_uplink_bytes() == 200);
    CHECK(ledger.cumulative_downlink_bytes() == 100);
    CHECK(ledger.total_bytes() == 300);

    REQUIRE(ledger.per_round().size() == 2);
    CHECK(ledger.per_round()[0].uplink_bytes == 200);
    CHECK(ledger.per_round()[0].downlink_bytes == 40);
    CHECK(ledger.per_round()[1].downlink_bytes == 60);
}
