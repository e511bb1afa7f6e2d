#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedobd/block_dropout.hpp"
#include "fedobd/rng.hpp"

using namespace fedobd;

namespace {

ParameterVector pv(std::vector<double> values) {
    return flatten({{"b", std::move(values), {}}});
}

// dims {3,1,1,2} gives blocks of sizes 4 (layer1), 2 (layer2), 4 (head)
Model hand_trace_global() {
    ModelSpec spec{{3, 1, 1, 2},
                   {{"b1", {"layer1"}}, {"b3", {"layer2"}}, {"b2", {"head"}}},
                   1};
    return init_model(spec);
}

// Sets block diffs so MBD(b1)=0.9, MBD(b3)=0.8, MBD(b2)=0.5:
// ||diff|| = mbd * size, mass on the first element of each block.
Model hand_trace_local(const Model& global) {
    Model local = global;
    local.params.values[0] += 0.9 * 4;  // b1: size 4
    local.params.values[4] += 0.8 * 2;  // b3: size 2
    local.params.values[6] += 0.5 * 4;  // b2: size 4
    return local;
}

Model random_model(std::uint64_t seed) {
    ModelSpec spec{{5, 7, 4, 3},
                   {{"front", {"layer1"}}, {"mid", {"layer2"}}, {"top", {"head"}}},
                   seed};
    return init_model(spec);
}

Model perturbed(const Model& m, std::uint64_t seed) {
    Rng rng(seed);
    Model out = m;
    for (auto& v : out.params.values) v += rng.uniform(-0.5, 0.5);
    return out;
}

}  // namespace

TEST_CASE("mbd examples") {
    CHECK(mbd(pv({1.0, -2.0, 3.0}), pv({1.0, -2.0, 3.0})) == 0.0);
    CHECK(mbd(pv({0.0, 0.0}), pv({3.0, 4.0})) == 2.5);  // 5/2

    // scaling the difference scales MBD linearly
    double base = mbd(pv({0.0, 0.0}), pv({1.0, 2.0}));
    double scaled = mbd(pv({0.0, 0.0}), pv({-3.0, -6.0}));
    CHECK(scaled == Catch::Approx(3.0 * base).epsilon(1e-12));

    CHECK_THROWS_WITH(mbd(pv({1.0}), pv({1.0, 2.0})), "incompatible shapes");
}

TEST_CASE("select_blocks hand trace: budget 7 retains b1 then b3") {
    Model global = hand_trace_global();
    Model local = hand_trace_local(global);
    REQUIRE(param_count(global.params) == 10);

    auto retained = select_blocks(global, local, 0.3);  // budget (1-0.3)*10 = 7
    REQUIRE(retained.size() == 2);
    CHECK(retained[0].block_name == "b1");  // mbd 0.9, size 4
    CHECK(retained[1].block_name == "b3");  // mbd 0.8, size 2; b2 (size 4) would overflow
    CHECK(retained[0].mbd == Catch::Approx(0.9).epsilon(1e-12));
    CHECK(retained[1].mbd == Catch::Approx(0.8).epsilon(1e-12));
    CHECK(retained[0].size + retained[1].size == 6);
}

TEST_CASE("lambda 0 keeps every block, lambda 1 keeps none") {
    Model global = random_model(3);
    Model local = perturbed(global, 4);

    auto all = select_blocks(global, local, 0.0);
    CHECK(all.size() == 3);
    std::size_t total = 0;
    for (const auto& sb : all) total += sb.size;
    CHECK(total == param_count(global.params));

    CHECK(select_blocks(global, local, 1.0).empty());
}

TEST_CASE("retained payloads with lambda 0 reconstruct the local model") {
    Model global = random_model(7);
    Model local = perturbed(global, 8);
    auto retained = select_blocks(global, local, 0.0);

    // reassemble by block name in declaration order
    auto local_blocks = blocks_of(local);
    for (const auto& [name, expected] : local_blocks) {
        bool found = false;
        for (const auto& sb : retained)
            if (sb.block_name == name) {
                CHECK(sb.payload.values == expected.values);
                found = true;
            }
        CHECK(found);
    }
}

TEST_CASE("budget holds for every lambda on random models") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Model global = random_model(seed + 10);
        Model local = perturbed(global, seed + 100);
        std::size_t total = param_count(global.params);
        for (int tenth = 0; tenth <= 10; ++tenth) {
            double lambda = tenth / 10.0;
            auto retained = select_blocks(global, local, lambda);
            std::size_t kept = 0;
            for (const auto& sb : retained) kept += sb.size;
            CHECK(static_cast<double>(kept) <= (1.0 - lambda) * static_cast<double>(total));
        }
    }
}

TEST_CASE("greedy dominance: skips only happen on budget overflow") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Model global = random_model(seed + 30);
        Model local = perturbed(global, seed + 300);
        double lambda = 0.4;
        auto retained = select_blocks(global, local, lambda);

        // replay the greedy trace over all blocks sorted by mbd descending
        auto gb = blocks_of(global);
        auto lb = blocks_of(local);
        std::vector<ScoredBlock> scored;
        for (std::size_t i = 0; i < gb.size(); ++i)
            scored.push_back({lb[i].first, mbd(gb[i].second, lb[i].second),
                              param_count(lb[i].second), lb[i].second});
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.mbd > b.mbd; });
        double budget = (1.0 - lambda) * static_cast<double>(param_count(global.params));
        std::size_t kept = 0, next_retained = 0;
        for (const auto& sb : scored) {
            if (static_cast<double>(kept + sb.size) > budget) {
                // must not appear in the result
                for (const auto& r : retained) CHECK(r.block_name != sb.block_name);
            } else {
                REQUIRE(next_retained < retained.size());
                CHECK(retained[next_retained].block_name == sb.block_name);
                ++next_retained;
                kept += sb.size;
            }
        }
        CHECK(next_retained == retained.size());
    }
}

TEST_CASE("equal scores break ties by declaration order") {
    Model global = hand_trace_global();
    for (auto& v : global.params.values) v = 0.0;  // exact diffs below
    Model local = global;
    // uniform per-parameter diff: MBD = 0.1/sqrt(size), so the two size-4
    // blocks b1 and b2 tie exactly; b3 (size 2) scores higher
    for (auto& v : local.params.values) v = 0.1;
    auto retained = select_blocks(global, local, 0.0);
    REQUIRE(retained.size() == 3);
    CHECK(retained[0].block_name == "b3");
    CHECK(retained[1].block_name == "b1");  // declared before b2
    CHECK(retained[2].block_name == "b2");
    CHECK(retained[1].mbd == retained[2].mbd);
}

TEST_CASE("select_blocks validates its inputs") {
    Model global = random_model(50);
    Model local = perturbed(global, 51);
    CHECK_THROWS(select_blocks(global, local, -0.1));
    CHECK_THROWS(select_blocks(global, local, 1.1));

    Model other = random_model(52);
    other.spec.seed = 999;  // different spec
    CHECK_THROWS(select_blocks(other, local, 0.5));
}
