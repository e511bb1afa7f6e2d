#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedobd/model.hpp"
#include "fedobd/tensor.hpp"

namespace fedobd {

// A block scored for retention: its importance, parameter count and the
// local (post-training) values.
struct ScoredBlock {
    std::string block_name;
    double mbd = 0.0;
    std::size_t size = 0;
    ParameterVector payload;
};

// Mean Block Difference: L2 norm of the block's change divided by its
// parameter count. Larger means the block learned more this round.
inline double mbd(const ParameterVector& block_old, const ParameterVector& block_new) {
    if (!block_old.same_layout(block_new)) throw std::invalid_argument("incompatible shapes");
    return l2_norm(diff(block_old, block_new)) / static_cast<double>(param_count(block_old));
}

// Greedy opportunistic selection: pop blocks in descending MBD order (ties by
// declaration order) and keep each one that still fits the (1-lambda) size
// budget; oversized blocks are skipped and iteration continues.
inline std::vector<ScoredBlock> select_blocks(const Model& global_model, const Model& local_model,
                                              double lambda) {
    if (!(global_model.spec == local_model.spec))
        throw std::invalid_argument("model specs do not match");
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("dropout rate must be in [0, 1]");

    auto global_blocks = blocks_of(global_model);
    auto local_blocks = blocks_of(local_model);

    std::vector<ScoredBlock> scored;
    scored.reserve(local_blocks.size());
    for (std::size_t b = 0; b < local_blocks.size(); ++b) {
        ScoredBlock sb;
        sb.block_name = local_blocks[b].first;
        sb.mbd = mbd(global_blocks[b].second, local_blocks[b].second);
        sb.size = param_count(local_blocks[b].second);
        sb.payload = std::move(local_blocks[b].second);
        scored.push_back(std::move(sb));
    }
    // stable sort keeps declaration order among equal scores
    std::stable_sort(scored.begin(), scored.end(),
                     [](const ScoredBlock& a, const ScoredBlock& b) { return a.mbd > b.mbd; });

    double budget = (1.0 - lambda) * static_cast<double>(param_count(local_model.params));
    std::vector<ScoredBlock> retained;
    std::size_t kept_size = 0;
    for (auto& sb : scored) {
        if (static_cast<double>(kept_size + sb.size) > budget) continue;
        kept_size += sb.size;
        retained.push_back(std::move(sb));
    }
    return retained;
}

}  // namespace fedobd
