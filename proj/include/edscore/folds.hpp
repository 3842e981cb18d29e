// SPDX-License-Identifier: Apache-2.0
//
// Stratified k-fold plan with the 3/1/1 rotation scheme: rotation r tests on
// fold r, validates on fold (r+1) mod k, trains on the rest.

#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/corpus.hpp"

namespace edscore {

struct FoldPlan {
    int k = 0;
    std::vector<std::vector<int>> folds;  // record indices per fold

    std::vector<int> test_fold(int rotation) const { return folds[index(rotation)]; }

    std::vector<int> validation_fold(int rotation) const {
        return folds[index((rotation + 1) % k)];
    }

    std::vector<int> training_records(int rotation) const {
        std::vector<int> out;
        const std::size_t test = index(rotation);
        const std::size_t val = index((rotation + 1) % k);
        for (std::size_t f = 0; f < folds.size(); ++f) {
            if (f == test || f == val) continue;
            out.insert(out.end(), folds[f].begin(), folds[f].end());
        }
        return out;
    }

  private:
    std::size_t index(int rotation) const {
        if (rotation < 0 || rotation >= k) throw DataError("fold rotation out of range");
        return static_cast<std::size_t>(rotation);
    }
};

// Stratified split: shuffle each label's records, then deal them to folds in
// round-robin order with a cursor shared across labels (keeps both label
// proportions and fold sizes within one record of balance).
inline FoldPlan make_folds(const std::vector<ScoredResponse>& records, int k,
                           std::uint64_t seed) {
    if (k < 2) throw DataError("make_folds: k must be >= 2");
    if (static_cast<int>(records.size()) < k)
        throw DataError("make_folds: fewer records than folds");

    std::map<int, std::vector<int>> by_label;
    for (std::size_t i = 0; i < records.size(); ++i)
        by_label[records[i].score].push_back(static_cast<int>(i));

    FoldPlan plan;
    plan.k = k;
    plan.folds.assign(static_cast<std::size_t>(k), {});
    int cursor = 0;
    for (auto& [label, indices] : by_label) {
        Rng rng(mix_seed(seed, 0xf01d, static_cast<std::uint64_t>(label), 0));
        rng.shuffle(indices);
        for (int idx : indices) {
            plan.folds[static_cast<std::size_t>(cursor % k)].push_back(idx);
            ++cursor;
        }
    }
    return plan;
}

}  // namespace edscore
