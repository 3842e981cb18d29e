// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scored-response generator. Ground truth is key-concept presence:
// a response's score is the number of distinct concept groups it expresses,
// clamped to [0, K-1]. Concept tokens, per-item science filler and generic
// filler are disjoint by construction, so the score can be re-derived from
// the clean text. Misspellings are injected from an independent substream so
// the clean rendering of a record is reproducible at misspell_rate 0.

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/corpus.hpp"

namespace edscore {

struct ConceptGroup {
    std::vector<std::string> synonyms;  // any one token expresses the group
};

struct GenItem {
    std::string item_id;
    int num_labels = 2;                  // K
    std::vector<ConceptGroup> concepts;  // >= K-1 groups, or empty for concept-free items
    double mean_length = 20.0;           // words per response
    SplitHint role = SplitHint::finetune;
};

struct GeneratorSpec {
    std::vector<GenItem> items;
    int responses_per_item = 1000;
    double misspell_rate = 0.02;
    double science_density = 0.2;
    double length_jitter = 0.18;              // sd as a fraction of mean_length
    std::vector<std::string> science_pool;    // science lexicon words
    std::vector<std::string> filler_pool;     // everyday words, disjoint from science_pool
};

namespace detail {

constexpr char32_t kGermanAlphabet[] = {U'a', U'b', U'c', U'd', U'e', U'f', U'g', U'h', U'i',
                                        U'j', U'k', U'l', U'm', U'n', U'o', U'p', U'q', U'r',
                                        U's', U't', U'u', U'v', U'w', U'x', U'y', U'z', U'ä',
                                        U'ö', U'ü', U'ß'};
constexpr std::size_t kAlphabetSize = sizeof(kGermanAlphabet) / sizeof(kGermanAlphabet[0]);

inline std::string random_char_edit(const std::string& word, Rng& rng) {
    auto cps = utf8_decode(word);
    if (cps.empty()) return word;
    int op = static_cast<int>(rng.uniform_int(0, 2));
    if (cps.size() == 1 && op == 1) op = 0;  // never delete the only character
    switch (op) {
        case 0: {  // substitute
            const std::size_t pos = rng.index(cps.size());
            char32_t repl = cps[pos];
            while (repl == cps[pos]) repl = kGermanAlphabet[rng.index(kAlphabetSize)];
            cps[pos] = repl;
            break;
        }
        case 1:  // delete
            cps.erase(cps.begin() + static_cast<std::ptrdiff_t>(rng.index(cps.size())));
            break;
        default:  // insert
            cps.insert(cps.begin() + static_cast<std::ptrdiff_t>(rng.index(cps.size() + 1)),
                       kGermanAlphabet[rng.index(kAlphabetSize)]);
            break;
    }
    return utf8_encode(cps);
}

}  // namespace detail

inline void validate_generator_spec(const GeneratorSpec& spec) {
    if (spec.items.empty()) throw DataError("generator spec declares no items");
    if (spec.responses_per_item < 1) throw DataError("responses_per_item must be >= 1");
    if (spec.misspell_rate < 0.0 || spec.misspell_rate > 1.0)
        throw DataError("misspell_rate outside [0, 1]");
    if (spec.filler_pool.empty()) throw DataError("generator filler pool is empty");
    std::set<std::string> seen_ids;
    for (const auto& item : spec.items) {
        if (!seen_ids.insert(item.item_id).second)
            throw DataError("duplicate item id in generator spec: " + item.item_id);
        if (item.num_labels < 2)
            throw DataError("item " + item.item_id + ": num_labels must be >= 2");
        for (const auto& group : item.concepts)
            if (group.synonyms.empty())
                throw DataError("item " + item.item_id + ": empty concept group");
        if (!item.concepts.empty() &&
            static_cast<int>(item.concepts.size()) < item.num_labels - 1)
            throw DataError("item " + item.item_id + ": needs at least K-1 concept groups");
        if (item.mean_length < 4.0)
            throw DataError("item " + item.item_id + ": mean_length must be >= 4");
        std::set<std::string> item_tokens;
        for (const auto& group : item.concepts)
            for (const auto& syn : group.synonyms)
                if (!item_tokens.insert(syn).second)
                    throw DataError("item " + item.item_id + ": concept token '" + syn +
                                    "' appears in two groups");
        for (const auto& w : spec.filler_pool)
            if (item_tokens.count(w))
                throw DataError("item " + item.item_id + ": concept token '" + w +
                                "' is also in the filler pool");
    }
}

// Number of distinct concept groups expressed in a response, clamped to K-1.
// This is the generator's ground-truth rule; tests use it to re-derive labels.
inline int derive_score(const GenItem& item, const std::string& response_text) {
    std::set<std::string> present;
    for (const auto& tok : split_whitespace(lowercase(response_text))) present.insert(tok);
    int groups = 0;
    for (const auto& group : item.concepts) {
        for (const auto& syn : group.synonyms) {
            if (present.count(lowercase(syn))) {
                ++groups;
                break;
            }
        }
    }
    return std::min(groups, item.num_labels - 1);
}

// Deterministic task text for an item: a short question built from the pools,
// avoiding the item's own concept tokens.
inline std::string make_task_text(const GenItem& item, const GeneratorSpec& spec,
                                  std::uint64_t seed, std::size_t item_index) {
    Rng rng(mix_seed(seed, 0x7a5c, item_index, 3));
    std::set<std::string> banned;
    for (const auto& g : item.concepts)
        for (const auto& s : g.synonyms) banned.insert(s);
    auto pick = [&](const std::vector<std::string>& pool) {
        for (int tries = 0; tries < 64; ++tries) {
            const auto& w = pool[rng.index(pool.size())];
            if (!banned.count(w)) return w;
        }
        return pool[0];
    };
    const std::string sci1 = spec.science_pool.empty() ? pick(spec.filler_pool)
                                                       : pick(spec.science_pool);
    const std::string fil1 = pick(spec.filler_pool);
    const std::string fil2 = pick(spec.filler_pool);
    return "erkläre warum " + sci1 + " das " + fil1 + " bei " + fil2 + " verändert";
}

inline std::vector<ScoredResponse> generate_corpus(const GeneratorSpec& spec,
                                                   std::uint64_t seed) {
    validate_generator_spec(spec);
    std::vector<ScoredResponse> out;
    out.reserve(spec.items.size() * static_cast<std::size_t>(spec.responses_per_item));

    for (std::size_t item_idx = 0; item_idx < spec.items.size(); ++item_idx) {
        const GenItem& item = spec.items[item_idx];
        const std::string task = make_task_text(item, spec, seed, item_idx);

        // science words usable as filler for this item: not concept tokens
        std::set<std::string> concept_tokens;
        for (const auto& g : item.concepts)
            for (const auto& s : g.synonyms) concept_tokens.insert(s);
        std::vector<std::string> science_filler;
        for (const auto& w : spec.science_pool)
            if (!concept_tokens.count(w)) science_filler.push_back(w);

        const int K = item.num_labels;
        for (int r = 0; r < spec.responses_per_item; ++r) {
            Rng rng(mix_seed(seed, item_idx, static_cast<std::uint64_t>(r), 0));
            Rng rng_spell(mix_seed(seed, item_idx, static_cast<std::uint64_t>(r), 1));

            // balanced labels: round-robin over [0, K-1]
            const int score = item.concepts.empty() ? 0 : r % K;

            const double jitter = std::max(1.0, item.mean_length * spec.length_jitter);
            int length = static_cast<int>(std::lround(rng.normal(item.mean_length, jitter)));
            length = std::max(length, std::max(4, score + 1));

            std::vector<std::string> words;
            // one synonym from each of `score` distinct groups
            std::vector<std::size_t> group_order(item.concepts.size());
            for (std::size_t g = 0; g < group_order.size(); ++g) group_order[g] = g;
            rng.shuffle(group_order);
            for (int g = 0; g < score; ++g) {
                const auto& group = item.concepts[group_order[static_cast<std::size_t>(g)]];
                words.push_back(group.synonyms[rng.index(group.synonyms.size())]);
            }
            // science filler up to the configured density
            if (!science_filler.empty()) {
                const int sci_target =
                    static_cast<int>(std::lround(spec.science_density * length));
                for (int s = score; s < sci_target && static_cast<int>(words.size()) < length;
                     ++s)
                    words.push_back(science_filler[rng.index(science_filler.size())]);
            }
            while (static_cast<int>(words.size()) < length)
                words.push_back(spec.filler_pool[rng.index(spec.filler_pool.size())]);
            rng.shuffle(words);

            if (spec.misspell_rate > 0.0) {
                for (auto& w : words)
                    if (rng_spell.bernoulli(spec.misspell_rate))
                        w = detail::random_char_edit(w, rng_spell);
            }

            ScoredResponse rec;
            rec.item_id = item.item_id;
            rec.task_text = task;
            rec.response_text.clear();
            for (std::size_t w = 0; w < words.size(); ++w) {
                if (w > 0) rec.response_text += ' ';
                rec.response_text += words[w];
            }
            rec.score = score;
            rec.split_hint = item.role;
            out.push_back(std::move(rec));
        }
    }
    return out;
}

}  // namespace edscore
