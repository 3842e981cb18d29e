// SPDX-License-Identifier: Apache-2.0
//
// Dataset model and ingestion: scored constructed responses, item metadata,
// lexicon files, spelling normalization and the two per-item text features
// used by the evaluation (mean response length, scientific word rate).

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "edscore/common.hpp"

namespace edscore {

enum class SplitHint { pretrain, finetune };

struct ScoredResponse {
    std::string item_id;
    std::string task_text;
    std::string response_text;
    int score = 0;
    std::optional<SplitHint> split_hint;
};

struct ItemMeta {
    std::string item_id;
    int num_labels = 0;
    long n_train = 0;
    long n_test = 0;
};

struct Lexicon {
    std::set<std::string> words;  // lowercased, NFC

    bool contains(const std::string& w) const { return words.count(w) != 0; }
    bool empty() const { return words.empty(); }
    std::size_t size() const { return words.size(); }
};

// ---------------------------------------------------------------------------
// lexicon files: one word per line, UTF-8
// ---------------------------------------------------------------------------

inline Lexicon load_lexicon(const std::filesystem::path& path) {
    Lexicon lex;
    for (const auto& raw : read_lines(path)) {
        const std::string w = trim(raw);
        if (w.empty() || w[0] == '#') continue;
        lex.words.insert(lowercase(w));
    }
    if (lex.empty()) throw DataError("lexicon file has no words: " + path.string());
    return lex;
}

inline void save_lexicon(const std::filesystem::path& path, const Lexicon& lex) {
    std::string out;
    for (const auto& w : lex.words) {
        out += w;
        out += '\n';
    }
    write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// dataset files: item_id \t task \t response \t score, '#' lines are comments.
// gen-corpus writes per-item label counts as `#meta item=<id> labels=<K>`
// comments; when present they bound the legal score range.
// ---------------------------------------------------------------------------

struct LoadedDataset {
    std::vector<ScoredResponse> records;
    std::map<std::string, int> labels_by_item;  // from #meta comments
};

inline LoadedDataset load_dataset_full(const std::filesystem::path& path) {
    std::vector<ScoredResponse> records;
    std::vector<std::size_t> record_lines;
    std::map<std::string, int> labels_by_item;
    const auto lines = read_lines(path);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string& line = lines[ln];
        const std::string pos = path.string() + ":" + std::to_string(ln + 1);
        if (trim(line).empty()) continue;
        if (line[0] == '#') {
            // #meta item=<id> labels=<K>
            const auto fields = split_whitespace(line);
            if (fields.size() >= 3 && fields[0] == "#meta") {
                std::string item;
                int k = 0;
                for (const auto& f : fields) {
                    if (f.rfind("item=", 0) == 0) item = f.substr(5);
                    if (f.rfind("labels=", 0) == 0)
                        k = static_cast<int>(parse_long(f.substr(7), pos + " labels"));
                }
                if (!item.empty() && k >= 2) labels_by_item[item] = k;
            }
            continue;
        }
        const auto fields = split_on(line, '\t');
        if (fields.size() != 4)
            throw DataError(pos + ": expected 4 tab-separated fields, got " +
                            std::to_string(fields.size()));
        ScoredResponse rec;
        rec.item_id = fields[0];
        rec.task_text = fields[1];
        rec.response_text = fields[2];
        rec.score = static_cast<int>(parse_long(fields[3], pos + " score"));
        if (rec.item_id.empty()) throw DataError(pos + ": empty item id");
        if (trim(rec.response_text).empty()) throw DataError(pos + ": empty response text");
        if (rec.score < 0) throw DataError(pos + ": negative score");
        records.push_back(std::move(rec));
        record_lines.push_back(ln + 1);
    }

    // items scored 1..K instead of 0..K-1 are shifted down at ingestion
    std::map<std::string, std::pair<int, int>> score_range;  // item -> (min, max)
    for (const auto& rec : records) {
        auto it = score_range.find(rec.item_id);
        if (it == score_range.end()) {
            score_range[rec.item_id] = {rec.score, rec.score};
        } else {
            it->second.first = std::min(it->second.first, rec.score);
            it->second.second = std::max(it->second.second, rec.score);
        }
    }
    std::set<std::string> shifted;
    for (const auto& [item, k] : labels_by_item) {
        const auto it = score_range.find(item);
        if (it == score_range.end()) continue;
        if (it->second.first >= 1 && it->second.second == k) shifted.insert(item);
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& rec = records[i];
        if (shifted.count(rec.item_id)) rec.score -= 1;
        const auto it = labels_by_item.find(rec.item_id);
        if (it != labels_by_item.end() && rec.score >= it->second)
            throw DataError(path.string() + ":" + std::to_string(record_lines[i]) + ": score " +
                            std::to_string(shifted.count(rec.item_id) ? rec.score + 1 : rec.score) +
                            " outside label range of item " + rec.item_id + " (" +
                            std::to_string(it->second) + " labels)");
    }
    return {std::move(records), std::move(labels_by_item)};
}

inline std::vector<ScoredResponse> load_dataset(const std::filesystem::path& path) {
    return load_dataset_full(path).records;
}

inline void save_dataset(const std::filesystem::path& path,
                         const std::vector<ScoredResponse>& records,
                         const std::map<std::string, int>& labels_by_item) {
    std::string out;
    for (const auto& [item, k] : labels_by_item) {
        out += "#meta item=" + item + " labels=" + std::to_string(k) + "\n";
    }
    for (const auto& rec : records) {
        if (rec.task_text.find_first_of("\t\n") != std::string::npos ||
            rec.response_text.find_first_of("\t\n") != std::string::npos)
            throw DataError("embedded tab or newline in record of item " + rec.item_id);
        out += rec.item_id;
        out += '\t';
        out += rec.task_text;
        out += '\t';
        out += rec.response_text;
        out += '\t';
        out += std::to_string(rec.score);
        out += '\n';
    }
    write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// spelling normalization
//
// A token outside the lexicon is replaced by its unique lexicon neighbor at
// Levenshtein distance 1; ties and misses leave it unchanged. Lookup strips
// surrounding punctuation and lowercases; the replacement inherits the
// original first-letter casing.
// ---------------------------------------------------------------------------

namespace detail {

inline bool edit_distance_is_one(const std::vector<char32_t>& a, const std::vector<char32_t>& b) {
    const std::size_t la = a.size(), lb = b.size();
    if (la == lb) {
        std::size_t diff = 0;
        for (std::size_t i = 0; i < la; ++i)
            if (a[i] != b[i] && ++diff > 1) return false;
        return diff == 1;
    }
    const auto& s = la < lb ? a : b;  // shorter
    const auto& l = la < lb ? b : a;  // longer
    if (l.size() - s.size() != 1) return false;
    std::size_t i = 0, j = 0;
    bool skipped = false;
    while (i < s.size() && j < l.size()) {
        if (s[i] == l[j]) {
            ++i;
            ++j;
        } else if (!skipped) {
            skipped = true;
            ++j;
        } else {
            return false;
        }
    }
    return true;
}

struct TokenParts {
    std::vector<char32_t> prefix;  // leading punctuation
    std::vector<char32_t> core;
    std::vector<char32_t> suffix;  // trailing punctuation
};

inline TokenParts split_token(const std::string& token) {
    TokenParts parts;
    const auto cps = utf8_decode(token);
    std::size_t a = 0, b = cps.size();
    while (a < b && !is_letter_cp(cps[a]) && !is_digit_cp(cps[a])) ++a;
    while (b > a && !is_letter_cp(cps[b - 1]) && !is_digit_cp(cps[b - 1])) --b;
    parts.prefix.assign(cps.begin(), cps.begin() + static_cast<std::ptrdiff_t>(a));
    parts.core.assign(cps.begin() + static_cast<std::ptrdiff_t>(a),
                      cps.begin() + static_cast<std::ptrdiff_t>(b));
    parts.suffix.assign(cps.begin() + static_cast<std::ptrdiff_t>(b), cps.end());
    return parts;
}

}  // namespace detail

inline std::string correct_spelling(const std::string& text, const Lexicon& lexicon) {
    if (lexicon.empty()) throw DataError("correct_spelling: empty lexicon");
    const auto tokens = split_whitespace(text);
    std::string out;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (t > 0) out += ' ';
        const auto parts = detail::split_token(tokens[t]);
        if (parts.core.empty()) {
            out += tokens[t];
            continue;
        }
        auto lower = parts.core;
        for (auto& cp : lower) cp = to_lower_cp(cp);
        if (lexicon.contains(utf8_encode(lower))) {
            out += tokens[t];
            continue;
        }
        std::string unique_hit;
        int hits = 0;
        for (const auto& w : lexicon.words) {
            const auto wcps = utf8_decode(w);
            if (wcps.size() + 1 < lower.size() || lower.size() + 1 < wcps.size()) continue;
            if (detail::edit_distance_is_one(lower, wcps)) {
                if (++hits > 1) break;
                unique_hit = w;
            }
        }
        if (hits == 1) {
            auto rep = utf8_decode(unique_hit);
            if (is_upper_cp(parts.core[0])) rep[0] = to_upper_cp(rep[0]);
            out += utf8_encode(parts.prefix);
            out += utf8_encode(rep);
            out += utf8_encode(parts.suffix);
        } else {
            out += tokens[t];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// text features (Fig.-2 covariates)
// ---------------------------------------------------------------------------

inline double avg_response_length(const std::vector<std::string>& responses) {
    if (responses.empty()) throw DataError("avg_response_length: empty response list");
    double total = 0.0;
    for (const auto& r : responses) total += static_cast<double>(split_whitespace(r).size());
    return total / static_cast<double>(responses.size());
}

inline double scientific_word_rate(const std::vector<std::string>& responses,
                                   const Lexicon& science_lexicon) {
    if (responses.empty()) throw DataError("scientific_word_rate: empty response list");
    double total = 0.0;
    for (const auto& r : responses) {
        for (const auto& tok : split_whitespace(r)) {
            const auto parts = detail::split_token(tok);
            if (parts.core.empty()) continue;
            auto lower = parts.core;
            for (auto& cp : lower) cp = to_lower_cp(cp);
            if (science_lexicon.contains(utf8_encode(lower))) total += 1.0;
        }
    }
    return total / static_cast<double>(responses.size());
}

}  // namespace edscore
