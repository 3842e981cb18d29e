// SPDX-License-Identifier: Apache-2.0
//
// Subword vocabulary and paired-segment encoding. The vocabulary is built by
// iterative pair merging over a lowercased corpus (ties broken
// lexicographically, so builds are deterministic); segmentation is greedy
// longest-match-first with `##` continuation pieces. Sequences are laid out
// as [CLS] task [SEP] response [SEP] with segment ids 0/1 and right-padding.

#pragma once

#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "edscore/common.hpp"

namespace edscore {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr const char* kReservedTokens[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

class Vocab {
  public:
    Vocab() = default;

    explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        if (tokens_.size() < 5) throw DataError("vocab must contain the 5 reserved tokens");
        for (int i = 0; i < 5; ++i)
            if (tokens_[static_cast<std::size_t>(i)] != kReservedTokens[i])
                throw DataError("vocab reserved token mismatch at id " + std::to_string(i));
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i].empty()) throw DataError("vocab contains an empty token");
            if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
                throw DataError("vocab contains duplicate token: " + tokens_[i]);
        }
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    int id_of(const std::string& tok) const {
        const auto it = ids_.find(tok);
        return it == ids_.end() ? -1 : it->second;
    }

    bool contains(const std::string& tok) const { return ids_.count(tok) != 0; }

    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// pre-tokenization: lowercase, split on whitespace, punctuation as own words
// ---------------------------------------------------------------------------

inline std::vector<std::string> pretokenize(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char32_t cp : utf8_decode(text)) {
        cp = to_lower_cp(cp);
        if (cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r') {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        } else if (is_letter_cp(cp) || is_digit_cp(cp)) {
            utf8_append(current, cp);
        } else {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
            std::string punct;
            utf8_append(punct, cp);
            words.push_back(std::move(punct));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

// ---------------------------------------------------------------------------
// vocabulary construction
// ---------------------------------------------------------------------------

inline Vocab build_vocab(const std::vector<std::string>& corpus, int target_size) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");

    // word frequencies (std::map keeps iteration deterministic)
    std::map<std::string, long> word_freq;
    for (const auto& doc : corpus)
        for (auto& w : pretokenize(doc)) word_freq[w] += 1;
    if (word_freq.empty()) throw DataError("build_vocab: corpus has no tokens");

    // alphabet: plain form for word-initial characters, ## form for continuations
    std::map<std::string, bool> seen_char;  // utf8 char -> true
    for (const auto& [word, freq] : word_freq) {
        (void)freq;
        for (char32_t cp : utf8_decode(word)) {
            std::string c;
            utf8_append(c, cp);
            seen_char[c] = true;
        }
    }
    const int min_size = 5 + static_cast<int>(seen_char.size());
    if (target_size < min_size)
        throw DataError("build_vocab: target_size " + std::to_string(target_size) +
                        " below 5 + distinct characters (" + std::to_string(min_size) + ")");

    std::vector<std::string> tokens(std::begin(kReservedTokens), std::end(kReservedTokens));
    for (const auto& [c, _] : seen_char) tokens.push_back(c);
    for (const auto& [c, _] : seen_char) {
        if (static_cast<int>(tokens.size()) >= target_size) break;
        tokens.push_back("##" + c);
    }

    // represent every word as its current symbol sequence
    struct WordSyms {
        std::vector<std::string> syms;
        long freq;
    };
    std::vector<WordSyms> words;
    words.reserve(word_freq.size());
    for (const auto& [word, freq] : word_freq) {
        WordSyms ws;
        ws.freq = freq;
        bool first = true;
        for (char32_t cp : utf8_decode(word)) {
            std::string c = first ? "" : "##";
            utf8_append(c, cp);
            ws.syms.push_back(std::move(c));
            first = false;
        }
        words.push_back(std::move(ws));
    }

    auto strip_cont = [](const std::string& s) {
        return s.rfind("##", 0) == 0 ? s.substr(2) : s;
    };

    std::map<std::string, int> token_set;
    for (const auto& t : tokens) token_set[t] = 1;

    while (static_cast<int>(tokens.size()) < target_size) {
        // most frequent adjacent pair, lexicographic tie-break
        std::map<std::pair<std::string, std::string>, long> pair_freq;
        for (const auto& ws : words)
            for (std::size_t i = 0; i + 1 < ws.syms.size(); ++i)
                pair_freq[{ws.syms[i], ws.syms[i + 1]}] += ws.freq;

        std::pair<std::string, std::string> best;
        long best_freq = 0;
        for (const auto& [pair, freq] : pair_freq) {
            const std::string merged_check = pair.first + strip_cont(pair.second);
            if (token_set.count(merged_check)) continue;  // already a token
            if (freq > best_freq) {
                best = pair;
                best_freq = freq;
            }
        }
        if (best_freq < 2) break;  // nothing left worth merging

        const std::string merged = best.first + strip_cont(best.second);
        tokens.push_back(merged);
        token_set[merged] = 1;
        for (auto& ws : words) {
            for (std::size_t i = 0; i + 1 < ws.syms.size();) {
                if (ws.syms[i] == best.first && ws.syms[i + 1] == best.second) {
                    ws.syms[i] = merged;
                    ws.syms.erase(ws.syms.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                } else {
                    ++i;
                }
            }
        }
    }
    return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------
// segmentation
// ---------------------------------------------------------------------------

inline std::vector<std::string> tokenize_word(const std::string& word, const Vocab& vocab) {
    if (word.empty()) throw DataError("tokenize_word: empty word");
    const auto cps = utf8_decode(word);
    if (cps.size() > 100) return {kReservedTokens[kUnkId]};

    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < cps.size()) {
        std::size_t end = cps.size();
        std::string found;
        while (end > start) {
            std::string piece = start > 0 ? "##" : "";
            for (std::size_t i = start; i < end; ++i) utf8_append(piece, cps[i]);
            if (vocab.contains(piece)) {
                found = std::move(piece);
                break;
            }
            --end;
        }
        if (found.empty()) return {kReservedTokens[kUnkId]};
        pieces.push_back(std::move(found));
        start = end;
    }
    return pieces;
}

inline std::vector<int> tokenize_text(std::string_view text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const auto& word : pretokenize(text))
        for (const auto& piece : tokenize_word(word, vocab)) ids.push_back(vocab.id_of(piece));
    return ids;
}

// ---------------------------------------------------------------------------
// paired-segment encoding
// ---------------------------------------------------------------------------

struct TokenizedPair {
    std::vector<int> token_ids;
    std::vector<int> segment_ids;     // 0: [CLS]+task+first [SEP]; 1: response+final [SEP]
    std::vector<int> attention_mask;  // 1 on real positions, 0 on padding
    bool truncated = false;

    int length() const { return static_cast<int>(token_ids.size()); }

    int real_length() const {
        int n = 0;
        for (int m : attention_mask) n += m;
        return n;
    }
};

inline TokenizedPair encode_pair(std::string_view task, std::string_view response,
                                 const Vocab& vocab, int max_len) {
    if (max_len < 8) throw DataError("encode_pair: max_len must be >= 8");

    std::vector<int> task_ids = tokenize_text(task, vocab);
    std::vector<int> resp_ids = tokenize_text(response, vocab);

    TokenizedPair out;
    const int budget = max_len - 3;  // [CLS] + 2x[SEP]
    if (static_cast<int>(task_ids.size() + resp_ids.size()) > budget) {
        out.truncated = true;
        // response truncated from the right first, then the task
        if (static_cast<int>(task_ids.size()) >= budget) {
            task_ids.resize(static_cast<std::size_t>(budget));
            resp_ids.clear();
        } else {
            resp_ids.resize(static_cast<std::size_t>(budget) - task_ids.size());
        }
    }

    out.token_ids.reserve(static_cast<std::size_t>(max_len));
    out.token_ids.push_back(kClsId);
    out.token_ids.insert(out.token_ids.end(), task_ids.begin(), task_ids.end());
    out.token_ids.push_back(kSepId);
    const int seg0_len = static_cast<int>(out.token_ids.size());
    out.token_ids.insert(out.token_ids.end(), resp_ids.begin(), resp_ids.end());
    out.token_ids.push_back(kSepId);
    const int real_len = static_cast<int>(out.token_ids.size());

    out.segment_ids.assign(static_cast<std::size_t>(seg0_len), 0);
    out.segment_ids.resize(static_cast<std::size_t>(real_len), 1);
    out.attention_mask.assign(static_cast<std::size_t>(real_len), 1);

    out.token_ids.resize(static_cast<std::size_t>(max_len), kPadId);
    out.segment_ids.resize(static_cast<std::size_t>(max_len), 0);
    out.attention_mask.resize(static_cast<std::size_t>(max_len), 0);
    return out;
}

// ---------------------------------------------------------------------------
// vocab file: one token per line, line number = id
// ---------------------------------------------------------------------------

inline void save_vocab(const std::filesystem::path& path, const Vocab& vocab) {
    std::string out;
    for (const auto& tok : vocab.tokens()) {
        out += tok;
        out += '\n';
    }
    write_text_file(path, out);
}

inline Vocab load_vocab(const std::filesystem::path& path) {
    std::vector<std::string> tokens = read_lines(path);
    while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    return Vocab(std::move(tokens));
}

}  // namespace edscore
