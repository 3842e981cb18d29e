// SPDX-License-Identifier: Apache-2.0
//
// Prompt templates for scoring fine-tuning: a directive wrapping the response
// to score, the task context, and serialized in-context examples of the form
// `example: <response>, score: <label name>`.

#pragma once

#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/corpus.hpp"

namespace edscore {

struct PromptSpec {
    std::string directive_template = "score this answer: {response}";
    std::string context_template = "task: {task}";
    int num_in_context_examples = 2;
    std::vector<std::string> label_names;  // index = integer score
    int max_example_words = 12;            // serialized example responses are capped

    void validate() const {
        auto count_slot = [](const std::string& tpl, const std::string& slot) {
            std::size_t n = 0, pos = 0;
            while ((pos = tpl.find(slot, pos)) != std::string::npos) {
                ++n;
                pos += slot.size();
            }
            return n;
        };
        if (count_slot(directive_template, "{response}") != 1)
            throw DataError("directive_template must contain {response} exactly once");
        if (count_slot(context_template, "{task}") != 1)
            throw DataError("context_template must contain {task} exactly once");
        if (label_names.size() < 2) throw DataError("prompt spec needs at least 2 label names");
        if (num_in_context_examples < 0)
            throw DataError("num_in_context_examples must be >= 0");
    }

    int label_index(const std::string& name) const {
        for (std::size_t i = 0; i < label_names.size(); ++i)
            if (label_names[i] == name) return static_cast<int>(i);
        return -1;
    }
};

// K label names spread evenly over the poor..extraordinary scale.
inline std::vector<std::string> default_label_names(int num_labels) {
    static const std::vector<std::string> scale = {"poor", "fair", "good", "excellent",
                                                   "extraordinary"};
    if (num_labels < 2 || num_labels > static_cast<int>(scale.size()))
        throw DataError("default_label_names supports 2..5 labels");
    std::vector<std::string> names;
    for (int j = 0; j < num_labels; ++j) {
        const double t = static_cast<double>(j) * static_cast<double>(scale.size() - 1) /
                         static_cast<double>(num_labels - 1);
        names.push_back(scale[static_cast<std::size_t>(std::lround(t))]);
    }
    return names;
}

inline PromptSpec default_prompt_spec(int num_labels) {
    PromptSpec spec;
    spec.label_names = default_label_names(num_labels);
    spec.validate();
    return spec;
}

// Text whose words the subword vocabulary must cover so prompt scaffolding
// does not shatter into characters; callers append it to the vocab-building
// corpus (repeated, so pair merges see it as frequent).
inline std::string prompt_vocabulary_text(const PromptSpec& spec) {
    std::string out = spec.directive_template + " " + spec.context_template + " example : , .";
    for (const auto& name : spec.label_names) out += " " + name;
    return out;
}

struct ContextExample {
    std::string response;
    std::string label_name;
};

struct AssembledInput {
    std::string task_side;      // filled context template + serialized examples
    std::string response_side;  // filled directive template
};

namespace detail {

inline std::string replace_slot(const std::string& tpl, const std::string& slot,
                                const std::string& value) {
    std::string out = tpl;
    const auto pos = out.find(slot);
    out.replace(pos, slot.size(), value);
    return out;
}

inline std::string cap_words(const std::string& text, int max_words) {
    const auto words = split_whitespace(text);
    if (static_cast<int>(words.size()) <= max_words) return text;
    std::string out;
    for (int i = 0; i < max_words; ++i) {
        if (i > 0) out += ' ';
        out += words[static_cast<std::size_t>(i)];
    }
    return out;
}

}  // namespace detail

inline AssembledInput assemble_input(const ScoredResponse& record, const PromptSpec& spec,
                                     const std::vector<ContextExample>& context_examples) {
    spec.validate();
    AssembledInput out;
    out.task_side = detail::replace_slot(spec.context_template, "{task}", record.task_text);
    for (const auto& ex : context_examples) {
        if (spec.label_index(ex.label_name) < 0)
            throw DataError("context example uses unknown label name: " + ex.label_name);
        if (ex.response == record.response_text)
            throw DataError("record's own response appears in its context examples");
        out.task_side += " example: " + detail::cap_words(ex.response, spec.max_example_words) +
                         " , score: " + ex.label_name;
    }
    out.response_side =
        detail::replace_slot(spec.directive_template, "{response}", record.response_text);
    return out;
}

}  // namespace edscore
