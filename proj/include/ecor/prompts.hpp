#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecor/errors.hpp"

namespace ecor {

inline constexpr int kDefaultContextLen = 32;

// Prompt surface forms. R describes rationales alone, CGivenR names the
// category conditioned on rationales, COnly names the category alone,
// RBecauseC inverts the conditioning, and RGivenC reuses the RBecauseC
// surface as the rationale-given-category form.
enum class PromptKind { R, CGivenR, COnly, RBecauseC, RGivenC };

const char* to_string(PromptKind kind);

struct RenderedPrompt {
    PromptKind kind = PromptKind::R;
    std::optional<int> category;
    std::vector<int> rationales;  // ascending ids
    std::string text;
    std::vector<int> tokens;  // padded to the context length used at render time
    bool truncated = false;
};

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kStart = 1;
    static constexpr int kEnd = 2;

    Vocabulary(std::vector<std::string> category_names,
               std::vector<std::string> rationale_names);

    int vocab_size() const { return static_cast<int>(id_to_word_.size()); }
    int num_categories() const { return static_cast<int>(category_names_.size()); }
    int num_rationales() const { return static_cast<int>(rationale_names_.size()); }

    const std::vector<std::string>& category_names() const { return category_names_; }
    const std::vector<std::string>& rationale_names() const { return rationale_names_; }
    const std::string& category_name(int id) const;
    const std::string& rationale_name(int id) const;

    int token_id(const std::string& word) const;

    std::vector<int> tokenize(const std::string& text, int context_len,
                              bool* truncated = nullptr) const;
    std::string detokenize(const std::vector<int>& tokens) const;

    std::string to_json() const;
    static Vocabulary from_json(const std::string& text);

private:
    void add_word(const std::string& word);

    std::vector<std::string> category_names_;
    std::vector<std::string> rationale_names_;
    std::vector<std::string> id_to_word_;
    std::unordered_map<std::string, int> word_to_id_;
};

RenderedPrompt render_prompt_R(const Vocabulary& vocab, std::vector<int> rationales,
                               int context_len = kDefaultContextLen);

RenderedPrompt render_prompt_c_given_R(const Vocabulary& vocab, int category,
                                       std::vector<int> rationales,
                                       int context_len = kDefaultContextLen);

RenderedPrompt render_ablation(const Vocabulary& vocab, PromptKind kind,
                               std::optional<int> category, std::vector<int> rationales,
                               int context_len = kDefaultContextLen);

/// Prompts a softmax of the given kind normalizes over. Kinds conditioned on
/// a category enumerate the cross product categories x rationale_sets in
/// category-major order; R uses one prompt per observed set; COnly one per
/// category.
std::vector<RenderedPrompt> enumerate_normalization_set(
    PromptKind kind, const Vocabulary& vocab,
    const std::vector<std::vector<int>>& rationale_sets,
    int context_len = kDefaultContextLen);

/// Same enumeration restricted to an explicit category list, for worlds that
/// cover only part of the shared vocabulary.
std::vector<RenderedPrompt> enumerate_normalization_set(
    PromptKind kind, const Vocabulary& vocab, const std::vector<int>& categories,
    const std::vector<std::vector<int>>& rationale_sets,
    int context_len = kDefaultContextLen);

}  // namespace ecor
