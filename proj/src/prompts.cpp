#include "ecor/prompts.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"

namespace ecor {

namespace {

const std::vector<std::string>& filler_words() {
    // Fixed order so token ids are reproducible across runs.
    static const std::vector<std::string> words = {
        "This", "There", "this", "there", "is",  "are", "a",
        "photo", "of",    "because", "and", "in", "the", ".",
    };
    return words;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string chunk;
    while (is >> chunk) {
        if (chunk.size() > 1 && chunk.back() == '.') {
            out.push_back(chunk.substr(0, chunk.size() - 1));
            out.push_back(".");
        } else {
            out.push_back(chunk);
        }
    }
    return out;
}

std::vector<int> checked_sorted_set(const Vocabulary& vocab, std::vector<int> rationales,
                                    const char* op) {
    if (rationales.empty()) {
        throw contract_error(std::string(op) + ": rationale list is empty");
    }
    std::sort(rationales.begin(), rationales.end());
    for (size_t i = 0; i < rationales.size(); ++i) {
        if (rationales[i] < 0 || rationales[i] >= vocab.num_rationales()) {
            throw lookup_error(std::string(op) + ": rationale id " +
                               std::to_string(rationales[i]) + " out of range");
        }
        if (i > 0 && rationales[i] == rationales[i - 1]) {
            throw contract_error(std::string(op) + ": duplicate rationale id " +
                                 std::to_string(rationales[i]));
        }
    }
    return rationales;
}

std::string join_names(const Vocabulary& vocab, const std::vector<int>& rationales) {
    std::string out;
    for (size_t i = 0; i < rationales.size(); ++i) {
        if (i > 0) out += " and ";
        out += vocab.rationale_name(rationales[i]);
    }
    return out;
}

RenderedPrompt finish(const Vocabulary& vocab, PromptKind kind, std::optional<int> category,
                      std::vector<int> rationales, std::string text, int context_len) {
    RenderedPrompt p;
    p.kind = kind;
    p.category = category;
    p.rationales = std::move(rationales);
    p.tokens = vocab.tokenize(text, context_len, &p.truncated);
    p.text = std::move(text);
    return p;
}

}  // namespace

const char* to_string(PromptKind kind) {
    switch (kind) {
        case PromptKind::R: return "R";
        case PromptKind::CGivenR: return "C_GIVEN_R";
        case PromptKind::COnly: return "C_ONLY";
        case PromptKind::RBecauseC: return "R_BECAUSE_C";
        case PromptKind::RGivenC: return "R_GIVEN_C";
    }
    return "?";
}

Vocabulary::Vocabulary(std::vector<std::string> category_names,
                       std::vector<std::string> rationale_names)
    : category_names_(std::move(category_names)), rationale_names_(std::move(rationale_names)) {
    for (const auto* list : {&category_names_, &rationale_names_}) {
        for (size_t i = 0; i < list->size(); ++i) {
            if ((*list)[i].empty()) {
                throw contract_error("Vocabulary: empty name at index " + std::to_string(i));
            }
            for (size_t j = 0; j < i; ++j) {
                if ((*list)[i] == (*list)[j]) {
                    throw contract_error("Vocabulary: duplicate name '" + (*list)[i] + "'");
                }
            }
        }
    }
    id_to_word_ = {"<pad>", "<start>", "<end>"};
    for (int i = 0; i < static_cast<int>(id_to_word_.size()); ++i) {
        word_to_id_[id_to_word_[i]] = i;
    }
    for (const std::string& w : filler_words()) add_word(w);
    for (const auto* list : {&category_names_, &rationale_names_}) {
        for (const std::string& name : *list) {
            for (const std::string& w : split_words(name)) {
                if (w.front() == '<') {
                    throw contract_error("Vocabulary: name word '" + w +
                                         "' collides with marker tokens");
                }
                add_word(w);
            }
        }
    }
}

void Vocabulary::add_word(const std::string& word) {
    if (word_to_id_.count(word)) return;
    word_to_id_[word] = static_cast<int>(id_to_word_.size());
    id_to_word_.push_back(word);
}

const std::string& Vocabulary::category_name(int id) const {
    if (id < 0 || id >= num_categories()) {
        throw lookup_error("category id " + std::to_string(id) + " out of range [0," +
                           std::to_string(num_categories()) + ")");
    }
    return category_names_[id];
}

const std::string& Vocabulary::rationale_name(int id) const {
    if (id < 0 || id >= num_rationales()) {
        throw lookup_error("rationale id " + std::to_string(id) + " out of range [0," +
                           std::to_string(num_rationales()) + ")");
    }
    return rationale_names_[id];
}

int Vocabulary::token_id(const std::string& word) const {
    auto it = word_to_id_.find(word);
    if (it == word_to_id_.end()) {
        throw lookup_error("word '" + word + "' is not in the vocabulary");
    }
    return it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text, int context_len,
                                      bool* truncated) const {
    if (context_len < 2) {
        throw contract_error("tokenize: context length must be at least 2");
    }
    std::vector<int> ids;
    ids.reserve(context_len);
    ids.push_back(kStart);
    bool trunc = false;
    for (const std::string& w : split_words(text)) {
        if (static_cast<int>(ids.size()) == context_len - 1) {
            trunc = true;
            break;
        }
        ids.push_back(token_id(w));
    }
    ids.push_back(kEnd);
    ids.resize(context_len, kPad);
    if (truncated) *truncated = trunc;
    return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& tokens) const {
    std::string out;
    for (int id : tokens) {
        if (id == kPad || id == kStart || id == kEnd) continue;
        if (id < 0 || id >= vocab_size()) {
            throw lookup_error("token id " + std::to_string(id) + " out of range");
        }
        const std::string& w = id_to_word_[id];
        if (!out.empty() && w != ".") out += ' ';
        out += w;
    }
    return out;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["categories"] = category_names_;
    j["rationales"] = rationale_names_;
    nlohmann::json tokens = nlohmann::json::object();
    for (int i = 0; i < vocab_size(); ++i) tokens[id_to_word_[i]] = i;
    j["tokens"] = std::move(tokens);
    return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("vocabulary json: ") + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
        throw io_error("vocabulary json: unsupported format_version");
    }
    Vocabulary v(j.at("categories").get<std::vector<std::string>>(),
                 j.at("rationales").get<std::vector<std::string>>());
    // The token map is derived from the names, so reconstruction must agree
    // with what was serialized; a mismatch means the file was edited.
    const auto& tokens = j.at("tokens");
    if (static_cast<int>(tokens.size()) != v.vocab_size()) {
        throw io_error("vocabulary json: token map size disagrees with names");
    }
    for (auto it = tokens.begin(); it != tokens.end(); ++it) {
        auto found = v.word_to_id_.find(it.key());
        if (found == v.word_to_id_.end() || found->second != it.value().get<int>()) {
            throw io_error("vocabulary json: token map entry '" + it.key() +
                           "' disagrees with reconstruction");
        }
    }
    return v;
}

RenderedPrompt render_prompt_R(const Vocabulary& vocab, std::vector<int> rationales,
                               int context_len) {
    auto set = checked_sorted_set(vocab, std::move(rationales), "render_prompt_R");
    std::string text = set.size() == 1 ? "There is " : "There are ";
    text += join_names(vocab, set);
    text += " in the photo.";
    return finish(vocab, PromptKind::R, std::nullopt, std::move(set), std::move(text),
                  context_len);
}

RenderedPrompt render_prompt_c_given_R(const Vocabulary& vocab, int category,
                                       std::vector<int> rationales, int context_len) {
    auto set = checked_sorted_set(vocab, std::move(rationales), "render_prompt_c_given_R");
    std::string text = "This is a photo of a " + vocab.category_name(category) +
                       " because there is " + join_names(vocab, set) + ".";
    return finish(vocab, PromptKind::CGivenR, category, std::move(set), std::move(text),
                  context_len);
}

RenderedPrompt render_ablation(const Vocabulary& vocab, PromptKind kind,
                               std::optional<int> category, std::vector<int> rationales,
                               int context_len) {
    switch (kind) {
        case PromptKind::R:
            if (category) {
                throw contract_error("render_ablation: kind R takes no category");
            }
            return render_prompt_R(vocab, std::move(rationales), context_len);
        case PromptKind::CGivenR:
            if (!category) {
                throw contract_error("render_ablation: kind C_GIVEN_R needs a category");
            }
            return render_prompt_c_given_R(vocab, *category, std::move(rationales),
                                           context_len);
        case PromptKind::COnly: {
            if (!category) {
                throw contract_error("render_ablation: kind C_ONLY needs a category");
            }
            if (!rationales.empty()) {
                throw contract_error("render_ablation: kind C_ONLY takes no rationales");
            }
            std::string text = "This is a photo of a " + vocab.category_name(*category);
            return finish(vocab, kind, category, {}, std::move(text), context_len);
        }
        case PromptKind::RBecauseC:
        case PromptKind::RGivenC: {
            if (!category) {
                throw contract_error("render_ablation: inverted kinds need a category");
            }
            auto set = checked_sorted_set(vocab, std::move(rationales), "render_ablation");
            std::string text = set.size() == 1 ? "There is " : "There are ";
            text += join_names(vocab, set);
            text += " because this is a photo of a " + vocab.category_name(*category);
            return finish(vocab, kind, category, std::move(set), std::move(text), context_len);
        }
    }
    throw contract_error("render_ablation: unknown kind");
}

std::vector<RenderedPrompt> enumerate_normalization_set(
    PromptKind kind, const Vocabulary& vocab,
    const std::vector<std::vector<int>>& rationale_sets, int context_len) {
    std::vector<int> all(vocab.num_categories());
    for (int c = 0; c < vocab.num_categories(); ++c) all[c] = c;
    return enumerate_normalization_set(kind, vocab, all, rationale_sets, context_len);
}

std::vector<RenderedPrompt> enumerate_normalization_set(
    PromptKind kind, const Vocabulary& vocab, const std::vector<int>& categories,
    const std::vector<std::vector<int>>& rationale_sets, int context_len) {
    std::vector<RenderedPrompt> out;
    switch (kind) {
        case PromptKind::R:
            out.reserve(rationale_sets.size());
            for (const auto& set : rationale_sets) {
                out.push_back(render_prompt_R(vocab, set, context_len));
            }
            break;
        case PromptKind::COnly:
            out.reserve(categories.size());
            for (int c : categories) {
                out.push_back(render_ablation(vocab, kind, c, {}, context_len));
            }
            break;
        case PromptKind::CGivenR:
        case PromptKind::RBecauseC:
        case PromptKind::RGivenC:
            out.reserve(categories.size() * rationale_sets.size());
            for (int c : categories) {
                for (const auto& set : rationale_sets) {
                    out.push_back(render_ablation(vocab, kind, c, set, context_len));
                }
            }
            break;
    }
    return out;
}

}  // namespace ecor
