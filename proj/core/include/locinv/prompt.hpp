#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "locinv/adapter.hpp"

namespace locinv {

struct PromptAnnotation {
    std::string prompt_text;
    std::vector<int> token_ids;
    std::vector<int> noun_positions;  // token positions (first piece of multi-piece words)
    std::vector<std::pair<int, int>> adjective_pairs;  // (adjective_position, noun_position)

    bool has_noun_at(int position) const;
    void validate(int context_length) const;
};

enum class WordClass { Noun, Adjective, Other };

class PosTagger {
public:
    virtual ~PosTagger() = default;
    virtual WordClass classify(const std::string& word) const = 0;
};

// Determiner/adjective/noun patterns over a small lexicon; extend or replace
// via the PosTagger interface when an external tagger is available.
class RuleTagger : public PosTagger {
public:
    RuleTagger();
    RuleTagger(std::vector<std::string> nouns, std::vector<std::string> adjectives);
    WordClass classify(const std::string& word) const override;

private:
    std::vector<std::string> nouns_, adjectives_;
};

struct ManualAnnotation {
    std::vector<std::string> nouns;
    std::vector<std::pair<std::string, std::string>> pairs;  // (adjective, noun)
};

// Word-level annotation mapped onto token positions. Manual annotation wins
// over the tagger when given; multi-piece words map to their first piece.
PromptAnnotation annotate(const std::string& prompt, const Tokenizer& tokenizer,
                          const PosTagger& tagger,
                          const std::optional<ManualAnnotation>& manual = std::nullopt);

ManualAnnotation load_manual_annotation(const std::string& json_path);

struct EditSpec {
    enum class Kind { WordSwap, AttributeEdit };
    Kind kind = Kind::WordSwap;
    std::string source_word;
    std::string target_word;
    std::string target_prompt;
    bool blend_with_prior = false;
    std::optional<int> occurrence;  // disambiguates repeated source words

    void validate(const std::string& prompt_text) const;
};

}  // namespace locinv
