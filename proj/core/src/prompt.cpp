#include "locinv/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "locinv/errors.hpp"

namespace locinv {

using nlohmann::json;

bool PromptAnnotation::has_noun_at(int position) const {
    return std::find(noun_positions.begin(), noun_positions.end(), position) != noun_positions.end();
}

void PromptAnnotation::validate(int context_length) const {
    if (noun_positions.empty()) throw DataError("annotation: no nouns (nothing to align)");
    for (int p : noun_positions)
        if (p < 0 || p >= context_length) throw DataError("annotation: noun position out of range");
    for (const auto& [a, n] : adjective_pairs) {
        if (a < 0 || a >= context_length) throw DataError("annotation: adjective position out of range");
        if (!has_noun_at(n)) throw DataError("annotation: pair references a non-noun position");
    }
}

static const char* kDefaultNouns[] = {
    "circle", "square",  "triangle", "cat",   "dog",    "airplane", "seaplane", "bear",
    "panda",  "boat",    "canoe",    "cougar", "elephant", "buffalo", "giraffe",
    "zebra",  "donkey",  "horse",    "apple", "banana", "peach",    "bench",    "panther",
    "fox",    "frisbee", "raccon",   "person", "brachiosaurus"};
static const char* kDefaultAdjectives[] = {"red",    "green", "blue",  "yellow", "purple",
                                           "cyan",   "white", "black", "brown",  "wooden",
                                           "metal",  "small", "large", "dark",   "light"};

RuleTagger::RuleTagger()
    : nouns_(std::begin(kDefaultNouns), std::end(kDefaultNouns)),
      adjectives_(std::begin(kDefaultAdjectives), std::end(kDefaultAdjectives)) {}

RuleTagger::RuleTagger(std::vector<std::string> nouns, std::vector<std::string> adjectives)
    : nouns_(std::move(nouns)), adjectives_(std::move(adjectives)) {}

WordClass RuleTagger::classify(const std::string& word) const {
    if (std::find(nouns_.begin(), nouns_.end(), word) != nouns_.end()) return WordClass::Noun;
    if (std::find(adjectives_.begin(), adjectives_.end(), word) != adjectives_.end())
        return WordClass::Adjective;
    return WordClass::Other;
}

static std::vector<std::string> split_lower(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        words.push_back(w);
    }
    return words;
}

PromptAnnotation annotate(const std::string& prompt, const Tokenizer& tokenizer,
                          const PosTagger& tagger, const std::optional<ManualAnnotation>& manual) {
    auto words = split_lower(prompt);
    auto spans = tokenizer.token_spans(prompt);
    if (spans.size() != words.size()) throw DataError("annotate: tokenizer span/word count mismatch");

    PromptAnnotation ann;
    ann.prompt_text = prompt;
    ann.token_ids = tokenizer.tokenize(prompt);

    auto word_index = [&](const std::string& w) -> int {
        for (size_t i = 0; i < words.size(); ++i)
            if (words[i] == w) return static_cast<int>(i);
        throw DataError("annotate: word \"" + w + "\" not found in prompt");
    };

    std::vector<int> noun_words;
    std::vector<std::pair<int, int>> pair_words;  // (adj word idx, noun word idx)
    if (manual) {
        for (const auto& n : manual->nouns) noun_words.push_back(word_index(n));
        for (const auto& [a, n] : manual->pairs) pair_words.emplace_back(word_index(a), word_index(n));
    } else {
        // Adjective runs bind to the next noun in the same phrase.
        std::vector<int> pending_adjectives;
        for (size_t i = 0; i < words.size(); ++i) {
            switch (tagger.classify(words[i])) {
                case WordClass::Adjective:
                    pending_adjectives.push_back(static_cast<int>(i));
                    break;
                case WordClass::Noun:
                    noun_words.push_back(static_cast<int>(i));
                    for (int a : pending_adjectives) pair_words.emplace_back(a, static_cast<int>(i));
                    pending_adjectives.clear();
                    break;
                case WordClass::Other:
                    if (words[i] == "and" || words[i] == ",") pending_adjectives.clear();
                    break;
            }
        }
    }
    if (noun_words.empty()) throw DataError("annotate: no nouns found in \"" + prompt + "\"");

    for (int wi : noun_words) ann.noun_positions.push_back(spans[static_cast<size_t>(wi)].first);
    for (const auto& [ai, ni] : pair_words)
        ann.adjective_pairs.emplace_back(spans[static_cast<size_t>(ai)].first,
                                         spans[static_cast<size_t>(ni)].first);
    ann.validate(tokenizer.context_length());
    return ann;
}

ManualAnnotation load_manual_annotation(const std::string& json_path) {
    std::ifstream is(json_path);
    if (!is) throw DataError("cannot open annotation file: " + json_path);
    json j = json::parse(is, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw DataError("invalid JSON in " + json_path);
    ManualAnnotation m;
    m.nouns = j.at("nouns").get<std::vector<std::string>>();
    if (j.contains("pairs"))
        for (const auto& p : j.at("pairs")) {
            if (!p.is_array() || p.size() != 2)
                throw DataError("annotation pairs must be [adjective, noun] in " + json_path);
            m.pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
        }
    return m;
}

void EditSpec::validate(const std::string& prompt_text) const {
    auto src_words = split_lower(prompt_text);
    auto tgt_words = split_lower(target_prompt);
    int occurrences = static_cast<int>(std::count(src_words.begin(), src_words.end(), source_word));
    if (occurrences == 0)
        throw DataError("edit: source word \"" + source_word + "\" does not occur in prompt");
    if (src_words.size() != tgt_words.size())
        throw DataError("edit: target prompt must keep the word count (word-level edits only)");
    int changed = 0;
    for (size_t i = 0; i < src_words.size(); ++i) {
        if (src_words[i] == tgt_words[i]) continue;
        if (src_words[i] != source_word || tgt_words[i] != target_word)
            throw DataError("edit: target prompt differs at \"" + src_words[i] +
                            "\" which is not the edited word");
        changed += 1;
    }
    bool self_edit = source_word == target_word;
    if (!self_edit && changed == 0)
        throw DataError("edit: target prompt does not apply the requested swap");
}

}  // namespace locinv
