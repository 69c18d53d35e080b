#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "entcell/vocab.h"

namespace entcell {

struct QARecord {
    std::string entity_id;
    std::vector<int> question;                 // contains exactly one recoverable alias
    std::vector<std::string> answer_aliases;   // surface strings
    int relation_token = -1;
};

struct EntityRecord {
    std::string entity_id;
    std::vector<int> canonical;                        // token sequence, nonempty
    std::vector<std::vector<int>> aliases;             // includes canonical
    std::map<std::string, std::vector<std::vector<int>>> variant_sets; // spelling / acronym / multilingual
    long long popularity = 0;
    std::vector<QARecord> qa;
};

struct PromptBundle {
    enum class Kind { localization, baseline, qa, cloze };
    Kind kind = Kind::localization;
    std::vector<std::vector<int>> prompts;
    std::vector<int> entity_positions;   // one per prompt for entity-bearing kinds
};

struct AliasMatch {
    int start = -1;
    int length = 0;
    int alias_index = -1;
    int last_pos() const { return start + length - 1; }
};

// Leftmost alias occurrence; at equal start the longest alias wins.
// Throws data_error when no alias matches.
AliasMatch locate_alias(std::span<const int> prompt,
                        const std::vector<std::vector<int>> & aliases);

// Index of the last token of the matched span.
int locate_entity_span(std::span<const int> prompt,
                       const std::vector<std::vector<int>> & aliases);

// 100 attribute templates of the shape "The <attribute> of <entity>".
const std::vector<std::string> & localization_templates();

// Generic words used to compose entity-free baseline prompts.
const std::vector<std::string> & baseline_word_pool();

// K prompts from the template list, template choice deterministic in
// (seed, entity_id). Every prompt carries the canonical surface form once.
PromptBundle generate_localization_prompts(const Vocabulary & vocab,
                                           const EntityRecord & entity,
                                           const std::vector<std::string> & templates,
                                           int k,
                                           uint64_t seed);

// "Question: <question>\nAnswer:" wrapper.
std::vector<int> qa_wrap(const Vocabulary & vocab, std::span<const int> question);

// "Fact: <fragment> :" wrapper; empty fragments are rejected.
std::vector<int> cloze_wrap(const Vocabulary & vocab, std::span<const int> fragment);

struct PlaceholderSwap {
    std::vector<int> question;
    int placeholder_pos = -1;
};

// Replaces the first occurrence of `alias` with the placeholder token.
PlaceholderSwap placeholder_swap(const Vocabulary & vocab,
                                 std::span<const int> question,
                                 std::span<const int> alias);

PromptBundle generate_baseline_prompts(const Vocabulary & vocab, int count);

std::vector<EntityRecord> load_inventory(const std::string & path, const Vocabulary & vocab);
void save_inventory(const std::string & path, const Vocabulary & vocab,
                    const std::vector<EntityRecord> & inventory);

} // namespace entcell
