#include "entcell/corpus.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "entcell/rng.h"
#include "json.hpp"

namespace entcell {

using nlohmann::json;

const std::vector<std::string> & localization_templates() {
    static const std::vector<std::string> attrs = {
        "origin", "purpose", "definition", "function", "main goal", "age", "name",
        "founder", "owner", "value", "importance", "reputation", "impact", "influence",
        "location", "history", "status", "category", "type", "meaning", "significance",
        "role", "date of creation", "latest update", "duration", "size", "popularity",
        "main activity", "scope", "reach", "composition", "structure", "method",
        "strategy", "goal", "objective", "result", "effect", "outcome", "cause",
        "reason", "source", "destination", "trend", "main challenge", "opinion",
        "leading opinion", "common perception", "definition in law", "ethical standing",
        "main criticism", "key advantage", "key disadvantage", "limitation", "potential",
        "likelihood", "probability", "risk", "opportunity", "threat", "strength",
        "weakness", "main competitor", "main supporter", "main opponent",
        "relationship with others", "relevance", "timing", "frequency", "pattern",
        "cost", "budget", "revenue", "profit", "loss", "market share", "demographic",
        "representation", "policy", "regulation", "requirement", "recommendation",
        "limiting factor", "resource", "technology used", "process", "legal status",
        "acceptance", "approval", "recognition", "symbolism", "associations",
        "link to current events", "precedent", "measurement", "ranking", "priority",
        "main feature", "unique aspect", "distinguishing factor",
    };
    static const std::vector<std::string> templates = [] {
        std::vector<std::string> t;
        t.reserve(attrs.size());
        for (const auto & a : attrs) t.push_back("The " + a + " of <entity>");
        return t;
    }();
    return templates;
}

const std::vector<std::string> & baseline_word_pool() {
    static const std::vector<std::string> pool = {
        "stone",   "river",  "garden",  "bridge", "window", "lantern", "meadow",
        "harbor",  "castle", "forest",  "market", "temple", "valley",  "library",
        "mountain","village","workshop","anchor", "barrel", "candle",  "ladder",
        "mirror",  "needle", "orchard", "pillar", "quarry", "saddle",  "tunnel",
    };
    return pool;
}

AliasMatch locate_alias(std::span<const int> prompt,
                        const std::vector<std::vector<int>> & aliases) {
    std::vector<std::pair<const std::vector<int> *, int>> sorted;
    for (size_t i = 0; i < aliases.size(); ++i) {
        if (!aliases[i].empty()) sorted.push_back({&aliases[i], static_cast<int>(i)});
    }
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto & a, const auto & b) { return a.first->size() > b.first->size(); });
    for (size_t start = 0; start < prompt.size(); ++start) {
        for (const auto & [alias, idx] : sorted) {
            size_t n = alias->size();
            if (start + n > prompt.size()) continue;
            if (std::equal(alias->begin(), alias->end(), prompt.begin() + start)) {
                return AliasMatch{static_cast<int>(start), static_cast<int>(n), idx};
            }
        }
    }
    throw data_error("no entity span found in prompt");
}

int locate_entity_span(std::span<const int> prompt,
                       const std::vector<std::vector<int>> & aliases) {
    return locate_alias(prompt, aliases).last_pos();
}

PromptBundle generate_localization_prompts(const Vocabulary & vocab,
                                           const EntityRecord & entity,
                                           const std::vector<std::string> & templates,
                                           int k,
                                           uint64_t seed) {
    if (k < 0 || static_cast<size_t>(k) > templates.size()) {
        throw config_error("K exceeds available templates");
    }
    std::vector<size_t> order(templates.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng(seed).fork("loc:" + entity.entity_id);
    rng.shuffle(order);

    PromptBundle bundle;
    bundle.kind = PromptBundle::Kind::localization;
    for (int i = 0; i < k; ++i) {
        const std::string & tpl = templates[order[static_cast<size_t>(i)]];
        size_t slot = tpl.find("<entity>");
        if (slot == std::string::npos) throw config_error("template lacks <entity> slot: " + tpl);
        std::vector<int> prompt = vocab.tokenize(tpl.substr(0, slot));
        int pos_start = static_cast<int>(prompt.size());
        prompt.insert(prompt.end(), entity.canonical.begin(), entity.canonical.end());
        int entity_end = pos_start + static_cast<int>(entity.canonical.size()) - 1;
        std::vector<int> tail = vocab.tokenize(tpl.substr(slot + 8));
        prompt.insert(prompt.end(), tail.begin(), tail.end());
        bundle.prompts.push_back(std::move(prompt));
        bundle.entity_positions.push_back(entity_end);
    }
    return bundle;
}

std::vector<int> qa_wrap(const Vocabulary & vocab, std::span<const int> question) {
    std::vector<int> out;
    out.push_back(vocab.id_of("Question:"));
    out.insert(out.end(), question.begin(), question.end());
    out.push_back(vocab.newline_id());
    out.push_back(vocab.id_of("Answer:"));
    return out;
}

std::vector<int> cloze_wrap(const Vocabulary & vocab, std::span<const int> fragment) {
    if (fragment.empty()) throw data_error("cloze_wrap: empty fragment");
    std::vector<int> out;
    out.push_back(vocab.id_of("Fact:"));
    out.insert(out.end(), fragment.begin(), fragment.end());
    out.push_back(vocab.id_of(":"));
    return out;
}

PlaceholderSwap placeholder_swap(const Vocabulary & vocab,
                                 std::span<const int> question,
                                 std::span<const int> alias) {
    if (alias.empty()) throw data_error("placeholder_swap: empty alias");
    for (size_t start = 0; start + alias.size() <= question.size(); ++start) {
        if (std::equal(alias.begin(), alias.end(), question.begin() + start)) {
            PlaceholderSwap out;
            out.question.assign(question.begin(), question.begin() + start);
            out.placeholder_pos = static_cast<int>(out.question.size());
            out.question.push_back(vocab.placeholder_id());
            out.question.insert(out.question.end(),
                                question.begin() + start + alias.size(), question.end());
            return out;
        }
    }
    throw data_error("placeholder_swap: alias not present in question");
}

PromptBundle generate_baseline_prompts(const Vocabulary & vocab, int count) {
    if (count < 0) throw config_error("baseline count must be nonnegative");
    const auto & pool = baseline_word_pool();
    const size_t p = pool.size();
    PromptBundle bundle;
    bundle.kind = PromptBundle::Kind::baseline;
    int the_id = vocab.id_of("The");
    int of_id = vocab.id_of("of");
    int the2_id = vocab.id_of("the");
    int is_id = vocab.id_of("is");
    int a_id = vocab.id_of("a");
    for (int i = 0; i < count; ++i) {
        size_t first = static_cast<size_t>(i) % p;
        size_t second = (static_cast<size_t>(i) / p + static_cast<size_t>(i) + 1) % p;
        if (second == first) second = (second + 1) % p;
        std::vector<int> prompt;
        // Three rotating shapes keep final-token identity varied.
        switch (i % 3) {
            case 0:
                prompt = {the_id, vocab.id_of(pool[first]), of_id, the2_id,
                          vocab.id_of(pool[second])};
                break;
            case 1:
                prompt = {the_id, vocab.id_of(pool[first]), is_id, a_id,
                          vocab.id_of(pool[second])};
                break;
            default:
                prompt = {the2_id, vocab.id_of(pool[second]), of_id, a_id,
                          vocab.id_of(pool[first])};
                break;
        }
        bundle.prompts.push_back(std::move(prompt));
    }
    return bundle;
}

static std::vector<int> tokenize_checked(const Vocabulary & vocab, const json & j,
                                         const char * what) {
    if (!j.is_string()) throw data_error(std::string("inventory: ") + what + " must be a string");
    return vocab.tokenize(j.get<std::string>());
}

std::vector<EntityRecord> load_inventory(const std::string & path, const Vocabulary & vocab) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open inventory: " + path);
    std::vector<EntityRecord> out;
    std::set<std::string> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception & e) {
            throw data_error("inventory line " + std::to_string(lineno) + ": " + e.what());
        }
        EntityRecord rec;
        try {
            rec.entity_id = j.at("entity_id").get<std::string>();
            rec.canonical = tokenize_checked(vocab, j.at("canonical"), "canonical");
            if (rec.canonical.empty()) throw data_error("empty canonical name");
            for (const auto & a : j.at("aliases")) {
                rec.aliases.push_back(tokenize_checked(vocab, a, "alias"));
            }
            if (j.contains("variants")) {
                for (const auto & [kind, list] : j.at("variants").items()) {
                    for (const auto & v : list) {
                        rec.variant_sets[kind].push_back(tokenize_checked(vocab, v, "variant"));
                    }
                }
            }
            rec.popularity = j.value("popularity", 0LL);
            if (rec.popularity < 0) throw data_error("negative popularity");
            for (const auto & q : j.value("qa", json::array())) {
                QARecord qa;
                qa.entity_id = rec.entity_id;
                qa.question = tokenize_checked(vocab, q.at("question"), "question");
                for (const auto & ans : q.at("answers")) {
                    qa.answer_aliases.push_back(ans.get<std::string>());
                }
                if (qa.answer_aliases.empty()) throw data_error("qa without answers");
                qa.relation_token = vocab.id_of(q.at("relation").get<std::string>());
                rec.qa.push_back(std::move(qa));
            }
        } catch (const data_error &) {
            throw;
        } catch (const std::exception & e) {
            throw data_error("inventory line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert(rec.entity_id).second) {
            throw data_error("duplicate entity_id: " + rec.entity_id);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void save_inventory(const std::string & path, const Vocabulary & vocab,
                    const std::vector<EntityRecord> & inventory) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write inventory: " + path);
    for (const auto & rec : inventory) {
        json j;
        j["entity_id"] = rec.entity_id;
        j["canonical"] = vocab.detokenize(rec.canonical);
        json aliases = json::array();
        for (const auto & a : rec.aliases) aliases.push_back(vocab.detokenize(a));
        j["aliases"] = aliases;
        json variants = json::object();
        for (const auto & [kind, list] : rec.variant_sets) {
            json arr = json::array();
            for (const auto & v : list) arr.push_back(vocab.detokenize(v));
            variants[kind] = arr;
        }
        j["variants"] = variants;
        j["popularity"] = rec.popularity;
        json qas = json::array();
        for (const auto & qa : rec.qa) {
            json q;
            q["question"] = vocab.detokenize(qa.question);
            q["answers"] = qa.answer_aliases;
            q["relation"] = vocab.str_of(qa.relation_token);
            qas.push_back(q);
        }
        j["qa"] = qas;
        out << j.dump() << "\n";
    }
}

} // namespace entcell
