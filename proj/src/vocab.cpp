#include "entcell/vocab.h"

namespace entcell {

Vocabulary::Vocabulary() {
    // Stable structural ids, in fixed order.
    placeholder_id_ = add(kPlaceholder);
    newline_id_ = add(kNewline);
    for (const char * w : {"Question:", "Answer:", "Fact:", "The", "of", "the",
                           "is", "Who", ":", "named", "in", "a"}) {
        add(w);
    }
}

int Vocabulary::add(const std::string & word) {
    if (word.empty()) throw data_error("vocabulary: empty word");
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
}

bool Vocabulary::knows(const std::string & word) const {
    return index_.count(word) != 0;
}

int Vocabulary::id_of(const std::string & word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw data_error("vocabulary: unknown word '" + word + "'");
    return it->second;
}

const std::string & Vocabulary::str_of(int id) const {
    if (id < 0 || id >= size()) throw data_error("vocabulary: id out of range");
    return words_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string & text) const {
    std::vector<int> out;
    std::string word;
    auto flush = [&]() {
        if (!word.empty()) {
            out.push_back(id_of(word));
            word.clear();
        }
    };
    for (char ch : text) {
        if (ch == ' ') {
            flush();
        } else if (ch == '\n') {
            flush();
            out.push_back(newline_id_);
        } else {
            word.push_back(ch);
        }
    }
    flush();
    return out;
}

std::string Vocabulary::detokenize(std::span<const int> tokens) const {
    std::string out;
    bool pending_space = false;
    for (int id : tokens) {
        const std::string & w = str_of(id);
        if (id == newline_id_) {
            out += '\n';
            pending_space = false;
            continue;
        }
        if (pending_space) out += ' ';
        out += w;
        pending_space = true;
    }
    return out;
}

} // namespace entcell
