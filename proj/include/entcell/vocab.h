#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "entcell/util.h"

namespace entcell {

// Word-level vocabulary. Tokens are whitespace-delimited words; the newline
// character is its own token and binds tightly (no surrounding spaces) when
// detokenizing. A handful of structural words get fixed low ids so prompt
// wrappers are stable across worlds built from the same seed.
class Vocabulary {
  public:
    static constexpr const char * kPlaceholder = "X";
    static constexpr const char * kNewline = "\n";

    Vocabulary();

    int add(const std::string & word);          // idempotent
    bool knows(const std::string & word) const;
    int id_of(const std::string & word) const;  // throws data_error if absent
    const std::string & str_of(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    int placeholder_id() const { return placeholder_id_; }
    int newline_id() const { return newline_id_; }

    // Splits on spaces; '\n' always separates a token of its own. Unknown
    // words throw data_error. A leading space is a no-op by construction,
    // which is what alias-to-target conversion relies on.
    std::vector<int> tokenize(const std::string & text) const;
    std::string detokenize(std::span<const int> tokens) const;

    const std::vector<std::string> & words() const { return words_; }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
    int placeholder_id_ = -1;
    int newline_id_ = -1;
};

} // namespace entcell
