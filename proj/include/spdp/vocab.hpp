#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace spdp {

// Token table. Ids 0..3 are reserved and always present in this order.
class Vocab {
 public:
    static constexpr long kPad = 0;
    static constexpr long kEos = 1;
    static constexpr long kStyleOpen = 2;   // "<"
    static constexpr long kStyleClose = 3;  // ">"

    Vocab();

    // Returns the id of `token`, adding it if new. Reserved spellings are rejected.
    long add(const std::string& token);
    long id(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token(long id) const;
    std::size_t size() const { return tokens_.size(); }
    bool is_reserved(long id) const { return id >= 0 && id <= kStyleClose; }

    // UTF-8 lines "id<TAB>token", reserved tokens first.
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    std::string join(const std::vector<long>& ids) const;

 private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, long> index_;
};

// The eight style categories, index order fixed:
// 0 news and science reporting, 1 horror stories, 2 fairy tales, 3 customer service,
// 4 poetry and prose, 5 audiobooks, 6 spontaneous conversation, 7 others.
inline constexpr std::size_t kNumStyles = 8;
const std::array<std::string, kNumStyles>& style_names();

struct StyleEntry {
    std::string name;
    std::vector<long> tokens;
    long first_token = -1;
};

// STYLE_MAP: label tokens per style; first tokens are pairwise distinct.
class StyleMap {
 public:
    // Adds the label words to `vocab` as needed.
    static StyleMap build(Vocab& vocab);
    // Looks up existing tokens only.
    static StyleMap from_vocab(const Vocab& vocab);

    const std::array<StyleEntry, kNumStyles>& entries() const { return entries_; }
    const StyleEntry& operator[](std::size_t i) const { return entries_.at(i); }
    // Style index whose first token is `id`, or -1.
    int style_of_first_token(long id) const;
    // Style index whose full token sequence equals `tokens`, or -1.
    int style_of_sequence(std::span<const long> tokens) const;

 private:
    void validate() const;
    std::array<StyleEntry, kNumStyles> entries_;
};

}  // namespace spdp
