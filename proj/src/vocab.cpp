#include "spdp/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "spdp/error.hpp"

namespace spdp {

namespace {

const std::array<std::string, 4> kReserved = {"<pad>", "<eos>", "<", ">"};

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

}  // namespace

Vocab::Vocab() {
    for (const auto& r : kReserved) {
        index_.emplace(r, static_cast<long>(tokens_.size()));
        tokens_.push_back(r);
    }
}

long Vocab::add(const std::string& token) {
    require(!token.empty() && token.find_first_of("\t\n") == std::string::npos, "invalid token '" + token + "'");
    if (auto it = index_.find(token); it != index_.end()) {
        require(!is_reserved(it->second), "token '" + token + "' is reserved");
        return it->second;
    }
    const long id = static_cast<long>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

long Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    require(it != index_.end(), "unknown token '" + token + "'");
    return it->second;
}

const std::string& Vocab::token(long id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), "token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    require(static_cast<bool>(os), "cannot write " + path.string());
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << i << '\t' << tokens_[i] << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), "cannot read vocabulary " + path.string());
    Vocab v;
    std::string line;
    long expected = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        require(tab != std::string::npos, "vocabulary line without tab: " + line);
        const long id = std::stol(line.substr(0, tab));
        const std::string tok = line.substr(tab + 1);
        require(id == expected, "vocabulary ids must be dense and ordered (line id " + std::to_string(id) + ")");
        if (id < static_cast<long>(kReserved.size())) {
            require(tok == kReserved[static_cast<std::size_t>(id)], "reserved token mismatch at id " + std::to_string(id));
        } else {
            require(v.add(tok) == id, "duplicate vocabulary token " + tok);
        }
        ++expected;
    }
    return v;
}

std::string Vocab::join(const std::vector<long>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

const std::array<std::string, kNumStyles>& style_names() {
    static const std::array<std::string, kNumStyles> names = {
        "news and science reporting", "horror stories",  "fairy tales",
        "customer service",           "poetry and prose", "audiobooks",
        "spontaneous conversation",   "others"};
    return names;
}

StyleMap StyleMap::build(Vocab& vocab) {
    StyleMap m;
    for (std::size_t i = 0; i < kNumStyles; ++i) {
        m.entries_[i].name = style_names()[i];
        for (const auto& w : split_words(style_names()[i])) m.entries_[i].tokens.push_back(vocab.add(w));
        m.entries_[i].first_token = m.entries_[i].tokens.front();
    }
    m.validate();
    return m;
}

StyleMap StyleMap::from_vocab(const Vocab& vocab) {
    StyleMap m;
    for (std::size_t i = 0; i < kNumStyles; ++i) {
        m.entries_[i].name = style_names()[i];
        for (const auto& w : split_words(style_names()[i])) m.entries_[i].tokens.push_back(vocab.id(w));
        m.entries_[i].first_token = m.entries_[i].tokens.front();
    }
    m.validate();
    return m;
}

void StyleMap::validate() const {
    std::set<long> firsts;
    for (const auto& e : entries_) {
        require(!e.tokens.empty(), "style label '" + e.name + "' has no tokens");
        require(firsts.insert(e.first_token).second, "style first tokens must be pairwise distinct");
        for (long t : e.tokens)
            require(t != Vocab::kStyleOpen && t != Vocab::kStyleClose, "style label uses a reserved token");
    }
}

int StyleMap::style_of_first_token(long id) const {
    for (std::size_t i = 0; i < kNumStyles; ++i)
        if (entries_[i].first_token == id) return static_cast<int>(i);
    return -1;
}

int StyleMap::style_of_sequence(std::span<const long> tokens) const {
    for (std::size_t i = 0; i < kNumStyles; ++i)
        if (std::ranges::equal(entries_[i].tokens, tokens)) return static_cast<int>(i);
    return -1;
}

}  // namespace spdp
