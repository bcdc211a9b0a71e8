#include "spdp/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace spdp {

Tensor ParamStore::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = dist(rng_);
    return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

Tensor ParamStore::constant(const std::string& name, Shape shape, double value) {
    return add(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
    for (const auto& [n, _] : entries_) require(n != name, "duplicate parameter name " + name, ErrorKind::Usage);
    entries_.emplace_back(name, t);
    return t;
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
}

std::vector<Tensor> ParamStore::tensors_with_prefix(const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& [n, t] : entries_)
        if (n.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
}

Tensor ParamStore::get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    fail(ErrorKind::Data, "no parameter named " + name);
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other) {
    require(other.entries_.size() == entries_.size(), "parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        require(entries_[i].first == other.entries_[i].first &&
                    entries_[i].second.shape() == other.entries_[i].second.shape(),
                "parameter layout mismatch at " + entries_[i].first);
        auto dst = entries_[i].second.mutable_data();
        auto src = other.entries_[i].second.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

namespace checkpoint {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'P', 'D', 'P'};

void put_u64(std::ofstream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::ifstream& is, const std::filesystem::path& path) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorKind::Data, "truncated checkpoint " + path.string());
    return v;
}

}  // namespace

void write(const std::filesystem::path& path, const std::vector<Record>& records) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), "cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    const std::uint32_t version = kFormatVersion;
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    for (const auto& r : records) {
        require(numel(r.shape) == r.values.size(), "record " + r.name + " shape/value mismatch");
        put_u64(os, r.name.size());
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put_u64(os, r.shape.size());
        for (auto e : r.shape) put_u64(os, e);
        os.write(reinterpret_cast<const char*>(r.values.data()),
                 static_cast<std::streamsize>(r.values.size() * sizeof(double)));
    }
    require(static_cast<bool>(os), "write failed for " + path.string());
}

std::vector<Record> read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), "cannot open checkpoint " + path.string());
    char magic[4];
    std::uint32_t version = 0;
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::Data, "bad checkpoint magic in " + path.string());
    if (!is.read(reinterpret_cast<char*>(&version), sizeof version)) fail(ErrorKind::Data, "truncated checkpoint header");
    require(version == kFormatVersion, "unsupported checkpoint version " + std::to_string(version));
    std::vector<Record> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        Record r;
        const auto len = get_u64(is, path);
        require(len < (1u << 20), "implausible name length in " + path.string());
        r.name.resize(len);
        if (!is.read(r.name.data(), static_cast<std::streamsize>(len))) fail(ErrorKind::Data, "truncated checkpoint name");
        const auto rank = get_u64(is, path);
        require(rank <= 16, "implausible rank in " + path.string());
        for (std::uint64_t i = 0; i < rank; ++i) r.shape.push_back(get_u64(is, path));
        r.values.resize(numel(r.shape));
        if (!is.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * sizeof(double))))
            fail(ErrorKind::Data, "truncated values for " + r.name);
        out.push_back(std::move(r));
    }
    return out;
}

void save(const std::filesystem::path& path, const ParamStore& store) {
    std::vector<Record> records;
    for (const auto& [name, t] : store.entries())
        records.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
    write(path, records);
}

void load(const std::filesystem::path& path, ParamStore& store) {
    const auto records = read(path);
    const auto& entries = store.entries();
    require(records.size() == entries.size(),
            path.string() + ": expected " + std::to_string(entries.size()) + " parameters, found " + std::to_string(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto t = entries[i].second;
        require(records[i].name == entries[i].first && records[i].shape == t.shape(),
                path.string() + ": layout mismatch at " + entries[i].first);
        std::copy(records[i].values.begin(), records[i].values.end(), t.mutable_data().begin());
    }
}

}  // namespace checkpoint

}  // namespace spdp
