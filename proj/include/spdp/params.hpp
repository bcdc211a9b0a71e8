#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spdp/tensor.hpp"

namespace spdp {

// Ordered, named collection of trainable tensors. Order is registration order
// and is what the checkpoint file and the optimizer iterate over.
class ParamStore {
 public:
    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in);
    Tensor constant(const std::string& name, Shape shape, double value);
    Tensor add(const std::string& name, Tensor t);

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const;
    // Entries whose name starts with `prefix`.
    std::vector<Tensor> tensors_with_prefix(const std::string& prefix) const;
    Tensor get(const std::string& name) const;
    std::size_t scalar_count() const;
    void zero_grad();

    // Copies values (not identity) from `other`; names and shapes must match.
    void copy_values_from(const ParamStore& other);

 private:
    std::mt19937_64 rng_;
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// Binary container: "SPDP", u32 version, then per record
// u64 name length, name bytes, u64 rank, u64 extents..., raw float64 values.
// All integers little-endian.
namespace checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Record {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

void write(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> read(const std::filesystem::path& path);

void save(const std::filesystem::path& path, const ParamStore& store);
// Overwrites values of every parameter in `store`; the file must hold exactly
// the same names and shapes.
void load(const std::filesystem::path& path, ParamStore& store);

}  // namespace checkpoint

}  // namespace spdp
