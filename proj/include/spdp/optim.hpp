#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "spdp/tensor.hpp"

namespace spdp {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    AdamWConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// AdamW with bias correction and decoupled weight decay, constant learning rate.
class AdamW {
 public:
    AdamW(std::vector<Tensor> params, AdamWConfig config);

    // Parameters without a gradient buffer are treated as having a zero gradient.
    void step();
    void zero_grad();

    const OptimizerState& state() const { return state_; }
    OptimizerState& state() { return state_; }
    const std::vector<Tensor>& params() const { return params_; }

    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

 private:
    std::vector<Tensor> params_;
    OptimizerState state_;
};

}  // namespace spdp
