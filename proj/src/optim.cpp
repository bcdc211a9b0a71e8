#include "spdp/optim.hpp"

#include <cmath>

#include "spdp/params.hpp"

namespace spdp {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)) {
    state_.config = config;
    for (const auto& p : params_) {
        require(p.requires_grad(), "AdamW: parameter does not track gradients", ErrorKind::Usage);
        state_.m.emplace_back(p.numel(), 0.0);
        state_.v.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step() {
    const auto& c = state_.config;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].mutable_data();
        // A parameter the loss never reached gets a zero gradient.
        const std::vector<double> none(params_[i].has_grad() ? 0 : w.size(), 0.0);
        std::span<const double> g = params_[i].has_grad() ? params_[i].grad() : std::span<const double>(none);
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= c.lr * c.weight_decay * w[j];
            w[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamW::save(const std::filesystem::path& path) const {
    std::vector<checkpoint::Record> records;
    records.push_back({"step", {}, {static_cast<double>(state_.step)}});
    for (std::size_t i = 0; i < params_.size(); ++i) {
        records.push_back({"m." + std::to_string(i), params_[i].shape(), state_.m[i]});
        records.push_back({"v." + std::to_string(i), params_[i].shape(), state_.v[i]});
    }
    checkpoint::write(path, records);
}

void AdamW::load(const std::filesystem::path& path) {
    auto records = checkpoint::read(path);
    require(records.size() == 1 + 2 * params_.size() && records[0].name == "step", "optimizer state layout mismatch in " + path.string());
    state_.step = static_cast<std::uint64_t>(records[0].values.at(0));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& rm = records[1 + 2 * i];
        auto& rv = records[2 + 2 * i];
        require(rm.shape == params_[i].shape() && rv.shape == params_[i].shape(), "optimizer moment shape mismatch");
        state_.m[i] = std::move(rm.values);
        state_.v[i] = std::move(rv.values);
    }
}

}  // namespace spdp
