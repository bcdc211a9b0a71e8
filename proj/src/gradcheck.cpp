#include "spdp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spdp {

GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           const GradCheckOptions& options) {
    GradCheckReport report;
    for (auto [_, p] : params) p.zero_grad();
    Tensor root = loss();
    report.finite = std::isfinite(root.item());
    root.backward();
    root = Tensor();

    for (auto [name, p] : params) {
        ParamCheck pc;
        pc.name = name;
        pc.size = p.numel();
        require(p.has_grad(), "grad_check: parameter " + name + " has no gradient buffer", ErrorKind::Numeric);
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.mutable_data();
        NoGradGuard no_grad;
        const std::size_t n = values.size();
        const std::size_t count = options.max_per_param ? std::min(n, options.max_per_param) : n;
        pc.checked = count;
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t i = count == n ? k : (k * n) / count + (n / count) / 2;
            const double orig = values[i];
            values[i] = orig + options.step;
            const double fp = loss().item();
            values[i] = orig - options.step;
            const double fm = loss().item();
            values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * options.step);
            if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i])) {
                report.finite = false;
                pc.max_rel_error = std::numeric_limits<double>::infinity();
                pc.worst_index = i;
                continue;
            }
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.grad_floor});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            if (k == 0 || rel > pc.max_rel_error) {
                pc.max_rel_error = rel;
                pc.worst_index = i;
                pc.analytic = analytic[i];
                pc.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
        report.params.push_back(pc);
    }
    report.passed = report.finite && report.max_rel_error < options.tolerance;
    return report;
}

}  // namespace spdp
