#include "gfs/gradcheck.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace gfs {

double gradcheck(const std::function<double(ParameterStore&, bool want_grad)>& loss,
                 ParameterStore& store, double fd_step) {
    store.zero_grads();
    loss(store, true);
    std::map<std::string, std::vector<double>> analytic;
    for (const auto& name : store.names()) analytic[name] = store.grad(name).data;

    double max_rel = 0.0;
    for (const auto& name : store.names()) {
        Tensor& v = store.value(name);
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            const double keep = v.data[i];
            v.data[i] = keep + fd_step;
            const double fp = loss(store, false);
            v.data[i] = keep - fd_step;
            const double fm = loss(store, false);
            v.data[i] = keep;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw std::runtime_error("gradcheck: non-finite loss when perturbing " + name);
            }
            const double fd = (fp - fm) / (2.0 * fd_step);
            const double rel = std::abs(analytic[name][i] - fd) / std::max(1.0, std::abs(fd));
            max_rel = std::max(max_rel, rel);
        }
    }

    store.zero_grads();
    return max_rel;
}

}  // namespace gfs
