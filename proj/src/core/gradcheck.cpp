#include "dla/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dla {

GradCheckReport grad_check(const std::function<Tensor<double>(Tape<double>*)>& fn,
                           ParamStore<double>& store, const GradCheckOptions& opt) {
    Tape<double> tape;
    store.begin_step(tape);
    Tensor<double> loss = fn(&tape);
    if (!std::isfinite(loss.item())) throw NumericalError("grad_check: non-finite loss");
    tape.backward(loss);

    // Snapshot analytic gradients (zero where the loss never reached a leaf).
    std::vector<std::vector<double>> analytic;
    analytic.reserve(store.items().size());
    for (const auto& p : store.items()) {
        const Tensor<double>* g = tape.grad(p->value.node);
        if (g)
            analytic.emplace_back(g->data->begin(), g->data->end());
        else
            analytic.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
    }
    store.end_step();

    auto eval = [&]() {
        Tensor<double> l = fn(nullptr);
        const double v = l.item();
        if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss during probing");
        return v;
    };

    Prng rng(opt.seed);
    GradCheckReport report;
    for (size_t pi = 0; pi < store.items().size(); ++pi) {
        Parameter<double>& p = *store.items()[pi];
        const std::vector<double>& a = analytic[pi];
        std::vector<int64_t> candidates;
        for (int64_t i = 0; i < p.value.numel(); ++i)
            if (std::abs(a[static_cast<size_t>(i)]) >= opt.min_grad) candidates.push_back(i);
        if (candidates.empty()) continue;
        if (opt.max_probes_per_tensor > 0 &&
            static_cast<int64_t>(candidates.size()) > opt.max_probes_per_tensor) {
            // Fisher-Yates prefix of the candidate list.
            for (int i = 0; i < opt.max_probes_per_tensor; ++i) {
                const size_t j = static_cast<size_t>(i) +
                                 static_cast<size_t>(rng.next_below(candidates.size() - static_cast<size_t>(i)));
                std::swap(candidates[static_cast<size_t>(i)], candidates[j]);
            }
            candidates.resize(static_cast<size_t>(opt.max_probes_per_tensor));
        }
        for (int64_t idx : candidates) {
            double& slot = p.value.ptr()[idx];
            const double saved = slot;
            slot = saved + opt.eps;
            const double fp = eval();
            slot = saved - opt.eps;
            const double fm = eval();
            slot = saved;
            const double cd = (fp - fm) / (2.0 * opt.eps);
            const double an = a[static_cast<size_t>(idx)];
            const double rel = std::abs(an - cd) / std::max(1e-8, std::abs(an) + std::abs(cd));
            ++report.probes;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {p.name, idx, an, cd, rel};
            }
        }
    }
    return report;
}

}  // namespace dla
