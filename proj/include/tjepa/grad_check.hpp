#pragma once
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tjepa/autodiff.hpp"

namespace tjepa {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool finite = true;
    bool pass = false;

    const GradCheckEntry* worst() const {
        const GradCheckEntry* w = nullptr;
        for (const auto& e : entries)
            if (!w || e.max_rel_err > w->max_rel_err) w = &e;
        return w;
    }
};

// Compares analytic gradients against 64-bit central differences.
// `build_loss` must be deterministic: it is re-run with perturbed parameters,
// so every stochastic choice it depends on has to be fixed by the caller.
// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator, which
// degrades to a scaled absolute comparison for near-zero gradients.
inline GradCheckReport grad_check(const std::function<NodeId(Graph<double>&)>& build_loss,
                                  const std::vector<Parameter<double>*>& params,
                                  double step = 1e-4, double tol = 1e-4) {
    GradCheckReport report;
    report.tol = tol;

    for (Parameter<double>* p : params) p->zero_grad();
    std::vector<Tensor<double>> analytic;
    {
        Graph<double> g(1024);
        NodeId loss = build_loss(g);
        if (!std::isfinite(g.value(loss).item())) {
            report.finite = false;
            return report;
        }
        g.backward(loss);
    }
    analytic.reserve(params.size());
    for (Parameter<double>* p : params) analytic.push_back(p->grad);

    auto eval = [&]() {
        Graph<double> g(1024);
        return g.value(build_loss(g)).item();
    };

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<double>& p = *params[pi];
        GradCheckEntry entry;
        entry.name = p.name;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double saved = p.value[i];
            p.value[i] = saved + step;
            double up = eval();
            p.value[i] = saved - step;
            double down = eval();
            p.value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                report.finite = false;
                return report;
            }
            double numeric = (up - down) / (2.0 * step);
            double a = analytic[pi][i];
            double abs_err = std::abs(a - numeric);
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
            entry.max_rel_err = std::max(entry.max_rel_err, abs_err / denom);
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.finite && report.max_rel_err < tol;
    return report;
}

}  // namespace tjepa
