#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ct/params.hpp"
#include "ct/tape.hpp"

namespace ct {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double worst_autodiff = 0.0;
    double worst_fd = 0.0;
    int64_t worst_coord = -1;
    int64_t coords_checked = 0;
    int64_t coords_skipped = 0;  // non-smooth points rejected by the two-scale filter
    bool finite = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool pass(double tolerance) const {
        if (!(max_rel_err <= tolerance)) return false;
        for (const auto& e : entries)
            if (!e.finite) return false;
        return true;
    }

    std::string summary() const {
        std::ostringstream os;
        for (const auto& e : entries) {
            os << "  " << std::left << std::setw(28) << e.name << " max_rel_err="
               << std::scientific << std::setprecision(3) << e.max_rel_err;
            if (e.coords_skipped > 0) os << "  (" << e.coords_skipped << " kink-skipped)";
            if (!e.finite) os << "  [NON-FINITE]";
            os << "\n";
        }
        os << "  overall max_rel_err=" << std::scientific << std::setprecision(3) << max_rel_err
           << "\n";
        return os.str();
    }
};

// Central finite differences against reverse-mode gradients.
//
// The autodiff side runs in T; the finite-difference oracle runs the same
// computation in double via `forward_fd`, which must read `params_fd`. The two
// parameter sets must hold identical values (float widened to double is
// exact). Perturbation happens on the fd set only, so stop-gradient structure
// is preserved: the oracle differentiates exactly the function the tape saw.
//
// Finite differences are only meaningful where the function is locally
// smooth; a perturbation that crosses an argmax/kink (max-pool, relu)
// produces a step-size-dependent estimate. Each coordinate is therefore
// probed at eps and eps/2, and coordinates where the two estimates disagree
// are skipped and counted instead of reported as gradient errors.
//
// rel_err = |ad - fd| / max(|ad|, |fd|, denom_floor)
template <typename T>
GradCheckReport grad_check(ParamSet<T>& params, std::function<Tensor<T>()> forward,
                           ParamSet<double>& params_fd, std::function<double()> forward_fd,
                           double eps, double denom_floor, int64_t max_coords_per_param,
                           Rng& coord_rng) {
    GradCheckReport report;

    params.zero_grads();
    GradTape<T> tape;
    Tensor<T> loss;
    {
        TapeScope<T> scope(tape);
        loss = forward();
        tape.backward(loss);
    }
    if (!std::isfinite((double)loss.item())) {
        GradCheckEntry e;
        e.name = "(loss)";
        e.finite = false;
        report.entries.push_back(e);
        return report;
    }

    for (size_t pi = 0; pi < params.params().size(); ++pi) {
        auto& [name, p] = params.params()[pi];
        auto& p_fd = params_fd.params()[pi].second;
        GradCheckEntry entry;
        entry.name = name;

        const int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (max_coords_per_param <= 0 || n <= max_coords_per_param) {
            coords.resize((size_t)n);
            for (int64_t i = 0; i < n; ++i) coords[(size_t)i] = i;
        } else {
            coords.push_back(0);
            for (int64_t i = 1; i < max_coords_per_param; ++i) coords.push_back(coord_rng.index(n));
        }

        const auto& g = p.grad_view();
        for (int64_t c : coords) {
            const double saved = p_fd.data()[(size_t)c];
            auto eval_at = [&](double offset) {
                p_fd.data()[(size_t)c] = saved + offset;
                const double v = forward_fd();
                p_fd.data()[(size_t)c] = saved;
                return v;
            };
            const double fp = eval_at(eps);
            const double fm = eval_at(-eps);
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                entry.finite = false;
                continue;
            }
            const double fd = (fp - fm) / (2.0 * eps);
            const double fd_half = (eval_at(eps / 2) - eval_at(-eps / 2)) / eps;
            const double scale_gap = std::abs(fd - fd_half) /
                                     std::max({std::abs(fd), std::abs(fd_half), denom_floor});
            if (scale_gap > 0.05) {
                ++entry.coords_skipped;  // crossed a kink; FD not valid here
                continue;
            }
            const double ad = g.empty() ? 0.0 : (double)g[(size_t)c];
            const double denom = std::max({std::abs(ad), std::abs(fd), denom_floor});
            const double rel = std::abs(ad - fd) / denom;
            ++entry.coords_checked;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_autodiff = ad;
                entry.worst_fd = fd;
                entry.worst_coord = c;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace ct
