#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "advgen/tape.hpp"

namespace advgen {

struct GradcheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    std::string worst;  // "name[idx]" of the worst coordinate

    bool pass(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of reverse-mode gradients.
//
// `forward` must rebuild the graph from the leaves on every call; it runs
// once under an active tape for the analytic pass and twice per probed
// coordinate (tape suppressed) for the finite-difference quotient, which is
// formed in double from the float32 forward values. Leaves larger than
// `max_coords_per_leaf` are spot-checked on a random coordinate subset.
inline GradcheckReport gradcheck(const std::function<Tensor()>& forward,
                                 const std::vector<std::pair<std::string, Tensor>>& leaves,
                                 Rng rng, int max_coords_per_leaf = 16, double h = 1e-3) {
    for (auto& [name, t] : leaves) {
        if (!t.requires_grad()) throw UsageError("gradcheck leaf " + name + " does not require grad");
        t.zero_grad();
    }

    std::vector<std::vector<float>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = forward();
        tape.backward(loss);
        for (auto& [name, t] : leaves) analytic.push_back(t.grad());
    }

    GradcheckReport rep;
    NoTapeScope quiet;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor t = leaves[li].second;
        const int64_t n = t.numel();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_leaf) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            std::set<int64_t> picked;
            while (static_cast<int>(picked.size()) < max_coords_per_leaf)
                picked.insert(static_cast<int64_t>(rng.below(static_cast<uint64_t>(n))));
            coords.assign(picked.begin(), picked.end());
        }
        for (int64_t c : coords) {
            float* x = t.ptr() + c;
            const float saved = *x;
            *x = saved + static_cast<float>(h);
            const double fp = forward().item();
            *x = saved - static_cast<float>(h);
            const double fm = forward().item();
            *x = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[li][static_cast<size_t>(c)];
            const double rel = std::abs(a - fd) / std::max(1.0, std::abs(fd));
            ++rep.coords_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = leaves[li].first + "[" + std::to_string(c) + "]";
            }
        }
    }
    return rep;
}

}  // namespace advgen
