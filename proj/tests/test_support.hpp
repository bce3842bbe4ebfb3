#ifndef GENHOWTO_TEST_SUPPORT_HPP
#define GENHOWTO_TEST_SUPPORT_HPP

#include <functional>

#include "genhowto/autograd.hpp"

namespace ghtest {

using genhowto::TensorD;
using genhowto::VarT;

// Central finite-difference check of d(loss)/d(inputs) for a scalar-valued
// graph builder, run in double. Returns the worst relative error across all
// input elements.
inline double gradcheck(const std::function<VarT<double>(std::vector<VarT<double>>&)>& f,
                        std::vector<TensorD> inputs, double h = 1e-5) {
    std::vector<VarT<double>> leaves;
    for (auto& t : inputs) leaves.push_back(genhowto::make_leaf(t, true));
    auto loss = f(leaves);
    genhowto::backward(loss);

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        for (int64_t i = 0; i < inputs[li].numel(); ++i) {
            auto eval = [&](double delta) {
                std::vector<VarT<double>> ls;
                for (size_t j = 0; j < inputs.size(); ++j) {
                    TensorD t = inputs[j];
                    if (j == li) t[i] += delta;
                    ls.push_back(genhowto::make_leaf(t, false));
                }
                return f(ls)->val[0];
            };
            double fd = (eval(h) - eval(-h)) / (2 * h);
            double an = leaves[li]->grad.shape.empty() ? 0.0 : leaves[li]->grad[i];
            double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            worst      = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace ghtest

#endif
