// Quantizes a random vector with ADQ at a few beta settings and prints the
// resulting grid size, bit cost and worst-case reconstruction error.

#include <cstdio>

#include "fedobd/quantize.hpp"
#include "fedobd/rng.hpp"
#include "fedobd/tensor.hpp"

int main() {
    fedobd::Rng rng(7);
    fedobd::NamedArray arr{"demo", std::vector<double>(4096), {}};
    for (auto& x : arr.values) x = rng.uniform(-2.0, 2.0);
    fedobd::ParameterVector v = fedobd::flatten({arr});

    std::printf("%10s %8s %12s %14s %14s\n", "beta", "s", "bits/elem", "max error", "bound d/2s");
    for (double beta : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
        auto q = fedobd::adq_quantize(v, {beta, 32});
        auto back = fedobd::adq_dequantize(q);
        double worst = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i)
            worst = std::max(worst, std::fabs(back.values[i] - v.values[i]));
        double bits = static_cast<double>(fedobd::payload_bits(q)) / static_cast<double>(v.size());
        std::printf("%10.0e %8llu %12.2f %14.3e %14.3e\n", beta,
                    static_cast<unsigned long long>(q.s), bits, worst,
                    q.d / (2.0 * static_cast<double>(q.s)));
    }
    return 0;
}
