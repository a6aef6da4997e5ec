#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "flowcycle/flowmodel.hpp"
#include "flowcycle/rng.hpp"
#include "flowcycle/tensor.hpp"

namespace flowcycle {

// Factored-attribute Gaussian world. Attribute a places the mean of the
// editing-relevant block (dims [0, D/2)), attribute b the mean of the
// editing-irrelevant block (dims [D/2, D)); both on a deterministic
// +/- mean_scale sign grid keyed by the attribute id.
struct WorldSpec {
    std::size_t dim = 8;
    std::size_t k_a = 4;
    std::size_t k_b = 4;
    double sigma = 0.3;
    double mean_scale = 2.0;

    std::size_t relevant_dim() const { return dim / 2; }
    std::size_t irrelevant_dim() const { return dim - dim / 2; }

    void validate() const {
        if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("WorldSpec: dim must be even >= 2");
        if (k_a == 0 || k_b == 0) throw std::invalid_argument("WorldSpec: zero attribute count");
        if (sigma <= 0.0) throw std::invalid_argument("WorldSpec: sigma must be positive");
        const std::size_t bits_a = sign_bits(k_a), bits_b = sign_bits(k_b);
        if ((1u << std::min<std::size_t>(relevant_dim(), bits_a)) < k_a ||
            (1u << std::min<std::size_t>(irrelevant_dim(), bits_b)) < k_b)
            throw std::invalid_argument("WorldSpec: too many attributes for block width");
    }

    static std::size_t sign_bits(std::size_t k) {
        std::size_t bits = 1;
        while ((std::size_t{1} << bits) < k) ++bits;
        return bits;
    }

    std::vector<double> mean_a(int a) const {
        if (a < 0 || static_cast<std::size_t>(a) >= k_a)
            throw std::invalid_argument("WorldSpec: attribute a out of range");
        return sign_grid(static_cast<std::size_t>(a), relevant_dim(), sign_bits(k_a));
    }

    std::vector<double> mean_b(int b) const {
        if (b < 0 || static_cast<std::size_t>(b) >= k_b)
            throw std::invalid_argument("WorldSpec: attribute b out of range");
        return sign_grid(static_cast<std::size_t>(b), irrelevant_dim(), sign_bits(k_b));
    }

    // Full D-dimensional component mean for a pair condition.
    std::vector<double> mean_for(const Condition& c) const {
        if (c.is_null()) throw std::invalid_argument("WorldSpec: null condition has no mean");
        std::vector<double> mu = mean_a(c.a);
        std::vector<double> mb = mean_b(c.b);
        mu.insert(mu.end(), mb.begin(), mb.end());
        return mu;
    }

private:
    std::vector<double> sign_grid(std::size_t id, std::size_t width, std::size_t bits) const {
        std::vector<double> out(width);
        for (std::size_t j = 0; j < width; ++j)
            out[j] = ((id >> (j % bits)) & 1) ? mean_scale : -mean_scale;
        return out;
    }
};

using LabeledPoint = TrainExample;

inline std::vector<LabeledPoint> sample_dataset(const WorldSpec& spec, std::size_t n,
                                                RngStream& stream) {
    spec.validate();
    if (n == 0) throw std::invalid_argument("sample_dataset: n must be positive");
    std::vector<LabeledPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Condition c = Condition::pair(static_cast<int>(stream.next_below(spec.k_a)),
                                      static_cast<int>(stream.next_below(spec.k_b)));
        std::vector<double> mu = spec.mean_for(c);
        std::vector<double> x(spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j)
            x[j] = mu[j] + spec.sigma * stream.next_normal();
        out.push_back({Tensor({spec.dim}, std::move(x)), c});
    }
    return out;
}

// Closed-form E[x1 - x0 | x_t = x] for x0 ~ N(mu, sigma^2 I),
// x1 ~ N(0, I), x_t = (1-t) x0 + t x1. Per coordinate with a = 1-t,
// b = t the posterior means give
//   v(x) = (b - a sigma^2) (x - a mu) / (a^2 sigma^2 + b^2) - mu.
inline Tensor oracle_velocity(const WorldSpec& spec, const Tensor& x, double t,
                              const Condition& c) {
    if (c.is_null()) throw std::invalid_argument("oracle_velocity: null condition");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("oracle_velocity: t outside [0,1]");
    if (x.size() != spec.dim) throw std::invalid_argument("oracle_velocity: dimension mismatch");
    const double a = 1.0 - t, b = t;
    const double s2 = spec.sigma * spec.sigma;
    const double denom = a * a * s2 + b * b;
    const double coef = (b - a * s2) / denom;
    std::vector<double> mu = spec.mean_for(c);
    std::vector<double> v(spec.dim);
    for (std::size_t j = 0; j < spec.dim; ++j)
        v[j] = coef * (x.values()[j] - a * mu[j]) - mu[j];
    return Tensor({spec.dim}, std::move(v));
}

// Adapter so the sampler can integrate the exact field.
struct OracleField {
    WorldSpec spec;

    Tensor velocity(const Tensor& x, double t, const Condition& c) const {
        return oracle_velocity(spec, x, t, c);
    }
};

// Ground-truth analog of the paper-style structure metric: mean squared
// deviation over the editing-irrelevant block only.
inline double consistency_metric(const Tensor& x_edit, const Tensor& x0_src,
                                 const WorldSpec& spec) {
    if (x_edit.size() != spec.dim || x0_src.size() != spec.dim)
        throw std::invalid_argument("consistency_metric: dimension mismatch");
    double acc = 0.0;
    for (std::size_t j = spec.relevant_dim(); j < spec.dim; ++j) {
        const double d = x_edit.values()[j] - x0_src.values()[j];
        acc += d * d;
    }
    return acc / static_cast<double>(spec.irrelevant_dim());
}

// Ground-truth analog of the semantic-alignment metric: Euclidean
// distance between the relevant block and the target attribute mean.
// Lower is better.
inline double alignment_metric(const Tensor& x_edit, const Condition& c_tar,
                               const WorldSpec& spec) {
    if (c_tar.is_null()) throw std::invalid_argument("alignment_metric: null condition");
    if (x_edit.size() != spec.dim)
        throw std::invalid_argument("alignment_metric: dimension mismatch");
    std::vector<double> mu = spec.mean_a(c_tar.a);
    double acc = 0.0;
    for (std::size_t j = 0; j < spec.relevant_dim(); ++j) {
        const double d = x_edit.values()[j] - mu[j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline void export_dataset_csv(const std::vector<LabeledPoint>& data, const WorldSpec& spec,
                               const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw io_error("export_dataset_csv: cannot open: " + path);
    for (std::size_t j = 0; j < spec.dim; ++j)
        std::fprintf(f, "dim_%zu%s", j, j + 1 < spec.dim ? "," : "");
    std::fprintf(f, ",attr_a,attr_b\n");
    for (const LabeledPoint& p : data) {
        for (std::size_t j = 0; j < spec.dim; ++j)
            std::fprintf(f, "%.17g,", p.x0.values()[j]);
        std::fprintf(f, "%d,%d\n", p.c.a, p.c.b);
    }
    std::fclose(f);
}

}  // namespace flowcycle
