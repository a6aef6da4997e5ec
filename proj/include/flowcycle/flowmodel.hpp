#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "flowcycle/adam.hpp"
#include "flowcycle/errors.hpp"
#include "flowcycle/rng.hpp"
#include "flowcycle/tensor.hpp"

namespace flowcycle {

// Discrete attribute-pair condition standing in for a prompt, plus the
// null token used as the unconditional branch of guidance.
struct Condition {
    bool null_token = true;
    int a = -1;
    int b = -1;

    static Condition null() { return Condition{}; }
    static Condition pair(int a, int b) { return Condition{false, a, b}; }

    bool is_null() const { return null_token; }

    friend bool operator==(const Condition& l, const Condition& r) {
        if (l.null_token != r.null_token) return false;
        return l.null_token || (l.a == r.a && l.b == r.b);
    }
};

// Raw t plus sin/cos features at frequencies 1, 2, 4.
inline Tensor time_features(double t) {
    constexpr double two_pi = 2.0 * 3.14159265358979323846;
    std::vector<double> v;
    v.reserve(7);
    v.push_back(t);
    for (int k : {1, 2, 4}) {
        v.push_back(std::sin(two_pi * k * t));
        v.push_back(std::cos(two_pi * k * t));
    }
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

inline constexpr std::size_t kTimeFeatureDim = 7;

// Conditional velocity predictor: MLP over concat(x, time features,
// condition embedding) with tanh hidden layers and a linear head.
class VelocityNet {
public:
    VelocityNet(std::size_t data_dim, std::size_t k_a, std::size_t k_b,
                std::size_t embed_dim, std::vector<std::size_t> hidden, std::uint64_t init_seed)
        : data_dim_(data_dim), k_a_(k_a), k_b_(k_b), embed_dim_(embed_dim) {
        if (data_dim == 0 || k_a == 0 || k_b == 0 || embed_dim == 0)
            throw std::invalid_argument("VelocityNet: zero dimension");
        RngStream stream(init_seed);
        const std::size_t in_dim = data_dim + kTimeFeatureDim + embed_dim;
        std::vector<std::size_t> dims;
        dims.push_back(in_dim);
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(data_dim);
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const std::size_t rows = dims[l + 1], cols = dims[l];
            // He/Xavier-style scaling keeps tanh preactivations O(1).
            const double s = 1.0 / std::sqrt(static_cast<double>(cols));
            std::vector<double> w(rows * cols);
            for (double& x : w) x = s * stream.next_normal();
            weights_.emplace_back(std::vector<std::size_t>{rows, cols}, std::move(w));
            biases_.push_back(Tensor::zeros({rows}));
        }
        const std::size_t n_rows = k_a * k_b + 1;  // last row is the null token
        std::vector<double> e(n_rows * embed_dim);
        for (double& x : e) x = stream.next_normal();
        embedding_ = Tensor({n_rows, embed_dim}, std::move(e));
    }

    static VelocityNet with_defaults(std::size_t data_dim, std::size_t k_a, std::size_t k_b,
                                     std::uint64_t init_seed) {
        return VelocityNet(data_dim, k_a, k_b, 8, {128, 128}, init_seed);
    }

    std::size_t data_dim() const { return data_dim_; }
    std::size_t k_a() const { return k_a_; }
    std::size_t k_b() const { return k_b_; }
    std::size_t embed_dim() const { return embed_dim_; }
    std::size_t layer_count() const { return weights_.size(); }

    std::size_t embedding_index(const Condition& c) const {
        if (c.is_null()) return k_a_ * k_b_;
        if (c.a < 0 || static_cast<std::size_t>(c.a) >= k_a_ || c.b < 0 ||
            static_cast<std::size_t>(c.b) >= k_b_)
            throw std::invalid_argument("VelocityNet: condition id out of range");
        return static_cast<std::size_t>(c.a) * k_b_ + static_cast<std::size_t>(c.b);
    }

    Tensor embed(const Condition& c) const { return row(embedding_, embedding_index(c)); }

    Tensor velocity(const Tensor& x, double t, const Condition& c) const {
        if (x.size() != data_dim_) throw std::invalid_argument("velocity: dimension mismatch");
        if (t < 0.0 || t > 1.0) throw std::invalid_argument("velocity: t outside [0,1]");
        Tensor h = concat({x, time_features(t), embed(c)});
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            h = linear(weights_[l], h, biases_[l]);
            if (l + 1 < weights_.size()) h = tanh_t(h);
        }
        return h;
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& w : weights_) out.push_back(&w);
        for (auto& b : biases_) out.push_back(&b);
        out.push_back(&embedding_);
        return out;
    }

    void set_requires_grad(bool b) {
        for (Tensor* p : parameters()) p->set_requires_grad(b);
    }

    const std::vector<Tensor>& weights() const { return weights_; }
    const std::vector<Tensor>& biases() const { return biases_; }
    const Tensor& embedding() const { return embedding_; }
    Tensor& embedding() { return embedding_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& w : weights_) n += w.size();
        for (const auto& b : biases_) n += b.size();
        return n + embedding_.size();
    }

private:
    std::size_t data_dim_, k_a_, k_b_, embed_dim_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
    Tensor embedding_;

    VelocityNet() = default;
    friend VelocityNet load_checkpoint(const std::string&);
};

struct TrainExample {
    Tensor x0;
    Condition c;
};

struct TrainConfig {
    std::size_t batch_size = 256;
    std::size_t train_steps = 5000;
    double lr = 1e-3;
    double cond_dropout_prob = 0.1;
    std::uint64_t seed = 0;
};

// Conditional flow-matching loss over a batch: per item draw t and a
// standard-normal endpoint, interpolate, regress the velocity onto the
// straight-line displacement. Conditions drop to null with probability
// cond_dropout_prob.
template <class Net>
Tensor cfm_loss(const Net& net, const std::vector<TrainExample>& batch, RngStream& stream,
                double cond_dropout_prob) {
    if (batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
    Tensor acc;
    bool first = true;
    for (const TrainExample& ex : batch) {
        if (ex.x0.size() != net.data_dim())
            throw std::invalid_argument("cfm_loss: dimension mismatch");
        const double t = stream.next_uniform();
        Tensor x1 = rng_normal(stream, {net.data_dim()});
        Condition c = ex.c;
        if (stream.next_uniform() < cond_dropout_prob) c = Condition::null();
        Tensor xt = add(scale(ex.x0, 1.0 - t), scale(x1, t));
        Tensor target = sub(x1, ex.x0);
        Tensor item = mse(net.velocity(xt, t, c), target);
        acc = first ? item : add(acc, item);
        first = false;
    }
    return scale(acc, 1.0 / static_cast<double>(batch.size()));
}

// Adam training loop; returns the per-step loss history.
inline std::vector<double> train(VelocityNet& net, const std::vector<TrainExample>& dataset,
                                 const TrainConfig& cfg) {
    if (dataset.size() < cfg.batch_size)
        throw std::invalid_argument("train: dataset smaller than batch");
    std::vector<double> history;
    history.reserve(cfg.train_steps);
    if (cfg.train_steps == 0) return history;

    net.set_requires_grad(true);
    std::vector<Tensor*> params = net.parameters();
    std::vector<AdamState> states;
    for (Tensor* p : params) states.emplace_back(p->size());

    RngStream stream(cfg.seed);
    std::vector<TrainExample> batch(cfg.batch_size);
    for (std::size_t step = 0; step < cfg.train_steps; ++step) {
        for (std::size_t i = 0; i < cfg.batch_size; ++i)
            batch[i] = dataset[stream.next_below(dataset.size())];
        Tensor loss = cfm_loss(net, batch, stream, cfg.cond_dropout_prob);
        if (!loss.all_finite()) {
            net.set_requires_grad(false);
            throw numeric_failure("train: loss diverged at step " + std::to_string(step));
        }
        history.push_back(loss.item());
        backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i)
            adam_step(*params[i], params[i]->grad(), states[i], cfg.lr);
    }
    net.set_requires_grad(false);
    return history;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence. Binary little-endian layout:
//   magic "FCK1", version u32, D u32, K_a u32, K_b u32, embed_dim u32,
//   layer count u32, per layer (rows u32, cols u32, f32 weights row-major,
//   f32 biases), then the embedding table f32 row-major. No padding.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::FILE* f, std::uint32_t v) {
    if (std::fwrite(&v, 4, 1, f) != 1) throw io_error("checkpoint: short write");
}

inline std::uint32_t read_u32(std::FILE* f) {
    std::uint32_t v;
    if (std::fread(&v, 4, 1, f) != 1) throw format_error("checkpoint: truncated");
    return v;
}

inline void write_f32s(std::FILE* f, const std::vector<double>& v) {
    for (double x : v) {
        const float y = static_cast<float>(x);
        if (std::fwrite(&y, 4, 1, f) != 1) throw io_error("checkpoint: short write");
    }
}

inline std::vector<double> read_f32s(std::FILE* f, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        float y;
        if (std::fread(&y, 4, 1, f) != 1) throw format_error("checkpoint: truncated");
        out[i] = static_cast<double>(y);
    }
    return out;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const VelocityNet& net, const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw io_error("checkpoint: cannot open for writing: " + path);
    if (std::fwrite("FCK1", 1, 4, f.get()) != 4) throw io_error("checkpoint: short write");
    detail::write_u32(f.get(), kCheckpointVersion);
    detail::write_u32(f.get(), static_cast<std::uint32_t>(net.data_dim()));
    detail::write_u32(f.get(), static_cast<std::uint32_t>(net.k_a()));
    detail::write_u32(f.get(), static_cast<std::uint32_t>(net.k_b()));
    detail::write_u32(f.get(), static_cast<std::uint32_t>(net.embed_dim()));
    detail::write_u32(f.get(), static_cast<std::uint32_t>(net.layer_count()));
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const Tensor& w = net.weights()[l];
        detail::write_u32(f.get(), static_cast<std::uint32_t>(w.shape()[0]));
        detail::write_u32(f.get(), static_cast<std::uint32_t>(w.shape()[1]));
        detail::write_f32s(f.get(), w.values());
        detail::write_f32s(f.get(), net.biases()[l].values());
    }
    detail::write_f32s(f.get(), net.embedding().values());
}

inline VelocityNet load_checkpoint(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw io_error("checkpoint: cannot open for reading: " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "FCK1", 4) != 0)
        throw format_error("checkpoint: bad magic: " + path);
    if (detail::read_u32(f.get()) != kCheckpointVersion)
        throw format_error("checkpoint: unsupported version: " + path);
    const std::uint32_t d = detail::read_u32(f.get());
    const std::uint32_t k_a = detail::read_u32(f.get());
    const std::uint32_t k_b = detail::read_u32(f.get());
    const std::uint32_t embed_dim = detail::read_u32(f.get());
    const std::uint32_t layers = detail::read_u32(f.get());
    if (d == 0 || k_a == 0 || k_b == 0 || embed_dim == 0 || layers == 0)
        throw format_error("checkpoint: invalid header: " + path);

    VelocityNet net;
    net.data_dim_ = d;
    net.k_a_ = k_a;
    net.k_b_ = k_b;
    net.embed_dim_ = embed_dim;
    std::size_t expect_in = d + kTimeFeatureDim + embed_dim;
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::uint32_t rows = detail::read_u32(f.get());
        const std::uint32_t cols = detail::read_u32(f.get());
        if (rows == 0 || cols != expect_in)
            throw format_error("checkpoint: inconsistent layer shape: " + path);
        net.weights_.emplace_back(std::vector<std::size_t>{rows, cols},
                                  detail::read_f32s(f.get(), std::size_t(rows) * cols));
        net.biases_.emplace_back(std::vector<std::size_t>{rows},
                                 detail::read_f32s(f.get(), rows));
        expect_in = rows;
    }
    if (expect_in != d) throw format_error("checkpoint: output dim mismatch: " + path);
    const std::size_t n_rows = std::size_t(k_a) * k_b + 1;
    net.embedding_ = Tensor({n_rows, embed_dim}, detail::read_f32s(f.get(), n_rows * embed_dim));
    // Trailing bytes mean the file does not match its header.
    std::uint8_t extra;
    if (std::fread(&extra, 1, 1, f.get()) == 1)
        throw format_error("checkpoint: trailing data: " + path);
    return net;
}

}  // namespace flowcycle
